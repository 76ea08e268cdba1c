//! Dense descriptor encoder: strided conv backbone, a two-level pyramid
//! decoder, a 1×1 projection head, a mask head, unit normalization and
//! mask gating. Parameters live in named [`ParamSet`]s so the same
//! forward pass serves f32 training and f64 gradient checks.

use std::collections::HashMap;

use dope_autodiff::{AutodiffError, Graph, ParamSet, Scalar, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::ViewId;
use crate::seed;

pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("parameter sets differ: {0}")]
    NameMismatch(String),
    #[error("momentum coefficient {0} outside [0, 1]")]
    InvalidMomentum(f64),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub input_size: usize,
    pub in_channels: usize,
    pub stages: Vec<usize>,
    pub grid_size: usize,
    /// Decoder width followed by the 1×1 projection widths.
    pub head: Vec<usize>,
    pub out_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            in_channels: 3,
            stages: vec![16, 32, 64],
            grid_size: 16,
            head: vec![64, 128, 128, 64],
            out_dim: 64,
        }
    }
}

impl EncoderConfig {
    pub fn stride(&self) -> usize {
        self.input_size / self.grid_size.max(1)
    }

    /// Index of the backbone stage whose output has grid resolution.
    pub fn grid_stage(&self) -> usize {
        self.stride().trailing_zeros() as usize - 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.grid_size == 0 || self.input_size % self.grid_size != 0 {
            return bad(format!(
                "input {} is not an integer multiple of grid {}",
                self.input_size, self.grid_size
            ));
        }
        let s = self.stride();
        if !s.is_power_of_two() || s < 2 {
            return bad(format!("stride {s} must be a power of two >= 2"));
        }
        if self.grid_stage() >= self.stages.len() {
            return bad(format!(
                "stride {s} needs {} stages, have {}",
                self.grid_stage() + 1,
                self.stages.len()
            ));
        }
        if self.head.len() < 2 || self.head.last() != Some(&self.out_dim) {
            return bad("head needs >= 2 widths ending at out_dim".into());
        }
        if self.in_channels == 0 || self.stages.contains(&0) || self.head.contains(&0) {
            return bad("widths must be positive".into());
        }
        Ok(())
    }

    fn uses_top(&self) -> bool {
        self.grid_stage() + 1 < self.stages.len()
    }

    /// Parameter names, shapes and fan-in, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out = Vec::new();
        let mut conv = |name: String, k: usize, cin: usize, cout: usize| {
            out.push((format!("{name}.weight"), vec![k, k, cin, cout], k * k * cin));
            out.push((format!("{name}.bias"), vec![cout], 0));
        };
        let last = self.grid_stage() + usize::from(self.uses_top());
        let mut cin = self.in_channels;
        for (i, &c) in self.stages.iter().enumerate().take(last + 1) {
            conv(format!("stage{i}.down"), 3, cin, c);
            if i >= 1 {
                conv(format!("stage{i}.conv"), 3, c, c);
            }
            cin = c;
        }
        let gs = self.grid_stage();
        let dw = self.head[0];
        let mut linear = |name: String, cin: usize, cout: usize| {
            out.push((format!("{name}.weight"), vec![cin, cout], cin));
            out.push((format!("{name}.bias"), vec![cout], 0));
        };
        linear("decoder.lateral".into(), self.stages[gs], dw);
        if self.uses_top() {
            linear("decoder.top".into(), self.stages[gs + 1], dw);
        }
        for i in 1..self.head.len() {
            linear(format!("head{i}"), self.head[i - 1], self.head[i]);
        }
        linear("mask".into(), dw, 1);
        out
    }
}

/// Kaiming-uniform fan-in weights, zero biases.
pub fn init_online<T: Scalar>(cfg: &EncoderConfig, seed: u64) -> Result<ParamSet<T>> {
    cfg.validate()?;
    let mut rng = seed::rng(seed, "init", &[]);
    let mut p = ParamSet::new();
    for (name, shape, fan_in) in cfg.layout() {
        let n: usize = shape.iter().product();
        let data = if fan_in == 0 {
            vec![T::zero(); n]
        } else {
            let bound = (6.0 / fan_in as f64).sqrt();
            (0..n)
                .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
                .collect()
        };
        p.insert(name, Tensor::new(shape, data)?);
    }
    Ok(p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub online: ParamSet<f32>,
    pub target: ParamSet<f32>,
}

pub fn init_params(cfg: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    let online = init_online(cfg, seed)?;
    Ok(EncoderParams {
        target: online.clone(),
        online,
    })
}

/// `target ← m·target + (1−m)·online`.
pub fn momentum_update<T: Scalar>(online: &ParamSet<T>, target: &mut ParamSet<T>, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(ModelError::InvalidMomentum(m));
    }
    if !online.same_layout(target) {
        return Err(ModelError::NameMismatch(
            "online and target names or shapes differ".into(),
        ));
    }
    let m = T::from_f64_lossy(m);
    let one_minus = T::one() - m;
    for (t, o) in target.tensors_mut().zip(online.tensors()) {
        for (a, &b) in t.data_mut().iter_mut().zip(o.data()) {
            *a = m * *a + one_minus * b;
        }
    }
    Ok(())
}

/// Parameters bound to graph leaves, addressed by name.
pub struct Bound {
    vars: HashMap<String, Var>,
    order: Vec<Var>,
}

impl Bound {
    pub fn new<T: Scalar>(g: &mut Graph<T>, params: &ParamSet<T>, trainable: bool) -> Self {
        let mut vars = HashMap::new();
        let mut order = Vec::new();
        for (name, t) in params.iter() {
            let v = if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
            vars.insert(name.to_string(), v);
            order.push(v);
        }
        Self { vars, order }
    }

    /// Uses existing leaves, given in `ParamSet` order.
    pub fn from_vars<T: Scalar>(params: &ParamSet<T>, vars: &[Var]) -> Self {
        let map = params.names().zip(vars).map(|(n, &v)| (n.to_string(), v)).collect();
        Self {
            vars: map,
            order: vars.to_vec(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::Autodiff(AutodiffError::UnknownParameter(name.into())))
    }

    /// Leaves in `ParamSet` order.
    pub fn vars(&self) -> &[Var] {
        &self.order
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Trunk {
    /// Decoder output at grid resolution, `[n, g, g, head[0]]`.
    pub decoder: Var,
    pub mask_logits: Var,
    pub mask_prob: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub trunk: Trunk,
    /// Unit-normalized cells before gating.
    pub normalized: Var,
    pub gated: Var,
}

/// How features are gated.
#[derive(Clone, Copy, Debug)]
pub enum Gate {
    Predicted,
    /// Caller-supplied `[n, g, g, 1]` mask.
    Given(Var),
}

fn conv<T: Scalar>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    Ok(g.conv2d(x, w, Some(b), stride, 1)?)
}

fn linear<T: Scalar>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    Ok(g.conv1x1(x, w, Some(b))?)
}

/// Backbone, decoder and mask head.
pub fn trunk<T: Scalar>(g: &mut Graph<T>, cfg: &EncoderConfig, p: &Bound, images: Var) -> Result<Trunk> {
    let s = g.shape(images).to_vec();
    let expect = [cfg.input_size, cfg.input_size, cfg.in_channels];
    if s.len() != 4 || s[1..] != expect {
        return Err(AutodiffError::ShapeMismatch(format!(
            "encoder input {s:?}, expected [n, {}, {}, {}]",
            expect[0], expect[1], expect[2]
        ))
        .into());
    }
    let gs = cfg.grid_stage();
    let last = gs + usize::from(cfg.uses_top());
    let mut x = images;
    let mut feats = Vec::new();
    for i in 0..=last {
        x = conv(g, p, &format!("stage{i}.down"), x, 2)?;
        x = g.relu(x);
        if i >= 1 {
            x = conv(g, p, &format!("stage{i}.conv"), x, 1)?;
            x = g.relu(x);
        }
        feats.push(x);
    }
    let mut d = linear(g, p, "decoder.lateral", feats[gs])?;
    if cfg.uses_top() {
        let top = linear(g, p, "decoder.top", feats[gs + 1])?;
        let up = g.upsample2x(top)?;
        d = g.add(d, up)?;
    }
    let decoder = g.relu(d);
    let mask_logits = linear(g, p, "mask", decoder)?;
    let mask_prob = g.sigmoid(mask_logits);
    Ok(Trunk {
        decoder,
        mask_logits,
        mask_prob,
    })
}

pub fn forward<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &EncoderConfig,
    p: &Bound,
    images: Var,
    gate: Gate,
) -> Result<Encoded> {
    let t = trunk(g, cfg, p, images)?;
    let mut x = t.decoder;
    for i in 1..cfg.head.len() {
        x = linear(g, p, &format!("head{i}"), x)?;
        if i + 1 < cfg.head.len() {
            x = g.relu(x);
        }
    }
    let normalized = g.l2_normalize(x, T::from_f64_lossy(NORM_EPS));
    let gv = match gate {
        Gate::Predicted => t.mask_prob,
        Gate::Given(m) => m,
    };
    let gated = g.gate(normalized, gv)?;
    Ok(Encoded {
        trunk: t,
        normalized,
        gated,
    })
}

/// Dense descriptors of one image. Cells are stored row-major with the
/// `dim` channels of each cell contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    pub features: Vec<f32>,
    pub normalized: Vec<f32>,
    pub mask_prob: Vec<f32>,
    pub view: Option<ViewId>,
}

impl FeatureGrid {
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn cell(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cell_at(&self, u: usize, v: usize) -> &[f32] {
        self.cell(v * self.width + u)
    }
}

/// Which mask gates inference features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceGate {
    Predicted,
    /// All-ones gate; used when the mask head was not trained.
    None,
}

pub const ENCODE_CHUNK: usize = 32;

/// Inference over images given as `H×W×C` rasters.
pub fn encode(
    params: &ParamSet<f32>,
    cfg: &EncoderConfig,
    images: &[&[f32]],
    gate: InferenceGate,
) -> Result<Vec<FeatureGrid>> {
    let px = cfg.input_size * cfg.input_size * cfg.in_channels;
    let gsz = cfg.grid_size;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(ENCODE_CHUNK) {
        let mut data = Vec::with_capacity(chunk.len() * px);
        for im in chunk {
            if im.len() != px {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "image has {} values, expected {px}",
                    im.len()
                ))
                .into());
            }
            data.extend_from_slice(im);
        }
        let n = chunk.len();
        let mut g = Graph::<f32>::new();
        let p = Bound::new(&mut g, params, false);
        let x = g.constant(Tensor::new(
            vec![n, cfg.input_size, cfg.input_size, cfg.in_channels],
            data,
        )?);
        let gv = match gate {
            InferenceGate::Predicted => Gate::Predicted,
            InferenceGate::None => Gate::Given(g.constant(Tensor::full(vec![n, gsz, gsz, 1], 1.0))),
        };
        let e = forward(&mut g, cfg, &p, x, gv)?;
        let d = cfg.out_dim;
        let cells = gsz * gsz;
        let gated = g.value(e.gated).data();
        let normalized = g.value(e.normalized).data();
        let prob = g.value(e.trunk.mask_prob).data();
        for b in 0..n {
            out.push(FeatureGrid {
                dim: d,
                height: gsz,
                width: gsz,
                features: gated[b * cells * d..(b + 1) * cells * d].to_vec(),
                normalized: normalized[b * cells * d..(b + 1) * cells * d].to_vec(),
                mask_prob: prob[b * cells..(b + 1) * cells].to_vec(),
                view: None,
            });
        }
    }
    Ok(out)
}

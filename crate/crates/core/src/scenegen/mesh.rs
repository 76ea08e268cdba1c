use std::f64::consts::TAU;

use nalgebra::{Matrix3, Rotation3, Vector3};

use super::{Result, SceneError};

/// Triangles with smaller area are rejected.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
    pub face_colors: Vec<[f32; 3]>,
}

impl Mesh {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn vertex(&self, i: u32) -> Vector3<f64> {
        Vector3::from(self.vertices[i as usize])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (a, b, c) = (self.vertex(a), self.vertex(b), self.vertex(c));
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn validate(&self) -> Result<()> {
        if self.face_colors.len() != self.triangles.len() {
            return Err(SceneError::InvalidMesh(format!(
                "{} colors for {} triangles",
                self.face_colors.len(),
                self.triangles.len()
            )));
        }
        let n = self.vertices.len() as u32;
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= n) {
                return Err(SceneError::InvalidMesh(format!(
                    "triangle {t} indexes past {n} vertices"
                )));
            }
            if self.triangle_area(t) <= MIN_TRIANGLE_AREA {
                return Err(SceneError::InvalidMesh(format!("triangle {t} is degenerate")));
            }
        }
        Ok(())
    }

    /// Appends `part` with every face painted `color`.
    pub fn append(&mut self, part: Mesh, color: [f32; 3]) {
        let offset = self.vertices.len() as u32;
        self.vertices.extend(part.vertices);
        self.triangles.extend(
            part.triangles
                .iter()
                .map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]),
        );
        self.face_colors
            .extend(std::iter::repeat(color).take(part.triangles.len()));
    }

    pub fn transformed(mut self, rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        for v in &mut self.vertices {
            *v = (rotation * Vector3::from(*v) + translation).into();
        }
        self
    }

    pub fn translated(self, x: f64, y: f64, z: f64) -> Self {
        self.transformed(&Matrix3::identity(), Vector3::new(x, y, z))
    }

    /// Rotation about the world axis `axis` (0 = x, 1 = y, 2 = z).
    pub fn rotated(self, axis: usize, angle: f64) -> Self {
        let r = Rotation3::from_axis_angle(&axis_unit(axis), angle);
        self.transformed(r.matrix(), Vector3::zeros())
    }

    pub fn max_vertex_norm(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| Vector3::from(*v).norm())
            .fold(0.0, f64::max)
    }

    /// Centers the bounding box on the origin and scales so the farthest
    /// vertex sits at `radius`.
    pub fn normalize_into_ball(&mut self, radius: f64) {
        if self.vertices.is_empty() {
            return;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let c = Vector3::new(
            0.5 * (lo[0] + hi[0]),
            0.5 * (lo[1] + hi[1]),
            0.5 * (lo[2] + hi[2]),
        );
        for v in &mut self.vertices {
            *v = (Vector3::from(*v) - c).into();
        }
        let m = self.max_vertex_norm();
        if m > 0.0 {
            let s = radius / m;
            for v in &mut self.vertices {
                for x in v.iter_mut() {
                    *x *= s;
                }
            }
        }
        // Rounding can leave a vertex a few ulps outside.
        for v in &mut self.vertices {
            let n = Vector3::from(*v).norm();
            if n > radius {
                let s = radius / n * (1.0 - 1e-12);
                for x in v.iter_mut() {
                    *x *= s;
                }
            }
        }
    }

    fn push_vertex(&mut self, p: [f64; 3]) -> u32 {
        self.vertices.push(p);
        (self.vertices.len() - 1) as u32
    }

    fn push_tri(&mut self, a: u32, b: u32, c: u32) {
        self.triangles.push([a, b, c]);
        self.face_colors.push([1.0, 1.0, 1.0]);
    }

    fn push_quad(&mut self, a: u32, b: u32, c: u32, d: u32) {
        self.push_tri(a, b, c);
        self.push_tri(a, c, d);
    }
}

fn axis_unit(axis: usize) -> nalgebra::Unit<Vector3<f64>> {
    match axis {
        0 => Vector3::x_axis(),
        1 => Vector3::y_axis(),
        _ => Vector3::z_axis(),
    }
}

/// Axis-aligned box centered at the origin.
pub fn cuboid(sx: f64, sy: f64, sz: f64) -> Mesh {
    let (hx, hy, hz) = (sx / 2.0, sy / 2.0, sz / 2.0);
    let mut m = Mesh::new();
    let mut idx = [0u32; 8];
    for (i, slot) in idx.iter_mut().enumerate() {
        let x = if i & 1 == 0 { -hx } else { hx };
        let y = if i & 2 == 0 { -hy } else { hy };
        let z = if i & 4 == 0 { -hz } else { hz };
        *slot = m.push_vertex([x, y, z]);
    }
    let faces = [
        [0, 2, 3, 1],
        [4, 5, 7, 6],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 4, 6, 2],
        [1, 3, 7, 5],
    ];
    for f in faces {
        m.push_quad(idx[f[0]], idx[f[1]], idx[f[2]], idx[f[3]]);
    }
    m
}

/// Truncated cone along +z from `z = 0` to `z = height`. A zero top
/// radius gives a cone with a single apex vertex.
pub fn frustum(r_bottom: f64, r_top: f64, height: f64, segments: usize) -> Mesh {
    let mut m = Mesh::new();
    let ring = |m: &mut Mesh, r: f64, z: f64| -> Vec<u32> {
        (0..segments)
            .map(|i| {
                let a = TAU * i as f64 / segments as f64;
                m.push_vertex([r * a.cos(), r * a.sin(), z])
            })
            .collect()
    };
    let bottom = ring(&mut m, r_bottom, 0.0);
    let bc = m.push_vertex([0.0, 0.0, 0.0]);
    for i in 0..segments {
        let j = (i + 1) % segments;
        m.push_tri(bc, bottom[j], bottom[i]);
    }
    if r_top > 0.0 {
        let top = ring(&mut m, r_top, height);
        let tc = m.push_vertex([0.0, 0.0, height]);
        for i in 0..segments {
            let j = (i + 1) % segments;
            m.push_quad(bottom[i], bottom[j], top[j], top[i]);
            m.push_tri(tc, top[i], top[j]);
        }
    } else {
        let apex = m.push_vertex([0.0, 0.0, height]);
        for i in 0..segments {
            let j = (i + 1) % segments;
            m.push_tri(bottom[i], bottom[j], apex);
        }
    }
    m
}

pub fn cylinder(radius: f64, height: f64, segments: usize) -> Mesh {
    frustum(radius, radius, height, segments)
}

/// Ellipsoid centered at the origin, restricted to polar angles in
/// `[0, theta_max]` measured from +z. `theta_max = π` gives the closed
/// solid; smaller values give a dome closed by a flat disc.
pub fn ellipsoid_cap(radii: [f64; 3], theta_max: f64, rings: usize, segments: usize) -> Mesh {
    let mut m = Mesh::new();
    let closed = theta_max >= std::f64::consts::PI - 1e-12;
    let top = m.push_vertex([0.0, 0.0, radii[2]]);
    let last_ring = if closed { rings - 1 } else { rings };
    let mut prev: Option<Vec<u32>> = None;
    for r in 1..=last_ring {
        let th = theta_max * r as f64 / rings as f64;
        let (st, ct) = th.sin_cos();
        let cur: Vec<u32> = (0..segments)
            .map(|i| {
                let a = TAU * i as f64 / segments as f64;
                m.push_vertex([radii[0] * st * a.cos(), radii[1] * st * a.sin(), radii[2] * ct])
            })
            .collect();
        match &prev {
            None => {
                for i in 0..segments {
                    m.push_tri(top, cur[i], cur[(i + 1) % segments]);
                }
            }
            Some(p) => {
                for i in 0..segments {
                    let j = (i + 1) % segments;
                    m.push_quad(p[i], cur[i], cur[j], p[j]);
                }
            }
        }
        prev = Some(cur);
    }
    let rim = prev.expect("at least one ring");
    let cap = if closed {
        m.push_vertex([0.0, 0.0, -radii[2]])
    } else {
        m.push_vertex([0.0, 0.0, radii[2] * theta_max.cos()])
    };
    for i in 0..segments {
        m.push_tri(cap, rim[(i + 1) % segments], rim[i]);
    }
    m
}

pub fn ellipsoid(radii: [f64; 3], rings: usize, segments: usize) -> Mesh {
    ellipsoid_cap(radii, std::f64::consts::PI, rings, segments)
}

pub fn sphere(radius: f64, rings: usize, segments: usize) -> Mesh {
    ellipsoid([radius; 3], rings, segments)
}

/// Torus in the xy plane around the origin, swept over `arc` radians
/// starting at angle 0. Partial sweeps are closed with end discs.
pub fn torus(major: f64, minor: f64, arc: f64, major_segments: usize, minor_segments: usize) -> Mesh {
    let mut m = Mesh::new();
    let full = arc >= TAU - 1e-12;
    let rings = if full { major_segments } else { major_segments + 1 };
    let mut idx = Vec::with_capacity(rings);
    for i in 0..rings {
        let a = arc * i as f64 / major_segments as f64;
        let (sa, ca) = a.sin_cos();
        let ring: Vec<u32> = (0..minor_segments)
            .map(|j| {
                let b = TAU * j as f64 / minor_segments as f64;
                let r = major + minor * b.cos();
                m.push_vertex([r * ca, r * sa, minor * b.sin()])
            })
            .collect();
        idx.push(ring);
    }
    for i in 0..major_segments {
        let (p, q) = (&idx[i], &idx[(i + 1) % rings]);
        for j in 0..minor_segments {
            let k = (j + 1) % minor_segments;
            m.push_quad(p[j], q[j], q[k], p[k]);
        }
    }
    if !full {
        for (ring, a) in [(&idx[0], 0.0f64), (&idx[rings - 1], arc)] {
            let c = m.push_vertex([major * a.cos(), major * a.sin(), 0.0]);
            for j in 0..minor_segments {
                m.push_tri(c, ring[j], ring[(j + 1) % minor_segments]);
            }
        }
    }
    m
}

/// Triangular prism: the cross-section is an isosceles triangle in the
/// xz plane with base `width` on `z = 0` and apex at `z = height`,
/// extruded along y over `depth`.
pub fn wedge(width: f64, depth: f64, height: f64) -> Mesh {
    let mut m = Mesh::new();
    let (hw, hd) = (width / 2.0, depth / 2.0);
    let mut end = |y: f64| {
        [
            m.push_vertex([-hw, y, 0.0]),
            m.push_vertex([hw, y, 0.0]),
            m.push_vertex([0.0, y, height]),
        ]
    };
    let a = end(-hd);
    let b = end(hd);
    m.push_tri(a[0], a[1], a[2]);
    m.push_tri(b[0], b[2], b[1]);
    m.push_quad(a[0], b[0], b[1], a[1]);
    m.push_quad(a[1], b[1], b[2], a[2]);
    m.push_quad(a[2], b[2], b[0], a[0]);
    m
}

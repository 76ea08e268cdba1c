use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::{LowShotError, Result};
use crate::scenegen::Dataset;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub base: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub split_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Base,
    Val,
    Test,
}

impl SplitSpec {
    /// Consecutive category ids: the first `base`, then `val`, then `test`.
    pub fn contiguous(base: usize, val: usize, test: usize) -> Self {
        Self {
            base: (0..base).collect(),
            val: (base..base + val).collect(),
            test: (base + val..base + val + test).collect(),
            split_index: 0,
        }
    }

    /// Keeps `base` fixed and reshuffles the remaining ids between val and
    /// test; split 0 is the unshuffled order.
    pub fn reshuffled(&self, split_index: usize, seed: u64) -> Self {
        let mut rest: Vec<usize> = self.val.iter().chain(&self.test).copied().collect();
        if split_index > 0 {
            rest.shuffle(&mut seed::rng(seed, "split", &[split_index as u64]));
        }
        let (val, test) = rest.split_at(self.val.len());
        Self {
            base: self.base.clone(),
            val: val.to_vec(),
            test: test.to_vec(),
            split_index,
        }
    }

    pub fn get(&self, name: SplitName) -> &[usize] {
        match name {
            SplitName::Base => &self.base,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    /// Disjoint, and together exactly the dataset's category ids.
    pub fn validate(&self, category_ids: &[usize]) -> Result<()> {
        let mut all: Vec<usize> = self.base.iter().chain(&self.val).chain(&self.test).copied().collect();
        all.sort_unstable();
        let n = all.len();
        all.dedup();
        if all.len() != n {
            return Err(LowShotError::InvalidSplit("splits overlap".into()));
        }
        let mut ids = category_ids.to_vec();
        ids.sort_unstable();
        if all != ids {
            return Err(LowShotError::InvalidSplit(format!(
                "splits cover {all:?}, dataset has {ids:?}"
            )));
        }
        Ok(())
    }

    /// Indices of `Dataset::objects` whose category lies in `name`.
    pub fn objects(&self, dataset: &Dataset, name: SplitName) -> Vec<usize> {
        let ids = self.get(name);
        dataset
            .objects
            .iter()
            .enumerate()
            .filter(|(_, o)| ids.contains(&o.category_id))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ViewRef {
    pub object: usize,
    pub view: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_queries: usize,
    /// `(view, category_id)`.
    pub support: Vec<(ViewRef, usize)>,
    pub queries: Vec<(ViewRef, usize)>,
}

/// Draws `count` episodes from the categories of `split`. When a category
/// has at least `k_shot + q_queries` instances every image of an episode
/// comes from a different instance; otherwise views are drawn without
/// replacement from the category's pooled views.
#[allow(clippy::too_many_arguments)]
pub fn sample_episodes(
    dataset: &Dataset,
    split: &SplitSpec,
    name: SplitName,
    n_way: usize,
    k_shot: usize,
    q_queries: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    let cats = split.get(name);
    if n_way == 0 || cats.len() < n_way {
        return Err(LowShotError::InsufficientClasses {
            available: cats.len(),
            needed: n_way.max(1),
        });
    }
    let need = k_shot + q_queries;
    let by_cat: Vec<Vec<usize>> = cats
        .iter()
        .map(|&c| {
            dataset
                .objects
                .iter()
                .enumerate()
                .filter(|(_, o)| o.category_id == c)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    for (&c, objs) in cats.iter().zip(&by_cat) {
        let views: usize = objs.iter().map(|&o| dataset.objects[o].views.len()).sum();
        if views < need {
            return Err(LowShotError::InsufficientViews {
                category: c,
                available: views,
                needed: need,
            });
        }
    }
    let mut rng = seed::rng(seed, "episodes", &[n_way as u64, k_shot as u64, q_queries as u64]);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let chosen = index::sample(&mut rng, cats.len(), n_way);
        let mut support = Vec::with_capacity(n_way * k_shot);
        let mut queries = Vec::with_capacity(n_way * q_queries);
        for ci in chosen.iter() {
            let objs = &by_cat[ci];
            let refs: Vec<ViewRef> = if objs.len() >= need {
                index::sample(&mut rng, objs.len(), need)
                    .iter()
                    .map(|oi| {
                        let object = objs[oi];
                        let nv = dataset.objects[object].views.len();
                        ViewRef { object, view: index::sample(&mut rng, nv, 1).index(0) }
                    })
                    .collect()
            } else {
                let pool: Vec<ViewRef> = objs
                    .iter()
                    .flat_map(|&object| {
                        (0..dataset.objects[object].views.len()).map(move |view| ViewRef { object, view })
                    })
                    .collect();
                index::sample(&mut rng, pool.len(), need).iter().map(|i| pool[i]).collect()
            };
            let label = cats[ci];
            support.extend(refs[..k_shot].iter().map(|&r| (r, label)));
            queries.extend(refs[k_shot..].iter().map(|&r| (r, label)));
        }
        out.push(Episode {
            n_way,
            k_shot,
            q_queries,
            support,
            queries,
        });
    }
    Ok(out)
}

//! Seeded batch composition over the labeled and unlabeled pools.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::Phase;

use super::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LabeledRef {
    Synthetic(usize),
    Pseudo(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub labeled: Vec<LabeledRef>,
    pub unlabeled: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSizes {
    pub synthetic: usize,
    pub pseudo: usize,
    pub unlabeled: usize,
}

/// Endless stream of seeded permutations of a pool.
struct Queue<T: Clone> {
    items: Vec<T>,
    buf: Vec<T>,
    rng: ChaCha8Rng,
}

impl<T: Clone> Queue<T> {
    fn new(items: Vec<T>, seed: u64) -> Self {
        Queue {
            items,
            buf: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn take(&mut self, n: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.buf.is_empty() {
                self.buf = self.items.clone();
                self.buf.shuffle(&mut self.rng);
                self.buf.reverse();
            }
            out.push(self.buf.pop().expect("refilled queue"));
        }
        out
    }
}

/// Iterations in one epoch: one pass over the labeled pools.
pub fn iterations_per_epoch(pools: &PoolSizes, batch_size: usize) -> usize {
    let labeled_per_batch = (batch_size / 2).max(1);
    (pools.synthetic + pools.pseudo).div_ceil(labeled_per_batch)
}

/// All batches of one epoch. Warm-up batches hold `batch_size / 2`
/// synthetic and `batch_size / 2` pseudo-labeled clips; tuning batches hold
/// `batch_size / 2` labeled clips drawn from both labeled pools together and
/// `batch_size / 2` unlabeled clips.
pub fn compose_epoch(
    pools: &PoolSizes,
    phase: Phase,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Batch>> {
    if batch_size < 2 || batch_size % 2 != 0 {
        return Err(Error::config(format!(
            "batch size must be even and at least 2, got {batch_size}"
        )));
    }
    let half = batch_size / 2;
    let n_iter = iterations_per_epoch(pools, batch_size);
    let base = mix_seed(seed, &[0xba7c, phase as u64, epoch as u64]);
    let synthetic: Vec<LabeledRef> = (0..pools.synthetic).map(LabeledRef::Synthetic).collect();
    let pseudo: Vec<LabeledRef> = (0..pools.pseudo).map(LabeledRef::Pseudo).collect();
    match phase {
        Phase::Warmup => {
            if synthetic.is_empty() || pseudo.is_empty() {
                return Err(Error::config(
                    "warm-up needs both synthetic and pseudo-labeled clips",
                ));
            }
            let mut qs = Queue::new(synthetic, mix_seed(base, &[1]));
            let mut qp = Queue::new(pseudo, mix_seed(base, &[2]));
            Ok((0..n_iter)
                .map(|_| {
                    let mut labeled = qs.take(half);
                    labeled.extend(qp.take(half));
                    Batch {
                        labeled,
                        unlabeled: Vec::new(),
                    }
                })
                .collect())
        }
        Phase::Tuning => {
            let mut labeled = synthetic;
            labeled.extend(pseudo);
            if labeled.is_empty() || pools.unlabeled == 0 {
                return Err(Error::config("tuning needs labeled and unlabeled clips"));
            }
            let mut ql = Queue::new(labeled, mix_seed(base, &[3]));
            let mut qu = Queue::new((0..pools.unlabeled).collect(), mix_seed(base, &[4]));
            Ok((0..n_iter)
                .map(|_| Batch {
                    labeled: ql.take(half),
                    unlabeled: qu.take(half),
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    const FULL_SCALE: PoolSizes = PoolSizes {
        synthetic: 100,
        pseudo: 90,
        unlabeled: 300,
    };

    #[test]
    fn warmup_is_even_split() {
        for b in compose_epoch(&FULL_SCALE, Phase::Warmup, 32, 1, 0).unwrap() {
            let syn = b
                .labeled
                .iter()
                .filter(|r| matches!(r, LabeledRef::Synthetic(_)))
                .count();
            assert_eq!((syn, b.labeled.len() - syn), (16, 16));
            assert!(b.unlabeled.is_empty());
        }
    }

    #[test]
    fn tuning_is_half_unlabeled() {
        for b in compose_epoch(&FULL_SCALE, Phase::Tuning, 64, 1, 0).unwrap() {
            assert_eq!((b.labeled.len(), b.unlabeled.len()), (32, 32));
        }
    }

    #[test]
    fn seeded_and_epoch_dependent() {
        let a = compose_epoch(&FULL_SCALE, Phase::Tuning, 64, 5, 3).unwrap();
        assert_eq!(
            a,
            compose_epoch(&FULL_SCALE, Phase::Tuning, 64, 5, 3).unwrap()
        );
        assert_ne!(
            a,
            compose_epoch(&FULL_SCALE, Phase::Tuning, 64, 5, 4).unwrap()
        );
    }

    #[test]
    fn no_repeats_within_a_pass() {
        let batches = compose_epoch(&FULL_SCALE, Phase::Tuning, 64, 2, 0).unwrap();
        let first: Vec<LabeledRef> = batches
            .iter()
            .flat_map(|b| b.labeled.clone())
            .take(190)
            .collect();
        assert_eq!(first.iter().collect::<BTreeSet<_>>().len(), 190);
    }

    #[test]
    fn empty_pools_rejected() {
        let p = PoolSizes {
            pseudo: 0,
            ..FULL_SCALE
        };
        assert!(compose_epoch(&p, Phase::Warmup, 32, 0, 0).is_err());
        let p = PoolSizes {
            unlabeled: 0,
            ..FULL_SCALE
        };
        assert!(compose_epoch(&p, Phase::Tuning, 64, 0, 0).is_err());
        assert!(compose_epoch(&FULL_SCALE, Phase::Tuning, 7, 0, 0).is_err());
    }
}

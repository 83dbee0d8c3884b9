//! Latin Hypercube point sets for collocation, boundary and initial conditions.
//!
//! Generator: a ChaCha8 stream seeded with the batch seed and a per-role stream
//! id. Dimensions are drawn in order; each one is a Fisher–Yates shuffle of the
//! strata followed by one uniform offset per point, squeezed by 1e-9 away from
//! the stratum edges so that `floor(x·n)` always recovers the stratum.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::physics::Regime;

const EDGE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SampleRole {
    Pde,
    BcUp,
    BcDown,
    Ic,
}

impl SampleRole {
    fn stream(self) -> u64 {
        match self {
            SampleRole::Pde => 0,
            SampleRole::BcUp => 1,
            SampleRole::BcDown => 2,
            SampleRole::Ic => 3,
        }
    }
}

/// Network inputs for one loss term. Only `free_dims` were sampled; the other
/// coordinates are pinned (x̃ at a boundary, t̃ = 0 for initial conditions).
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub role: SampleRole,
    pub points: Array2<f64>,
    pub free_dims: Vec<usize>,
    pub seed: u64,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }
}

/// `n` points in [0,1)^d, one per stratum in every dimension.
pub fn lhs(n: usize, d: usize, seed: u64) -> Array2<f64> {
    lhs_stream(n, d, seed, 0)
}

fn lhs_stream(n: usize, d: usize, seed: u64, stream: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut out = Array2::zeros((n, d));
    let mut strata: Vec<usize> = Vec::with_capacity(n);
    for j in 0..d {
        strata.clear();
        strata.extend(0..n);
        strata.shuffle(&mut rng);
        for (i, &k) in strata.iter().enumerate() {
            let u: f64 = rng.gen();
            out[[i, j]] = (k as f64 + EDGE + u * (1.0 - 2.0 * EDGE)) / n as f64;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleSizes {
    pub n_f: usize,
    pub n_b: usize,
    pub n_i: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSets {
    pub pde: SampleBatch,
    pub bc_up: SampleBatch,
    pub bc_down: SampleBatch,
    pub ic: Option<SampleBatch>,
}

fn pinned(role: SampleRole, n: usize, input_dim: usize, pin: (usize, f64), seed: u64) -> SampleBatch {
    let free: Vec<usize> = (0..input_dim).filter(|&k| k != pin.0).collect();
    let raw = lhs_stream(n, free.len(), seed, role.stream());
    let mut points = Array2::from_elem((n, input_dim), pin.1);
    for (c, &k) in free.iter().enumerate() {
        points.column_mut(k).assign(&raw.column(c));
    }
    SampleBatch { role, points, free_dims: free, seed }
}

/// Collocation, boundary and (transient only) initial-condition sets.
///
/// Inputs are (x̃, ũ) for steady and (x̃, t̃, ũ₀, ũ) for transient. N_B is split
/// between the boundaries; the upstream set takes the odd point.
pub fn build_training_sets(regime: Regime, sizes: SampleSizes, seed: u64) -> TrainingSets {
    let input_dim = match regime {
        Regime::Steady => 2,
        Regime::Transient => 4,
    };
    let up = sizes.n_b.div_ceil(2);
    let down = sizes.n_b / 2;
    let pde = SampleBatch {
        role: SampleRole::Pde,
        points: lhs_stream(sizes.n_f, input_dim, seed, SampleRole::Pde.stream()),
        free_dims: (0..input_dim).collect(),
        seed,
    };
    TrainingSets {
        pde,
        bc_up: pinned(SampleRole::BcUp, up, input_dim, (0, 0.0), seed),
        bc_down: pinned(SampleRole::BcDown, down, input_dim, (0, 1.0), seed),
        ic: (regime == Regime::Transient).then(|| pinned(SampleRole::Ic, sizes.n_i, input_dim, (1, 0.0), seed)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stratified(points: &Array2<f64>, dims: &[usize]) -> bool {
        let n = points.nrows();
        dims.iter().all(|&j| {
            let mut hit = vec![0usize; n];
            for i in 0..n {
                let x = points[[i, j]];
                assert!((0.0..1.0).contains(&x));
                hit[(x * n as f64).floor() as usize] += 1;
            }
            hit.iter().all(|&h| h == 1)
        })
    }

    #[test]
    fn four_points_fill_the_quartiles() {
        let p = lhs(4, 1, 0);
        let mut v: Vec<f64> = p.column(0).to_vec();
        v.sort_by(f64::total_cmp);
        for (k, x) in v.iter().enumerate() {
            assert!(*x >= k as f64 / 4.0 && *x < (k + 1) as f64 / 4.0);
        }
        let one = lhs(1, 3, 0);
        assert!(one.iter().all(|x| (0.0..1.0).contains(x)));
    }

    #[test]
    fn thousand_point_histogram_is_exact() {
        assert!(stratified(&lhs(1000, 4, 3), &[0, 1, 2, 3]));
    }

    #[test]
    fn seeds_reproduce_and_differ() {
        assert_eq!(lhs(50, 2, 9), lhs(50, 2, 9));
        assert_ne!(lhs(50, 2, 9).column(0), lhs(50, 2, 10).column(0));
    }

    #[test]
    fn steady_sets_split_boundary_points() {
        let s = build_training_sets(Regime::Steady, SampleSizes { n_f: 1000, n_b: 200, n_i: 0 }, 1);
        assert_eq!((s.pde.len(), s.bc_up.len(), s.bc_down.len()), (1000, 100, 100));
        assert!(s.ic.is_none());
        assert!(s.bc_up.points.column(0).iter().all(|&x| x == 0.0));
        assert!(s.bc_down.points.column(0).iter().all(|&x| x == 1.0));
        assert!(stratified(&s.bc_up.points, &[1]));
        let odd = build_training_sets(Regime::Steady, SampleSizes { n_f: 10, n_b: 7, n_i: 0 }, 1);
        assert_eq!((odd.bc_up.len(), odd.bc_down.len()), (4, 3));
    }

    #[test]
    fn transient_sets_pin_time_for_initial_conditions() {
        let s = build_training_sets(Regime::Transient, SampleSizes { n_f: 10000, n_b: 2000, n_i: 1000 }, 4);
        assert_eq!(s.pde.points.dim(), (10000, 4));
        let ic = s.ic.unwrap();
        assert_eq!(ic.len(), 1000);
        assert!(ic.points.column(1).iter().all(|&t| t == 0.0));
        assert!(stratified(&ic.points, &[0, 2, 3]));
        assert!(stratified(&s.bc_down.points, &[1, 2, 3]));
        assert!(stratified(&s.pde.points, &[0, 1, 2, 3]));
    }

    proptest! {
        #[test]
        fn every_batch_is_stratified(n in 1usize..400, d in 1usize..5, seed in any::<u64>()) {
            let p = lhs(n, d, seed);
            prop_assert_eq!(p.dim(), (n, d));
            prop_assert!(stratified(&p, &(0..d).collect::<Vec<_>>()));
        }
    }
}

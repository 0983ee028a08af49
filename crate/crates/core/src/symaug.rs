//! N-fold rotational symmetry: schema-driven vector transforms and dataset
//! augmentation.
//!
//! A schema splits each state/action vector into two kinds of components:
//!
//! * **block cycles**: equal-length blocks, one per symmetry slot, whose
//!   contents are written in slot-local coordinates and therefore move
//!   between slots verbatim when the scene rotates;
//! * **rotating pairs**: planar `(x, y)` coordinates in the world frame that
//!   rotate by `2*pi*k/N`.
//!
//! Together the blocks and pairs must partition the vector exactly; any
//! component the transform would not know how to move is a schema error,
//! not silently copied data.

use crate::dataset::{Episode, EpisodeDataset, Transition};
use crate::error::{schema, Result};
use crate::rng;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// One logical block replicated across all `N` symmetry slots.
/// `offsets[j]` is where the slot-`j` copy starts; all copies span `len`
/// components.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockCycle {
    pub len: usize,
    pub offsets: Vec<usize>,
}

/// Symmetry layout of one vector space (state or action).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorSchema {
    pub dim: usize,
    pub cycles: Vec<BlockCycle>,
    /// Start offsets of world-frame `(x, y)` pairs.
    pub pairs: Vec<usize>,
}

/// Symmetry layout of a whole transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetrySchema {
    pub n_fold: usize,
    pub state: VectorSchema,
    pub action: VectorSchema,
}

impl VectorSchema {
    fn validate(&self, n_fold: usize, what: &str) -> Result<()> {
        let mut covered = vec![false; self.dim];
        let mut cover = |start: usize, len: usize| -> Result<()> {
            if start + len > self.dim {
                return Err(schema(format!(
                    "{what}: span [{start}, {}) exceeds dim {}",
                    start + len,
                    self.dim
                )));
            }
            for i in start..start + len {
                if covered[i] {
                    return Err(schema(format!("{what}: component {i} covered twice")));
                }
                covered[i] = true;
            }
            Ok(())
        };
        for (c, cycle) in self.cycles.iter().enumerate() {
            if cycle.len == 0 {
                return Err(schema(format!("{what}: cycle {c} has zero-length blocks")));
            }
            if cycle.offsets.len() != n_fold {
                return Err(schema(format!(
                    "{what}: cycle {c} has {} slots, schema is {n_fold}-fold",
                    cycle.offsets.len()
                )));
            }
            for &off in &cycle.offsets {
                cover(off, cycle.len)?;
            }
        }
        for &off in &self.pairs {
            cover(off, 2)?;
        }
        if let Some(gap) = covered.iter().position(|&c| !c) {
            return Err(schema(format!(
                "{what}: component {gap} is neither in a block cycle nor a rotating pair"
            )));
        }
        Ok(())
    }

    /// Applies the `k`-step transform: slot `j` receives slot `j + k`'s
    /// block contents, and every pair rotates counterclockwise by
    /// `2*pi*k/N`. `k` is taken modulo `N`; `k = 0` is the identity.
    fn apply(&self, n_fold: usize, values: &[f64], k: usize) -> Vec<f64> {
        assert_eq!(values.len(), self.dim, "vector width does not match schema");
        let k = k % n_fold;
        if k == 0 {
            return values.to_vec();
        }
        let angle = 2.0 * std::f64::consts::PI * k as f64 / n_fold as f64;
        let (sin, cos) = angle.sin_cos();
        let mut out = vec![0.0; self.dim];
        for cycle in &self.cycles {
            for j in 0..n_fold {
                let src = cycle.offsets[(j + k) % n_fold];
                let dst = cycle.offsets[j];
                out[dst..dst + cycle.len].copy_from_slice(&values[src..src + cycle.len]);
            }
        }
        for &off in &self.pairs {
            let (x, y) = (values[off], values[off + 1]);
            out[off] = x * cos - y * sin;
            out[off + 1] = x * sin + y * cos;
        }
        out
    }
}

impl SymmetrySchema {
    pub fn validate(&self) -> Result<()> {
        if self.n_fold < 2 {
            return Err(schema("symmetry order must be at least 2"));
        }
        self.state.validate(self.n_fold, "state schema")?;
        self.action.validate(self.n_fold, "action schema")
    }

    pub fn apply_state(&self, state: &[f64], k: usize) -> Vec<f64> {
        self.state.apply(self.n_fold, state, k)
    }

    pub fn apply_action(&self, action: &[f64], k: usize) -> Vec<f64> {
        self.action.apply(self.n_fold, action, k)
    }
}

fn transform_episode(
    ep: &Episode,
    schema: &SymmetrySchema,
    k: usize,
    id: u64,
) -> Episode {
    let steps = ep
        .steps
        .iter()
        .map(|t| {
            let state: Vec<f64> = t.state.iter().map(|&v| f64::from(v)).collect();
            let action: Vec<f64> = t.action.iter().map(|&v| f64::from(v)).collect();
            Transition {
                state: schema
                    .apply_state(&state, k)
                    .into_iter()
                    .map(|v| v as f32)
                    .collect(),
                action: schema
                    .apply_action(&action, k)
                    .into_iter()
                    .map(|v| v as f32)
                    .collect(),
                reward: t.reward,
            }
        })
        .collect();
    Episode {
        id,
        label: ep.label,
        steps,
    }
}

/// Expands the dataset `N`-fold by applying every symmetry transform to
/// every episode. Episode `e` yields ids `e.id * N + k` for `k in 0..N`, in
/// that order, so `id / N` recovers the source and `id % N` the transform.
/// The `k = 0` copy is the original, bit for bit; rewards are copied
/// verbatim for every `k`.
pub fn augment_dataset(
    ds: &EpisodeDataset,
    schema: &SymmetrySchema,
) -> Result<EpisodeDataset> {
    schema.validate()?;
    if schema.state.dim != ds.state_dim || schema.action.dim != ds.action_dim {
        return Err(schema_dim_error(ds, schema));
    }
    let n = schema.n_fold as u64;
    let mut out = EpisodeDataset::new(ds.state_dim, ds.action_dim, ds.episode_len);
    out.episodes.reserve(ds.episodes.len() * schema.n_fold);
    for ep in &ds.episodes {
        if ep.id > (u64::MAX - (n - 1)) / n {
            return Err(crate::error::domain(format!(
                "episode id {} cannot be renumbered for {}-fold augmentation",
                ep.id, n
            )));
        }
        for k in 0..schema.n_fold {
            if k == 0 {
                let mut copy = ep.clone();
                copy.id = ep.id * n;
                out.episodes.push(copy);
            } else {
                out.episodes
                    .push(transform_episode(ep, schema, k, ep.id * n + k as u64));
            }
        }
    }
    Ok(out)
}

fn schema_dim_error(ds: &EpisodeDataset, s: &SymmetrySchema) -> crate::error::Error {
    schema(format!(
        "schema dims ({}, {}) do not match dataset dims ({}, {})",
        s.state.dim, s.action.dim, ds.state_dim, ds.action_dim
    ))
}

/// Baseline augmentation for comparison: expands the dataset `n_copies`-fold
/// by perturbing states with isotropic Gaussian noise of the given variance.
/// Copy `k = 0` is the original; actions and rewards are copied verbatim.
/// Ids follow the same `e.id * n_copies + k` rule as [`augment_dataset`].
pub fn augment_gaussian(
    ds: &EpisodeDataset,
    n_copies: usize,
    variance: f64,
    seed: u64,
) -> Result<EpisodeDataset> {
    if n_copies < 1 {
        return Err(crate::error::domain("need at least one copy"));
    }
    if !(variance.is_finite() && variance >= 0.0) {
        return Err(crate::error::domain(format!(
            "noise variance must be finite and >= 0, got {variance}"
        )));
    }
    let normal = Normal::new(0.0, variance.sqrt())
        .map_err(|e| crate::error::domain(format!("bad noise distribution: {e}")))?;
    let n = n_copies as u64;
    let mut out = EpisodeDataset::new(ds.state_dim, ds.action_dim, ds.episode_len);
    out.episodes.reserve(ds.episodes.len() * n_copies);
    for ep in &ds.episodes {
        if ep.id > (u64::MAX - (n - 1)) / n {
            return Err(crate::error::domain(format!(
                "episode id {} cannot be renumbered for {}-fold augmentation",
                ep.id, n
            )));
        }
        for k in 0..n_copies {
            let mut copy = ep.clone();
            copy.id = ep.id * n + k as u64;
            if k > 0 {
                let mut r = rng::substream(seed, "gauss-aug", copy.id);
                let _ = r.random::<u64>();
                for t in &mut copy.steps {
                    for v in &mut t.state {
                        *v = (f64::from(*v) + normal.sample(&mut r)) as f32;
                    }
                }
            }
            out.episodes.push(copy);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Label;

    /// 3-fold toy layout: state = one 2-wide cycle at [0,2,4] plus a pair
    /// at 6; action = one 1-wide cycle at [0,1,2].
    fn toy_schema() -> SymmetrySchema {
        SymmetrySchema {
            n_fold: 3,
            state: VectorSchema {
                dim: 8,
                cycles: vec![BlockCycle {
                    len: 2,
                    offsets: vec![0, 2, 4],
                }],
                pairs: vec![6],
            },
            action: VectorSchema {
                dim: 3,
                cycles: vec![BlockCycle {
                    len: 1,
                    offsets: vec![0, 1, 2],
                }],
                pairs: vec![],
            },
        }
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() <= tol, "component {i}: {x} vs {y}");
        }
    }

    #[test]
    fn validation_catches_bad_layouts() {
        let mut s = toy_schema();
        s.state.pairs = vec![5];
        assert!(s.validate().is_err(), "overlap accepted");

        let mut s = toy_schema();
        s.state.dim = 9;
        assert!(s.validate().is_err(), "gap accepted");

        let mut s = toy_schema();
        s.state.pairs = vec![7];
        assert!(s.validate().is_err(), "out-of-bounds pair accepted");

        let mut s = toy_schema();
        s.state.cycles[0].offsets.pop();
        assert!(s.validate().is_err(), "short cycle accepted");

        let mut s = toy_schema();
        s.n_fold = 1;
        assert!(s.validate().is_err(), "trivial symmetry accepted");

        assert!(toy_schema().validate().is_ok());
    }

    #[test]
    fn zero_fold_is_identity() {
        let s = toy_schema();
        let v = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
        assert_eq!(s.apply_state(&v, 0), v.to_vec());
        assert_eq!(s.apply_state(&v, 3), v.to_vec());
    }

    #[test]
    fn blocks_shift_one_slot_per_fold() {
        let s = toy_schema();
        // Action slots hold [A, B, C]; one fold later slot 0 holds B.
        let rotated = s.apply_action(&[10.0, 20.0, 30.0], 1);
        assert_eq!(rotated, vec![20.0, 30.0, 10.0]);
        let rotated = s.apply_action(&[10.0, 20.0, 30.0], 2);
        assert_eq!(rotated, vec![30.0, 10.0, 20.0]);
    }

    #[test]
    fn pairs_rotate_counterclockwise() {
        let s = toy_schema();
        let mut v = [0.0; 8];
        v[6] = 1.0;
        v[7] = 0.0;
        let r1 = s.apply_state(&v, 1);
        assert!((r1[6] - (-0.5)).abs() < 1e-12);
        assert!((r1[7] - 0.75f64.sqrt()).abs() < 1e-12);
        let r2 = s.apply_state(&v, 2);
        assert!((r2[6] - (-0.5)).abs() < 1e-12);
        assert!((r2[7] + 0.75f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn transforms_compose_and_cycle() {
        let s = toy_schema();
        let v = [0.3, -0.8, 1.2, 0.05, -0.4, 0.9, 0.6, -0.25];
        for k1 in 0..3 {
            for k2 in 0..3 {
                let stepwise = s.apply_state(&s.apply_state(&v, k1), k2);
                let direct = s.apply_state(&v, k1 + k2);
                assert_close(&stepwise, &direct, 1e-12);
            }
        }
        let full = s.apply_state(&s.apply_state(&s.apply_state(&v, 1), 1), 1);
        assert_close(&full, &v, 1e-12);
    }

    fn toy_dataset() -> EpisodeDataset {
        let step = |a: f32| Transition {
            state: vec![a, a + 0.1, a + 0.2, a + 0.3, a + 0.4, a + 0.5, 0.6, -0.25],
            action: vec![a, -a, 2.0 * a],
            reward: a,
        };
        EpisodeDataset {
            state_dim: 8,
            action_dim: 3,
            episode_len: 2,
            episodes: vec![
                Episode {
                    id: 0,
                    label: Label::Expert,
                    steps: vec![step(0.1), step(0.2)],
                },
                Episode {
                    id: 5,
                    label: Label::Weak,
                    steps: vec![step(0.3), step(0.4)],
                },
            ],
        }
    }

    #[test]
    fn augmentation_triples_with_traceable_ids() {
        let ds = toy_dataset();
        let aug = augment_dataset(&ds, &toy_schema()).unwrap();
        assert_eq!(aug.n_episodes(), 6);
        let ids: Vec<u64> = aug.episodes.iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![0, 1, 2, 15, 16, 17]);
        aug.validate().unwrap();

        // k = 0 copies are bitwise originals.
        assert_eq!(aug.episodes[0].steps, ds.episodes[0].steps);
        assert_eq!(aug.episodes[3].steps, ds.episodes[1].steps);
        // Labels and rewards survive every transform untouched.
        for (i, ep) in aug.episodes.iter().enumerate() {
            let src = &ds.episodes[i / 3];
            assert_eq!(ep.label, src.label);
            for (t, s) in ep.steps.iter().zip(&src.steps) {
                assert_eq!(t.reward, s.reward);
            }
        }
    }

    #[test]
    fn augmentation_rejects_mismatched_dims() {
        let mut ds = toy_dataset();
        ds.state_dim = 9;
        assert!(augment_dataset(&ds, &toy_schema()).is_err());
    }

    #[test]
    fn augmentation_rejects_id_overflow() {
        let mut ds = toy_dataset();
        ds.episodes[1].id = u64::MAX / 2;
        assert!(augment_dataset(&ds, &toy_schema()).is_err());
    }

    #[test]
    fn gaussian_augmentation_perturbs_states_only() {
        let ds = toy_dataset();
        let aug = augment_gaussian(&ds, 3, 3e-4, 11).unwrap();
        assert_eq!(aug.n_episodes(), 6);
        assert_eq!(aug.episodes[0].steps, ds.episodes[0].steps);
        for k in 1..3 {
            let noisy = &aug.episodes[k];
            let src = &ds.episodes[0];
            assert_ne!(noisy.steps[0].state, src.steps[0].state);
            for (t, s) in noisy.steps.iter().zip(&src.steps) {
                assert_eq!(t.action, s.action);
                assert_eq!(t.reward, s.reward);
                for (a, b) in t.state.iter().zip(&s.state) {
                    assert!((a - b).abs() < 0.2, "noise implausibly large");
                }
            }
        }
        // Distinct copies get distinct noise.
        assert_ne!(aug.episodes[1].steps[0].state, aug.episodes[2].steps[0].state);
        // Same seed reproduces; different seed does not.
        let again = augment_gaussian(&ds, 3, 3e-4, 11).unwrap();
        assert_eq!(aug, again);
        let other = augment_gaussian(&ds, 3, 3e-4, 12).unwrap();
        assert_ne!(aug, other);
    }
}

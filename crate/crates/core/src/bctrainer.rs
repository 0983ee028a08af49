//! Behavioral cloning with a two-phase schedule: long higher-rate training
//! on an augmented dataset, then short lower-rate fine-tuning on the raw
//! dataset the augmentation came from.
//!
//! The policy is a fully-connected network with a Tanh output head, trained
//! in a normalized action space: per-dimension bounds recorded from the
//! phase-one dataset map actions onto [-1, 1], and inference maps back, so
//! emitted actions always lie within the recorded bounds.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::EpisodeDataset;
use crate::error::{domain, Error, Result};
use crate::neuralnet::checkpoint;
use crate::neuralnet::{mse_loss_and_grad, Activation, Adam, Mlp};
use crate::rng;

/// Step budget, batch size, and learning rate for one training phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseParams {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcConfig {
    pub phase1: PhaseParams,
    pub phase2: PhaseParams,
    pub policy_hidden: Vec<usize>,
    pub rng_seed: u64,
}

/// Transitions covered by one schedule unit; a unit is worth five phase-one
/// steps and two phase-two steps, preserving the 5:2 step ratio (and the
/// 1e-3 : 2e-4 learning-rate ratio) while scaling budgets to dataset size.
pub const TRANSITIONS_PER_UNIT: usize = 28;

impl BcConfig {
    /// Step budgets scaled to the number of phase-one training transitions.
    pub fn scaled_to(n_transitions: usize) -> BcConfig {
        let units = n_transitions.div_ceil(TRANSITIONS_PER_UNIT).max(1);
        BcConfig {
            phase1: PhaseParams {
                steps: 5 * units,
                batch: 1024,
                lr: 1e-3,
            },
            phase2: PhaseParams {
                steps: 2 * units,
                batch: 1024,
                lr: 2e-4,
            },
            policy_hidden: vec![256, 256],
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("phase1", &self.phase1), ("phase2", &self.phase2)] {
            if p.batch == 0 {
                return Err(domain(format!("{name}.batch must be >= 1")));
            }
            if !(p.lr > 0.0 && p.lr.is_finite()) {
                return Err(domain(format!("{name}.lr must be positive and finite")));
            }
        }
        if self.phase1.steps == 0 {
            return Err(domain("phase1.steps must be >= 1"));
        }
        if self.policy_hidden.is_empty() || self.policy_hidden.contains(&0) {
            return Err(domain("policy_hidden must be nonempty and positive"));
        }
        Ok(())
    }
}

/// Deterministic policy: state in, action out, outputs always inside the
/// action bounds recorded at training time.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    net: Mlp<f32>,
    center: Vec<f32>,
    halfwidth: Vec<f32>,
}

/// Smallest representable half-range; keeps degenerate (constant) action
/// dimensions invertible.
const MIN_HALFWIDTH: f32 = 1e-6;

impl PolicyModel {
    /// Fresh Glorot-initialized policy with Tanh output, denormalized by
    /// per-dimension action bounds.
    pub fn new(
        state_dim: usize,
        policy_hidden: &[usize],
        action_lo: &[f64],
        action_hi: &[f64],
        init_rng: &mut ChaCha8Rng,
    ) -> Result<PolicyModel> {
        if action_lo.len() != action_hi.len() || action_lo.is_empty() {
            return Err(domain("action bounds must be nonempty and equal length"));
        }
        let mut dims = vec![state_dim];
        dims.extend_from_slice(policy_hidden);
        dims.push(action_lo.len());
        let net = Mlp::glorot(&dims, Activation::Relu, Activation::Tanh, init_rng)?;
        let center = action_lo
            .iter()
            .zip(action_hi)
            .map(|(&l, &h)| ((l + h) / 2.0) as f32)
            .collect();
        let halfwidth = action_lo
            .iter()
            .zip(action_hi)
            .map(|(&l, &h)| (((h - l) / 2.0) as f32).max(MIN_HALFWIDTH))
            .collect();
        Ok(PolicyModel {
            net,
            center,
            halfwidth,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// Actions for a batch of states, one row each.
    pub fn act_batch(&self, states: &Array2<f32>) -> Array2<f32> {
        let mut out = self.net.forward(states);
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.center[j] + self.halfwidth[j] * *v;
            }
        }
        out
    }

    /// Action for a single state.
    pub fn act(&self, state: &[f64]) -> Vec<f64> {
        let x = Array2::from_shape_vec(
            (1, state.len()),
            state.iter().map(|&v| v as f32).collect(),
        )
        .expect("sized");
        self.act_batch(&x).row(0).iter().map(|&v| f64::from(v)).collect()
    }

    /// Maps raw actions onto the training space [-1, 1].
    fn normalize_actions(&self, actions: &Array2<f32>) -> Array2<f32> {
        let mut out = actions.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = ((*v - self.center[j]) / self.halfwidth[j]).clamp(-1.0, 1.0);
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = PolicyHeader {
            kind: "policy".to_string(),
            dims: self.net.dims(),
            activations: self.net.activations().to_vec(),
            center: self.center.clone(),
            halfwidth: self.halfwidth.clone(),
        };
        let mut buf = Vec::new();
        checkpoint::write_container(&mut buf, &header, &self.net.params_flat())?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PolicyModel> {
        let bytes = std::fs::read(path)?;
        let (header, params) = checkpoint::read_container(&bytes)?;
        let kind = checkpoint::header_kind(&header)?;
        if kind != "policy" {
            return Err(domain(format!(
                "expected a policy checkpoint, found kind {kind:?}"
            )));
        }
        let h: PolicyHeader = serde_json::from_str(&header)?;
        let net = Mlp::from_parts(&h.dims, &h.activations, &params)?;
        if h.center.len() != net.output_dim() || h.halfwidth.len() != net.output_dim() {
            return Err(domain("policy bounds do not match the network output"));
        }
        if h.halfwidth.iter().any(|&w| !(w > 0.0)) {
            return Err(domain("policy halfwidths must be positive"));
        }
        Ok(PolicyModel {
            net,
            center: h.center,
            halfwidth: h.halfwidth,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyHeader {
    kind: String,
    dims: Vec<usize>,
    activations: Vec<Activation>,
    center: Vec<f32>,
    halfwidth: Vec<f32>,
}

/// (step, minibatch loss) samples, every 1000 steps plus the final step.
pub type LossCurve = Vec<(usize, f64)>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub phase1: LossCurve,
    pub phase2: LossCurve,
}

/// Flattened (state, normalized-action) pairs of a dataset.
struct FlatPairs {
    states: Array2<f32>,
    targets: Array2<f32>,
}

fn flatten_pairs(ds: &EpisodeDataset, model: &PolicyModel) -> Result<FlatPairs> {
    if ds.state_dim != model.state_dim() {
        return Err(Error::Shape {
            context: "policy training states",
            expected: model.state_dim(),
            found: ds.state_dim,
        });
    }
    if ds.action_dim != model.action_dim() {
        return Err(Error::Shape {
            context: "policy training actions",
            expected: model.action_dim(),
            found: ds.action_dim,
        });
    }
    let rows = ds.n_transitions();
    if rows == 0 {
        return Err(domain("training dataset has no transitions"));
    }
    let mut states = Vec::with_capacity(rows * ds.state_dim);
    let mut actions = Vec::with_capacity(rows * ds.action_dim);
    for ep in &ds.episodes {
        for t in &ep.steps {
            states.extend_from_slice(&t.state);
            actions.extend_from_slice(&t.action);
        }
    }
    let states = Array2::from_shape_vec((rows, ds.state_dim), states).expect("sized");
    let actions = Array2::from_shape_vec((rows, ds.action_dim), actions).expect("sized");
    Ok(FlatPairs {
        states,
        targets: model.normalize_actions(&actions),
    })
}

/// Regresses the policy onto the dataset's actions for `steps` minibatches
/// sampled uniformly with replacement; a fresh optimizer is used, so each
/// call is an independent phase. Returns the sampled loss curve.
pub fn train_bc(
    ds: &EpisodeDataset,
    model: &mut PolicyModel,
    phase: PhaseParams,
    batch_rng: &mut impl Rng,
) -> Result<LossCurve> {
    let pairs = flatten_pairs(ds, model)?;
    let rows = pairs.states.nrows();
    let mut opt = Adam::new(&model.net, phase.lr);
    let mut curve = LossCurve::new();
    for step in 0..phase.steps {
        let idx: Vec<usize> = (0..phase.batch)
            .map(|_| batch_rng.random_range(0..rows))
            .collect();
        let bs = pairs.states.select(Axis(0), &idx);
        let bt = pairs.targets.select(Axis(0), &idx);
        let cache = model.net.forward_cached(&bs);
        let (loss, grad) = mse_loss_and_grad(cache.output(), &bt);
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "behavioral cloning loss became non-finite at step {step}"
            )));
        }
        let (grads, _) = model.net.backward_from_output_grad(&cache, &grad);
        opt.step(&mut model.net, &grads);
        if step % 1000 == 0 || step + 1 == phase.steps {
            curve.push((step, loss));
        }
    }
    Ok(curve)
}

/// Mean squared error of the policy against a full dataset, in the
/// normalized action space the policy trains in.
pub fn full_dataset_loss(ds: &EpisodeDataset, model: &PolicyModel) -> Result<f64> {
    let pairs = flatten_pairs(ds, model)?;
    let pred = model.net.forward(&pairs.states);
    let diff = &pred - &pairs.targets;
    let n = diff.len() as f64;
    Ok(diff.iter().map(|&d| f64::from(d) * f64::from(d)).sum::<f64>() / n)
}

/// Two-phase behavioral cloning: phase one trains a fresh policy on
/// `aug_ds`; phase two, if it has steps, fine-tunes on `raw_ds` with its
/// own optimizer. Action bounds come from the phase-one dataset.
pub fn train_theory_to_real(
    raw_ds: &EpisodeDataset,
    aug_ds: &EpisodeDataset,
    cfg: &BcConfig,
) -> Result<(PolicyModel, TrainReport)> {
    cfg.validate()?;
    let (lo, hi) = aug_ds.action_bounds()?;
    let mut init_rng = rng::stream(cfg.rng_seed, "bc-init");
    let mut model = PolicyModel::new(
        aug_ds.state_dim,
        &cfg.policy_hidden,
        &lo,
        &hi,
        &mut init_rng,
    )?;
    let mut report = TrainReport::default();
    let mut p1_rng = rng::stream(cfg.rng_seed, "bc-phase1");
    report.phase1 = train_bc(aug_ds, &mut model, cfg.phase1, &mut p1_rng)?;
    if cfg.phase2.steps > 0 {
        let mut p2_rng = rng::stream(cfg.rng_seed, "bc-phase2");
        report.phase2 = train_bc(raw_ds, &mut model, cfg.phase2, &mut p2_rng)?;
    }
    Ok((model, report))
}

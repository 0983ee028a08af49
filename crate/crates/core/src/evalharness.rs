//! Rollout-based policy evaluation, episode-level filter scoring against
//! ground truth, and comparison tables.
//!
//! Evaluation draws each episode's initial state from a per-episode RNG
//! substream of the evaluation seed, so different policies evaluated with
//! the same seed face identical initial conditions (paired comparison), and
//! the streams are disjoint from every training stream.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bctrainer::PolicyModel;
use crate::dataset::{EpisodeDataset, Label};
use crate::error::{domain, Result};
use crate::rng;
use crate::synthenv::{rollout, Actor, SynthEnv};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_episode_returns: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of the per-episode returns.
    pub sd: f64,
    pub n_episodes: usize,
    /// Per-episode derived RNG seeds, for reproducing single rollouts.
    pub seeds: Vec<u64>,
}

impl EvalReport {
    /// Builds a report from already-collected returns; `seeds` records the
    /// per-episode RNG seeds the returns came from.
    pub fn from_returns(per_episode_returns: Vec<f64>, seeds: Vec<u64>) -> EvalReport {
        let n = per_episode_returns.len();
        let mean = per_episode_returns.iter().sum::<f64>() / n as f64;
        let var = per_episode_returns
            .iter()
            .map(|r| (r - mean) * (r - mean))
            .sum::<f64>()
            / n as f64;
        EvalReport {
            per_episode_returns,
            mean,
            sd: var.sqrt(),
            n_episodes: n,
            seeds,
        }
    }
}

/// Evaluates whatever actor `make_actor` builds for each episode index.
/// Episode i starts from the state drawn by substream ("eval-init", i) of
/// `seed`; actors needing randomness should derive their own streams from
/// the same seed.
pub fn evaluate_with<A, F>(
    env: &SynthEnv,
    n_episodes: usize,
    seed: u64,
    make_actor: F,
) -> Result<EvalReport>
where
    A: Actor,
    F: Fn(usize) -> A + Sync,
{
    if n_episodes == 0 {
        return Err(domain("evaluation needs at least one episode"));
    }
    let results: Vec<(u64, f64)> = (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let ep_seed = rng::episode_seed(seed, "eval-init", i as u64);
            let mut init_rng = rng::substream(seed, "eval-init", i as u64);
            let init = env.initial_state(&mut init_rng);
            let mut actor = make_actor(i);
            let trace = rollout(env, &mut actor, init);
            (ep_seed, trace.episodic_return())
        })
        .collect();
    let (seeds, returns) = results.into_iter().unzip();
    Ok(EvalReport::from_returns(returns, seeds))
}

/// Deterministic actor view of a trained policy.
pub struct PolicyActor<'m> {
    pub model: &'m PolicyModel,
}

impl Actor for PolicyActor<'_> {
    fn act(&mut self, state: &[f64]) -> Vec<f64> {
        self.model.act(state)
    }
}

/// Evaluates a trained policy over freshly randomized episodes.
pub fn evaluate_policy(
    model: &PolicyModel,
    env: &SynthEnv,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    if model.state_dim() != env.state_dim() || model.action_dim() != env.action_dim() {
        return Err(domain(format!(
            "policy dims ({} -> {}) do not match the environment ({} -> {})",
            model.state_dim(),
            model.action_dim(),
            env.state_dim(),
            env.action_dim()
        )));
    }
    evaluate_with(env, n_episodes, seed, |_| PolicyActor { model })
}

/// Evaluates the scripted expert; its mean return is the reference ceiling
/// for learned policies.
pub fn evaluate_expert(env: &SynthEnv, n_episodes: usize, seed: u64) -> Result<EvalReport> {
    evaluate_with(env, n_episodes, seed, |i| crate::synthenv::ExpertActor {
        env,
        rng: rng::substream(seed, "eval-act", i as u64),
    })
}

/// Episode-level confusion of a selected id set against expert labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

impl ConfusionMatrix {
    /// CSV with a fixed header, one data row.
    pub fn to_csv(&self) -> String {
        format!(
            "tp,fp,tn,fn,accuracy,precision,recall\n{},{},{},{},{:.6},{:.6},{:.6}\n",
            self.tp, self.fp, self.tn, self.fn_, self.accuracy, self.precision, self.recall
        )
    }
}

/// Scores a kept-episode set against ground-truth labels. Every episode
/// must be labeled; selection = positive, Expert label = truth.
pub fn score_filter(selected: &[u64], ds: &EpisodeDataset) -> Result<ConfusionMatrix> {
    if ds.episodes.iter().all(|e| e.label == Label::Unknown) {
        return Err(domain("dataset has no ground-truth labels"));
    }
    let kept: std::collections::BTreeSet<u64> = selected.iter().copied().collect();
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for ep in &ds.episodes {
        let truth = match ep.label {
            Label::Expert => true,
            Label::Weak => false,
            Label::Unknown => {
                return Err(domain(format!(
                    "episode {} has no ground-truth label",
                    ep.id
                )))
            }
        };
        match (kept.contains(&ep.id), truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let total = (tp + fp + tn + fn_) as f64;
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(ConfusionMatrix {
        tp,
        fp,
        tn,
        fn_,
        accuracy: (tp + tn) as f64 / total,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
    })
}

/// Comparison table over named evaluation reports: one CSV row per entry,
/// sorted by mean return descending (ties by name). SD is the population
/// standard deviation.
pub fn compare_table(rows: &[(String, EvalReport)]) -> String {
    let mut sorted: Vec<&(String, EvalReport)> = rows.iter().collect();
    sorted.sort_by(|a, b| b.1.mean.total_cmp(&a.1.mean).then_with(|| a.0.cmp(&b.0)));
    let mut out = String::from("name,mean,sd,n\n");
    for (name, report) in sorted {
        out.push_str(&format!(
            "{},{:.6},{:.6},{}\n",
            name, report.mean, report.sd, report.n_episodes
        ));
    }
    out
}

//! End-to-end pipeline variants over one mixed-quality corpus.
//!
//! Every variant is behavioral cloning; they differ only in which episodes
//! they train on and whether the data is augmented and fine-tuned:
//!
//! * `bc`        - the raw mixed corpus, single phase
//! * `topk10`    - top 10% of episodes by return, single phase
//! * `topk50`    - top 50% of episodes by return, single phase
//! * `ablation1` - filtered episodes, single phase
//! * `ablation2` - filtered episodes, rotation-augmented, single phase
//! * `ours`      - filtered episodes, rotation-augmented, then fine-tuned
//!                 on the unaugmented filtered data
//! * `caug`      - like `ours` but with Gaussian state noise instead of
//!                 rotations (same 3x size, so only the augmentation
//!                 mechanism differs)
//!
//! The expert filter never sees ground-truth labels: `prepare` strips them
//! before filtering, and scoring against labels happens only in callers
//! that still hold the labeled original.

use opl_core::bctrainer::{train_theory_to_real, BcConfig, PolicyModel, TrainReport};
use opl_core::dataset::{EpisodeDataset, Label};
use opl_core::error::{Error, Result};
use opl_core::evalharness::{evaluate_policy, EvalReport};
use opl_core::expertfilter::{run_filter, select_episodes, FilterConfig, FilterOutcome};
use opl_core::rng;
use opl_core::symaug::{augment_dataset, augment_gaussian};
use opl_core::synthenv::{generate_dataset, DatasetKind, EnvParams, SynthEnv};

/// Gaussian state-noise variance for the `caug` variant; the noise scale is
/// a fraction of the contact radius, large enough to matter but small
/// enough to keep perturbed states plausible.
pub const CAUG_NOISE_VARIANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Ours,
    Ablation1,
    Ablation2,
    CAug,
    Bc,
    TopK10,
    TopK50,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Ours,
        Variant::Ablation1,
        Variant::Ablation2,
        Variant::CAug,
        Variant::Bc,
        Variant::TopK10,
        Variant::TopK50,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ours => "ours",
            Variant::Ablation1 => "ablation1",
            Variant::Ablation2 => "ablation2",
            Variant::CAug => "caug",
            Variant::Bc => "bc",
            Variant::TopK10 => "topk10",
            Variant::TopK50 => "topk50",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Domain(format!(
                    "unknown variant {s:?} (expected one of {})",
                    names.join(", ")
                ))
            })
    }

    /// Whether this variant trains on the filter's output.
    pub fn uses_filter(self) -> bool {
        matches!(
            self,
            Variant::Ours | Variant::Ablation1 | Variant::Ablation2 | Variant::CAug
        )
    }
}

/// Corpus plus the one filter run shared by all filter-based variants.
pub struct PreparedData {
    /// The corpus as the pipeline sees it: labels stripped.
    pub mixed: EpisodeDataset,
    /// Episodes the filter kept.
    pub filtered: EpisodeDataset,
    pub filter: FilterOutcome,
}

/// Environment whose generation stream is the `gen` split of `seed`; the
/// same env must serve corpus generation, training schemas, and evaluation.
pub fn corpus_env(env_params: &EnvParams, seed: u64) -> Result<SynthEnv> {
    SynthEnv::new(EnvParams {
        rng_seed: rng::derive_seed(seed, "gen"),
        ..*env_params
    })
}

/// Generates the corpus, strips labels, and runs the expert filter once.
/// `seed` is split into independent gen/filter streams.
pub fn prepare(
    env_params: &EnvParams,
    n_episodes: usize,
    seed: u64,
    filter_cfg: &FilterConfig,
) -> Result<PreparedData> {
    let env = corpus_env(env_params, seed)?;
    let labeled = generate_dataset(&env, DatasetKind::Mixed, n_episodes)?;
    let mut mixed = labeled;
    for ep in &mut mixed.episodes {
        ep.label = Label::Unknown;
    }
    let cfg = FilterConfig {
        rng_seed: rng::derive_seed(seed, "filter"),
        ..filter_cfg.clone()
    };
    let filter = run_filter(&mixed, &cfg)?;
    let filtered = select_episodes(&mixed, &filter.kept_ids)?;
    Ok(PreparedData {
        mixed,
        filtered,
        filter,
    })
}

/// Trains one variant's policy on the prepared corpus. `train_seed` drives
/// initialization and batch sampling; augmentation noise for `caug` derives
/// from it too.
pub fn train_variant(
    env: &SynthEnv,
    data: &PreparedData,
    variant: Variant,
    bc: &BcConfig,
    train_seed: u64,
) -> Result<(PolicyModel, TrainReport)> {
    let single_phase = |ds: &EpisodeDataset| -> Result<(PolicyModel, TrainReport)> {
        let cfg = BcConfig {
            rng_seed: train_seed,
            phase2: opl_core::bctrainer::PhaseParams {
                steps: 0,
                ..bc.phase2
            },
            ..bc.clone()
        };
        train_theory_to_real(ds, ds, &cfg)
    };
    let two_phase = |raw: &EpisodeDataset, aug: &EpisodeDataset| {
        let cfg = BcConfig {
            rng_seed: train_seed,
            ..bc.clone()
        };
        train_theory_to_real(raw, aug, &cfg)
    };
    match variant {
        Variant::Bc => single_phase(&data.mixed),
        Variant::TopK10 => single_phase(&select_episodes(
            &data.mixed,
            &data.mixed.top_fraction(0.10)?,
        )?),
        Variant::TopK50 => single_phase(&select_episodes(
            &data.mixed,
            &data.mixed.top_fraction(0.50)?,
        )?),
        Variant::Ablation1 => single_phase(&data.filtered),
        Variant::Ablation2 => {
            single_phase(&augment_dataset(&data.filtered, &env.symmetry_schema())?)
        }
        Variant::Ours => {
            let aug = augment_dataset(&data.filtered, &env.symmetry_schema())?;
            two_phase(&data.filtered, &aug)
        }
        Variant::CAug => {
            let aug = augment_gaussian(
                &data.filtered,
                env.symmetry_schema().n_fold,
                CAUG_NOISE_VARIANCE,
                rng::derive_seed(train_seed, "caug-noise"),
            )?;
            two_phase(&data.filtered, &aug)
        }
    }
}

pub struct VariantRun {
    pub model: PolicyModel,
    pub train_report: TrainReport,
    pub eval: EvalReport,
}

/// Full variant pipeline: train on the prepared corpus, then evaluate on
/// fresh episodes. All variants evaluated with the same `eval_seed` face
/// identical initial conditions.
pub fn run_variant(
    env: &SynthEnv,
    data: &PreparedData,
    variant: Variant,
    bc: &BcConfig,
    train_seed: u64,
    eval_episodes: usize,
    eval_seed: u64,
) -> Result<VariantRun> {
    let (model, train_report) = train_variant(env, data, variant, bc, train_seed)?;
    let eval = evaluate_policy(&model, env, eval_episodes, eval_seed)?;
    Ok(VariantRun {
        model,
        train_report,
        eval,
    })
}

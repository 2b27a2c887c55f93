use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use comon::cli::{exit_code, run_from, RunConfig};
use comon::env::{Dataset, EnvConfig, EpisodeSpec, Goal, Pose, SceneGrid};
use comon::Error;

const BIN: &str = env!("CARGO_BIN_EXE_comon");

fn comon(args: &[&str]) -> comon::Result<()> {
    run_from(std::iter::once("comon").chain(args.iter().copied()))
}

fn binary(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn read_json(p: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const SMALL_CONFIG: &str = r#"{
  "seed": 5,
  "env": {"width": 8, "height": 8, "style": "open", "categories": 4, "goals": 3, "min_sep": 1.6, "budget": 30,
          "view_size": 5, "view_range": 1.5, "crop": 7},
  "model": {"variant": "VARIANT", "preset": "tiny"},
  "ppo": {"num_workers": 4, "rollout_length": 8, "minibatches": 2, "total_steps": 100000,
          "checkpoint_every": 3, "eval_every": 3, "eval_episodes": 4},
  "data": {"train": "train.json", "val": "val.json"}
}"#;

/// Writes a config and train/val datasets into `dir`.
fn setup(dir: &Path, variant: &str) -> String {
    let cfg = path(dir, "cfg.json");
    std::fs::write(&cfg, SMALL_CONFIG.replace("VARIANT", variant)).unwrap();
    comon(&["--config", &cfg, "--out", &path(dir, "train.json"), "gen", "--scenes", "2", "--episodes", "8"]).unwrap();
    comon(&["--config", &cfg, "--out", &path(dir, "val.json"), "gen", "--scenes", "2", "--episodes", "6", "--split", "val"])
        .unwrap();
    cfg
}

fn train(dir: &Path, cfg: &str, updates: &str) -> String {
    comon(&["--config", cfg, "--out", &path(dir, "run"), "train", "--max-updates", updates]).unwrap();
    path(dir, &format!("run/ckpt_{updates}.cmon"))
}

#[test]
fn gen_writes_requested_counts_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, v) = (path(dir.path(), "a.json"), path(dir.path(), "b.json"), path(dir.path(), "v.json"));
    let args = |out: &str, split: &str| {
        let mut x = vec!["--seed", "1", "--out"];
        x.push(out);
        x.extend(["gen", "--scenes", "10", "--episodes", "200", "--m", "3", "--width", "12", "--height", "12"]);
        x.extend(["--split", split]);
        x.into_iter().map(String::from).collect::<Vec<_>>()
    };
    for (out, split) in [(&a, "train"), (&b, "train"), (&v, "val")] {
        let args = args(out, split);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        comon(&refs).unwrap();
    }
    let train = Dataset::load(Path::new(&a)).unwrap();
    assert_eq!(train.scenes.len(), 10);
    assert_eq!(train.episodes.len(), 200);
    assert!(train.episodes.iter().all(|e| e.goals.len() == 3));
    assert_eq!(train.meta.as_ref().unwrap().seed, 1);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let val = Dataset::load(Path::new(&v)).unwrap();
    for s in &val.scenes {
        assert!(train.scenes.iter().all(|t| t.id != s.id), "{} shared", s.id);
    }
}

#[test]
fn gen_rejects_more_goals_than_categories() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "d.json");
    let o = binary(&["--out", &out, "gen", "--scenes", "1", "--episodes", "1", "--m", "5", "--k", "4"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(!Path::new(&out).exists());
}

#[test]
fn config_errors_list_every_field_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "bad.json");
    let text = r#"{"env": {"view_size": 4, "crop": 10, "width": 6},
                   "model": {"variant": "telepathy", "vocab": 5},
                   "ppo": {"minibatches": 0, "lr": -1.0}}"#;
    std::fs::write(&cfg, text).unwrap();
    let o = binary(&["--config", &cfg, "--out", &path(dir.path(), "run"), "train"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for field in ["env.view_size", "env.crop", "env.width", "model.variant", "model.vocab", "ppo.minibatches", "ppo.lr"] {
        assert!(err.contains(field), "{field} missing from: {err}");
    }
    std::fs::write(&cfg, r#"{"model": {"variant": "nocom"}, "colour": "blue"}"#).unwrap();
    let o = binary(&["--config", &cfg, "--out", &path(dir.path(), "run"), "train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn every_variant_name_is_accepted() {
    for name in ["nocom", "rand-ucomm", "rand-scomm", "ucomm", "scomm", "oraclemap"] {
        let text = SMALL_CONFIG.replace("VARIANT", name);
        let cfg = RunConfig::from_json(&text).unwrap();
        cfg.validate().unwrap();
        assert!(cfg.model_config().is_ok(), "{name}");
    }
}

#[test]
fn exit_codes_follow_error_kinds() {
    assert_eq!(exit_code(&Error::Config("x".into())), 2);
    assert_eq!(exit_code(&Error::Data("x".into())), 3);
    assert_eq!(exit_code(&Error::Contract("x".into())), 4);
    let o = binary(&["eval", "--ckpt", "/nonexistent/c.cmon", "--episodes", "/nonexistent/d.json"]);
    assert_eq!(o.status.code(), Some(3));
    let o = binary(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_reports_aggregates_of_the_episode_list() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "scomm");
    let ckpt = train(dir.path(), &cfg, "3");
    let out = path(dir.path(), "eval.json");
    let val = path(dir.path(), "val.json");
    comon(&["--seed", "9", "--out", &out, "eval", "--ckpt", &ckpt, "--episodes", &val, "--sample"]).unwrap();
    let v = read_json(&out);
    for key in ["success", "progress", "spl", "ppl", "episodes", "seed"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["seed"], 9);
    assert_eq!(v["mon"], 3);
    let eps = v["episodes"].as_array().unwrap();
    assert_eq!(eps.len(), 6);
    for key in ["success", "progress", "spl", "ppl"] {
        let mean = eps.iter().map(|e| e[key].as_f64().unwrap()).sum::<f64>() / eps.len() as f64;
        assert!((mean - v[key].as_f64().unwrap()).abs() < 1e-12, "{key}");
    }

    comon(&["--out", &out, "eval", "--ckpt", &ckpt, "--episodes", &val, "--mon", "1"]).unwrap();
    let v = read_json(&out);
    assert_eq!(v["mon"], 1);
    let eps = v["episodes"].as_array().unwrap();
    assert!(eps.iter().all(|e| e["success"] == e["progress"]));

    let o = binary(&["eval", "--ckpt", &ckpt, "--episodes", &val, "--mon", "4"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg_a = setup(a.path(), "ucomm");
    let cfg_b = setup(b.path(), "ucomm");
    train(a.path(), &cfg_a, "6");
    let half = train(b.path(), &cfg_b, "3");
    comon(&["--config", &cfg_b, "--out", &path(b.path(), "run"), "train", "--resume", &half, "--max-updates", "3"])
        .unwrap();
    for f in ["run/ckpt_6.cmon", "run/metrics.csv", "run/eval.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn mismatched_config_is_refused_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "scomm");
    let ckpt = train(dir.path(), &cfg, "3");
    let other = path(dir.path(), "other.json");
    std::fs::write(&other, SMALL_CONFIG.replace("VARIANT", "ucomm")).unwrap();
    let val = path(dir.path(), "val.json");
    let o = binary(&["--config", &other, "eval", "--ckpt", &ckpt, "--episodes", &val]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
    let o = binary(&["--config", &other, "eval", "--ckpt", &ckpt, "--episodes", &val, "--force"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["variant"], "SCOMM");
}

#[test]
fn analysis_commands_write_their_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = setup(d, "scomm");
    let ckpt = train(d, &cfg, "3");
    let val = path(d, "val.json");
    let traces = path(d, "t.csv");
    comon(&["--seed", "2", "--out", &traces, "trace", "--ckpt", &ckpt, "--episodes", &val, "--sample"]).unwrap();
    assert_eq!(read_json(&path(d, "t.csv.meta.json"))["seed"], 2);

    let probe = path(d, "probe.json");
    comon(&["--out", &probe, "probe", "--traces", &traces, "--input", "m1_NO", "--target", "goal_cat"]).unwrap();
    let p = read_json(&probe);
    assert!(p["accuracy"].is_f64() && p["chance"].as_f64() == Some(0.25), "{p}");
    assert_eq!(p["command"], "probe");

    let forest = path(d, "forest.json");
    comon(&["--out", &forest, "forest", "--traces", &traces, "--input", "rel", "--target", "goal_cat", "--trees", "5"])
        .unwrap();
    let f = read_json(&forest);
    assert_eq!(f["trees"], 5);
    assert!(f["accuracy"].as_f64().is_some_and(|a| (0.0..=1.0).contains(&a)), "{f}");
    assert_eq!(f["command"], "forest");

    let report = path(d, "report");
    comon(&["--out", &report, "report", "--traces", &traces, "--message", "sym2_ON"]).unwrap();
    let r = read_json(&path(d, "report/report.json"));
    let plots = r["plots"].as_array().unwrap();
    assert!(!plots.is_empty());
    for p in plots {
        let svg = std::fs::read_to_string(Path::new(&report).join(p.as_str().unwrap())).unwrap();
        assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    }
    assert!(r["signaling_mi_nats"].as_f64().unwrap() >= 0.0);

    let big = path(d, "big.json");
    comon(&["--seed", "3", "--out", &big, "gen", "--scenes", "2", "--episodes", "6", "--m", "2", "--width", "16", "--height", "16"])
        .unwrap();
    let wrong = path(d, "wrong.json");
    comon(&["--out", &wrong, "intervene", "--scripted", "--episodes", &big, "--mode", "wrong-goal"]).unwrap();
    let w = read_json(&wrong);
    assert!(w["baseline"]["progress"].is_f64() && w["intervened"]["ppl"].is_f64());
    assert_eq!(w["pairs"].as_array().unwrap().len(), 6);

    let inert = path(d, "inert.json");
    comon(&["--out", &inert, "intervene", "--ckpt", &ckpt, "--episodes", &val, "--mode", "random-when-visible", "--zero-comm"])
        .unwrap();
    let i = read_json(&inert);
    assert_eq!(i["baseline"], i["intervened"]);
}

#[test]
fn missing_trace_column_is_a_data_error_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let traces = path(dir.path(), "t.csv");
    std::fs::write(&traces, "episode_id,step,variant\n0,0,SCOMM\n").unwrap();
    let o = binary(&["probe", "--traces", &traces, "--input", "m1_NO", "--target", "goal_cat"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("goal_cat"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn nocom_learns_the_corridor_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let env = EnvConfig { categories: 4, budget: 40, view_size: 9, view_range: 4.0, crop: 5, min_sep: 0.0, ..EnvConfig::default() };
    let scene = SceneGrid::corridor(5, env.cell_size);
    let mut eps = Vec::new();
    for (k, (s, g)) in [(1, 5), (2, 5), (5, 1), (4, 1)].into_iter().enumerate() {
        for h in 0..12u32 {
            let (x, y) = scene.center(scene.index(s, 1));
            eps.push(EpisodeSpec {
                scene: scene.id.clone(),
                start: Pose::new(x, y, h * 30),
                goals: vec![Goal { cell: scene.index(g, 1), category: ((k + h as usize) % 4) as u8 }],
                budget: env.budget,
            });
        }
    }
    Dataset::from_parts(&[scene], &eps).save(&d.join("corridor.json")).unwrap();
    let cfg = serde_json::json!({
        "seed": 0,
        "env": env,
        "model": {"variant": "nocom", "preset": "tiny"},
        "ppo": {"num_workers": 16, "rollout_length": 64, "minibatches": 2, "lr": 0.003,
                "total_steps": 100 * 16 * 64, "checkpoint_every": 0, "eval_episodes": 48},
        "data": {"train": "corridor.json", "val": "corridor.json"}
    });
    let cfg_path: PathBuf = d.join("cfg.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    comon(&["--config", cfg_path.to_str().unwrap(), "--out", &path(d, "run"), "train"]).unwrap();
    let fin = read_json(&path(d, "run/final_eval.json"));
    assert_eq!(fin["updates"], 100);
    assert!(fin["success"].as_f64().unwrap() >= 0.9, "{fin}");
    assert!(d.join("run/ckpt_100.cmon").exists());
}

#[test]
fn ppo_seed_survives_without_a_master_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = setup(d, "nocom");
    let text = SMALL_CONFIG.replace("VARIANT", "nocom").replace("\"seed\": 5,", "").replace("\"num_workers\": 4,", "\"num_workers\": 4, \"seed\": 7,");
    std::fs::write(&cfg, text).unwrap();
    train(d, &cfg, "1");
    assert_eq!(read_json(&path(d, "run/run.json"))["seed"], 7);
    comon(&["--seed", "8", "--config", &cfg, "--out", &path(d, "run2"), "train", "--max-updates", "1"]).unwrap();
    assert_eq!(read_json(&path(d, "run2/run.json"))["seed"], 8);
}

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use gridtalk_core::agent::Architecture;
use gridtalk_core::evalsuite::{load_network, Aggregate};
use gridtalk_core::grid::{oracle_solve_length, Position, Scene};
use gridtalk_core::neural::LayerSpec;
use gridtalk_core::scenegen::{
    read_scenes, write_scenes, Difficulty, SceneRecord, Split, Strictness,
};
use gridtalk_core::trainer::read_metrics;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gridtalk"));
    c.env_remove("GRIDTALK_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, count: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    ok(&[
        "gen-data",
        "--count",
        &count.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&path),
    ]);
    path
}

fn record(id: &str, scene: Scene) -> SceneRecord {
    let solve_length = oracle_solve_length(&scene).unwrap();
    SceneRecord {
        id: id.into(),
        scene,
        solve_length,
        difficulty: Difficulty::from_solve_length(solve_length),
        split: Split::Test,
    }
}

/// One scene two moves from done: right, then up.
fn two_move_data(dir: &Path) -> PathBuf {
    let path = dir.join("two.jsonl");
    let scene = Scene::new(
        4,
        4,
        Position::new(0, 0),
        Position::new(1, 1),
        [Position::new(0, 1)],
        [],
    )
    .unwrap();
    write_scenes(&[record("two", scene)], &path).unwrap();
    path
}

const SMALL: &str = "
episodes = 30
turn_limit = 10
batch_size = 4
replay_capacity = 64
target_sync_steps = 7
anneal_episodes = 30
checkpoint_every = 10

[curriculum]
enabled = false
";

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p
}

#[test]
fn gen_data_is_reproducible_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a.jsonl", 1000, 7);
    let b = gen(dir.path(), "b.jsonl", 1000, 7);
    assert!(std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap());
    let ma = std::fs::read_to_string(dir.path().join("a.manifest.json")).unwrap();
    let mb = std::fs::read_to_string(dir.path().join("b.manifest.json")).unwrap();
    assert_eq!(ma, mb);
    let m: serde_json::Value = serde_json::from_str(&ma).unwrap();
    assert_eq!(m["seed"], 7);
    assert_eq!(m["total"], 1000);
    assert_eq!(
        m["splits"],
        serde_json::json!({ "train": 800, "test": 100, "validation": 100 })
    );
    assert_eq!(read_scenes(&a, Strictness::Strict).unwrap().len(), 1000);

    let env = dir.path().join("env.jsonl");
    let out = bin()
        .args(["gen-data", "--count", "1000", "--out", s(&env)])
        .env("GRIDTALK_SEED", "7")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(std::fs::read(&env).unwrap() == std::fs::read(&a).unwrap());
    let other = gen(dir.path(), "c.jsonl", 1000, 8);
    assert!(std::fs::read(&other).unwrap() != std::fs::read(&a).unwrap());
}

#[test]
fn bad_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.jsonl");
    let r = run(&[
        "gen-data",
        "--count",
        "100",
        "--max-obstacles",
        "36",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("do not fit"));
    assert!(!out.exists());

    assert_eq!(
        code(&run(&["gen-data", "--count", "5", "--out", s(&out)])),
        2
    );
    assert_eq!(
        code(&run(&["gen-data", "--grid", "6by6", "--out", s(&out)])),
        2
    );
    assert_eq!(code(&run(&["gen-data", "--bogus"])), 2);
    assert_eq!(code(&run(&["train"])), 2);
    assert_eq!(code(&run(&["nothing"])), 2);
}

#[test]
fn missing_inputs_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.jsonl");
    let r = run(&["oracle", "--data", s(&missing), "--scene-id", "x"]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("absent.jsonl"));
    let data = two_move_data(dir.path());
    assert_eq!(
        code(&run(&["oracle", "--data", s(&data), "--scene-id", "nope"])),
        1
    );
}

#[test]
fn oracle_reports_the_stored_solve_length() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.jsonl", 50, 3);
    for rec in read_scenes(&data, Strictness::Lenient)
        .unwrap()
        .iter()
        .take(5)
    {
        let out = ok(&["oracle", "--data", s(&data), "--scene-id", &rec.id]);
        let text = String::from_utf8(out.stdout).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            format!("solve length: {}", rec.solve_length)
        );
        let moves = lines
            .next()
            .unwrap()
            .strip_prefix("moves:")
            .unwrap()
            .split_whitespace()
            .count();
        assert!(moves as u32 <= rec.solve_length);
        assert_eq!(
            text.lines().skip(2).collect::<Vec<_>>().join("\n") + "\n",
            rec.scene.to_ascii()
        );
    }
}

#[test]
fn train_is_reproducible_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.jsonl", 60, 21);
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "train",
            "--data",
            s(&data),
            "--config",
            s(&cfg),
            "--seed",
            "4",
            "--out-dir",
            s(out),
        ]);
    }
    assert!(
        std::fs::read(a.join("metrics.csv")).unwrap()
            == std::fs::read(b.join("metrics.csv")).unwrap()
    );
    assert!(
        std::fs::read(a.join("final.ckpt")).unwrap()
            == std::fs::read(b.join("final.ckpt")).unwrap()
    );

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("train.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["config"]["train"]["episodes"], 30);
    let resolved = std::fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(resolved.contains("seed = 4"), "{resolved}");

    // rerunning from the written config reproduces the run
    let c = dir.path().join("c");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&a.join("config.toml")),
        "--out-dir",
        s(&c),
    ]);
    assert!(
        std::fs::read(a.join("metrics.csv")).unwrap()
            == std::fs::read(c.join("metrics.csv")).unwrap()
    );

    ok(&[
        "train",
        "--data",
        s(&data),
        "--resume",
        s(&a.join("final.ckpt")),
        "--episodes",
        "45",
        "--out-dir",
        s(&a),
    ]);
    let rows = read_metrics(&a.join("metrics.csv")).unwrap();
    assert_eq!(
        rows.iter().map(|r| r.episode).collect::<Vec<_>>(),
        (0..45).collect::<Vec<_>>()
    );

    let r = run(&[
        "train",
        "--data",
        s(&data),
        "--resume",
        s(&a.join("final.ckpt")),
        "--arch",
        "cnn",
        "--out-dir",
        s(&a),
    ]);
    assert_eq!(code(&r), 2);
}

#[test]
fn dnn_flag_builds_the_dense_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.jsonl", 60, 21);
    let cfg = small_config(dir.path());
    let out = dir.path().join("dnn");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--arch",
        "dnn",
        "--episodes",
        "5",
        "--out-dir",
        s(&out),
    ]);
    let net = load_network(&out.join("final.ckpt"), Some(Architecture::Dnn)).unwrap();
    let layers = &net.network().spec().layers;
    assert!(matches!(layers[0], LayerSpec::Flatten), "{layers:?}");
    assert!(
        matches!(layers[1], LayerSpec::Dense { output: 64, .. }),
        "{layers:?}"
    );
}

#[test]
fn curriculum_needs_every_difficulty() {
    let dir = tempfile::tempdir().unwrap();
    let data = two_move_data(dir.path());
    let r = run(&[
        "train",
        "--data",
        s(&data),
        "--split",
        "all",
        "--curriculum",
        "on",
        "--episodes",
        "5",
        "--out-dir",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("medium, long"));
}

#[test]
fn eval_writes_runs_mean_best_and_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.jsonl", 200, 5);
    let report = dir.path().join("oracle.json");
    let test_t = dir.path().join("test.jsonl");
    let csv = dir.path().join("episodes.csv");
    ok(&[
        "eval",
        "--policy",
        "oracle",
        "--data",
        s(&data),
        "--split",
        "test",
        "--out",
        s(&report),
        "--transcripts",
        s(&test_t),
        "--episodes-csv",
        s(&csv),
    ]);
    let agg: Aggregate = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(agg.runs.len(), 3);
    assert_eq!(agg.mean.success_rate, 1.0);
    assert_eq!(agg.best.episodes, 20);
    assert!(dir.path().join("oracle.manifest.json").exists());
    let rows = read_metrics(&csv).unwrap();
    assert_eq!(rows.len(), 60);
    assert!(rows.iter().all(|r| r.success));

    let val_t = dir.path().join("val.jsonl");
    ok(&[
        "eval",
        "--policy",
        "random",
        "--data",
        s(&data),
        "--split",
        "validation",
        "--out",
        s(&dir.path().join("random.json")),
        "--transcripts",
        s(&val_t),
        "--runs",
        "1",
    ]);
    let ids = |p: &Path| -> std::collections::BTreeSet<String> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| {
                serde_json::from_str::<serde_json::Value>(l).unwrap()["scene_id"]
                    .as_str()
                    .unwrap()
                    .to_string()
            })
            .collect()
    };
    let (t, v) = (ids(&test_t), ids(&val_t));
    assert_eq!((t.len(), v.len()), (20, 20));
    assert!(t.is_disjoint(&v));

    assert_eq!(
        code(&run(&["eval", "--data", s(&data), "--out", s(&report)])),
        2
    );
    assert_eq!(
        code(&run(&[
            "eval",
            "--policy",
            "oracle",
            "--noise",
            "2",
            "--data",
            s(&data),
            "--out",
            s(&report)
        ])),
        2
    );
}

#[test]
fn eval_loads_a_trained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.jsonl", 60, 21);
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--episodes",
        "5",
        "--out-dir",
        s(&out),
    ]);
    let report = dir.path().join("r.json");
    ok(&[
        "eval",
        "--checkpoint",
        s(&out.join("final.ckpt")),
        "--data",
        s(&data),
        "--noise",
        "0.1",
        "--out",
        s(&report),
    ]);
    let agg: Aggregate = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(agg.runs.len(), 3);
    assert!(agg.runs.iter().all(|r| r.avg_turns <= 10.0));
    let r = run(&[
        "eval",
        "--checkpoint",
        s(&out.join("final.ckpt")),
        "--turn-limit",
        "30",
        "--data",
        s(&data),
        "--out",
        s(&report),
    ]);
    assert_eq!(code(&r), 2);
}

fn play(args: &[&str], stdin: &str) -> Output {
    let mut child = bin()
        .arg("play-local")
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(stdin.as_bytes())
        .unwrap();
    child.wait_with_output().unwrap()
}

#[test]
fn scripted_play_solves_a_two_move_scene() {
    let dir = tempfile::tempdir().unwrap();
    let data = two_move_data(dir.path());
    // a blank line and junk are ignored, then right and up
    let out = play(&["--data", s(&data), "--scene-id", "two"], "\nfoo\n8\n5\n");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("result: success after 2 turns, total reward 59"),
        "{text}"
    );
    let result_at = text.find("result:").unwrap();
    let grid_at = text.find("S square, C circle").unwrap();
    assert!(grid_at > result_at);
    assert!(!text[..result_at].contains("#"), "{text}");
    assert!(text.contains("optimal solve length 2"));
}

#[test]
fn scripted_play_runs_out_of_turns() {
    let dir = tempfile::tempdir().unwrap();
    let data = two_move_data(dir.path());
    let out = play(
        &["--data", s(&data), "--random", "--seed", "1"],
        &"4\n".repeat(30),
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("result: failure after 30 turns, total reward -60"),
        "{text}"
    );

    let short = play(&["--data", s(&data), "--scene-id", "two"], "4\n4\n");
    assert_eq!(code(&short), 1);
    let text = String::from_utf8(short.stdout).unwrap();
    assert!(!text.contains("solve length"), "{text}");
    assert_eq!(code(&play(&["--data", s(&data)], "")), 2);
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn play_against_a_running_service() {
    let dir = tempfile::tempdir().unwrap();
    let data = two_move_data(dir.path());
    let store = dir.path().join("store");
    let mut child = bin()
        .args([
            "serve",
            "--port",
            "0",
            "--data",
            s(&data),
            "--store-dir",
            s(&store),
        ])
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let server = Server(child);
    let url = loop {
        let mut line = String::new();
        assert!(
            stderr.read_line(&mut line).unwrap() > 0,
            "server exited early"
        );
        if let Some(i) = line.find("http://") {
            break line[i..].trim().to_string();
        }
    };
    let out = play(&["--server", &url, "--scene-id", "two"], "8\n5\n");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("total reward 59"), "{text}");
    assert!(text.contains("scene two"), "{text}");

    let out = play(&["--server", &url, "--random"], &"0\n".repeat(30));
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("total reward -60"));

    let log = std::fs::read_to_string(store.join("sessions.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    drop(server);
}

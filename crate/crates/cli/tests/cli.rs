use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn etp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn etp")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = etp(dir, args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

const TINY_TRAIN: [&str; 8] = ["--n", "4", "--eval-every", "2", "--val-episodes", "2", "--lr", "1e-3"];

fn tiny_dataset(dir: &Path) {
    ok(dir, &["gen", "--task", "insert-L", "--demos", "3", "--seed", "7", "--out", "d.etpd"]);
}

#[test]
fn gen_is_deterministic_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let a = ok(dir.path(), &["gen", "--task", "insert-L", "--demos", "10", "--seed", "7", "--out", "a.etpd"]);
    let b = ok(dir.path(), &["gen", "--task", "insert-L", "--demos", "10", "--seed", "7", "--out", "b.etpd"]);
    assert_eq!(a["episodes"], 10);
    assert_eq!(a["digest"], b["digest"]);
    assert_eq!(fs::read(dir.path().join("a.etpd")).unwrap(), fs::read(dir.path().join("b.etpd")).unwrap());

    let one = ok(dir.path(), &["gen", "--demos", "1", "--out", "one.etpd"]);
    assert_eq!(one["episodes"], 1);
    assert_ne!(one["digest"], a["digest"]);

    assert_eq!(code(&etp(dir.path(), &["gen", "--demos", "0", "--out", "z.etpd"])), 1);
    assert_eq!(code(&etp(dir.path(), &["gen", "--task", "stack-blocks", "--out", "z.etpd"])), 1);
    assert_eq!(code(&etp(dir.path(), &["gen", "--demos", "2"])), 1);
    assert_eq!(code(&etp(dir.path(), &["gen", "--out", "missing/dir/z.etpd"])), 3);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.json"), r#"{"task": "align-corner", "demos": 2, "seed": 3, "out": "c.etpd"}"#).unwrap();
    let from_file = ok(dir.path(), &["gen", "--config", "run.json"]);
    assert_eq!(from_file["episodes"], 2);
    assert_eq!(from_file["task"], "align-corner");
    let overridden = ok(dir.path(), &["gen", "--config", "run.json", "--demos", "4"]);
    assert_eq!(overridden["episodes"], 4);
    assert_eq!(overridden["seed"], 3);

    fs::write(dir.path().join("bad.json"), r#"{"demos": 2, "colour": "red"}"#).unwrap();
    assert_eq!(code(&etp(dir.path(), &["gen", "--config", "bad.json"])), 1);
    fs::write(dir.path().join("bad.json"), r#"{"n": 5}"#).unwrap();
    assert_eq!(code(&etp(dir.path(), &["verify", "--config", "bad.json"])), 1);
    assert_eq!(code(&etp(dir.path(), &["gen", "--config", "absent.json"])), 3);
}

#[test]
fn train_resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_dataset(d);
    let train = |extra: &[&str]| {
        let mut args = vec!["train", "--data", "d.etpd"];
        args.extend(TINY_TRAIN);
        args.extend(extra);
        ok(d, &args)
    };
    let full = train(&["--steps", "6", "--out", "full_best.etpc", "--last", "full_last.etpc", "--log", "full.csv"]);
    train(&["--steps", "4", "--out", "part_best.etpc", "--last", "part_last.etpc", "--log", "part.csv"]);
    let resumed = train(&[
        "--resume", "part_last.etpc", "--steps", "6", "--out", "part_best.etpc", "--last", "res_last.etpc", "--log", "part.csv",
    ]);

    let read = |name: &str| fs::read(d.join(name)).unwrap();
    assert_eq!(read("full_last.etpc"), read("res_last.etpc"));
    assert_eq!(read("full_best.etpc"), read("part_best.etpc"));
    assert_eq!(read("full.csv"), read("part.csv"));
    assert_eq!(full["curve"], resumed["curve"]);
    assert_eq!(full["steps"], 6);

    let log = String::from_utf8(read("full.csv")).unwrap();
    let lines: Vec<_> = log.lines().collect();
    assert_eq!(lines[0], "step,pick,angle,place");
    assert_eq!(lines.len(), 7);
    for (i, line) in lines[1..].iter().enumerate() {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols.len(), 4);
        assert_eq!(cols[0], (i + 1) as f64);
        assert!(cols[1..].iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    let again = train(&["--steps", "6", "--out", "again.etpc", "--log", "again.csv"]);
    assert_eq!(again["curve"], full["curve"]);
    assert_eq!(read("again.etpc"), read("full_best.etpc"));
    assert_eq!(read("again.csv"), read("full.csv"));
}

#[test]
fn train_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_dataset(d);
    let run = |args: &[&str]| code(&etp(d, args));
    assert_eq!(run(&["train", "--data", "d.etpd", "--demos", "0", "--out", "x"]), 1);
    assert_eq!(run(&["train", "--data", "d.etpd", "--demos", "4", "--out", "x"]), 1);
    assert_eq!(run(&["train", "--data", "d.etpd", "--task", "box-in-bowl", "--out", "x"]), 1);
    assert_eq!(run(&["train", "--data", "d.etpd", "--lr", "0", "--out", "x"]), 1);
    assert_eq!(run(&["train", "--data", "absent.etpd", "--out", "x"]), 3);
    fs::write(d.join("junk.etpd"), b"ETPDjunk").unwrap();
    assert_eq!(run(&["train", "--data", "junk.etpd", "--out", "x"]), 3);
    let mut bytes = fs::read(d.join("d.etpd")).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(d.join("cut.etpd"), bytes).unwrap();
    assert_eq!(run(&["train", "--data", "cut.etpd", "--out", "x"]), 3);
}

#[test]
fn eval_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for task in ["insert-L", "box-in-bowl", "align-corner"] {
        let r = ok(d, &["eval", "--policy", "oracle", "--task", task, "--episodes", "20"]);
        assert_eq!(r["success_rate"], 1.0, "{task}");
        assert_eq!(r["task"], task);
    }

    let r = ok(d, &["eval", "--policy", "untrained", "--n", "4", "--episodes", "20"]);
    assert!(r["success_rate"].as_f64().unwrap() <= 0.1, "untrained success {}", r["success_rate"]);
    assert_eq!(r["episodes"], 20);
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 20);
    for key in ["mean_translation_error", "mean_rotation_error", "success_rate"] {
        assert!(r[key].is_number(), "{key}");
    }
    for row in rows {
        for key in ["seed", "success", "grasped", "translation_error", "rotation_error"] {
            assert!(row.get(key).is_some(), "row lacks {key}");
        }
        for action in ["pick", "place"] {
            for key in ["u", "v", "theta"] {
                assert!(row[action][key].is_number(), "{action}.{key}");
            }
        }
        assert!(row["seed"].as_u64().unwrap() >= 1_000_000);
    }

    tiny_dataset(d);
    let mut args = vec!["train", "--data", "d.etpd", "--steps", "2", "--out", "m.etpc"];
    args.extend(TINY_TRAIN);
    ok(d, &args);
    ok(d, &["eval", "--checkpoint", "m.etpc", "--episodes", "3", "--out", "r.json"]);
    let report: Value = serde_json::from_slice(&fs::read(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["episodes"], 3);
    assert_eq!(report["task"], "insert-L");

    assert_eq!(code(&etp(d, &["eval"])), 1);
    assert_eq!(code(&etp(d, &["eval", "--checkpoint", "absent.etpc"])), 3);
    fs::write(d.join("bad.etpc"), b"ETPC\0\0").unwrap();
    assert_eq!(code(&etp(d, &["eval", "--checkpoint", "bad.etpc"])), 3);
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = etp(d, &["verify", "--n", "4", "--json", "v.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.lines().next().unwrap().starts_with("property"));
    assert!(!table.contains("FAIL"));
    let rows: Value = serde_json::from_slice(&fs::read(d.join("v.json")).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert!(rows.len() >= 20);
    assert_eq!(table.lines().count(), rows.len() + 1);
    assert!(rows.iter().all(|r| r["passed"] == true && r["residual"].as_f64().unwrap() <= r["tolerance"].as_f64().unwrap()));

    let untied = etp(d, &["verify", "--n", "4", "--untied"]);
    assert_eq!(code(&untied), 2);
    let table = String::from_utf8(untied.stdout).unwrap();
    let failed = |name: &str| table.lines().any(|l| l.starts_with(name) && l.ends_with("FAIL"));
    assert!(failed("place_equivariant_equivariance"));
    assert!(failed("layer_equivariance"));
    assert!(!failed("rep_homomorphism"));

    // 45° rotations of 3×3 kernels break the 5e-2 profile for whole networks.
    let n8 = etp(d, &["verify", "--n", "8", "--instances", "2"]);
    assert_eq!(code(&n8), 2);
    let warn = String::from_utf8(n8.stderr).unwrap();
    assert!(warn.contains("warning"));

    assert_eq!(code(&etp(d, &["verify", "--n", "3"])), 1);
    assert_eq!(code(&etp(d, &["verify", "--instances", "0"])), 1);
    assert_eq!(code(&etp(d, &["verify", "--bogus"])), 1);
}

#[test]
fn thread_cap() {
    let dir = tempfile::tempdir().unwrap();
    let run = |v: &str| {
        Command::new(env!("CARGO_BIN_EXE_etp"))
            .current_dir(dir.path())
            .env("ETP_THREADS", v)
            .args(["eval", "--policy", "oracle", "--episodes", "4"])
            .output()
            .unwrap()
    };
    let one = run("1");
    assert_eq!(code(&one), 0);
    assert_eq!(one.stdout, run("3").stdout);
    assert_eq!(code(&run("0")), 1);
    assert_eq!(code(&run("many")), 1);
}

fn pgm_header(bytes: &[u8]) -> (usize, usize, usize) {
    let text = String::from_utf8_lossy(&bytes[..bytes.len().min(32)]).into_owned();
    let mut parts = text.split_ascii_whitespace();
    assert_eq!(parts.next(), Some("P5"));
    let mut next = || parts.next().unwrap().parse::<usize>().unwrap();
    (next(), next(), next())
}

#[test]
fn export_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_dataset(d);
    let mut args = vec!["train", "--data", "d.etpd", "--steps", "2", "--out", "m.etpc"];
    args.extend(TINY_TRAIN);
    ok(d, &args);

    for out in ["a", "b"] {
        let res = etp(d, &["export", "--checkpoint", "m.etpc", "--seed", "11", "--out", out]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    }
    let mut names: Vec<_> = fs::read_dir(d.join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in &names {
        assert_eq!(fs::read(d.join("a").join(name)).unwrap(), fs::read(d.join("b").join(name)).unwrap(), "{name:?}");
    }
    let place: Vec<_> = names
        .iter()
        .filter_map(|n| n.to_str())
        .filter(|n| n.starts_with("place_") && n.ends_with(".pgm"))
        .collect();
    assert_eq!(place.len(), 4);
    for name in names.iter().filter_map(|n| n.to_str()).filter(|n| n.ends_with(".pgm")) {
        let bytes = fs::read(d.join("a").join(name)).unwrap();
        let (w, h, max) = pgm_header(&bytes);
        assert_eq!(max, 65535);
        let header_len = format!("P5\n{w} {h}\n65535\n").len();
        assert_eq!(bytes.len(), header_len + 2 * w * h, "{name}");
    }
    let sidecar: Value = serde_json::from_slice(&fs::read(d.join("a/maps.json")).unwrap()).unwrap();
    assert_eq!(sidecar["seed"], 11);
    assert_eq!(sidecar["images"].as_array().unwrap().len(), 2 + 4);

    assert_eq!(code(&etp(d, &["export", "--checkpoint", "m.etpc"])), 1);
    assert_eq!(code(&etp(d, &["export", "--checkpoint", "absent.etpc", "--out", "c"])), 3);
}

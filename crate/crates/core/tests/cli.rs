//! End-to-end runs of the command-line front end against temporary files.

use std::path::Path;

use clap::Parser;

use qloss::cli::{execute, exit_code, sha256_hex, Cli, EXIT_IO, EXIT_USAGE};
use qloss::experiment::deserialize;
use qloss::metrics::EvalReport;

fn run(args: &[&str]) -> qloss::Result<String> {
    let cli = Cli::try_parse_from(std::iter::once("qloss").chain(args.iter().copied())).expect("arguments parse");
    execute(&cli)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn sample_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    let c = dir.path().join("c.bin");
    for (path, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        run(&["sample", "--d", "3", "--T", "3", "--shots", "40", "--seed", seed, "--out", s(path)]).unwrap();
    }
    let (a, b, c) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), std::fs::read(c).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
    let data = deserialize(&a).unwrap();
    assert_eq!(data.len(), 40);
    assert_eq!(data.header.d, 3);
    assert_eq!(data.header.rounds, 3);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    let out = dir.path().join("data.bin");
    std::fs::write(&config, "d = 5\nT = 2\nshots = 7\np_loss = 0.02\n").unwrap();
    run(&["sample", "--config", s(&config), "--shots", "9", "--out", s(&out)]).unwrap();
    let data = deserialize(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!((data.header.d, data.header.rounds, data.len()), (5, 2, 9));
    assert_eq!(data.header.noise.p_loss, 0.02);
}

#[test]
fn decode_report_embeds_dataset_hash() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.bin");
    let report = dir.path().join("report.json");
    run(&["sample", "--d", "3", "--T", "3", "--shots", "60", "--seed", "1", "--out", s(&data)]).unwrap();
    for decoder in ["mwpm", "de-mwpm", "flicker"] {
        let line = run(&[
            "decode",
            "--dataset",
            s(&data),
            "--decoder",
            decoder,
            "--background-shots",
            "200",
            "--out",
            s(&report),
        ])
        .unwrap();
        assert!(line.contains(decoder), "{line}");
        let r = EvalReport::from_json(&std::fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(r.shots, 60);
        assert_eq!(r.dataset_sha256, Some(sha256_hex(&std::fs::read(&data).unwrap())));
        if decoder == "flicker" {
            assert!(r.logical_accuracy.is_none());
        } else {
            assert!(r.logical_accuracy.is_some());
        }
    }
}

#[test]
fn train_then_decode_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.bin");
    let ck = dir.path().join("model.ck");
    run(&["sample", "--d", "3", "--T", "3", "--shots", "24", "--seed", "2", "--out", s(&data)]).unwrap();
    let small = ["--hidden", "8", "--heads", "2", "--blocks", "1", "--batch-size", "8"];
    let mut args = vec!["train", "--dataset", s(&data), "--epochs", "1", "--out", s(&ck)];
    args.extend(small);
    run(&args).unwrap();
    let log = std::fs::read_to_string(dir.path().join("model.ck.log")).unwrap();
    assert!(log.lines().any(|l| l.starts_with("epoch=1 ")), "{log}");

    // Resuming continues the epoch counter up to the new total.
    let mut args = vec!["train", "--dataset", s(&data), "--epochs", "2", "--resume", "--checkpoint", s(&ck)];
    args.extend(["--out", s(&ck)]);
    args.extend(small);
    run(&args).unwrap();
    let log = std::fs::read_to_string(dir.path().join("model.ck.log")).unwrap();
    assert!(log.lines().any(|l| l.starts_with("epoch=2 ")), "{log}");

    let line = run(&["decode", "--dataset", s(&data), "--decoder", "stgnn", "--checkpoint", s(&ck)]).unwrap();
    assert!(line.contains("stgnn"), "{line}");
    let report = dir.path().join("bench.json");
    run(&[
        "bench",
        "--dataset",
        s(&data),
        "--decoder",
        "stgnn",
        "--checkpoint",
        s(&ck),
        "--warmup",
        "2",
        "--repetitions",
        "10",
        "--out",
        s(&report),
    ])
    .unwrap();
    let r = EvalReport::from_json(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let l = r.latency.unwrap();
    assert_eq!(l.forward_passes_per_window, Some(1.0));
    assert!(l.p25_ms <= l.per_window_ms && l.per_window_ms <= l.p75_ms);
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.bin");
    let e = run(&["sample", "--d", "4", "--out", s(&out)]).unwrap_err();
    assert_eq!(exit_code(&e), EXIT_USAGE);
    let e = run(&["sample", "--p", "1.5", "--out", s(&out)]).unwrap_err();
    assert_eq!(exit_code(&e), EXIT_USAGE);
    let e = run(&["decode", "--dataset", s(&dir.path().join("missing.bin"))]).unwrap_err();
    assert_eq!(exit_code(&e), EXIT_IO);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "no_such_key = 1\n").unwrap();
    let e = run(&["sample", "--config", s(&bad), "--out", s(&out)]).unwrap_err();
    assert_eq!(exit_code(&e), EXIT_USAGE);
}

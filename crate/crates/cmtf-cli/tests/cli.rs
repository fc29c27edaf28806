//! End-to-end tests of the command-line surface: exit codes, file
//! round-trips, reproducibility, and the degenerate-sampling equivalence.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn cmtf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmtf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cmtf(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}{}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn gen_small(dir: &Path, extra: &[&str]) {
    let out = dir.to_str().unwrap();
    let mut args = vec![
        "gen", "--out", out, "--dims", "8,8,8", "--side-dims", "5,0,0", "--rank", "2", "--seed",
        "7",
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

fn metric(stdout: &str, name: &str) -> f64 {
    for line in stdout.lines() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() == 2 && toks[0] == name {
            return toks[1].parse().unwrap();
        }
    }
    panic!("metric {} not found in:\n{}", name, stdout);
}

#[test]
fn gen_fit_eval_self_comparison() {
    let dir = tempdir().unwrap();
    gen_small(dir.path(), &[]);
    let tensor = dir.path().join("tensor.txt");
    let y1 = dir.path().join("Y1.txt");
    let fit = dir.path().join("fit");
    ok(&[
        "fit-als",
        "--tensor",
        tensor.to_str().unwrap(),
        "--y1",
        y1.to_str().unwrap(),
        "--rank",
        "2",
        "--seed",
        "1",
        "--out",
        fit.to_str().unwrap(),
    ]);
    for file in ["A.mtx", "B.mtx", "C.mtx", "D.mtx", "lambdas.txt", "report.txt"] {
        assert!(fit.join(file).exists(), "{} missing", file);
    }
    let stdout = ok(&[
        "eval",
        "--tensor",
        tensor.to_str().unwrap(),
        "--y1",
        y1.to_str().unwrap(),
        "--fast",
        fit.to_str().unwrap(),
        "--base",
        fit.to_str().unwrap(),
    ]);
    assert_eq!(metric(&stdout, "relative_cost"), 1.0);
    assert_eq!(metric(&stdout, "relative_sparsity"), 1.0);
    assert_eq!(metric(&stdout, "snr"), f64::INFINITY);
}

#[test]
fn degenerate_turbo_matches_als_byte_for_byte() {
    let dir = tempdir().unwrap();
    gen_small(dir.path(), &[]);
    let tensor = dir.path().join("tensor.txt");
    let y1 = dir.path().join("Y1.txt");
    let als = dir.path().join("als");
    let turbo = dir.path().join("turbo");
    let common = [
        "--tensor",
        tensor.to_str().unwrap(),
        "--y1",
        y1.to_str().unwrap(),
        "--rank",
        "2",
        "--seed",
        "42",
    ];
    let mut args = vec!["fit-als"];
    args.extend_from_slice(&common);
    args.extend_from_slice(&["--out", als.to_str().unwrap()]);
    ok(&args);
    let mut args = vec!["fit-turbo"];
    args.extend_from_slice(&common);
    args.extend_from_slice(&[
        "--s",
        "1",
        "--p",
        "0",
        "-r",
        "1",
        "--parallel",
        "1",
        "--out",
        turbo.to_str().unwrap(),
    ]);
    ok(&args);
    for file in ["A.mtx", "B.mtx", "C.mtx", "D.mtx", "lambdas.txt"] {
        let a = std::fs::read(als.join(file)).unwrap();
        let b = std::fs::read(turbo.join(file)).unwrap();
        assert_eq!(a, b, "{} differs between fit-als and degenerate fit-turbo", file);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempdir().unwrap();
    gen_small(dir.path(), &[]);
    let tensor = dir.path().join("tensor.txt");
    let y1 = dir.path().join("Y1.txt");
    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");
    for out in [&out1, &out2] {
        ok(&[
            "fit-turbo",
            "--tensor",
            tensor.to_str().unwrap(),
            "--y1",
            y1.to_str().unwrap(),
            "--rank",
            "2",
            "--seed",
            "3",
            "--s",
            "2",
            "--p",
            "0.4",
            "-r",
            "3",
            "--parallel",
            "2",
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    for file in ["A.mtx", "B.mtx", "C.mtx", "D.mtx", "lambdas.txt"] {
        let a = std::fs::read(out1.join(file)).unwrap();
        let b = std::fs::read(out2.join(file)).unwrap();
        assert_eq!(a, b, "{} differs across reruns", file);
    }
}

#[test]
fn exit_codes() {
    // Unknown flag: usage error.
    let out = cmtf(&["fit-als", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());

    // Unknown subcommand: usage error.
    let out = cmtf(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));

    // Help is not an error and documents the subcommands.
    let out = cmtf(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["gen", "fit-als", "fit-turbo", "fit-missing", "eval", "predict", "loo"] {
        assert!(text.contains(sub), "--help does not mention {}", sub);
    }

    // Missing input file: data error.
    let out = cmtf(&[
        "fit-als",
        "--tensor",
        "/nonexistent/tensor.txt",
        "--out",
        "/tmp/unused-cmtf-out",
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Malformed data file: data error with a line number.
    let dir = tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "tensor 2 2 2 2\n1 1 1 1.0\n1 1 1 2.0\n").unwrap();
    let out = cmtf(&[
        "fit-als",
        "--tensor",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("3"));

    // Out-of-domain flag value: usage error.
    gen_small(dir.path(), &[]);
    let out = cmtf(&[
        "fit-turbo",
        "--tensor",
        dir.path().join("tensor.txt").to_str().unwrap(),
        "--p",
        "1.5",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_data_flow() {
    let dir = tempdir().unwrap();
    gen_small(dir.path(), &["--missing", "0.1"]);
    let tensor = dir.path().join("tensor.txt");
    let y1 = dir.path().join("Y1.txt");
    let mask = dir.path().join("mask.txt");
    assert!(mask.exists());
    let fit = dir.path().join("fit");
    let stdout = ok(&[
        "fit-missing",
        "--tensor",
        tensor.to_str().unwrap(),
        "--y1",
        y1.to_str().unwrap(),
        "--mask",
        mask.to_str().unwrap(),
        "--rank",
        "2",
        "--max-iters",
        "60",
        "--seed",
        "5",
        "--out",
        fit.to_str().unwrap(),
    ]);
    assert!(stdout.contains("weighted objective"));
    assert!(fit.join("A.mtx").exists());

    // fit-missing without a mask is a usage error.
    let out = cmtf(&[
        "fit-missing",
        "--tensor",
        tensor.to_str().unwrap(),
        "--out",
        fit.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn predict_and_loo() {
    let dir = tempdir().unwrap();
    gen_small(dir.path(), &[]);
    let tensor = dir.path().join("tensor.txt");
    let y1 = dir.path().join("Y1.txt");
    let fit = dir.path().join("fit");
    ok(&[
        "fit-als",
        "--tensor",
        tensor.to_str().unwrap(),
        "--y1",
        y1.to_str().unwrap(),
        "--rank",
        "2",
        "--seed",
        "1",
        "--out",
        fit.to_str().unwrap(),
    ]);

    // Query vector: one row of Y1 written as a 1x5 matrix file.
    let q = dir.path().join("q.txt");
    std::fs::write(&q, "matrix 1 5 5\n1 1 0.5\n1 2 0.25\n1 3 1.0\n1 4 0.75\n1 5 0.1\n").unwrap();
    let pred = dir.path().join("pred.txt");
    ok(&[
        "predict",
        "--factors",
        fit.to_str().unwrap(),
        "--q",
        q.to_str().unwrap(),
        "--out",
        pred.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&pred).unwrap();
    assert!(text.starts_with("matrix 8 1"));

    let stdout = ok(&[
        "loo",
        "--tensor",
        tensor.to_str().unwrap(),
        "--y1",
        y1.to_str().unwrap(),
        "--rank",
        "2",
        "--pair",
        "1,4",
        "--trials",
        "2",
        "--s",
        "1",
        "--p",
        "0",
        "-r",
        "1",
        "--parallel",
        "1",
        "--seed",
        "2",
    ]);
    let acc = metric(&stdout, "accuracy");
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn gzip_inputs_are_transparent() {
    let dir = tempdir().unwrap();
    gen_small(dir.path(), &[]);
    // Re-read and re-write compressed through the library, then fit.
    let plain = std::fs::read(dir.path().join("tensor.txt")).unwrap();
    let gz_path = dir.path().join("tensor.txt.gz");
    {
        use std::io::Write;
        let f = std::fs::File::create(&gz_path).unwrap();
        let mut enc = flate2::write::GzEncoder::new(f, flate2::Compression::default());
        enc.write_all(&plain).unwrap();
        enc.finish().unwrap();
    }
    let fit = dir.path().join("fit");
    ok(&[
        "fit-als",
        "--tensor",
        gz_path.to_str().unwrap(),
        "--rank",
        "2",
        "--max-iters",
        "30",
        "--out",
        fit.to_str().unwrap(),
    ]);
    assert!(fit.join("A.mtx").exists());
}

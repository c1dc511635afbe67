//! End-to-end tests of the `truncquant` binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use truncquant::format::{FloatRecord, TensorRecord, TqtFile};
use truncquant::{read_file, read_tensor, write_file, write_tensor};
use truncquant_core::quant::{dequantize, quantize};
use truncquant_core::tensor::normalize;
use truncquant_core::{NormMode, QuantConfig, Scheme, Tensor};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run_env(args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_truncquant"));
    cmd.args(args).env_remove("TQT_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    Run {
        code: out.status.code().expect("exited normally"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn run(args: &[&str]) -> Run {
    run_env(args, &[])
}

fn ok(args: &[&str]) -> Run {
    let r = run(args);
    assert_eq!(r.code, 0, "{args:?}: {}", r.stderr);
    r
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn float_file(dir: &Path, name: &str, dims: Vec<usize>, values: Vec<f32>) -> PathBuf {
    let path = dir.join(name);
    let t = Tensor::new(dims, values).unwrap();
    write_tensor(&path, &TensorRecord::Float(FloatRecord::raw(t))).unwrap();
    path
}

fn gaussian_ish(len: usize) -> Vec<f32> {
    // Deterministic spread of values without pulling in an RNG.
    (0..len)
        .map(|i| {
            let u = (i as f32 * 0.618_034).fract() - 0.5;
            0.1 * u * u.abs().sqrt()
        })
        .collect()
}

#[test]
fn quantize_matches_in_memory_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let values = gaussian_ish(48);
    let input = float_file(dir.path(), "w.tqt", vec![4, 12], values.clone());
    for (scheme, name) in [
        (Scheme::Uniform, "uniform"),
        (Scheme::TruncQuant, "truncquant"),
    ] {
        for mode in ["dorefa-tanh", "minmax"] {
            let out = dir.path().join(format!("q_{name}_{mode}.tqt"));
            ok(&[
                "quantize",
                "--input",
                p(&input),
                "--bits",
                "4",
                "--scheme",
                name,
                "--norm-mode",
                mode,
                "--output",
                p(&out),
            ]);

            let norm_mode = if mode == "minmax" {
                NormMode::MinMax
            } else {
                NormMode::DorefaTanh
            };
            let (wn, params) = normalize(
                &Tensor::new(vec![4, 12], values.clone()).unwrap(),
                norm_mode,
            )
            .unwrap();
            let expected = quantize(&wn, QuantConfig::new(4).unwrap(), scheme, params).unwrap();
            let TensorRecord::Quantized(got) = read_tensor(&out).unwrap() else {
                panic!("expected integer bins");
            };
            assert_eq!(got, expected);
            let a: Vec<u32> = dequantize(&got)
                .values()
                .iter()
                .map(|v| v.to_bits())
                .collect();
            let b: Vec<u32> = dequantize(&expected)
                .values()
                .iter()
                .map(|v| v.to_bits())
                .collect();
            assert_eq!(a, b);
        }
    }
    let r = run(&[
        "quantize",
        "--input",
        p(&input),
        "--bits",
        "4",
        "--output",
        p(&dir.path().join("x.tqt")),
    ]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("--scheme"), "{}", r.stderr);
}

#[test]
fn truncated_checkpoint_predicts_like_direct_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    ok(&[
        "train",
        "--scheme",
        "truncquant",
        "--precisions",
        "2,3,4,8",
        "--seed",
        "7",
        "--epochs",
        "30",
        "--output",
        p(&d("ckpt.tqt")),
    ]);
    ok(&[
        "quantize",
        "--input",
        p(&d("ckpt.tqt")),
        "--bits",
        "8",
        "--output",
        p(&d("q8.tqt")),
    ]);
    ok(&[
        "truncate",
        "--input",
        p(&d("q8.tqt")),
        "--to",
        "2",
        "--output",
        p(&d("t2.tqt")),
    ]);
    ok(&[
        "quantize",
        "--input",
        p(&d("ckpt.tqt")),
        "--bits",
        "2",
        "--output",
        p(&d("q2.tqt")),
    ]);

    let eval = |model: &str, extra: &[&str], preds: &str| {
        let mut args = vec![
            "eval",
            "--model",
            model,
            "--seed",
            "7",
            "--predictions",
            preds,
        ];
        args.extend_from_slice(extra);
        let r = ok(&args);
        (r.stdout, std::fs::read(preds).unwrap())
    };
    let truncated = eval(p(&d("t2.tqt")), &[], p(&d("t2.csv")));
    let direct = eval(p(&d("q2.tqt")), &[], p(&d("q2.csv")));
    let fake = eval(p(&d("ckpt.tqt")), &["--bits", "2"], p(&d("f2.csv")));
    let fake_trunc = eval(
        p(&d("ckpt.tqt")),
        &["--bits", "2", "--mode", "trunc"],
        p(&d("ft2.csv")),
    );
    assert_eq!(truncated, direct);
    assert_eq!(direct, fake);
    assert_eq!(fake, fake_trunc);
    assert!(truncated.0.starts_with("accuracy "));

    // Float weights of the unquantized layers ride along untouched.
    let TqtFile::Container(recs) = read_file(&d("t2.tqt")).unwrap() else {
        panic!()
    };
    let kinds: Vec<bool> = recs
        .iter()
        .map(|r| matches!(r.record, TensorRecord::Quantized(_)))
        .collect();
    assert_eq!(kinds, [false, false, true, false, false, false]);

    let r = run(&["eval", "--model", p(&d("t2.tqt")), "--bits", "4"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("--bits"));
}

#[test]
fn training_is_byte_reproducible_and_honours_seed_env() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    let train = |out: &str, log: &str, seed: &str, env: &[(&str, &str)]| {
        let r = run_env(
            &[
                "train",
                "--scheme",
                "truncquant",
                "--precisions",
                "2,3,4,8",
                "--seed",
                seed,
                "--epochs",
                "10",
                "--output",
                p(&d(out)),
                "--log",
                p(&d(log)),
            ],
            env,
        );
        assert_eq!(r.code, 0, "{}", r.stderr);
        (
            std::fs::read(d(out)).unwrap(),
            std::fs::read(d(log)).unwrap(),
        )
    };
    let a = train("a.tqt", "a.csv", "7", &[]);
    let b = train("b.tqt", "b.csv", "7", &[]);
    assert_eq!(a, b);
    let c = train("c.tqt", "c.csv", "1", &[("TQT_SEED", "7")]);
    assert_eq!(a, c);
    let e = train("e.tqt", "e.csv", "1", &[]);
    assert_ne!(a.0, e.0);

    let log = String::from_utf8(a.1).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("epoch,n_sampled,loss,train_acc"));
    assert!(lines.count() >= 10);

    let r = run_env(
        &["train", "--scheme", "uniform", "--output", p(&d("x.tqt"))],
        &[("TQT_SEED", "seven")],
    );
    assert_eq!(r.code, 2);
}

#[test]
fn analyze_emits_one_row_per_layer_and_precision() {
    let dir = tempfile::tempdir().unwrap();
    let input = float_file(
        dir.path(),
        "w.tqt",
        vec![6],
        vec![0.0, 0.2, 0.5, 0.8, 0.99, 1.0],
    );
    let out = dir.path().join("r.csv");
    ok(&[
        "analyze",
        "--input",
        p(&input),
        "--start-bits",
        "8",
        "--bits",
        "1-7",
        "--scheme",
        "uniform",
        "--norm",
        "l1",
        "--norm-mode",
        "minmax",
        "--output",
        p(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(
        rows[0],
        "layer,n,b,total_weights,gap_count,level_size,e_q,e_t_direct,e_t_factored,norm_kind"
    );
    assert_eq!(rows.len(), 8);
    for (i, row) in rows[1..].iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 10);
        assert_eq!(
            (cols[0], cols[1], cols[2], cols[3]),
            ("0", &*(i + 1).to_string(), "8", "6")
        );
        assert_eq!(cols[9], "l1");
    }
    // Min-max over [0, 1] is the identity, so the n = 2 row is the hand trace.
    let n2: Vec<&str> = rows[2].split(',').collect();
    assert_eq!(n2[4], "2");
    let e_t: f64 = n2[7].parse().unwrap();
    let e_f: f64 = n2[8].parse().unwrap();
    assert!((e_t - 2.0 / 3.0).abs() < 1e-15 && (e_f - 2.0 / 3.0).abs() < 1e-15);

    ok(&[
        "analyze",
        "--input",
        p(&input),
        "--bits",
        "4,2",
        "--norm",
        "l2",
        "--output",
        p(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    let ns: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(ns, ["2", "4"]);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",,l2")));

    let r = run(&[
        "analyze",
        "--input",
        p(&input),
        "--start-bits",
        "4",
        "--bits",
        "1-7",
        "--output",
        p(&out),
    ]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("--bits"));
}

#[test]
fn analyze_checkpoint_covers_quantized_layers() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.tqt");
    ok(&[
        "train",
        "--scheme",
        "uniform",
        "--hidden",
        "8,8,8",
        "--epochs",
        "2",
        "--output",
        p(&ckpt),
    ]);
    let out = dir.path().join("r.csv");
    ok(&[
        "analyze",
        "--input",
        p(&ckpt),
        "--bits",
        "2,4",
        "--output",
        p(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    let layers: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(
        layers,
        [
            "layers.1.weight",
            "layers.1.weight",
            "layers.2.weight",
            "layers.2.weight"
        ]
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    let input = float_file(dir.path(), "w.tqt", vec![8], gaussian_ish(8));

    let r = run(&["quantize", "--bogus"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("--bogus"));

    let r = run(&[
        "quantize",
        "--input",
        p(&d("missing.tqt")),
        "--bits",
        "4",
        "--scheme",
        "uniform",
        "--output",
        p(&d("o.tqt")),
    ]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("--input"));

    std::fs::write(d("bad.tqt"), b"XXXX\x01\x00\x00\x00").unwrap();
    let r = run(&[
        "truncate",
        "--input",
        p(&d("bad.tqt")),
        "--to",
        "2",
        "--output",
        p(&d("o.tqt")),
    ]);
    assert_eq!(r.code, 3);
    assert!(r.stderr.contains("at byte 0"), "{}", r.stderr);

    let r = run(&[
        "quantize",
        "--input",
        p(&input),
        "--bits",
        "0",
        "--scheme",
        "uniform",
        "--output",
        p(&d("o.tqt")),
    ]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("--bits"));

    ok(&[
        "quantize",
        "--input",
        p(&input),
        "--bits",
        "4",
        "--scheme",
        "truncquant",
        "--output",
        p(&d("q4.tqt")),
    ]);
    let r = run(&[
        "truncate",
        "--input",
        p(&d("q4.tqt")),
        "--to",
        "6",
        "--output",
        p(&d("o.tqt")),
    ]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("--to"));
    assert!(!d("o.tqt").exists());

    let bytes = std::fs::read(d("q4.tqt")).unwrap();
    std::fs::write(d("short.tqt"), &bytes[..bytes.len() - 3]).unwrap();
    let r = run(&[
        "truncate",
        "--input",
        p(&d("short.tqt")),
        "--to",
        "2",
        "--output",
        p(&d("o.tqt")),
    ]);
    assert_eq!(r.code, 3);

    std::fs::write(d("layers.csv"), "name,param_count,position\nfc,lots,last\n").unwrap();
    let r = run(&["storage", "--layers", p(&d("layers.csv"))]);
    assert_eq!(r.code, 3);

    // Temp files from atomic writes never linger.
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn truncate_round_trip_matches_core() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    let input = float_file(dir.path(), "w.tqt", vec![2, 32], gaussian_ish(64));
    ok(&[
        "quantize",
        "--input",
        p(&input),
        "--bits",
        "8",
        "--scheme",
        "uniform",
        "--output",
        p(&d("q8.tqt")),
    ]);
    ok(&[
        "truncate",
        "--input",
        p(&d("q8.tqt")),
        "--to",
        "3",
        "--output",
        p(&d("t3.tqt")),
    ]);
    let TensorRecord::Quantized(q8) = read_tensor(&d("q8.tqt")).unwrap() else {
        panic!()
    };
    let TensorRecord::Quantized(t3) = read_tensor(&d("t3.tqt")).unwrap() else {
        panic!()
    };
    assert_eq!(t3, truncquant_core::truncate(&q8, 3).unwrap());
    assert_eq!(t3.norm(), q8.norm());

    ok(&[
        "truncate",
        "--input",
        p(&d("q8.tqt")),
        "--to",
        "8",
        "--output",
        p(&d("t8.tqt")),
    ]);
    assert_eq!(
        std::fs::read(d("t8.tqt")).unwrap(),
        std::fs::read(d("q8.tqt")).unwrap()
    );
}

#[test]
fn storage_reports() {
    let dir = tempfile::tempdir().unwrap();
    let layers = dir.path().join("l.csv");
    std::fs::write(&layers, "name,param_count,position\nonly,1000,hidden\n").unwrap();
    let out = dir.path().join("s.csv");
    let r = ok(&[
        "storage",
        "--layers",
        p(&layers),
        "--bits",
        "2,4,8",
        "--quantize-all",
        "--output",
        p(&out),
    ]);
    assert!(r.stdout.contains("truncquant"));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(
        text,
        "strategy,bytes,ratio_to_truncquant\ndedicated,1750,1.75\nofa_fp32_parent,4000,4\ntruncquant,1000,1\n"
    );

    // Exempt layers are required unless everything is quantized.
    let r = run(&["storage", "--layers", p(&layers)]);
    assert_eq!(r.code, 2);

    let scaled = dir.path().join("scaled.csv");
    std::fs::write(&scaled, "name,param_count,position\nonly,7000,hidden\n").unwrap();
    let out2 = dir.path().join("s2.csv");
    ok(&[
        "storage",
        "--layers",
        p(&scaled),
        "--quantize-all",
        "--output",
        p(&out2),
    ]);
    let ratios = |s: &str| {
        s.lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().to_owned())
            .collect::<Vec<_>>()
    };
    assert_eq!(
        ratios(&text),
        ratios(&std::fs::read_to_string(&out2).unwrap())
    );
}

#[test]
fn container_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.tqt");
    ok(&[
        "train",
        "--scheme",
        "uniform",
        "--epochs",
        "1",
        "--output",
        p(&ckpt),
    ]);
    let file = read_file(&ckpt).unwrap();
    let copy = dir.path().join("copy.tqt");
    write_file(&copy, &file).unwrap();
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(&copy).unwrap());
}

#[test]
fn help_and_version_exit_zero() {
    let r = ok(&["--help"]);
    for cmd in [
        "quantize", "truncate", "analyze", "train", "eval", "storage",
    ] {
        assert!(r.stdout.contains(cmd));
    }
    ok(&["--version"]);
    assert_eq!(run(&[]).code, 2);
}

//! Black-box tests that spawn the binary and check exit codes, machine
//! output lines and file round trips.

use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

fn mxsafe(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mxsafe"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn machine_lines(output: &Output) -> HashMap<String, String> {
    String::from_utf8_lossy(&output.stdout)
        .lines()
        .filter_map(|line| line.strip_prefix("#!"))
        .filter_map(|line| line.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("no signal")
}

fn gen(path: &Path, rows: usize, cols: usize, dist: &str, seed: u64) {
    let out = mxsafe(
        &[
            "gen",
            "--rows",
            &rows.to_string(),
            "--cols",
            &cols.to_string(),
            "--dist",
            dist,
            "--seed",
            &seed.to_string(),
            "--out",
            path.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn full_pipeline_reports_machine_lines() {
    let dir = tempfile::tempdir().unwrap();
    let dense = dir.path().join("x.dense");
    let packed = dir.path().join("x.mxb");
    gen(&dense, 32, 64, "gaussian", 42);

    let out = mxsafe(
        &[
            "quantize",
            "--input",
            dense.to_str().unwrap(),
            "--format",
            "mxsf",
            "--tile",
            "1x32",
            "--out",
            packed.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 0);
    let lines = machine_lines(&out);
    assert_eq!(lines["blocks"], "64");
    let underflow: f64 = lines["underflow_ratio"].parse().unwrap();
    assert!((0.0..=1.0).contains(&underflow));
    let mean_distance: f64 = lines["mean_distance"].parse().unwrap();
    assert!(mean_distance >= 0.0);

    let out = mxsafe(
        &[
            "stats",
            "--input",
            dense.to_str().unwrap(),
            "--format",
            "e2m5",
            "--tile",
            "1x32",
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 0);
    let lines = machine_lines(&out);
    for key in ["mse", "underflow_ratio", "max_err"] {
        let value: f64 = lines[key].parse().unwrap();
        assert!(value >= 0.0, "{key}");
    }

    let out = mxsafe(
        &[
            "compare",
            "--input",
            dense.to_str().unwrap(),
            "--formats",
            "int8,e2m5,mxsf",
            "--tile",
            "1x32",
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 0);
    let lines = machine_lines(&out);
    for fmt in ["int8", "e2m5", "mxsf"] {
        assert!(lines.contains_key(&format!("mse_{fmt}")), "{fmt}");
        assert!(lines.contains_key(&format!("underflow_ratio_{fmt}")), "{fmt}");
        assert!(lines.contains_key(&format!("max_err_{fmt}")), "{fmt}");
    }
}

#[test]
fn matmul_writes_a_loadable_product_and_checks_it() {
    let dir = tempfile::tempdir().unwrap();
    let a_dense = dir.path().join("a.dense");
    let b_dense = dir.path().join("b.dense");
    gen(&a_dense, 16, 24, "gaussian", 1);
    gen(&b_dense, 24, 8, "gaussian", 2);

    for (name, dense) in [("a", &a_dense), ("b", &b_dense)] {
        let out = mxsafe(
            &[
                "quantize",
                "--input",
                dense.to_str().unwrap(),
                "--format",
                "mxsf",
                "--tile",
                "8x8",
                "--out",
                dir.path().join(format!("{name}.mxb")).to_str().unwrap(),
            ],
            &[],
        );
        assert_eq!(exit_code(&out), 0);
    }

    let product = dir.path().join("y.dense");
    let out = mxsafe(
        &[
            "matmul",
            "--a",
            dir.path().join("a.mxb").to_str().unwrap(),
            "--b",
            dir.path().join("b.mxb").to_str().unwrap(),
            "--mapping",
            "tiled",
            "--cfg",
            "default",
            "--out",
            product.to_str().unwrap(),
            "--check",
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let lines = machine_lines(&out);
    let rel: f64 = lines["max_rel_err"].parse().unwrap();
    assert!(rel < 0.05, "relative error {rel}");
    assert_eq!(lines["bound_violations"], "0");

    let loaded = mxsafe::load_dense(&product).unwrap();
    assert_eq!((loaded.rows(), loaded.cols()), (16, 8));
}

#[test]
fn mappings_produce_identical_output_files() {
    let dir = tempfile::tempdir().unwrap();
    let dense = dir.path().join("m.dense");
    gen(&dense, 20, 20, "gaussian", 7);
    let packed = dir.path().join("m.mxb");
    let out = mxsafe(
        &[
            "quantize",
            "--input",
            dense.to_str().unwrap(),
            "--format",
            "e4m3",
            "--tile",
            "4x4",
            "--out",
            packed.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 0);

    for cfg in ["default", "exact"] {
        let one_d = dir.path().join(format!("one_d_{cfg}.dense"));
        let tiled = dir.path().join(format!("tiled_{cfg}.dense"));
        for (mapping, path) in [("1d", &one_d), ("tiled", &tiled)] {
            let out = mxsafe(
                &[
                    "matmul",
                    "--a",
                    packed.to_str().unwrap(),
                    "--b",
                    packed.to_str().unwrap(),
                    "--mapping",
                    mapping,
                    "--cfg",
                    cfg,
                    "--out",
                    path.to_str().unwrap(),
                ],
                &[],
            );
            assert_eq!(exit_code(&out), 0);
        }
        assert_eq!(
            std::fs::read(&one_d).unwrap(),
            std::fs::read(&tiled).unwrap(),
            "{cfg}"
        );
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let dense = dir.path().join("t.dense");
    gen(&dense, 40, 40, "log2normal", 11);

    let mut files = Vec::new();
    for threads in ["1", "4"] {
        let packed = dir.path().join(format!("t{threads}.mxb"));
        let out = mxsafe(
            &[
                "quantize",
                "--input",
                dense.to_str().unwrap(),
                "--format",
                "mxsf",
                "--tile",
                "8x8",
                "--out",
                packed.to_str().unwrap(),
            ],
            &[("MXSAFE_THREADS", threads)],
        );
        assert_eq!(exit_code(&out), 0);
        files.push(std::fs::read(&packed).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn trainstep_reports_the_event_count() {
    let out = mxsafe(
        &["trainstep", "--dims", "128x256x64", "--tile", "8x8"],
        &[],
    );
    assert_eq!(exit_code(&out), 0);
    assert_eq!(machine_lines(&out)["quant_events"], "3");

    let out = mxsafe(
        &["trainstep", "--dims", "128x256x64", "--tile", "1x64"],
        &[],
    );
    assert_eq!(machine_lines(&out)["quant_events"], "6");

    let out = mxsafe(
        &[
            "trainstep",
            "--dims",
            "128x256x64",
            "--tile",
            "1x64",
            "--pass",
            "forward",
        ],
        &[],
    );
    assert_eq!(machine_lines(&out)["quant_events"], "2");
}

#[test]
fn usage_problems_exit_with_one() {
    let out = mxsafe(&["quantize", "--input", "x", "--format", "fp8"], &[]);
    assert_eq!(exit_code(&out), 1);

    let out = mxsafe(&["matmul", "--a", "x"], &[]);
    assert_eq!(exit_code(&out), 1);

    let out = mxsafe(&["trainstep", "--dims", "12x34", "--tile", "8x8"], &[]);
    assert_eq!(exit_code(&out), 1);

    let out = mxsafe(&["nonsense"], &[]);
    assert_eq!(exit_code(&out), 1);

    let out = mxsafe(
        &["trainstep", "--dims", "1x1x1", "--tile", "8x8"],
        &[("MXSAFE_THREADS", "lots")],
    );
    assert_eq!(exit_code(&out), 1);

    let out = mxsafe(&["--help"], &[]);
    assert_eq!(exit_code(&out), 0);
}

#[test]
fn data_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();

    // Missing input file.
    let out = mxsafe(
        &[
            "stats",
            "--input",
            dir.path().join("absent.dense").to_str().unwrap(),
            "--format",
            "mxsf",
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 2);

    // A NaN in the payload cannot be quantized.
    let nan_file = dir.path().join("nan.dense");
    let header = "rows=1\ncols=2\ncount=2\n";
    let mut bytes = (header.len() as u32).to_le_bytes().to_vec();
    bytes.extend_from_slice(header.as_bytes());
    bytes.extend_from_slice(&1.0f32.to_le_bytes());
    bytes.extend_from_slice(&f32::NAN.to_le_bytes());
    std::fs::write(&nan_file, bytes).unwrap();
    let out = mxsafe(
        &[
            "quantize",
            "--input",
            nan_file.to_str().unwrap(),
            "--format",
            "mxsf",
            "--out",
            dir.path().join("nan.mxb").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));

    // Mismatched inner dimensions.
    let a_dense = dir.path().join("a.dense");
    let b_dense = dir.path().join("b.dense");
    gen(&a_dense, 8, 16, "gaussian", 1);
    gen(&b_dense, 8, 16, "gaussian", 2);
    for (name, dense) in [("a", &a_dense), ("b", &b_dense)] {
        let out = mxsafe(
            &[
                "quantize",
                "--input",
                dense.to_str().unwrap(),
                "--format",
                "int8",
                "--tile",
                "8x8",
                "--out",
                dir.path().join(format!("{name}.mxb")).to_str().unwrap(),
            ],
            &[],
        );
        assert_eq!(exit_code(&out), 0);
    }
    let out = mxsafe(
        &[
            "matmul",
            "--a",
            dir.path().join("a.mxb").to_str().unwrap(),
            "--b",
            dir.path().join("b.mxb").to_str().unwrap(),
            "--out",
            dir.path().join("y.dense").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("mismatch"));

    // A corrupted block file is rejected.
    let packed = dir.path().join("a.mxb");
    let mut bytes = std::fs::read(&packed).unwrap();
    bytes[0] = b'Z';
    std::fs::write(&packed, bytes).unwrap();
    let out = mxsafe(
        &[
            "matmul",
            "--a",
            packed.to_str().unwrap(),
            "--b",
            dir.path().join("b.mxb").to_str().unwrap(),
            "--out",
            dir.path().join("y.dense").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

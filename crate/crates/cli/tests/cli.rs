//! End-to-end tests of the oodkit binary: the staged workflow over real
//! files, determinism of the demo, the bundled pipeline config, and the
//! exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use byteorder::{BigEndian, WriteBytesExt};

use oodkit_core::io::csv_io::{write_labels_csv, LabelRow};
use oodkit_core::io::model_file::load_model;
use oodkit_core::io::records::write_gradient_records;
use oodkit_core::decision::Label;
use oodkit_core::stats::records_from_model;

fn oodkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oodkit"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn oodkit")
}

fn expect_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed with {:?}:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Writes an IDX u8 tensor of `n` rows of `dim` values from a fixed pattern,
/// offset so two calls can produce disjoint-looking populations.
fn write_idx(path: &Path, n: usize, dim: usize, shift: u8) {
    let mut bytes: Vec<u8> = Vec::new();
    bytes.write_u32::<BigEndian>(0x0000_0803).unwrap();
    bytes.write_u32::<BigEndian>(n as u32).unwrap();
    bytes.write_u32::<BigEndian>(dim as u32).unwrap();
    bytes.write_u32::<BigEndian>(1).unwrap();
    for i in 0..n {
        for j in 0..dim {
            let v = (i * 37 + j * 101 + i * j * 7) % 151;
            bytes.push(shift.wrapping_add(v as u8));
        }
    }
    std::fs::write(path, bytes).unwrap();
}

#[test]
fn staged_workflow_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_idx(&dir.join("train.idx"), 80, 6, 0);
    write_idx(&dir.join("validation.idx"), 60, 6, 0);
    write_idx(&dir.join("test.idx"), 40, 6, 60);

    expect_ok(
        &oodkit(
            dir,
            &[
                "fit", "--model", "gaussian", "--data", "train.idx", "--out", "model.oodm",
            ],
        ),
        "fit",
    );
    expect_ok(
        &oodkit(
            dir,
            &[
                "fim", "--model", "model.oodm", "--data", "train.idx", "--out", "summary.oods",
            ],
        ),
        "fim",
    );

    // Validation records arrive as an externally produced file, the path a
    // foreign model would use.
    let model = load_model(&dir.join("model.oodm")).unwrap();
    let validation = oodkit_core::io::idx::load_idx(&dir.join("validation.idx")).unwrap();
    let records = records_from_model(&model, &validation, true).unwrap();
    write_gradient_records(&dir.join("validation.oodk"), &records).unwrap();

    expect_ok(
        &oodkit(
            dir,
            &[
                "stats",
                "--model",
                "model.oodm",
                "--data",
                "test.idx",
                "--summary",
                "summary.oods",
                "--kinds",
                "typicality,score",
                "--out",
                "stats.csv",
            ],
        ),
        "stats",
    );
    for kind in ["typicality", "score"] {
        expect_ok(
            &oodkit(
                dir,
                &[
                    "calibrate",
                    "--records",
                    "validation.oodk",
                    "--summary",
                    "summary.oods",
                    "--kind",
                    kind,
                    "--plan",
                    "per-example",
                    "--model",
                    "model.oodm",
                    "--out",
                    &format!("null_{kind}.oodn"),
                ],
            ),
            "calibrate",
        );
    }
    expect_ok(
        &oodkit(
            dir,
            &[
                "pvalues",
                "--stats",
                "stats.csv",
                "--null",
                "null_typicality.oodn",
                "--null",
                "null_score.oodn",
                "--out",
                "pvalues.csv",
            ],
        ),
        "pvalues",
    );
    expect_ok(
        &oodkit(
            dir,
            &[
                "combine", "--pvalues", "pvalues.csv", "--method", "fisher", "--out",
                "combined.csv",
            ],
        ),
        "combine",
    );

    // Labels for the test rows; ids are the row indices for singleton
    // batches. The shifted pattern marks the second half as outliers.
    let labels: Vec<LabelRow> = (0..40)
        .map(|id| LabelRow {
            id,
            label: if id < 20 { Label::Inlier } else { Label::Outlier },
        })
        .collect();
    write_labels_csv(&dir.join("labels.csv"), &labels).unwrap();

    let bh_out = oodkit(
        dir,
        &[
            "bh",
            "--combined",
            "combined.csv",
            "--alpha",
            "0.2",
            "--out",
            "decisions.csv",
            "--labels",
            "labels.csv",
            "--curves",
            "curves.csv",
            "--alphas",
            "0.1,0.2,0.5",
        ],
    );
    expect_ok(&bh_out, "bh");
    let report: serde_json::Value =
        serde_json::from_slice(&bh_out.stdout).expect("bh prints a JSON report");
    assert_eq!(report["n_units"], 40);

    expect_ok(
        &oodkit(
            dir,
            &[
                "auroc", "--stats", "stats.csv", "--labels", "labels.csv", "--out",
                "auroc_stats.csv",
            ],
        ),
        "auroc stats",
    );
    expect_ok(
        &oodkit(
            dir,
            &[
                "auroc",
                "--combined",
                "combined.csv",
                "--labels",
                "labels.csv",
                "--out",
                "auroc_combined.csv",
            ],
        ),
        "auroc combined",
    );

    for name in [
        "model.oodm",
        "summary.oods",
        "stats.csv",
        "null_typicality.oodn",
        "null_score.oodn",
        "pvalues.csv",
        "combined.csv",
        "decisions.csv",
        "curves.csv",
        "auroc_stats.csv",
        "auroc_combined.csv",
    ] {
        assert!(dir.join(name).exists(), "{name} missing");
    }

    // Every test row sits far outside the training pattern, so the combined
    // p-values are uniformly tiny and everything is rejected at such a
    // separation; just check the decisions file parses and covers all ids.
    let decisions = std::fs::read_to_string(dir.join("decisions.csv")).unwrap();
    assert_eq!(decisions.lines().count(), 41);
}

#[test]
fn gaussian_demo_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for out in ["first.csv", "second.csv"] {
        expect_ok(
            &oodkit(
                dir,
                &[
                    "gaussian-demo", "--d", "1000", "--seed", "7", "--out", out,
                ],
            ),
            "gaussian-demo",
        );
    }
    let first = std::fs::read(dir.join("first.csv")).unwrap();
    let second = std::fs::read(dir.join("second.csv")).unwrap();
    assert!(!first.is_empty());
    assert_eq!(first, second);
}

#[test]
fn bundled_null_config_runs_and_writes_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let config = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/h0_gaussian.json");
    let out = oodkit(dir, &["run", "--spec", config.to_str().unwrap()]);
    expect_ok(&out, "run");
    assert!(dir.join("h0_report/combined.csv").exists());
    assert!(dir.join("h0_report/spec.json").exists());
}

#[test]
fn usage_errors_exit_2_with_json_on_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let unknown_flag = oodkit(dir, &["fit", "--model", "gaussian", "--frobnicate"]);
    assert_eq!(unknown_flag.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&unknown_flag.stderr).unwrap();
    assert_eq!(err["kind"], "usage");

    let bad_family = {
        write_idx(&dir.join("train.idx"), 10, 3, 0);
        oodkit(
            dir,
            &[
                "fit", "--model", "gauss", "--data", "train.idx", "--out", "model.oodm",
            ],
        )
    };
    assert_eq!(bad_family.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&bad_family.stderr).unwrap();
    assert_eq!(err["kind"], "usage");
}

#[test]
fn runtime_errors_exit_1_with_json_on_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    // A p-value of zero violates the (0, 1] domain: the CSV reader refuses
    // it before any combination runs.
    std::fs::write(
        dir.join("pvalues.csv"),
        "id,kind,p_value\n0,typicality,0.5\n0,score,0.0\n",
    )
    .unwrap();
    let out = oodkit(
        dir,
        &[
            "combine", "--pvalues", "pvalues.csv", "--method", "fisher", "--out",
            "combined.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "runtime");
    assert!(
        err["error"].as_str().unwrap().contains("p-value"),
        "error should name the domain violation: {err}"
    );

    let missing = oodkit(
        dir,
        &["run", "--spec", "does_not_exist.json"],
    );
    assert_eq!(missing.status.code(), Some(1));
}

mod common;

use std::fs;

use common::cli::{edgenet, ok, source, tiny_idx};

#[test]
fn params_reports_both_counts() {
    let out = ok(&["params"]);
    assert!(out.contains("standard=846154"), "{out}");
    assert!(out.contains("eq1="));
    let out = ok(&["params", "--variant", "wc"]);
    assert!(out.contains("variant=wc"));
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let pair = tiny_idx(d, 60);
    let data = d.join("data");
    let out = ok(&[
        "prepare",
        &source(&pair),
        &source(&pair),
        "--out",
        data.to_str().unwrap(),
        "--seed",
        "4",
    ]);
    assert!(out.contains("corpus tiny-images.idx: 60"), "{out}");
    assert!(out.contains("corpus tiny-images.idx#2: 60"), "{out}");
    assert!(out.contains("train=96 validation=18 test=6"), "{out}");

    let run = d.join("run");
    let out = ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--epochs",
        "2",
        "--batch",
        "16",
        "--seed",
        "4",
        "--threads",
        "1",
    ]);
    assert!(out.contains("edge extractor: canny"), "{out}");
    assert!(out.contains("params standard=846154"), "{out}");
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("epoch,train_loss,val_loss,val_acc"));
    assert_eq!(csv.lines().count(), 3);

    let ck = run.join("checkpoint.enet");
    let cm = d.join("cm.csv");
    let out = ok(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
        "--split",
        "validation",
        "--out",
        cm.to_str().unwrap(),
    ]);
    assert!(
        out.contains("split=validation") && out.contains("samples=18"),
        "{out}"
    );
    assert_eq!(fs::read_to_string(&cm).unwrap().lines().count(), 11);

    let img = d.join("digit.pgm");
    let glyph = edgenet::vision::Image::from_fn(28, 28, |y, x| {
        if (5..23).contains(&y) && (12..15).contains(&x) {
            0.0
        } else {
            1.0
        }
    })
    .unwrap();
    fs::write(&img, edgenet::vision::encode_pgm(&glyph)).unwrap();
    let out = ok(&[
        "predict",
        img.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
    ]);
    assert!(out.starts_with("label="), "{out}");

    let edges = d.join("edges.pgm");
    let out = ok(&[
        "edge",
        img.to_str().unwrap(),
        "--edge-method",
        "sobel",
        "--out",
        edges.to_str().unwrap(),
    ]);
    assert!(out.starts_with("sobel:"), "{out}");
    let e = edgenet::vision::decode_pgm(&fs::read(&edges).unwrap()).unwrap();
    assert!(e.is_binary() && e.pixels().contains(&1.0));
}

#[test]
fn failures_exit_nonzero_and_leave_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let missing = d.join("nope");
    let out = edgenet(&[
        "prepare",
        missing.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(!data.exists());
    assert!(fs::read_dir(d).unwrap().next().is_none());

    let run = d.join("run");
    let out = edgenet(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(!run.exists());

    let out = edgenet(&["params", "--variant", "wc", "--edge-method", "canny"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("conflicts"));

    let cfg = d.join("bad.cfg");
    fs::write(&cfg, "seed=1\nmomentum=0.9\n").unwrap();
    let out = edgenet(&["params", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("momentum"));
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# ablation\nvariant = wc\n").unwrap();
    let out = ok(&["params", "--config", cfg.to_str().unwrap()]);
    assert!(out.contains("variant=wc"), "{out}");
    let out = ok(&["params", "--config", cfg.to_str().unwrap(), "--variant", "se"]);
    assert!(out.contains("variant=se"), "{out}");
}

//! End-to-end runs of the command-line interface on a tiny synthetic corpus.

use std::path::{Path, PathBuf};

use embedseg::cli::run;
use embedseg::ingest::read_mask_png;
use embedseg::segmetrics::read_records;

fn spec() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/confusable.toml")
}

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("embedseg").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(cli(&["--help"]), 0);
    assert_eq!(cli(&["--version"]), 0);
    assert_eq!(cli(&[]), 1);
    assert_eq!(cli(&["frobnicate"]), 1);
    assert_eq!(cli(&["evaluate", "--pred", "x"]), 1);
    assert_eq!(
        cli(&["train", "--dir", "x", "--out", "y", "--modality", "sound"]),
        1
    );
}

#[test]
fn data_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing");
    assert_eq!(
        cli(&[
            "ingest",
            "--dir",
            s(&missing),
            "--out",
            s(&tmp.path().join("o"))
        ]),
        2
    );
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "seed = \"seven\"\n").unwrap();
    assert_eq!(
        cli(&[
            "synth",
            "--spec",
            s(&bad),
            "--out",
            s(&tmp.path().join("c"))
        ]),
        2
    );
}

#[test]
fn pipeline_from_synthesis_to_report() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let corpus = t.join("corpus");
    assert_eq!(
        cli(&[
            "synth",
            "--spec",
            s(&spec()),
            "--out",
            s(&corpus),
            "--pages",
            "8",
            "--seed",
            "4"
        ]),
        0
    );
    for f in [
        "classes.txt",
        "tokens.tok",
        "annotations.json",
        "embeddings.vec",
        "pages.tsv",
    ] {
        assert!(corpus.join(f).exists(), "{f} missing");
    }

    let gt = t.join("gt");
    assert_eq!(cli(&["ingest", "--dir", s(&corpus), "--out", s(&gt)]), 0);
    let first = read_mask_png(&gt.join("t1-00000.png")).unwrap();
    assert_eq!((first.width, first.height), (48, 64));

    let maps = t.join("maps");
    assert_eq!(
        cli(&[
            "build-maps",
            "--dir",
            s(&corpus),
            "--out",
            s(&maps),
            "--pca-axes",
            "3"
        ]),
        0
    );
    assert!(maps.join("corpus.pca").exists());
    let map = maps.join("t1-00000.tem");
    assert_eq!(
        cli(&[
            "visualize",
            "--map",
            s(&map),
            "--pca",
            s(&maps.join("corpus.pca"))
        ]),
        0
    );
    assert!(maps.join("t1-00000.png").exists());

    let models = t.join("models");
    let train = [
        "train",
        "--dir",
        s(&corpus),
        "--out",
        s(&models),
        "--modality",
        "image+text",
        "--runs",
        "2",
        "--steps",
        "4",
        "--seed",
        "9",
        "--eval-dir",
        s(&corpus),
    ];
    assert_eq!(cli(&train), 0);
    let records = read_records(&models.join("records.txt")).unwrap();
    // 8 pages x 2 classes x 2 runs
    assert_eq!(records.len(), 32);
    assert!(records.iter().all(|r| r.group == "image+text"));

    // same seed, same model bytes
    let again = t.join("again");
    let mut train2 = train;
    train2[4] = s(&again);
    assert_eq!(cli(&train2), 0);
    let a = std::fs::read(models.join("image_text-run1.pxm")).unwrap();
    let b = std::fs::read(again.join("image_text-run1.pxm")).unwrap();
    assert_eq!(a, b);

    let pred = t.join("pred");
    let model = models.join("image_text-run0.pxm");
    let pca = models.join("corpus.pca");
    assert_eq!(
        cli(&[
            "predict",
            "--model",
            s(&model),
            "--dir",
            s(&corpus),
            "--out",
            s(&pred)
        ]),
        2,
        "text models need --pca"
    );
    assert_eq!(
        cli(&[
            "predict",
            "--model",
            s(&model),
            "--pca",
            s(&pca),
            "--dir",
            s(&corpus),
            "--out",
            s(&pred)
        ]),
        0
    );
    let p = read_mask_png(&pred.join("t1-00003.png")).unwrap();
    assert_eq!((p.width, p.height), (48, 64));

    let eval = t.join("eval");
    let classes = corpus.join("classes.txt");
    assert_eq!(
        cli(&[
            "evaluate",
            "--pred",
            s(&pred),
            "--gt",
            s(&gt),
            "--classes",
            s(&classes),
            "--range",
            "50:5:95",
            "--out",
            s(&eval)
        ]),
        0
    );
    let text = std::fs::read_to_string(eval.join("report.txt")).unwrap();
    for col in [
        "mIoU",
        "P@60",
        "P@80",
        "P@50:5:95",
        "R@60",
        "R@80",
        "R@50:5:95",
    ] {
        assert!(text.contains(col), "{col} missing from the report");
    }
    assert!(text.contains("death_notice") && text.contains("advert"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["columns"].as_array().unwrap().len(), 7);

    // a numeric class count works too
    assert_eq!(
        cli(&[
            "evaluate",
            "--pred",
            s(&pred),
            "--gt",
            s(&gt),
            "--classes",
            "2",
            "--out",
            s(&t.join("eval2"))
        ]),
        0
    );

    let rep = t.join("rep");
    assert_eq!(
        cli(&[
            "report",
            "--records",
            s(&models.join("records.txt")),
            s(&eval.join("records.txt")),
            "--classes",
            s(&classes),
            "--baseline",
            "model",
            "--out",
            s(&rep),
        ]),
        0
    );
    let text = std::fs::read_to_string(rep.join("report.txt")).unwrap();
    assert!(text.contains("image+text"));
}

#[test]
fn experiment_command_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("exp.toml");
    std::fs::write(
        &config,
        format!(
            r#"
name = "smoke"
runs = 2
modalities = ["image", "text", "image+text"]

[dataset]
synth = "{}"
periods = [[1, 12]]

[split]
policy = "random"
test_fraction = 0.25

[train]
steps = 3
eval_every = 1
"#,
            spec().display()
        ),
    )
    .unwrap();
    let out = tmp.path().join("out");
    assert_eq!(
        cli(&[
            "experiment",
            "--config",
            s(&config),
            "--out",
            s(&out),
            "--seed",
            "3"
        ]),
        0
    );
    for f in [
        "config.toml",
        "records-test.txt",
        "report-test.txt",
        "report-test.json",
        "summary.txt",
        "meta.json",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report = std::fs::read_to_string(out.join("report-test.txt")).unwrap();
    let rows = report
        .lines()
        .filter(|l| l.starts_with("death_notice"))
        .count();
    assert_eq!(rows, 3);
}

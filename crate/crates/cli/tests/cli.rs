use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use docenhance::data_io::{load_image, save_image};
use docenhance::model::{init_model, variant, ModelConfig};
use docenhance::training::{save_checkpoint, Checkpoint};
use docenhance::{ImageBuffer, TrainConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_docenhance"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_checkpoint(dir: &Path, cfg: &ModelConfig, name: &str) -> PathBuf {
    let path = dir.join(name);
    let ckpt = Checkpoint {
        train: TrainConfig::new(10, 2, 0),
        step: 0,
        weights: init_model(cfg, 3).unwrap(),
        moments: None,
    };
    save_checkpoint(&path, &ckpt).unwrap();
    path
}

fn tiny_cfg() -> ModelConfig {
    ModelConfig::new(1, 16, 2, 4, 16).unwrap()
}

#[test]
fn synth_writes_count_files_per_subdir_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "synth",
            "--out",
            s(out),
            "--count",
            "3",
            "--size",
            "24x32",
            "--seed",
            "5",
            "--stain",
            "0.3",
            "--saltpepper",
            "0.02",
            "--blur",
            "1.0",
        ]);
    }
    for sub in ["degraded", "gt"] {
        let mut names: Vec<_> = fs::read_dir(a.join(sub))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert_eq!(names.len(), 3);
        for n in names {
            assert_eq!(
                fs::read(a.join(sub).join(&n)).unwrap(),
                fs::read(b.join(sub).join(&n)).unwrap()
            );
        }
    }
    let img = load_image(a.join("degraded/synth_0000.ppm")).unwrap();
    assert_eq!((img.height(), img.width(), img.channels()), (24, 32, 3));
}

#[test]
fn synth_without_degradation_equals_gt() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "synth",
        "--out",
        s(dir.path()),
        "--count",
        "1",
        "--size",
        "20x20",
        "--seed",
        "1",
    ]);
    let d = load_image(dir.path().join("degraded/synth_0000.ppm")).unwrap();
    let g = load_image(dir.path().join("gt/synth_0000.pgm")).unwrap();
    assert_eq!(d, g.to_rgb());
}

#[test]
fn evaluate_identical_dirs_is_perfect_and_single_mode_agrees() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "synth",
        "--out",
        s(dir.path()),
        "--count",
        "2",
        "--size",
        "64x64",
        "--seed",
        "2",
    ]);
    let gt = dir.path().join("gt");
    let report = dir.path().join("report.tsv");
    let text = ok(&[
        "evaluate",
        "--pred",
        s(&gt),
        "--gt",
        s(&gt),
        "--report",
        s(&report),
    ]);
    assert_eq!(fs::read_to_string(&report).unwrap(), text);
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2], "MEAN\tinf\t100.0000\t100.0000\t0.0000");

    let degraded_gray = dir.path().join("pred.pgm");
    let d = load_image(dir.path().join("degraded/synth_0001.ppm")).unwrap();
    save_image(&degraded_gray, &d.to_gray()).unwrap();
    let single = ok(&[
        "evaluate",
        "--pred",
        s(&degraded_gray),
        "--gt",
        s(&gt.join("synth_0001.pgm")),
    ]);
    let cols: Vec<_> = single.lines().next().unwrap().split('\t').collect();
    assert_eq!(cols.len(), 5);
    assert_eq!(cols[1..], lines[1].split('\t').collect::<Vec<_>>()[1..]);
}

#[test]
fn evaluate_rejects_unpaired_files() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "synth",
        "--out",
        s(dir.path()),
        "--count",
        "2",
        "--size",
        "16x16",
        "--seed",
        "2",
    ]);
    let other = dir.path().join("other");
    fs::create_dir(&other).unwrap();
    fs::copy(
        dir.path().join("gt/synth_0000.pgm"),
        other.join("synth_0000.pgm"),
    )
    .unwrap();
    let out = run(&[
        "evaluate",
        "--pred",
        s(&other),
        "--gt",
        s(&dir.path().join("gt")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_resume_binarize_and_info() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "synth",
        "--out",
        s(&data),
        "--count",
        "2",
        "--size",
        "16x16",
        "--seed",
        "3",
    ]);
    let base = [
        "train",
        "--data",
        s(&data),
        "--layers",
        "1",
        "--dim",
        "16",
        "--heads",
        "2",
        "--patch",
        "4",
        "--window",
        "16",
        "--steps",
        "6",
        "--batch",
        "2",
        "--lr",
        "1e-3",
        "--seed",
        "4",
    ];

    let full = dir.path().join("full.ckpt");
    let mut args = base.to_vec();
    args.extend(["--out", s(&full)]);
    ok(&args);
    let log = fs::read_to_string(dir.path().join("full.ckpt.loss.tsv")).unwrap();
    assert_eq!(log.lines().count(), 6);
    assert!(log.starts_with("1\t"));

    // config file values sit below explicit flags
    let cfg = dir.path().join("train.cfg");
    fs::write(&cfg, "steps=99\ncheckpoint_every=2\n").unwrap();
    let via_config = dir.path().join("cfg.ckpt");
    let mut args = base.to_vec();
    args.extend(["--out", s(&via_config), "--config", s(&cfg)]);
    ok(&args);
    assert_eq!(fs::read(&via_config).unwrap(), fs::read(&full).unwrap());

    let part = dir.path().join("part.ckpt");
    let mut args = base.to_vec();
    args.extend(["--out", s(&part), "--stop-after", "3"]);
    ok(&args);
    assert_eq!(
        fs::read_to_string(dir.path().join("part.ckpt.loss.tsv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
    let resumed = dir.path().join("resumed.ckpt");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--resume",
        s(&part),
        "--out",
        s(&resumed),
    ]);
    assert_eq!(fs::read(&resumed).unwrap(), fs::read(&full).unwrap());
    let tail = fs::read_to_string(dir.path().join("resumed.ckpt.loss.tsv")).unwrap();
    assert_eq!(
        tail,
        log.lines()
            .skip(3)
            .map(|l| format!("{l}\n"))
            .collect::<String>()
    );

    let page = dir.path().join("page.ppm");
    fs::copy(data.join("degraded/synth_0000.ppm"), &page).unwrap();
    let (b1, b2) = (dir.path().join("b1.pgm"), dir.path().join("b2.pgm"));
    for b in [&b1, &b2] {
        ok(&[
            "binarize",
            "--ckpt",
            s(&full),
            "--in",
            s(&page),
            "--out",
            s(b),
        ]);
    }
    assert_eq!(fs::read(&b1).unwrap(), fs::read(&b2).unwrap());
    let img = load_image(&b1).unwrap();
    assert_eq!((img.height(), img.width()), (16, 16));
    assert!(img.data().iter().all(|&v| v == 0.0 || v == 1.0));
    let gray = dir.path().join("gray.pgm");
    ok(&[
        "binarize",
        "--ckpt",
        s(&full),
        "--in",
        s(&page),
        "--out",
        s(&gray),
        "--no-threshold",
    ]);

    let text = ok(&["info", "--ckpt", s(&full)]);
    assert!(text.contains("step 6 of 6"), "{text}");
    assert!(text.contains("custom size"), "{text}");
}

#[test]
fn resume_rejects_a_different_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "synth",
        "--out",
        s(&data),
        "--count",
        "1",
        "--size",
        "16x16",
    ]);
    let ckpt = write_checkpoint(dir.path(), &tiny_cfg(), "c.ckpt");
    let out = run(&[
        "train",
        "--data",
        s(&data),
        "--resume",
        s(&ckpt),
        "--steps",
        "99",
        "--out",
        s(&ckpt),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_on_empty_dataset_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("degraded")).unwrap();
    fs::create_dir_all(dir.path().join("gt")).unwrap();
    let out = run(&[
        "train",
        "--data",
        s(dir.path()),
        "--out",
        s(&dir.path().join("x.ckpt")),
        "--steps",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no image pairs"));
}

#[test]
fn info_prints_reference_counts_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    for (name, nominal) in [("small", "17M"), ("base", "68M"), ("large", "255M")] {
        // shrink the window so the file stays small; (L, D, H) decide the variant
        let cfg = variant(name, 16, 16).unwrap();
        let ckpt = write_checkpoint(dir.path(), &cfg, &format!("{name}.ckpt"));
        let text = ok(&["info", "--ckpt", s(&ckpt)]);
        assert!(text.contains(&format!("nominal: {nominal}")), "{text}");
        assert!(text.contains(&cfg.param_count().to_string()), "{text}");
    }
}

#[test]
fn attention_defaults_and_seeded_random_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig::new(2, 16, 2, 4, 16).unwrap();
    let ckpt = write_checkpoint(dir.path(), &cfg, "a.ckpt");
    let page = dir.path().join("p.pgm");
    save_image(
        &page,
        &ImageBuffer::from_fn(20, 20, 1, |y, x, _| ((x + y) % 3) as f32 / 2.0).unwrap(),
    )
    .unwrap();
    let (o1, o2) = (dir.path().join("o1"), dir.path().join("o2"));
    let l1 = ok(&[
        "attention",
        "--ckpt",
        s(&ckpt),
        "--in",
        s(&page),
        "--tokens",
        "random:4",
        "--seed",
        "9",
        "--out",
        s(&o1),
    ]);
    let l2 = ok(&[
        "attention",
        "--ckpt",
        s(&ckpt),
        "--in",
        s(&page),
        "--tokens",
        "random:4",
        "--seed",
        "9",
        "--out",
        s(&o2),
    ]);
    let names = |t: &str| {
        t.lines()
            .map(|l| Path::new(l).file_name().unwrap().to_owned())
            .collect::<Vec<_>>()
    };
    assert_eq!(names(&l1), names(&l2));
    assert_eq!(names(&l1).len(), 4);
    for n in names(&l1) {
        let n = n.to_str().unwrap();
        assert!(n.ends_with("_L1_H1.pgm"), "{n}");
        let map = load_image(o1.join(n)).unwrap();
        assert_eq!((map.height(), map.width()), (16, 16));
    }
    let explicit = ok(&[
        "attention",
        "--ckpt",
        s(&ckpt),
        "--in",
        s(&page),
        "--tokens",
        "0,15",
        "--layer",
        "0",
        "--head",
        "0",
        "--out",
        s(&o1),
    ]);
    assert!(explicit.contains("tok15_L0_H0.pgm"));
    let bad = run(&[
        "attention",
        "--ckpt",
        s(&ckpt),
        "--in",
        s(&page),
        "--tokens",
        "16",
        "--out",
        s(&o1),
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(run(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    let help = run(&["train", "--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    assert!(
        text.contains("[default: 8]") && text.contains("[default: base]"),
        "{text}"
    );
}

#[test]
fn corrupt_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, b"NOTACKPT....").unwrap();
    let out = run(&["info", "--ckpt", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("DOCENTR1"));
}

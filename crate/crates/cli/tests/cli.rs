use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lus-screen"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(o: &Output) -> serde_json::Value {
    assert_eq!(code(o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic set plus zero-free random weights at reduced width.
fn fixture(dir: &Path) {
    let data = dir.join("data");
    assert_eq!(
        code(&run(&[
            "synth",
            "--out-dir",
            s(&data),
            "--videos",
            "4",
            "--frames",
            "2",
            "--size",
            "32"
        ])),
        0
    );
    for (model, out, seed) in [("vgg16", "cls.lsw", "1"), ("unet", "seg.lsw", "2")] {
        let o = run(&[
            "init-weights",
            "--model",
            model,
            "--channel-divisor",
            "32",
            "--seed",
            seed,
            "--out",
            s(&dir.join(out)),
        ]);
        assert_eq!(code(&o), 0);
    }
}

#[test]
fn infer_writes_report_and_overlay() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let out = dir.path().join("infer");
    let o = run(&[
        "infer",
        "--image",
        s(&dir.path().join("data/images/vid000_f0000.pgm")),
        "--mask",
        s(&dir.path().join("data/masks/vid000_f0000.pgm")),
        "--weights-cls",
        s(&dir.path().join("cls.lsw")),
        "--weights-seg",
        s(&dir.path().join("seg.lsw")),
        "--channel-divisor",
        "32",
        "--out-dir",
        s(&out),
        "--format",
        "png",
    ]);
    let v = json(&o);
    assert_eq!(v["id"], "vid000_f0000");
    let sum = v["probs"]["covid"].as_f64().unwrap() + v["probs"]["healthy"].as_f64().unwrap();
    assert!((sum - 1.0).abs() < 1e-6);
    assert!(v["iou"].is_number());
    assert!(["covid", "healthy"].contains(&v["label_pred"].as_str().unwrap()));
    assert!(Path::new(v["overlay_path"].as_str().unwrap()).exists());
    assert!(out.join("vid000_f0000.json").exists());
}

#[test]
fn split_select_summarize_bench() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let manifest = dir.path().join("data/manifest.jsonl");
    let v = json(&run(&[
        "split",
        "--manifest",
        s(&manifest),
        "--k",
        "2",
        "--seed",
        "5",
        "--out-dir",
        s(dir.path()),
    ]));
    assert_eq!(v.as_array().unwrap().len(), 2);
    let plan: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("folds.json")).unwrap())
            .unwrap();
    assert_eq!(plan["assignment"].as_object().unwrap().len(), 4);

    assert_eq!(
        json(&run(&[
            "select-frames",
            "--frame-count",
            "10",
            "--stride",
            "4"
        ])),
        serde_json::json!([0, 4, 8])
    );

    let o = run(&["summarize", "--model", "unet"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("unet.final"));
    assert!(text.trim_end().ends_with("total parameters: 31030593"));

    let v = json(&run(&[
        "bench",
        "--channel-divisor",
        "32",
        "--iterations",
        "1",
        "--warmup",
        "0",
    ]));
    assert_eq!(v["layers"].as_array().unwrap().len(), 15);
}

#[test]
fn augment_writes_variants() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let out = dir.path().join("aug");
    let v = json(&run(&[
        "augment",
        "--image",
        s(&dir.path().join("data/images/vid000_f0001.pgm")),
        "--mask",
        s(&dir.path().join("data/masks/vid000_f0001.pgm")),
        "--out-dir",
        s(&out),
    ]));
    assert!(v.as_array().unwrap().len() >= 20);
}

#[test]
fn train_then_evaluate_with_saved_heads() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let manifest = dir.path().join("data/manifest.jsonl");
    let heads = dir.path().join("heads");
    let cls = dir.path().join("cls.lsw");
    let seg = dir.path().join("seg.lsw");
    let common = [
        "--manifest",
        s(&manifest),
        "--k",
        "2",
        "--seed",
        "3",
        "--channel-divisor",
        "32",
    ];
    let mut args = vec![
        "train-head",
        "--weights-cls",
        s(&cls),
        "--out-dir",
        s(&heads),
    ];
    args.extend(common);
    args.extend(["--epochs", "3", "--no-augment"]);
    let v = json(&run(&args));
    assert_eq!(v["folds"].as_array().unwrap().len(), 2);
    assert!(heads.join("head_fold1.lsw").exists());

    let eval_dir = dir.path().join("eval");
    let mut args = vec![
        "evaluate",
        "--weights-cls",
        s(&cls),
        "--weights-seg",
        s(&seg),
        "--heads",
        s(&heads),
        "--out-dir",
        s(&eval_dir),
    ];
    args.extend(common);
    let v = json(&run(&args));
    assert_eq!(v["folds"].as_array().unwrap().len(), 2);
    assert!(eval_dir.join("evaluation.json").exists());

    std::fs::remove_file(heads.join("head_fold1.lsw")).unwrap();
    let o = run(&args);
    assert_eq!(code(&o), 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let img = dir.path().join("data/images/vid000_f0000.pgm");
    let cls = dir.path().join("cls.lsw");
    let seg = dir.path().join("seg.lsw");
    let infer = |cls: &Path, seg: &Path, extra: &[&str]| {
        let mut a = vec![
            "infer",
            "--image",
            s(&img),
            "--weights-cls",
            s(cls),
            "--weights-seg",
            s(seg),
            "--channel-divisor",
            "32",
            "--out-dir",
            s(dir.path()),
        ];
        a.extend(extra);
        code(&run(&a))
    };
    assert_eq!(infer(&cls, &seg, &[]), 0);
    // Swapped archives do not fit the graphs.
    assert_eq!(infer(&seg, &cls, &[]), 4);
    assert_eq!(infer(&cls, &seg, &["--threshold", "1.5"]), 2);
    assert_eq!(infer(&dir.path().join("absent.lsw"), &seg, &[]), 3);

    let mut bytes = std::fs::read(&cls).unwrap();
    bytes[20] ^= 0xff;
    let bad = dir.path().join("bad.lsw");
    std::fs::write(&bad, bytes).unwrap();
    assert_eq!(infer(&bad, &seg, &[]), 4);

    assert_eq!(
        code(&run(&[
            "split",
            "--manifest",
            s(&dir.path().join("nope.jsonl"))
        ])),
        3
    );
    assert_eq!(code(&run(&["infer"])), 2);
}

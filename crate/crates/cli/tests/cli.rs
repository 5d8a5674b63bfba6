use rccn::data::{read_dmap, read_ppm};
use rccn::model::load;
use rccn::Tensor;
use std::path::Path;
use std::process::{Command, Output};

fn rccn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rccn"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let cfg = serde_json::json!({
        "world": { "n_samples": 2, "height": 32, "width": 32, "seed": 3 },
        "network": { "variant": "RCCN", "input_height": 32, "input_width": 32, "channel_divisor": 64 },
        "scheme": { "mode": "SID", "min_depth": 1.0, "max_depth": 40.0, "bins": 4 },
        "train": { "total_iters": 20, "base_lr": 0.001 },
        "paths": { "dataset": dir.join("data"), "output": dir.join("run") }
    });
    let path = dir.join("tiny.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn unknown_flag_prints_usage_and_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rccn(&["train", "--bogus"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn invalid_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, r#"{"scheme": {"mode": "SID", "min_depth": 0.0, "max_depth": 10.0, "bins": 8}}"#).unwrap();
    let out = rccn(&["--config", path.to_str().unwrap(), "synth"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("SID"));
}

#[test]
fn gradcheck_seed_seven_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rccn(&["gradcheck", "--seed", "7"], tmp.path());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("max rel error"));
}

#[test]
fn synth_train_eval_predict_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = tiny_config(dir);

    let synth = rccn(&["--config", &cfg, "synth"], dir);
    assert_eq!(synth.status.code(), Some(0), "{}", String::from_utf8_lossy(&synth.stderr));
    assert!(dir.join("data/manifest.json").exists());

    let train = rccn(&["--config", &cfg, "train", "--log-every", "0"], dir);
    assert_eq!(train.status.code(), Some(0), "{}", String::from_utf8_lossy(&train.stderr));
    let model_path = dir.join("run/model.rccn");
    for stage in 1..=4 {
        assert!(dir.join(format!("run/stage{stage}.rccn")).exists());
    }
    let csv = std::fs::read_to_string(dir.join("run/curve.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("iter,loss_r,loss_c,total"));
    assert_eq!(csv.lines().count(), 21);

    let model_arg = model_path.to_str().unwrap();
    let eval = rccn(&["--config", &cfg, "eval", "--model", model_arg], dir);
    assert_eq!(eval.status.code(), Some(0), "{}", String::from_utf8_lossy(&eval.stderr));
    let reports: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert!(reports["fused"]["rmse_log"].as_f64().unwrap().is_finite());

    let image = dir.join("data/00000.ppm");
    let depth = dir.join("pred.dmap");
    let color = dir.join("pred.ppm");
    let predict = rccn(
        &[
            "predict",
            "--model",
            model_arg,
            "--input",
            image.to_str().unwrap(),
            "--out",
            depth.to_str().unwrap(),
            "--color",
            color.to_str().unwrap(),
        ],
        dir,
    );
    assert_eq!(predict.status.code(), Some(0), "{}", String::from_utf8_lossy(&predict.stderr));

    let model = load(&model_path).unwrap();
    let (h, w, rgb) = read_ppm(&image).unwrap();
    let plane = h * w;
    let tensor = Tensor::from_fn(&[1, 3, h, w], |i| rgb[(i % plane) * 3 + i / plane] as f64);
    let expected: Vec<u32> = model.predict(&tensor).unwrap().data().iter().map(|&d| (d as f32).to_bits()).collect();
    let (dh, dw, written, mask) = read_dmap(&depth).unwrap();
    assert_eq!((dh, dw), (h, w));
    assert!(mask.iter().all(|&m| m));
    let written: Vec<u32> = written.iter().map(|d| d.to_bits()).collect();
    assert_eq!(written, expected);
    let (ch, cw, _) = read_ppm(&color).unwrap();
    assert_eq!((ch, cw), (h, w));
}

#[test]
fn corrupted_model_is_rejected_with_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("broken.rccn");
    std::fs::write(&path, b"RCCN\x01\x00garbage").unwrap();
    let out = rccn(&["eval", "--model", path.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_input_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rccn(&["eval", "--model", "nowhere.rccn"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

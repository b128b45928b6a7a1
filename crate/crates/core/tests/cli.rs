//! End-to-end tests of the command-line surface: exit codes, error
//! wording, and byte-level determinism of outputs.

use std::path::Path;
use std::process::{Command, Output};

use vasl::config::{Domain, ModelConfig};
use vasl::network::build_model;

fn vasl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vasl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        enabled_domains: vec![Domain::Rgb, Domain::Depth],
        stem_channels: 4,
        block_layers: 1,
        growth_rate: 2,
        bottleneck_factor: 2,
        squeeze_out: 8,
        mrfu_widths: vec![4, 4, 4, 4],
        batch_size: 2,
        epochs: 1,
        seed: 3,
        ..ModelConfig::default()
    }
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = vasl(&["synth", "--out", "/tmp/x", "--count", "1", "--seed", "1", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = vasl(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let out = vasl(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn synth_zero_count_writes_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("data");
    let out = vasl(&["synth", "--out", out_dir.to_str().unwrap(), "--count", "0", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let manifest = std::fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.is_empty());
}

#[test]
fn synth_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("data");
    let out = vasl(&[
        "synth", "--out", out_dir.to_str().unwrap(), "--count", "3", "--seed", "7", "--size", "64",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    // 3 samples x 4 planes + manifest.
    let entries = std::fs::read_dir(&out_dir).unwrap().count();
    assert_eq!(entries, 13);
}

#[test]
fn synth_unwritable_dir_is_data_error() {
    let out = vasl(&["synth", "--out", "/proc/definitely/not/writable", "--count", "1", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
}

#[test]
fn train_missing_config_key_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    vasl(&["synth", "--out", data.to_str().unwrap(), "--count", "2", "--seed", "2"]);
    let cfg_text: String = tiny_cfg()
        .to_text()
        .lines()
        .filter(|l| !l.starts_with("growth_rate"))
        .collect::<Vec<_>>()
        .join("\n");
    let cfg_path = dir.path().join("model.cfg");
    std::fs::write(&cfg_path, cfg_text).unwrap();
    let out = vasl(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.path().join("m.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("growth_rate"));
}

fn write_untrained_checkpoint(path: &Path, cfg: &ModelConfig) {
    let (_, store) = build_model(cfg).unwrap();
    vasl::checkpoint::save(path, cfg, &store, 0).unwrap();
}

#[test]
fn predict_corrupt_magic_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    write_untrained_checkpoint(&ckpt, &tiny_cfg());
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[0] = b'Z';
    std::fs::write(&ckpt, bytes).unwrap();

    let data = dir.path().join("data");
    vasl(&["synth", "--out", data.to_str().unwrap(), "--count", "1", "--seed", "4"]);
    let out = vasl(&[
        "predict",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--rgb",
        data.join("synth00000.rgb.ppm").to_str().unwrap(),
        "--out",
        dir.path().join("p.pgm").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
}

#[test]
fn predict_missing_depth_is_usage_error_and_proxy_opts_in() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    write_untrained_checkpoint(&ckpt, &tiny_cfg());
    let data = dir.path().join("data");
    vasl(&["synth", "--out", data.to_str().unwrap(), "--count", "1", "--seed", "4"]);
    let rgb = data.join("synth00000.rgb.ppm");

    let out = vasl(&[
        "predict",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--rgb",
        rgb.to_str().unwrap(),
        "--out",
        dir.path().join("p.pgm").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("depth"));

    let out = vasl(&[
        "predict",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--rgb",
        rgb.to_str().unwrap(),
        "--depth-proxy",
        "--out",
        dir.path().join("p.pgm").to_str().unwrap(),
        "--prob",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("stand-in"));
    // 16-bit probability map: header announces maxval 65535.
    let bytes = std::fs::read(dir.path().join("p.pgm")).unwrap();
    assert!(bytes.starts_with(b"P5\n256 256\n65535\n"));
}

#[test]
fn predict_warns_on_ignored_domains() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig { enabled_domains: vec![Domain::Rgb], ..tiny_cfg() };
    let ckpt = dir.path().join("rgb_only.ckpt");
    write_untrained_checkpoint(&ckpt, &cfg);
    let data = dir.path().join("data");
    vasl(&["synth", "--out", data.to_str().unwrap(), "--count", "1", "--seed", "4"]);
    let out = vasl(&[
        "predict",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--rgb",
        data.join("synth00000.rgb.ppm").to_str().unwrap(),
        "--edge",
        data.join("synth00000.edge.pgm").to_str().unwrap(),
        "--depth",
        data.join("synth00000.depth.pgm").to_str().unwrap(),
        "--out",
        dir.path().join("p.pgm").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let err = stderr_of(&out);
    assert!(err.contains("--edge ignored"), "{err}");
    assert!(err.contains("--depth"), "{err}");
}

#[test]
fn eval_self_is_perfect_and_missing_pred_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    vasl(&["synth", "--out", data.to_str().unwrap(), "--count", "2", "--seed", "6", "--size", "64"]);
    let report = dir.path().join("report.txt");
    let out = vasl(&[
        "eval",
        "--pred",
        data.to_str().unwrap(),
        "--gt",
        data.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("iou=1.0000"), "{stdout}");
    assert!(report.exists());
    assert!(report.with_extension("csv").exists());

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = vasl(&[
        "eval",
        "--pred",
        empty.to_str().unwrap(),
        "--gt",
        data.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("synth00000"));
}

#[test]
fn eval_threshold_sweep_emits_nine_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    vasl(&["synth", "--out", data.to_str().unwrap(), "--count", "1", "--seed", "8", "--size", "64"]);
    let report = dir.path().join("sweep.txt");
    let out = vasl(&[
        "eval",
        "--pred",
        data.to_str().unwrap(),
        "--gt",
        data.to_str().unwrap(),
        "--threshold",
        "0.1..0.9",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let text = std::fs::read_to_string(&report).unwrap();
    // Header plus nine threshold rows.
    assert_eq!(text.lines().count(), 10, "{text}");
}

//! Command-line entry points: synth, train, predict, eval, gradcheck.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (unreadable or malformed files), 3 numeric failure (diverged training,
//! gradient-check breach).

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::checkpoint;
use crate::config::{Domain, ModelConfig};
use crate::data::{self, pnm, preprocess, SynthSpec};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::metrics;
use crate::network::build_model;
use crate::tensor::Tensor;
use crate::train::{self, FitOptions};

#[derive(Parser)]
#[command(name = "vasl", version, about = "Visually attentive splice localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic splice-forgery dataset
    Synth {
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        /// Number of samples
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        /// Image side length
        #[arg(long, default_value_t = 256)]
        size: usize,
    },
    /// Train a model on a dataset directory
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Model/training configuration (flat key = value file)
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint output path; a loss log is written next to it
        #[arg(long)]
        out: PathBuf,
        /// Override the configured epoch count
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict a splice mask for one image
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        /// Input image (binary PPM)
        #[arg(long)]
        rgb: PathBuf,
        /// Edge map (PGM); derived with Sobel when omitted
        #[arg(long)]
        edge: Option<PathBuf>,
        /// Depth map (PGM); required for depth-enabled checkpoints
        #[arg(long)]
        depth: Option<PathBuf>,
        /// Substitute a grayscale-blur stand-in for a missing depth map
        #[arg(long)]
        depth_proxy: bool,
        /// Output mask path (PGM)
        #[arg(long)]
        out: PathBuf,
        /// Write the 16-bit probability map instead of a binary mask
        #[arg(long)]
        prob: bool,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Evaluate predictions against ground-truth masks
    Eval {
        /// Directory of predictions (<id>.prob.pgm or <id>.mask.pgm)
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth dataset directory (with manifest.txt)
        #[arg(long)]
        gt: PathBuf,
        /// Single value ("0.5") or sweep ("0.1..0.9" or "0.1..0.9:0.05")
        #[arg(long, default_value = "0.5")]
        threshold: String,
        /// Report file (text table; a CSV is written alongside)
        #[arg(long)]
        report: PathBuf,
    },
    /// Verify analytic gradients against finite differences
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parse arguments and dispatch, returning the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, count, seed, size } => cmd_synth(&out, count, seed, size),
        Command::Train { data, config, out, epochs } => cmd_train(&data, &config, &out, epochs),
        Command::Predict { ckpt, rgb, edge, depth, depth_proxy, out, prob, threshold } => {
            cmd_predict(&ckpt, &rgb, edge.as_deref(), depth.as_deref(), depth_proxy, &out, prob, threshold)
        }
        Command::Eval { pred, gt, threshold, report } => cmd_eval(&pred, &gt, &threshold, &report),
        Command::Gradcheck { seed } => cmd_gradcheck(seed),
    }
}

fn cmd_synth(out: &Path, count: usize, seed: u64, size: usize) -> Result<()> {
    let spec = SynthSpec { count, size, seed, ..SynthSpec::new(count, seed) };
    let ids = data::synth_dataset(out, &spec)?;
    println!("wrote {} samples to {}", ids.len(), out.display());
    Ok(())
}

fn cmd_train(data_dir: &Path, config: &Path, out: &Path, epochs: Option<usize>) -> Result<()> {
    let text = std::fs::read_to_string(config).map_err(|e| Error::io(config, e))?;
    let cfg = ModelConfig::from_text(&text)?;
    let samples = data::load_dataset(data_dir)?;
    let (net, mut store) = build_model(&cfg)?;
    let opts = FitOptions {
        epochs,
        checkpoint_path: Some(out.to_path_buf()),
        ..Default::default()
    };
    let log = train::fit(&net, &mut store, &samples, &opts)?;
    let log_path = PathBuf::from(format!("{}.log", out.display()));
    std::fs::write(&log_path, log.render()).map_err(|e| Error::io(&log_path, e))?;
    if let Some(last) = log.epochs.last() {
        println!(
            "trained {} steps over {} epochs; final loss {:.6}, train IoU {:.4}",
            log.steps,
            log.epochs.len(),
            last.mean_loss,
            last.train_iou
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    ckpt: &Path,
    rgb: &Path,
    edge: Option<&Path>,
    depth: Option<&Path>,
    depth_proxy: bool,
    out: &Path,
    prob: bool,
    threshold: f64,
) -> Result<()> {
    let (net, store, _) = checkpoint::load(ckpt)?;
    let enabled = net.config.enabled_domains.clone();

    let rgb_raw = pnm::load(rgb)?.to_tensor();
    if rgb_raw.dims().c() != 3 {
        return Err(Error::Data(format!("{}: expected a color PPM", rgb.display())));
    }
    let rgb_t = preprocess::resize_normalize(&rgb_raw)?;

    if edge.is_some() && !enabled.contains(&Domain::Edge) {
        eprintln!("warning: --edge ignored, checkpoint does not use the edge domain");
    }
    if (depth.is_some() || depth_proxy) && !enabled.contains(&Domain::Depth) {
        eprintln!("warning: --depth/--depth-proxy ignored, checkpoint does not use the depth domain");
    }

    let load_gray = |path: &Path| -> Result<Tensor> {
        let t = pnm::load(path)?.to_tensor();
        if t.dims().c() != 1 {
            return Err(Error::Data(format!("{}: expected a grayscale PGM", path.display())));
        }
        preprocess::resize_normalize(&t)
    };

    let mut inputs = Vec::new();
    for d in &enabled {
        let t = match d {
            Domain::Rgb => rgb_t.clone(),
            Domain::Edge => match edge {
                Some(path) => load_gray(path)?,
                None => {
                    eprintln!("note: deriving the edge map from the input with Sobel");
                    preprocess::sobel_edge(&rgb_t)
                }
            },
            Domain::Depth => match depth {
                Some(path) => load_gray(path)?,
                None if depth_proxy => {
                    eprintln!(
                        "warning: using a grayscale-blur stand-in for depth (--depth-proxy); \
                         this is not a depth estimate"
                    );
                    preprocess::depth_proxy(&rgb_t)
                }
                None => {
                    return Err(Error::Config(
                        "checkpoint uses the depth domain: pass --depth FILE or opt in to --depth-proxy"
                            .into(),
                    ))
                }
            },
        };
        inputs.push(t);
    }

    let prediction = net.predict(&store, &inputs)?;
    if prob {
        pnm::save_probability_map(out, &prediction)?;
    } else {
        let mask = metrics::binarize(&prediction, threshold)?;
        pnm::save_binary_mask(out, &mask)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// "0.5" or "LO..HI" or "LO..HI:STEP" (default step 0.1).
fn parse_thresholds(arg: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("bad threshold {arg:?} (want T, LO..HI or LO..HI:STEP)"));
    if let Some((range, step)) = arg.split_once(':') {
        let step: f64 = step.parse().map_err(|_| bad())?;
        return sweep(range, step).ok_or_else(bad);
    }
    if arg.contains("..") {
        return sweep(arg, 0.1).ok_or_else(bad);
    }
    let t: f64 = arg.parse().map_err(|_| bad())?;
    Ok(vec![t])
}

fn sweep(range: &str, step: f64) -> Option<Vec<f64>> {
    let (lo, hi) = range.split_once("..")?;
    let lo: f64 = lo.parse().ok()?;
    let hi: f64 = hi.parse().ok()?;
    if step <= 0.0 || hi < lo {
        return None;
    }
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let t = lo + step * k as f64;
        if t > hi + 1e-9 {
            break;
        }
        out.push(t);
        k += 1;
    }
    Some(out)
}

fn cmd_eval(pred: &Path, gt: &Path, threshold: &str, report: &Path) -> Result<()> {
    let thresholds = parse_thresholds(threshold)?;
    if thresholds.len() == 1 {
        let r = metrics::evaluate_dirs(pred, gt, thresholds[0])?;
        std::fs::write(report, r.render_text()).map_err(|e| Error::io(report, e))?;
        let csv_path = if report.extension().is_some_and(|e| e == "csv") {
            report.with_extension("txt")
        } else {
            report.with_extension("csv")
        };
        std::fs::write(&csv_path, r.render_csv()).map_err(|e| Error::io(&csv_path, e))?;
        let m = r.mean_per_image;
        println!(
            "mean/image iou={:.4} acc={:.4} f1={:.4} auc={}",
            m.iou,
            m.accuracy,
            m.f1,
            m.auc.map_or_else(|| "-".into(), |a| format!("{a:.4}"))
        );
    } else {
        let mut text = format!("{:<10} {:>10} {:>10} {:>10} {:>10}\n", "threshold", "iou", "acc", "f1", "auc");
        for &t in &thresholds {
            let r = metrics::evaluate_dirs(pred, gt, t)?;
            let m = r.mean_per_image;
            let line = format!(
                "{:<10.3} {:>10.6} {:>10.6} {:>10.6} {:>10}\n",
                t,
                m.iou,
                m.accuracy,
                m.f1,
                m.auc.map_or_else(|| "-".into(), |a| format!("{a:.6}"))
            );
            print!("{line}");
            text.push_str(&line);
        }
        std::fs::write(report, text).map_err(|e| Error::io(report, e))?;
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64) -> Result<()> {
    let reports = gradcheck::suite(seed)?;
    let mut failures = 0usize;
    println!(
        "{:<22} {:>12} {:>8} {:>8} {:>10} {:>6}",
        "op", "max_rel_err", "checked", "skipped", "threshold", "status"
    );
    for r in &reports {
        println!(
            "{:<22} {:>12.3e} {:>8} {:>8} {:>10.0e} {:>6}",
            r.op,
            r.max_rel_err,
            r.checked,
            r.skipped,
            r.threshold,
            if r.passed() { "pass" } else { "FAIL" }
        );
        if !r.passed() {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(Error::Numeric(format!("{failures} gradient checks exceeded their threshold")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_parsing() {
        assert_eq!(parse_thresholds("0.5").unwrap(), vec![0.5]);
        let nine = parse_thresholds("0.1..0.9").unwrap();
        assert_eq!(nine.len(), 9);
        assert!((nine[0] - 0.1).abs() < 1e-12);
        assert!((nine[8] - 0.9).abs() < 1e-12);
        let five = parse_thresholds("0.1..0.9:0.2").unwrap();
        assert_eq!(five.len(), 5);
        assert!(parse_thresholds("zebra").is_err());
        assert!(parse_thresholds("0.9..0.1").is_err());
    }
}

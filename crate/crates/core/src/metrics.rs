//! Pixel-level localization metrics: IoU, accuracy, F1 and ROC AUC, plus
//! directory-level evaluation and report rendering.
//!
//! Degenerate conventions: an empty prediction against an empty ground
//! truth scores IoU = F1 = 1 (correctly predicting "no tampering" is not a
//! failure). AUC is undefined for single-class ground truth; such images
//! become error rows excluded from the AUC mean, with a note in the report.

use std::path::Path;

use rayon::prelude::*;

use crate::data::{self, pnm};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PixelCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl PixelCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, other: &PixelCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

fn check_binary(name: &str, t: &Tensor) -> Result<()> {
    if t.data().iter().all(|&v| v == 0.0 || v == 1.0) {
        Ok(())
    } else {
        Err(Error::Data(format!("{name}: expected a strictly binary mask")))
    }
}

/// Threshold a probability map: pixel >= threshold becomes 1.
pub fn binarize(prob: &Tensor, threshold: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("threshold {threshold} outside [0,1]")));
    }
    let data = prob.data().iter().map(|&p| if p >= threshold { 1.0 } else { 0.0 }).collect();
    Tensor::new(prob.dims(), data)
}

pub fn pixel_counts(pred: &Tensor, gt: &Tensor) -> Result<PixelCounts> {
    if pred.dims() != gt.dims() {
        return Err(Error::Data(format!("mask dims {} vs {}", pred.dims(), gt.dims())));
    }
    check_binary("pred", pred)?;
    check_binary("gt", gt)?;
    let mut c = PixelCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p == 1.0, g == 1.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// |pred AND gt| / |pred OR gt|; both empty scores 1.
pub fn iou_from_counts(c: &PixelCounts) -> f64 {
    let union = c.tp + c.fp + c.fn_;
    if union == 0 {
        1.0
    } else {
        c.tp as f64 / union as f64
    }
}

pub fn pixel_accuracy_from_counts(c: &PixelCounts) -> f64 {
    (c.tp + c.tn) as f64 / c.total() as f64
}

/// 2tp / (2tp + fp + fn); all three zero scores 1.
pub fn pixel_f1_from_counts(c: &PixelCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * c.tp as f64 / denom as f64
    }
}

pub fn iou(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    Ok(iou_from_counts(&pixel_counts(pred, gt)?))
}

pub fn pixel_accuracy(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    Ok(pixel_accuracy_from_counts(&pixel_counts(pred, gt)?))
}

pub fn pixel_f1(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    Ok(pixel_f1_from_counts(&pixel_counts(pred, gt)?))
}

/// Rank-based (Mann-Whitney) ROC AUC with mid-rank tie handling, equal to
/// the trapezoidal area under the ROC curve over all thresholds.
pub fn pixel_auc(prob: &Tensor, gt: &Tensor) -> Result<f64> {
    if prob.dims() != gt.dims() {
        return Err(Error::Data(format!("auc dims {} vs {}", prob.dims(), gt.dims())));
    }
    check_binary("gt", gt)?;
    auc_from_scores(prob.data(), gt.data())
}

fn auc_from_scores(scores: &[f64], labels: &[f64]) -> Result<f64> {
    let pos = labels.iter().filter(|&&l| l == 1.0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data("auc undefined: ground truth has a single class".into()));
    }
    let mut order: Vec<u32> = (0..scores.len() as u32).collect();
    order.sort_by(|&a, &b| {
        scores[a as usize].partial_cmp(&scores[b as usize]).expect("finite scores")
    });
    // Mid-ranks over tie groups; sum the positive ranks.
    let mut rank_pos_sum = 0.0f64;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1] as usize] == scores[order[i] as usize] {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx as usize] == 1.0 {
                rank_pos_sum += mid_rank;
            }
        }
        i = j + 1;
    }
    let p = pos as f64;
    Ok((rank_pos_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

// ── Directory evaluation ────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct ImageRow {
    pub id: String,
    pub counts: PixelCounts,
    pub iou: f64,
    pub accuracy: f64,
    pub f1: f64,
    /// None when the ground truth is single-class (excluded from means).
    pub auc: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Summary {
    pub iou: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub threshold: f64,
    pub rows: Vec<ImageRow>,
    /// Unweighted mean of the per-image rows.
    pub mean_per_image: Summary,
    /// Counts (and scores) pooled over every pixel of every image.
    pub pixel_pooled: Summary,
    pub auc_excluded: Vec<String>,
}

fn load_gt(dir: &Path, id: &str) -> Result<Tensor> {
    let path = dir.join(format!("{id}.mask.pgm"));
    let t = pnm::load(&path)?.to_tensor();
    if !t.data().iter().all(|&v| v == 0.0 || v == 1.0) {
        return Err(Error::format(&path, "ground-truth mask must be 0/255"));
    }
    Ok(t)
}

fn load_pred(dir: &Path, id: &str) -> Result<Tensor> {
    let prob = dir.join(format!("{id}.prob.pgm"));
    let mask = dir.join(format!("{id}.mask.pgm"));
    let path = if prob.exists() {
        prob
    } else if mask.exists() {
        mask
    } else {
        return Err(Error::Data(format!(
            "missing prediction for id {id}: no {id}.prob.pgm or {id}.mask.pgm in {}",
            dir.display()
        )));
    };
    Ok(pnm::load(&path)?.to_tensor())
}

/// Evaluate predictions against ground truth by manifest id. The prediction
/// directory may hold 16-bit probability maps (`<id>.prob.pgm`, preferred)
/// or binary masks.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, threshold: f64) -> Result<MetricsReport> {
    let ids = data::read_manifest(gt_dir)?;
    if data::manifest_path(pred_dir).exists() && pred_dir != gt_dir {
        let pred_ids = data::read_manifest(pred_dir)?;
        if pred_ids != ids {
            return Err(Error::Data("prediction manifest does not match ground truth".into()));
        }
    }
    let loaded: Vec<Result<(String, Tensor, Tensor)>> = ids
        .par_iter()
        .map(|id| {
            let gt = load_gt(gt_dir, id)?;
            let pred = load_pred(pred_dir, id)?;
            if pred.dims() != gt.dims() {
                return Err(Error::Data(format!(
                    "id {id}: prediction dims {} vs ground truth {}",
                    pred.dims(),
                    gt.dims()
                )));
            }
            Ok((id.clone(), pred, gt))
        })
        .collect();
    let loaded = loaded.into_iter().collect::<Result<Vec<_>>>()?;
    evaluate_pairs(&loaded, threshold)
}

/// Core of `evaluate_dirs`, usable on in-memory (id, probability, gt) rows.
pub fn evaluate_pairs(pairs: &[(String, Tensor, Tensor)], threshold: f64) -> Result<MetricsReport> {
    let rows: Vec<Result<ImageRow>> = pairs
        .par_iter()
        .map(|(id, prob, gt)| {
            let pred = binarize(prob, threshold)?;
            let counts = pixel_counts(&pred, gt)?;
            let auc = match pixel_auc(prob, gt) {
                Ok(a) => Some(a),
                Err(Error::Data(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(ImageRow {
                id: id.clone(),
                counts,
                iou: iou_from_counts(&counts),
                accuracy: pixel_accuracy_from_counts(&counts),
                f1: pixel_f1_from_counts(&counts),
                auc,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;

    let n = rows.len().max(1) as f64;
    let auc_rows: Vec<f64> = rows.iter().filter_map(|r| r.auc).collect();
    let mean_per_image = Summary {
        iou: rows.iter().map(|r| r.iou).sum::<f64>() / n,
        accuracy: rows.iter().map(|r| r.accuracy).sum::<f64>() / n,
        f1: rows.iter().map(|r| r.f1).sum::<f64>() / n,
        auc: (!auc_rows.is_empty())
            .then(|| auc_rows.iter().sum::<f64>() / auc_rows.len() as f64),
    };

    let mut pooled = PixelCounts::default();
    for r in &rows {
        pooled.add(&r.counts);
    }
    // Pixel-pooled AUC ranks every pixel of every image together.
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (_, prob, gt) in pairs {
        scores.extend_from_slice(prob.data());
        labels.extend_from_slice(gt.data());
    }
    let pooled_auc = auc_from_scores(&scores, &labels).ok();
    let pixel_pooled = Summary {
        iou: iou_from_counts(&pooled),
        accuracy: pixel_accuracy_from_counts(&pooled),
        f1: pixel_f1_from_counts(&pooled),
        auc: pooled_auc,
    };

    let auc_excluded = rows.iter().filter(|r| r.auc.is_none()).map(|r| r.id.clone()).collect();
    Ok(MetricsReport { threshold, rows, mean_per_image, pixel_pooled, auc_excluded })
}

fn fmt_auc(auc: Option<f64>) -> String {
    auc.map_or_else(|| "-".to_string(), |a| format!("{a:.6}"))
}

impl MetricsReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("threshold: {}\n", self.threshold));
        out.push_str(&format!(
            "{:<14} {:>10} {:>10} {:>10} {:>10}\n",
            "id", "iou", "acc", "f1", "auc"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<14} {:>10.6} {:>10.6} {:>10.6} {:>10}\n",
                r.id,
                r.iou,
                r.accuracy,
                r.f1,
                fmt_auc(r.auc)
            ));
        }
        for (name, s) in
            [("mean/image", &self.mean_per_image), ("mean/pixel", &self.pixel_pooled)]
        {
            out.push_str(&format!(
                "{:<14} {:>10.6} {:>10.6} {:>10.6} {:>10}\n",
                name,
                s.iou,
                s.accuracy,
                s.f1,
                fmt_auc(s.auc)
            ));
        }
        if !self.auc_excluded.is_empty() {
            out.push_str(&format!(
                "note: auc undefined (single-class ground truth), excluded from mean: {}\n",
                self.auc_excluded.join(", ")
            ));
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("id,iou,acc,f1,auc\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{}\n",
                r.id,
                r.iou,
                r.accuracy,
                r.f1,
                r.auc.map_or_else(|| "nan".to_string(), |a| format!("{a:.6}"))
            ));
        }
        let s = &self.mean_per_image;
        out.push_str(&format!(
            "mean_per_image,{:.6},{:.6},{:.6},{}\n",
            s.iou,
            s.accuracy,
            s.f1,
            s.auc.map_or_else(|| "nan".to_string(), |a| format!("{a:.6}"))
        ));
        let s = &self.pixel_pooled;
        out.push_str(&format!(
            "mean_pixel_pooled,{:.6},{:.6},{:.6},{}\n",
            s.iou,
            s.accuracy,
            s.f1,
            s.auc.map_or_else(|| "nan".to_string(), |a| format!("{a:.6}"))
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Dims;

    fn mask(bits: &[u8]) -> Tensor {
        let n = bits.len();
        Tensor::new(Dims::new(1, 1, 1, n), bits.iter().map(|&b| b as f64).collect()).unwrap()
    }

    #[test]
    fn binarize_boundary_is_inclusive() {
        let prob = Tensor::new(Dims::new(1, 1, 1, 3), vec![0.499, 0.5, 0.9]).unwrap();
        let b = binarize(&prob, 0.5).unwrap();
        assert_eq!(b.data(), &[0.0, 1.0, 1.0]);
        let all = binarize(&prob, 0.0).unwrap();
        assert!(all.data().iter().all(|&v| v == 1.0));
        assert!(binarize(&prob, 1.5).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = mask(&[1, 1, 0, 0]);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let disjoint = mask(&[0, 0, 1, 1]);
        assert_eq!(iou(&a, &disjoint).unwrap(), 0.0);
        // pred {a,b}, gt {b,c}: intersection 1, union 3.
        let pred = mask(&[1, 1, 0, 0]);
        let gt = mask(&[0, 1, 1, 0]);
        assert_eq!(iou(&pred, &gt).unwrap(), 1.0 / 3.0);
        // Both empty: defined as 1.
        let empty = mask(&[0, 0, 0, 0]);
        assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_examples() {
        let a = mask(&[1, 0, 1, 0]);
        assert_eq!(pixel_accuracy(&a, &a).unwrap(), 1.0);
        let inv = mask(&[0, 1, 0, 1]);
        assert_eq!(pixel_accuracy(&a, &inv).unwrap(), 0.0);
        let three = mask(&[1, 0, 1, 1]);
        assert_eq!(pixel_accuracy(&a, &three).unwrap(), 0.75);
    }

    #[test]
    fn f1_examples() {
        let a = mask(&[1, 1, 0, 0]);
        assert_eq!(pixel_f1(&a, &a).unwrap(), 1.0);
        let none = mask(&[0, 0, 0, 0]);
        let some = mask(&[1, 1, 0, 0]);
        assert_eq!(pixel_f1(&none, &some).unwrap(), 0.0);
        // tp=2, fp=1, fn=1 -> 4/6.
        let pred = mask(&[1, 1, 1, 0, 0]);
        let gt = mask(&[1, 1, 0, 1, 0]);
        assert!((pixel_f1(&pred, &gt).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn non_binary_input_rejected() {
        let prob = Tensor::new(Dims::new(1, 1, 1, 2), vec![0.3, 1.0]).unwrap();
        let gt = mask(&[1, 0]);
        assert!(iou(&prob, &gt).is_err());
        assert!(pixel_accuracy(&gt, &prob).is_err());
    }

    #[test]
    fn auc_pairwise_example() {
        // Positives {0.9, 0.4}, negatives {0.8, 0.3}: 3 of 4 concordant.
        let prob = Tensor::new(Dims::new(1, 1, 1, 4), vec![0.9, 0.4, 0.8, 0.3]).unwrap();
        let gt = mask(&[1, 1, 0, 0]);
        assert_eq!(pixel_auc(&prob, &gt).unwrap(), 0.75);
    }

    #[test]
    fn auc_separated_and_ties() {
        let prob = Tensor::new(Dims::new(1, 1, 1, 4), vec![0.9, 0.8, 0.2, 0.1]).unwrap();
        let gt = mask(&[1, 1, 0, 0]);
        assert_eq!(pixel_auc(&prob, &gt).unwrap(), 1.0);
        let flat = Tensor::new(Dims::new(1, 1, 1, 4), vec![0.5; 4]).unwrap();
        assert_eq!(pixel_auc(&flat, &gt).unwrap(), 0.5);
    }

    #[test]
    fn auc_single_class_is_error() {
        let prob = Tensor::new(Dims::new(1, 1, 1, 3), vec![0.1, 0.2, 0.3]).unwrap();
        assert!(pixel_auc(&prob, &mask(&[0, 0, 0])).is_err());
        assert!(pixel_auc(&prob, &mask(&[1, 1, 1])).is_err());
    }

    #[test]
    fn auc_invariances() {
        let mut rng = Rng::new(31);
        for trial in 0..50 {
            let n = 32;
            let scores: Vec<f64> = (0..n).map(|_| (rng.below(1024) as f64) / 1024.0).collect();
            let labels: Vec<f64> = (0..n).map(|_| (rng.below(2)) as f64).collect();
            if labels.iter().all(|&l| l == 0.0) || labels.iter().all(|&l| l == 1.0) {
                continue;
            }
            let base = auc_from_scores(&scores, &labels).unwrap();

            // Strictly monotone (exact power-of-two affine) transform.
            let transformed: Vec<f64> = scores.iter().map(|&s| s / 4.0 + 0.25).collect();
            assert_eq!(auc_from_scores(&transformed, &labels).unwrap(), base, "trial {trial}");

            // Complement identity on tie-free score sets.
            let mut sorted = scores.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            sorted.dedup();
            if sorted.len() == n {
                let flipped: Vec<f64> = scores.iter().map(|&s| 1.0 - s).collect();
                let sum = base + auc_from_scores(&flipped, &labels).unwrap();
                assert!((sum - 1.0).abs() < 1e-12, "trial {trial}: {sum}");
            }
        }
    }

    // Brute-force oracles, kept independent of the implementation path.
    fn brute_counts(pred: &[f64], gt: &[f64]) -> (u64, u64, u64, u64) {
        let mut c = (0, 0, 0, 0);
        for i in 0..pred.len() {
            match (pred[i] == 1.0, gt[i] == 1.0) {
                (true, true) => c.0 += 1,
                (true, false) => c.1 += 1,
                (false, true) => c.2 += 1,
                (false, false) => c.3 += 1,
            }
        }
        c
    }

    fn brute_auc(scores: &[f64], labels: &[f64]) -> f64 {
        let mut concordant = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != 1.0 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0.0 {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    concordant += 1.0;
                } else if si == sj {
                    concordant += 0.5;
                }
            }
        }
        concordant / pairs
    }

    #[test]
    fn metrics_match_bruteforce_on_random_masks() {
        let mut rng = Rng::new(77);
        for trial in 0..1000 {
            let n = 64; // 8x8
            let pred: Vec<f64> = (0..n).map(|_| rng.below(2) as f64).collect();
            let gt: Vec<f64> = (0..n).map(|_| rng.below(2) as f64).collect();
            let pt = Tensor::new(Dims::new(1, 1, 8, 8), pred.clone()).unwrap();
            let gtt = Tensor::new(Dims::new(1, 1, 8, 8), gt.clone()).unwrap();

            let (tp, fp, fn_, tn) = brute_counts(&pred, &gt);
            let union = tp + fp + fn_;
            let want_iou = if union == 0 { 1.0 } else { tp as f64 / union as f64 };
            let want_acc = (tp + tn) as f64 / n as f64;
            let want_f1 = if 2 * tp + fp + fn_ == 0 {
                1.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
            };
            assert_eq!(iou(&pt, &gtt).unwrap(), want_iou, "trial {trial}");
            assert_eq!(pixel_accuracy(&pt, &gtt).unwrap(), want_acc, "trial {trial}");
            assert_eq!(pixel_f1(&pt, &gtt).unwrap(), want_f1, "trial {trial}");

            // Dice-Jaccard identity.
            let f1 = pixel_f1(&pt, &gtt).unwrap();
            let j = iou(&pt, &gtt).unwrap();
            assert!((f1 - 2.0 * j / (1.0 + j)).abs() <= 1e-12, "trial {trial}");

            // AUC against pairwise enumeration on graded scores.
            let scores: Vec<f64> = (0..n).map(|_| rng.below(17) as f64 / 16.0).collect();
            let st = Tensor::new(Dims::new(1, 1, 8, 8), scores.clone()).unwrap();
            if gt.iter().any(|&v| v == 1.0) && gt.iter().any(|&v| v == 0.0) {
                let got = pixel_auc(&st, &gtt).unwrap();
                let want = brute_auc(&scores, &gt);
                assert!((got - want).abs() <= 1e-12, "trial {trial}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn self_evaluation_is_perfect() {
        let dir = tempfile::tempdir().unwrap();
        let spec = crate::data::SynthSpec { size: 64, ..crate::data::SynthSpec::new(3, 21) };
        crate::data::synth_dataset(dir.path(), &spec).unwrap();
        let report = evaluate_dirs(dir.path(), dir.path(), 0.5).unwrap();
        assert_eq!(report.mean_per_image.iou, 1.0);
        assert_eq!(report.mean_per_image.accuracy, 1.0);
        assert_eq!(report.mean_per_image.f1, 1.0);
        assert_eq!(report.pixel_pooled.iou, 1.0);
        assert_eq!(report.mean_per_image.auc, Some(1.0));
    }

    #[test]
    fn two_image_toy_set_matches_hand_arithmetic() {
        let pairs = vec![
            (
                "a".to_string(),
                Tensor::new(Dims::new(1, 1, 2, 2), vec![1.0, 1.0, 0.0, 0.0]).unwrap(),
                Tensor::new(Dims::new(1, 1, 2, 2), vec![1.0, 0.0, 1.0, 0.0]).unwrap(),
            ),
            (
                "b".to_string(),
                Tensor::new(Dims::new(1, 1, 2, 2), vec![1.0, 1.0, 1.0, 1.0]).unwrap(),
                Tensor::new(Dims::new(1, 1, 2, 2), vec![1.0, 1.0, 1.0, 1.0]).unwrap(),
            ),
        ];
        let report = evaluate_pairs(&pairs, 0.5).unwrap();
        // Image a: tp=1 fp=1 fn=1 tn=1 -> iou 1/3, acc 1/2, f1 1/2.
        assert!((report.rows[0].iou - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(report.rows[0].accuracy, 0.5);
        assert_eq!(report.rows[0].f1, 0.5);
        // Image b is perfect but single-class: excluded from the AUC mean.
        assert_eq!(report.rows[1].iou, 1.0);
        assert_eq!(report.rows[1].auc, None);
        assert_eq!(report.auc_excluded, vec!["b".to_string()]);
        // Means: per-image mean of (1/3, 1) and pooled counts 5tp,1fp,1fn,1tn.
        assert!((report.mean_per_image.iou - (1.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
        assert!((report.pixel_pooled.iou - 5.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn missing_prediction_names_the_id() {
        let dir = tempfile::tempdir().unwrap();
        let spec = crate::data::SynthSpec { size: 64, ..crate::data::SynthSpec::new(2, 22) };
        crate::data::synth_dataset(dir.path(), &spec).unwrap();
        let pred_dir = tempfile::tempdir().unwrap();
        let err = evaluate_dirs(pred_dir.path(), dir.path(), 0.5).unwrap_err();
        assert!(err.to_string().contains("synth00000"), "{err}");
    }
}

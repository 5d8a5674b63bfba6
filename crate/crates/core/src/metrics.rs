//! The seven standard depth-error statistics.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DELTA_THRESHOLD: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub abs_rel: f64,
    pub squa_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub ave_log10: f64,
    pub n_valid: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "delta1,delta2,delta3,abs_rel,squa_rel,rmse,rmse_log,ave_log10,n_valid";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.delta1,
            self.delta2,
            self.delta3,
            self.abs_rel,
            self.squa_rel,
            self.rmse,
            self.rmse_log,
            self.ave_log10,
            self.n_valid
        )
    }
}

/// Scores `pred` against `target` over pixels where `mask` is set. With `cap`,
/// both maps are clamped to `[a, b]` first.
pub fn compute_metrics(
    pred: &[f64],
    target: &[f64],
    mask: &[bool],
    cap: Option<(f64, f64)>,
) -> Result<MetricsReport> {
    if pred.len() != target.len() || mask.len() != target.len() {
        return Err(Error::shape(
            "compute_metrics",
            format!("pred {}, target {}, mask {}", pred.len(), target.len(), mask.len()),
        ));
    }
    let clamp = |v: f64| match cap {
        Some((a, b)) => v.clamp(a, b),
        None => v,
    };
    let mut n = 0usize;
    let mut hits = [0usize; 3];
    let (mut abs_rel, mut squa_rel, mut se, mut se_log, mut log10) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&p, &t), &valid) in pred.iter().zip(target).zip(mask) {
        if !valid {
            continue;
        }
        let (p, t) = (clamp(p), clamp(t));
        if !(p > 0.0 && t > 0.0 && p.is_finite() && t.is_finite()) {
            return Err(Error::Config(format!(
                "depths must be positive and finite on valid pixels (pred {p}, target {t})"
            )));
        }
        n += 1;
        let ratio = (p / t).max(t / p);
        let mut thr = DELTA_THRESHOLD;
        for h in hits.iter_mut() {
            if ratio < thr {
                *h += 1;
            }
            thr *= DELTA_THRESHOLD;
        }
        let diff = p - t;
        abs_rel += diff.abs() / t;
        squa_rel += diff * diff / t;
        se += diff * diff;
        se_log += (p.ln() - t.ln()).powi(2);
        log10 += (p.log10() - t.log10()).abs();
    }
    if n == 0 {
        return Err(Error::Config("no valid pixels to evaluate".into()));
    }
    let nf = n as f64;
    Ok(MetricsReport {
        delta1: hits[0] as f64 / nf,
        delta2: hits[1] as f64 / nf,
        delta3: hits[2] as f64 / nf,
        abs_rel: abs_rel / nf,
        squa_rel: squa_rel / nf,
        rmse: (se / nf).sqrt(),
        rmse_log: (se_log / nf).sqrt(),
        ave_log10: log10 / nf,
        n_valid: n,
    })
}

/// Pixel-weighted mean of several reports (e.g. one per image).
pub fn aggregate(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let total: usize = reports.iter().map(|r| r.n_valid).sum();
    if total == 0 {
        return Err(Error::Config("no valid pixels to aggregate".into()));
    }
    let mut out = MetricsReport {
        delta1: 0.0,
        delta2: 0.0,
        delta3: 0.0,
        abs_rel: 0.0,
        squa_rel: 0.0,
        rmse: 0.0,
        rmse_log: 0.0,
        ave_log10: 0.0,
        n_valid: total,
    };
    for r in reports {
        let w = r.n_valid as f64 / total as f64;
        out.delta1 += w * r.delta1;
        out.delta2 += w * r.delta2;
        out.delta3 += w * r.delta3;
        out.abs_rel += w * r.abs_rel;
        out.squa_rel += w * r.squa_rel;
        out.rmse += w * r.rmse * r.rmse;
        out.rmse_log += w * r.rmse_log * r.rmse_log;
        out.ave_log10 += w * r.ave_log10;
    }
    out.rmse = out.rmse.sqrt();
    out.rmse_log = out.rmse_log.sqrt();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let d = [1.0, 2.5, 30.0];
        let m = compute_metrics(&d, &d, &[true; 3], None).unwrap();
        assert_eq!((m.delta1, m.delta2, m.delta3), (1.0, 1.0, 1.0));
        assert_eq!(m.abs_rel + m.squa_rel + m.rmse + m.rmse_log + m.ave_log10, 0.0);
        assert_eq!(m.n_valid, 3);
    }

    #[test]
    fn single_pixel_worked_case() {
        let m = compute_metrics(&[2.0], &[4.0], &[true], None).unwrap();
        assert_eq!((m.delta1, m.delta2, m.delta3), (0.0, 0.0, 0.0));
        assert!((m.abs_rel - 0.5).abs() < 1e-15);
        assert!((m.squa_rel - 1.0).abs() < 1e-15);
        assert!((m.rmse - 2.0).abs() < 1e-15);
        assert!((m.rmse_log - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((m.ave_log10 - std::f64::consts::LOG10_2).abs() < 1e-15);
    }

    #[test]
    fn masked_pixels_are_ignored_and_empty_rejected() {
        let m = compute_metrics(&[1.0, 100.0], &[1.0, 1.0], &[true, false], None).unwrap();
        assert_eq!(m.rmse, 0.0);
        assert!(compute_metrics(&[1.0], &[1.0], &[false], None).is_err());
        assert!(compute_metrics(&[0.0], &[1.0], &[true], None).is_err());
    }

    #[test]
    fn cap_clamps_both_maps() {
        let m = compute_metrics(&[200.0], &[100.0], &[true], Some((1.0, 80.0))).unwrap();
        assert_eq!(m.rmse, 0.0);
    }
}

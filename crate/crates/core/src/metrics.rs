//! Evaluation metrics: six-DOF registration errors, landmark MSE, and the
//! gradient-correlation content-preservation score for auditing externally
//! style-translated images.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RigidPose;
use crate::img::FloatImage;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("image dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimMismatch(usize, usize, usize, usize),
    #[error("images must be at least 3x3 for gradient correlation")]
    TooSmall,
}

/// Infinity-norm pose errors: degrees over the wrapped angle components,
/// millimetres over the translation components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DofErrors {
    pub eps_theta_deg: f64,
    pub eps_tau_mm: f64,
}

/// Shortest circular distance between two angles, degrees, in [0, 180].
/// Symmetric by construction (works on |a - b|).
fn circular_distance_deg(a: f64, b: f64) -> f64 {
    let mut d = (a - b).abs().rem_euclid(360.0);
    if d > 180.0 {
        d = 360.0 - d;
    }
    d
}

/// Angular and position errors between a manual (ground-truth) pose and a
/// predicted pose: the max absolute component difference, with angle
/// differences taken on the circle.
pub fn dof_errors(manual: &RigidPose, predicted: &RigidPose) -> DofErrors {
    let eps_theta_deg = (0..3)
        .map(|i| circular_distance_deg(manual.theta[i], predicted.theta[i]))
        .fold(0.0, f64::max);
    let eps_tau_mm = (0..3).map(|i| (manual.tau[i] - predicted.tau[i]).abs()).fold(0.0, f64::max);
    DofErrors { eps_theta_deg, eps_tau_mm }
}

/// Mean squared error over flattened normalized landmark coordinates.
pub fn landmark_mse(pred: &[f64], label: &[f64]) -> Result<f64, MetricsError> {
    if pred.len() != label.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), label.len()));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.iter().zip(label).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64)
}

/// log10 of an MSE, the scale the detector's accuracy is reported on.
pub fn mse_log10(mse: f64) -> f64 {
    mse.log10()
}

/// Central-difference gradients over the interior of an image; returns
/// (d/dx, d/dy) fields of (w-2) x (h-2).
fn gradients(img: &FloatImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width, img.height);
    let mut gx = Vec::with_capacity((w - 2) * (h - 2));
    let mut gy = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            gx.push((img.get(x + 1, y) - img.get(x - 1, y)) / 2.0);
            gy.push((img.get(x, y + 1) - img.get(x, y - 1)) / 2.0);
        }
    }
    (gx, gy)
}

/// Zero-mean normalized correlation of two fields; `None` when either field
/// has no variance.
fn zncc(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (cx, cy) = (x - mean_a, y - mean_b);
        dot += cx * cy;
        na += cx * cx;
        nb += cy * cy;
    }
    if na <= 0.0 || nb <= 0.0 {
        return None;
    }
    Some(dot / (na * nb).sqrt())
}

/// Zero normalized gradient cross correlation: the mean over the x and y
/// gradient directions of their zero-mean normalized correlations. A
/// direction where either image has zero gradient variance contributes 0.
pub fn grad_zncc_phi(a: &FloatImage, b: &FloatImage) -> Result<f64, MetricsError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(MetricsError::DimMismatch(a.width, a.height, b.width, b.height));
    }
    if a.width < 3 || a.height < 3 {
        return Err(MetricsError::TooSmall);
    }
    let (ax, ay) = gradients(a);
    let (bx, by) = gradients(b);
    let cx = zncc(&ax, &bx).unwrap_or(0.0);
    let cy = zncc(&ay, &by).unwrap_or(0.0);
    Ok((cx + cy) / 2.0)
}

/// Raw and combined similarity for one real/fake quadruple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    /// phi(real_x, fake_drr) and phi(real_drr, fake_x), clamped to [-1, 1].
    pub phi: [f64; 2],
    /// 1 - (clamp01(phi1) + clamp01(phi2)) / 2, in [0, 1]; smaller means the
    /// translation preserved more content.
    pub l_cp: f64,
}

/// Content-preserving loss over the two translation directions.
pub fn similarity_report(
    real_x: &FloatImage,
    fake_drr: &FloatImage,
    real_drr: &FloatImage,
    fake_x: &FloatImage,
) -> Result<SimilarityReport, MetricsError> {
    let phi1 = grad_zncc_phi(real_x, fake_drr)?;
    let phi2 = grad_zncc_phi(real_drr, fake_x)?;
    let l_cp = 1.0 - (phi1.clamp(0.0, 1.0) + phi2.clamp(0.0, 1.0)) / 2.0;
    Ok(SimilarityReport { phi: [phi1.clamp(-1.0, 1.0), phi2.clamp(-1.0, 1.0)], l_cp })
}

pub fn content_preserving_loss(
    real_x: &FloatImage,
    fake_drr: &FloatImage,
    real_drr: &FloatImage,
    fake_x: &FloatImage,
) -> Result<f64, MetricsError> {
    Ok(similarity_report(real_x, fake_drr, real_drr, fake_x)?.l_cp)
}

/// One evaluated frame for the batch report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub frame: String,
    pub scenario: String,
    pub errors: DofErrors,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

/// Sample mean and standard deviation (n - 1 denominator; sd = 0 for n < 2).
pub fn mean_sd(values: &[f64]) -> MeanSd {
    let n = values.len();
    if n == 0 {
        return MeanSd { mean: f64::NAN, sd: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return MeanSd { mean, sd: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    MeanSd { mean, sd: var.sqrt() }
}

/// Formats the per-frame error table plus mean +/- SD per motion scenario.
pub fn format_evaluation_report(rows: &[EvalRow]) -> String {
    let mut s = String::new();
    s.push_str("frame            scenario         eps_theta_deg   eps_tau_mm\n");
    for r in rows {
        s.push_str(&format!(
            "{:<16} {:<16} {:>13.4} {:>12.4}\n",
            r.frame, r.scenario, r.errors.eps_theta_deg, r.errors.eps_tau_mm
        ));
    }
    let mut scenarios: Vec<&str> = rows.iter().map(|r| r.scenario.as_str()).collect();
    scenarios.sort_unstable();
    scenarios.dedup();
    s.push_str("\nscenario         n     eps_theta_deg (mean +/- sd)   eps_tau_mm (mean +/- sd)\n");
    for sc in scenarios {
        let theta: Vec<f64> = rows.iter().filter(|r| r.scenario == sc).map(|r| r.errors.eps_theta_deg).collect();
        let tau: Vec<f64> = rows.iter().filter(|r| r.scenario == sc).map(|r| r.errors.eps_tau_mm).collect();
        let (t, u) = (mean_sd(&theta), mean_sd(&tau));
        s.push_str(&format!(
            "{:<16} {:<5} {:>12.4} +/- {:<12.4} {:>10.4} +/- {:<10.4}\n",
            sc,
            theta.len(),
            t.mean,
            t.sd,
            u.mean,
            u.sd
        ));
    }
    s
}

//! Percentage of correct keypoints (PCK) and report rendering.
//!
//! A predicted joint counts as correct when its Euclidean distance to the
//! ground truth, divided by the ground-truth torso length (right shoulder to
//! left hip), is at most the threshold `a`. The distance is not squared: a
//! squared distance over a length would not be scale-free.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{PoseLandmarks, JOINT_NAMES, N_LANDMARKS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PckConfig {
    /// Thresholds in percent of torso length; `a = value / 100`.
    pub thresholds: Vec<f64>,
    /// Frames whose torso is shorter than this many pixels are skipped.
    pub torso_epsilon: f64,
}

impl Default for PckConfig {
    fn default() -> Self {
        Self { thresholds: vec![5.0, 10.0, 20.0, 30.0, 40.0, 50.0], torso_epsilon: 1e-6 }
    }
}

impl PckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::Config("at least one PCK threshold is required".into()));
        }
        if self.thresholds.iter().any(|&t| !(t > 0.0 && t <= 100.0)) {
            return Err(Error::Config(format!("PCK thresholds must lie in (0, 100], got {:?}", self.thresholds)));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("PCK thresholds must be strictly increasing, got {:?}", self.thresholds)));
        }
        if !(self.torso_epsilon >= 0.0) {
            return Err(Error::Config("torso_epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckReport {
    /// Threshold labels in percent.
    pub thresholds: Vec<f64>,
    /// `[joint][threshold]` percentages.
    pub per_joint: Vec<Vec<f64>>,
    pub average: Vec<f64>,
    pub n_evaluated: usize,
    pub n_skipped_degenerate: usize,
}

/// PCK over `N` frames of pixel landmarks.
pub fn pck(preds: &[PoseLandmarks], gts: &[PoseLandmarks], cfg: &PckConfig) -> Result<PckReport> {
    cfg.validate()?;
    let fractions: Vec<f64> = cfg.thresholds.iter().map(|t| t / 100.0).collect();
    let mut report = pck_at_fractions(preds, gts, &fractions, cfg.torso_epsilon)?;
    report.thresholds = cfg.thresholds.clone();
    Ok(report)
}

/// PCK at raw normalized thresholds `a`, without range checks on `a`.
/// Report thresholds are `100·a`.
pub fn pck_at_fractions(
    preds: &[PoseLandmarks],
    gts: &[PoseLandmarks],
    fractions: &[f64],
    torso_epsilon: f64,
) -> Result<PckReport> {
    if preds.len() != gts.len() {
        return Err(Error::Shape(format!("{} predictions for {} ground-truth frames", preds.len(), gts.len())));
    }
    if gts.is_empty() {
        return Err(Error::Domain("pck needs at least one frame".into()));
    }
    let mut correct = vec![vec![0usize; fractions.len()]; N_LANDMARKS];
    let mut evaluated = 0usize;
    for (pd, gt) in preds.iter().zip(gts) {
        let torso = gt.torso_length();
        if !(torso >= torso_epsilon) || torso == 0.0 {
            continue;
        }
        evaluated += 1;
        for (j, row) in correct.iter_mut().enumerate() {
            let [px, py] = pd.points[j];
            let [gx, gy] = gt.points[j];
            let ratio = (px - gx).hypot(py - gy) / torso;
            for (c, &a) in row.iter_mut().zip(fractions) {
                if ratio <= a {
                    *c += 1;
                }
            }
        }
    }
    if evaluated == 0 {
        return Err(Error::Domain("no evaluable frames".into()));
    }
    let per_joint: Vec<Vec<f64>> = correct
        .iter()
        .map(|row| row.iter().map(|&c| 100.0 * c as f64 / evaluated as f64).collect())
        .collect();
    let average = (0..fractions.len())
        .map(|t| per_joint.iter().map(|row| row[t]).sum::<f64>() / N_LANDMARKS as f64)
        .collect();
    Ok(PckReport {
        thresholds: fractions.iter().map(|a| a * 100.0).collect(),
        per_joint,
        average,
        n_evaluated: evaluated,
        n_skipped_degenerate: gts.len() - evaluated,
    })
}

fn threshold_label(t: f64) -> String {
    format!("PCK@{t}")
}

const NAME_WIDTH: usize = 12;
const CELL_WIDTH: usize = 9;

/// Fixed-width table: header row, one row per joint, `Average` last; two decimals.
pub fn report_table(report: &PckReport, joint_names: &[&str]) -> String {
    let mut out = format!("{:<NAME_WIDTH$}", "Keypoint");
    for &t in &report.thresholds {
        out.push_str(&format!("{:>CELL_WIDTH$}", threshold_label(t)));
    }
    out.push('\n');
    let mut row = |name: &str, values: &[f64]| {
        out.push_str(&format!("{name:<NAME_WIDTH$}"));
        for v in values {
            out.push_str(&format!("{v:>CELL_WIDTH$.2}"));
        }
        out.push('\n');
    };
    for (name, values) in joint_names.iter().zip(&report.per_joint) {
        row(name, values);
    }
    row("Average", &report.average);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRow {
    pub name: String,
    pub pck: Vec<f64>,
}

/// Machine-readable companion of [`report_table`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckJson {
    pub thresholds: Vec<f64>,
    pub joints: Vec<JointRow>,
    pub average: Vec<f64>,
    pub n_evaluated: usize,
    pub n_skipped_degenerate: usize,
}

impl From<&PckReport> for PckJson {
    fn from(r: &PckReport) -> Self {
        Self {
            thresholds: r.thresholds.clone(),
            joints: JOINT_NAMES
                .iter()
                .zip(&r.per_joint)
                .map(|(n, v)| JointRow { name: n.to_string(), pck: v.clone() })
                .collect(),
            average: r.average.clone(),
            n_evaluated: r.n_evaluated,
            n_skipped_degenerate: r.n_skipped_degenerate,
        }
    }
}

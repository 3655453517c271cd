//! Per-episode scoring and aggregate reports in the column order
//! Dataset / Method / FVD / SSIM / MSE / Success.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::grid::GRID_FRAMES;
use crate::metrics::pixel::mse;
use crate::metrics::ssim::{ssim_frames, SsimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode_id: String,
    pub ssim: f64,
    pub mse: f64,
}

/// Mean SSIM and MSE over the nine aligned frame pairs.
pub fn evaluate_generation(pred: &[Frame], gt: &[Frame], cfg: &SsimConfig) -> Result<(f64, f64)> {
    if pred.len() != GRID_FRAMES || gt.len() != GRID_FRAMES {
        return Err(Error::invalid(format!(
            "expected {GRID_FRAMES} predicted and {GRID_FRAMES} reference frames, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut ssim_sum = 0.0;
    let mut mse_sum = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        ssim_sum += ssim_frames(p, g, cfg)?;
        mse_sum += mse(p, g)?;
    }
    let n = GRID_FRAMES as f64;
    Ok((ssim_sum / n, mse_sum / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fvd: Option<f64>,
    pub ssim: f64,
    pub mse: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_rate: Option<f64>,
    pub n_episodes: usize,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.ssim) {
            return Err(Error::invalid(format!("ssim {} outside [-1, 1]", self.ssim)));
        }
        if self.mse.is_nan() || self.mse < 0.0 {
            return Err(Error::invalid(format!("mse {} is negative or NaN", self.mse)));
        }
        if let Some(f) = self.fvd {
            if f.is_nan() || f < -1e-6 {
                return Err(Error::invalid(format!("fvd {f} is negative or NaN")));
            }
        }
        if let Some(s) = self.success_rate {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::invalid(format!("success rate {s} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Aligned plain-text table, one row per report.
pub fn render_table(reports: &[MetricReport]) -> String {
    let header = ["Dataset", "Method", "FVD", "SSIM", "MSE", "Success"].map(String::from);
    let mut rows = vec![header.to_vec()];
    for r in reports {
        rows.push(vec![
            r.dataset.clone(),
            r.method.clone(),
            r.fvd.map_or("-".into(), |v| format!("{v:.2}")),
            format!("{:.4}", r.ssim),
            format!("{:.5}", r.mse),
            r.success_rate.map_or("-".into(), |v| format!("{:.1}%", v * 100.0)),
        ]);
    }
    let widths: Vec<usize> = (0..6)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (v, &w))| if c < 2 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

/// One line of a labels file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub episode_id: String,
    pub success: bool,
}

/// Reads a JSON-lines labels file; blank lines are skipped.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<Label>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::format(path, "labels file", format!("line {}: {e}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ssim::{ssim, Plane};

    fn frames(seed: u8) -> Vec<Frame> {
        (0..9u8)
            .map(|t| Frame::from_fn(10, 10, |x, y| [t * 20 + seed, (x * 20) as u8, (y * 25) as u8]).unwrap())
            .collect()
    }

    #[test]
    fn identical_sequences() {
        let f = frames(3);
        assert_eq!(evaluate_generation(&f, &f, &SsimConfig::default()).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn one_inverted_frame_averages_with_identities() {
        let gt = frames(0);
        let mut pred = gt.clone();
        let inverted = Frame::new(10, 10, gt[4].pixels().iter().map(|v| 255 - v).collect()).unwrap();
        pred[4] = inverted.clone();
        let cfg = SsimConfig::default();
        let one_ssim = ssim(&Plane::luma(&inverted), &Plane::luma(&gt[4]), &cfg).unwrap();
        let one_mse = mse(&inverted, &gt[4]).unwrap();
        let (s, m) = evaluate_generation(&pred, &gt, &cfg).unwrap();
        assert!((s - (8.0 + one_ssim) / 9.0).abs() < 1e-12);
        assert!((m - one_mse / 9.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        let f = frames(0);
        assert!(evaluate_generation(&f[..8], &f, &SsimConfig::default()).is_err());
    }

    #[test]
    fn report_json_omits_absent_metrics() {
        let r = MetricReport {
            dataset: "bridgev2".into(),
            method: "text".into(),
            fvd: None,
            ssim: 0.733,
            mse: 0.0135,
            success_rate: Some(0.732),
            n_episodes: 515,
        };
        let json = serde_json::to_string(&r).unwrap();
        assert!(!json.contains("fvd"));
        assert!(r.validate().is_ok());
        let table = render_table(&[r]);
        assert!(table.lines().next().unwrap().starts_with("Dataset"));
        assert!(table.contains("73.2%"));
    }

    #[test]
    fn labels_parse() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.jsonl");
        std::fs::write(
            &p,
            "{\"episode_id\":\"a\",\"success\":true}\n\n{\"episode_id\":\"b\",\"success\":false}\n",
        )
        .unwrap();
        let labels = read_labels(&p).unwrap();
        assert_eq!(labels.len(), 2);
        assert!(!labels[1].success);
        std::fs::write(&p, "{\"episode_id\":\"a\"}\n").unwrap();
        assert!(read_labels(&p).is_err());
    }
}

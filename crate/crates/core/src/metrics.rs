//! Model-independent pose errors, evaluation records and cumulative curves.

use std::fmt;
use std::io::{self, BufRead, Write};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::pose::Pose;
use crate::rotparam::symmetry_partner;

/// Euclidean distance between translations (mm).
pub fn translation_error(t_hat: &Vector3<f64>, t: &Vector3<f64>) -> f64 {
    (t - t_hat).norm()
}

/// Angle of the relative rotation `a · bᵀ`, in `[0, π]`.
///
/// Equal to `acos((tr(a bᵀ) - 1) / 2)`; evaluated as `atan2(sin, cos)` with
/// the sine taken from the skew part so that angles near 0 and π keep full
/// precision.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let m = a * b.transpose();
    let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let axis = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    let sin = (axis.norm() / 2.0).min(1.0);
    sin.atan2(cos)
}

/// Rotation error minimized over the bin's two symmetric placements of the
/// ground truth `r_hat`.
pub fn rotation_error(r_hat: &Matrix3<f64>, r: &Matrix3<f64>) -> f64 {
    let direct = rotation_angle_between(r_hat, r);
    let flipped = rotation_angle_between(&symmetry_partner(r_hat), r);
    direct.min(flipped)
}

/// `(e_TE, e_RE)` of an estimate against ground truth.
pub fn pose_errors(gt: &Pose, est: &Pose) -> (f64, f64) {
    (
        translation_error(gt.translation(), est.translation()),
        rotation_error(gt.rotation(), est.rotation()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Translation,
    Rotation,
}

impl Metric {
    pub fn short_name(&self) -> &'static str {
        match self {
            Metric::Translation => "te",
            Metric::Rotation => "re",
        }
    }
}

/// Outcome of one method on one scan. Failed records carry no errors and
/// count as infinite error everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub scan_id: String,
    pub method: String,
    outcome: Option<(f64, f64)>,
    pub icp_confident: Option<bool>,
    pub runtime_ms: f64,
}

impl EvalRecord {
    pub fn success(
        scan_id: impl Into<String>,
        method: impl Into<String>,
        e_te: f64,
        e_re: f64,
    ) -> Self {
        Self {
            scan_id: scan_id.into(),
            method: method.into(),
            outcome: Some((e_te, e_re)),
            icp_confident: None,
            runtime_ms: 0.0,
        }
    }

    pub fn failure(scan_id: impl Into<String>, method: impl Into<String>) -> Self {
        Self {
            scan_id: scan_id.into(),
            method: method.into(),
            outcome: None,
            icp_confident: None,
            runtime_ms: 0.0,
        }
    }

    pub fn with_confidence(mut self, confident: Option<bool>) -> Self {
        self.icp_confident = confident;
        self
    }

    pub fn with_runtime(mut self, ms: f64) -> Self {
        self.runtime_ms = ms;
        self
    }

    pub fn failed(&self) -> bool {
        self.outcome.is_none()
    }

    pub fn e_te(&self) -> f64 {
        self.outcome.map_or(f64::INFINITY, |o| o.0)
    }

    pub fn e_re(&self) -> f64 {
        self.outcome.map_or(f64::INFINITY, |o| o.1)
    }

    pub fn error(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Translation => self.e_te(),
            Metric::Rotation => self.e_re(),
        }
    }
}

pub const RECORD_HEADER: &str = "scan_id,method,e_te_mm,e_re_rad,failed,icp_confident,runtime_ms";

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("record file has no header")]
    MissingHeader,
    #[error("no records")]
    Empty,
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn fmt_float(x: f64) -> String {
    if x.is_infinite() {
        "inf".to_string()
    } else {
        format!("{x}")
    }
}

pub fn write_records<W: Write>(mut w: W, records: &[EvalRecord]) -> io::Result<()> {
    writeln!(w, "{RECORD_HEADER}")?;
    for r in records {
        let conf = match r.icp_confident {
            Some(true) => "true",
            Some(false) => "false",
            None => "",
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.scan_id,
            r.method,
            fmt_float(r.e_te()),
            fmt_float(r.e_re()),
            r.failed(),
            conf,
            fmt_float(r.runtime_ms)
        )?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<EvalRecord>, RecordError> {
    let mut lines = r.lines();
    let header = lines.next().ok_or(RecordError::MissingHeader)??;
    if header.trim() != RECORD_HEADER {
        return Err(RecordError::MissingHeader);
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 2;
        let err = |msg: &str| RecordError::Parse {
            line: lineno,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(err("expected 7 fields"));
        }
        let num = |s: &str| -> Result<f64, RecordError> {
            match s {
                "inf" => Ok(f64::INFINITY),
                _ => s.parse::<f64>().map_err(|_| err("bad number")),
            }
        };
        let failed = match f[4] {
            "true" => true,
            "false" => false,
            _ => return Err(err("bad failed flag")),
        };
        let conf = match f[5] {
            "true" => Some(true),
            "false" => Some(false),
            "" => None,
            _ => return Err(err("bad icp_confident flag")),
        };
        let (te, re) = (num(f[2])?, num(f[3])?);
        let rec = if failed {
            if te.is_finite() || re.is_finite() {
                return Err(err("failed record with finite error"));
            }
            EvalRecord::failure(f[0], f[1])
        } else {
            if !te.is_finite() || !re.is_finite() {
                return Err(err("non-failed record with infinite error"));
            }
            EvalRecord::success(f[0], f[1], te, re)
        };
        out.push(rec.with_confidence(conf).with_runtime(num(f[6])?));
    }
    Ok(out)
}

/// Fraction of samples with error strictly below each threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeCurve {
    pub thresholds: Vec<f64>,
    pub fractions: Vec<f64>,
}

impl CumulativeCurve {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "threshold,fraction")?;
        for (t, f) in self.thresholds.iter().zip(&self.fractions) {
            writeln!(w, "{t},{f}")?;
        }
        Ok(())
    }
}

pub fn build_curve(
    records: &[EvalRecord],
    metric: Metric,
    thresholds: &[f64],
) -> Result<CumulativeCurve, RecordError> {
    if records.is_empty() {
        return Err(RecordError::Empty);
    }
    let mut errors: Vec<f64> = records
        .iter()
        .map(|r| r.error(metric))
        .filter(|e| e.is_finite())
        .collect();
    errors.sort_by(f64::total_cmp);
    let n = records.len() as f64;
    let fractions = thresholds
        .iter()
        .map(|t| errors.partition_point(|e| e < t) as f64 / n)
        .collect();
    Ok(CumulativeCurve {
        thresholds: thresholds.to_vec(),
        fractions,
    })
}

/// Default e_TE grid: 0 to 50 mm in 0.5 mm steps.
pub fn default_translation_thresholds() -> Vec<f64> {
    (0..=100).map(|i| i as f64 * 0.5).collect()
}

/// Default e_RE grid: 0 to π in 0.01 rad steps.
pub fn default_rotation_thresholds() -> Vec<f64> {
    (0..=314).map(|i| i as f64 * 0.01).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub total: usize,
    pub failed: usize,
    pub translation: Option<MetricStats>,
    pub rotation: Option<MetricStats>,
}

impl Summary {
    pub fn failure_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.failed as f64 / self.total as f64
        }
    }
}

fn stats(values: &[f64]) -> Option<MetricStats> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(MetricStats {
        mean,
        std: var.sqrt(),
    })
}

/// Mean and population std over non-failed records, plus failure counts.
pub fn summarize(records: &[EvalRecord]) -> Summary {
    let ok: Vec<&EvalRecord> = records.iter().filter(|r| !r.failed()).collect();
    let te: Vec<f64> = ok.iter().map(|r| r.e_te()).collect();
    let re: Vec<f64> = ok.iter().map(|r| r.e_re()).collect();
    Summary {
        total: records.len(),
        failed: records.len() - ok.len(),
        translation: stats(&te),
        rotation: stats(&re),
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |s: Option<MetricStats>, pick: fn(MetricStats) -> f64| {
            s.map_or("-".to_string(), |s| format!("{:.3}", pick(s)))
        };
        write!(
            f,
            "{:>8} {:>8} {:>10} {:>10} {:>10} {:>10}",
            self.total,
            format!("{:.3}", self.failure_rate()),
            cell(self.translation, |s| s.mean),
            cell(self.rotation, |s| s.mean),
            cell(self.translation, |s| s.std),
            cell(self.rotation, |s| s.std),
        )
    }
}

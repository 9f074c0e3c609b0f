//! Reference-based quality of a morph against both parents: PSNR, SSIM and
//! normal-approximation 95% confidence intervals.

use std::io::Write;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::loss::{LossError, MsSsimParams};
use crate::tensor::{Tensor, TensorError};

pub use crate::loss::ssim_global;

pub const Z_95: f64 = 1.96;

#[derive(Debug, Error)]
pub enum QualityError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("peak must be positive and finite, got {0}")]
    InvalidPeak(f64),
    #[error("confidence interval needs at least 2 values, got {0}")]
    TooFewValues(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// `10·log10(peak² / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(x: &Tensor, reference: &Tensor, peak: f64) -> Result<f64, QualityError> {
    if x.shape() != reference.shape() {
        return Err(TensorError::ShapeMismatch {
            left: x.shape().to_vec(),
            right: reference.shape().to_vec(),
        }
        .into());
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(QualityError::InvalidPeak(peak));
    }
    let mse = x
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityRecord {
    pub morph_id: String,
    #[serde(serialize_with = "serialize_db")]
    pub psnr_avg: f64,
    pub ssim_avg: f64,
}

/// Writes `INF` for the identical-image sentinel.
pub fn serialize_db<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("INF")
    } else {
        s.serialize_f64(*v)
    }
}

/// PSNR (peak 1.0) and single-scale SSIM of `im` against each parent,
/// averaged.
pub fn morph_quality(
    morph_id: &str,
    im: &Tensor,
    parent1: &Tensor,
    parent2: &Tensor,
    params: &MsSsimParams,
) -> Result<QualityRecord, QualityError> {
    let p = (psnr(im, parent1, 1.0)? + psnr(im, parent2, 1.0)?) / 2.0;
    let s = (ssim_global(im, parent1, params)? + ssim_global(im, parent2, params)?) / 2.0;
    Ok(QualityRecord {
        morph_id: morph_id.to_string(),
        psnr_avg: p,
        ssim_avg: s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CiSummary {
    pub mean: f64,
    pub halfwidth: f64,
    pub n: usize,
}

/// mean ± 1.96 · s / √n with the sample standard deviation s.
pub fn summarize_ci(values: &[f64]) -> Result<CiSummary, QualityError> {
    if values.len() < 2 {
        return Err(QualityError::TooFewValues(values.len()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(QualityError::NonFinite(i));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(CiSummary {
        mean,
        halfwidth: Z_95 * var.sqrt() / n.sqrt(),
        n: values.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualitySummary {
    pub ci_method: &'static str,
    pub z: f64,
    /// Absent when fewer than two finite values remain.
    pub psnr: Option<CiSummary>,
    pub ssim: Option<CiSummary>,
    /// Records whose PSNR was the identical-image sentinel.
    pub psnr_inf_excluded: usize,
    pub records: usize,
}

pub fn summarize_quality(records: &[QualityRecord]) -> QualitySummary {
    let finite: Vec<f64> = records.iter().map(|r| r.psnr_avg).filter(|v| v.is_finite()).collect();
    let ssim: Vec<f64> = records.iter().map(|r| r.ssim_avg).collect();
    QualitySummary {
        ci_method: "normal approximation, sample standard deviation",
        z: Z_95,
        psnr: summarize_ci(&finite).ok(),
        ssim: summarize_ci(&ssim).ok(),
        psnr_inf_excluded: records.len() - finite.len(),
        records: records.len(),
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    morph_id: &'a str,
    psnr_avg: String,
    ssim_avg: String,
    error: &'a str,
}

/// `morph_id,psnr_avg,ssim_avg,error`; failed records carry empty metric
/// fields and the error message.
pub fn write_quality_csv<W: Write>(
    rows: &[Result<QualityRecord, (String, String)>],
    out: W,
) -> Result<(), QualityError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        let r = match row {
            Ok(q) => CsvRow {
                morph_id: &q.morph_id,
                psnr_avg: if q.psnr_avg.is_infinite() {
                    "INF".into()
                } else {
                    q.psnr_avg.to_string()
                },
                ssim_avg: q.ssim_avg.to_string(),
                error: "",
            },
            Err((id, msg)) => CsvRow {
                morph_id: id,
                psnr_avg: String::new(),
                ssim_avg: String::new(),
                error: msg,
            },
        };
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f64) -> Tensor {
        Tensor::full(vec![3, 16, 16], v).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = constant(0.25);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert!(psnr(&constant(0.0), &constant(1.0), 1.0).unwrap().abs() < 1e-12);
        let half = psnr(&constant(0.0), &constant(0.5), 1.0).unwrap();
        assert!((half - 10.0 * 4f64.log10()).abs() < 1e-12);
        assert!((half - 6.0206).abs() < 1e-4);
        assert!(psnr(&a, &Tensor::zeros(vec![3, 8, 8]).unwrap(), 1.0).is_err());
        assert!(matches!(psnr(&a, &a, 0.0), Err(QualityError::InvalidPeak(_))));
    }

    #[test]
    fn ci_examples() {
        let c = summarize_ci(&[3.5; 7]).unwrap();
        assert_eq!((c.mean, c.halfwidth, c.n), (3.5, 0.0, 7));
        let c = summarize_ci(&[0.0, 2.0]).unwrap();
        assert_eq!(c.mean, 1.0);
        assert!((c.halfwidth - 1.96).abs() < 1e-12);
        assert!(matches!(summarize_ci(&[1.0]), Err(QualityError::TooFewValues(1))));
        assert!(matches!(summarize_ci(&[1.0, f64::NAN]), Err(QualityError::NonFinite(1))));
    }

    #[test]
    fn identical_morph_and_parents() {
        let a = Tensor::new(vec![3, 16, 16], (0..768).map(|i| (i % 17) as f64 / 16.0).collect()).unwrap();
        let q = morph_quality("m", &a, &a, &a, &MsSsimParams::default()).unwrap();
        assert_eq!(q.psnr_avg, f64::INFINITY);
        assert!((q.ssim_avg - 1.0).abs() < 1e-12);
        let mut buf = Vec::new();
        let exact = QualityRecord { ssim_avg: 1.0, ..q };
        write_quality_csv(&[Ok(exact), Err(("x".into(), "unreadable".into()))], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "morph_id,psnr_avg,ssim_avg,error\nm,INF,1,\nx,,,unreadable\n");
    }

    #[test]
    fn summary_excludes_sentinel() {
        let rec = |p: f64| QualityRecord {
            morph_id: String::new(),
            psnr_avg: p,
            ssim_avg: 0.5,
        };
        let s = summarize_quality(&[rec(20.0), rec(22.0), rec(f64::INFINITY)]);
        assert_eq!(s.psnr_inf_excluded, 1);
        assert_eq!(s.psnr.unwrap().mean, 21.0);
        assert_eq!(s.ssim.unwrap().n, 3);
        let json = serde_json::to_string(&rec(f64::INFINITY)).unwrap();
        assert!(json.contains("\"psnr_avg\":\"INF\""));
    }
}

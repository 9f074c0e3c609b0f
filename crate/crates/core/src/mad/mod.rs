//! Morphing-attack-detection metrics over detector score files: APCER,
//! BPCER, D-EER and BPCER at fixed APCER, arranged as a train/test grid.
//!
//! Scores are attack-oriented: a presentation is classified as an attack
//! when `score > θ`, so ties fall to bona fide.

mod baseline;
mod grid;

pub use baseline::median_residual_score;
pub use grid::{
    mad_grid_report, read_mad_csv, CellKey, CellResult, Class, MadCell, MadReport, MadRow, MadScoreFile,
    ABSENT, APCER_TARGETS, MAD_HEADER,
};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MadError {
    #[error("{0} scores are empty")]
    EmptyClass(&'static str),
    #[error("non-finite {0} score")]
    NonFinite(&'static str),
    #[error("APCER target must lie in (0, 1), got {0}")]
    InvalidTarget(f64),
    #[error("no threshold reaches APCER <= {0}")]
    Unreachable(f64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("image must be [c, h, w] with h, w >= 3, got {0:?}")]
    ImageShape(Vec<usize>),
}

/// Attack and bona fide detector scores of one evaluation cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MadScores {
    pub attack: Vec<f64>,
    pub bonafide: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

/// Operating points at θ = −∞ and at every distinct score, ascending.
struct Sweep {
    points: Vec<OperatingPoint>,
}

impl MadScores {
    pub fn new(attack: Vec<f64>, bonafide: Vec<f64>) -> Self {
        Self { attack, bonafide }
    }

    fn check(&self) -> Result<(), MadError> {
        for (name, v) in [("attack", &self.attack), ("bona fide", &self.bonafide)] {
            if v.is_empty() {
                return Err(MadError::EmptyClass(name));
            }
            if v.iter().any(|s| !s.is_finite()) {
                return Err(MadError::NonFinite(name));
            }
        }
        Ok(())
    }

    fn sweep(&self) -> Result<Sweep, MadError> {
        self.check()?;
        let mut attack = self.attack.clone();
        let mut bona = self.bonafide.clone();
        attack.sort_by(f64::total_cmp);
        bona.sort_by(f64::total_cmp);
        let mut merged: Vec<f64> = attack.iter().chain(&bona).copied().collect();
        merged.sort_by(f64::total_cmp);
        merged.dedup();

        let (na, nb) = (attack.len() as f64, bona.len() as f64);
        let mut points = Vec::with_capacity(merged.len() + 1);
        points.push(OperatingPoint {
            threshold: f64::NEG_INFINITY,
            apcer: 0.0,
            bpcer: 1.0,
        });
        let (mut ia, mut ib) = (0, 0);
        for &t in &merged {
            while ia < attack.len() && attack[ia] <= t {
                ia += 1;
            }
            while ib < bona.len() && bona[ib] <= t {
                ib += 1;
            }
            points.push(OperatingPoint {
                threshold: t,
                apcer: ia as f64 / na,
                bpcer: (bona.len() - ib) as f64 / nb,
            });
        }
        Ok(Sweep { points })
    }
}

/// APCER = attacks with score ≤ θ; BPCER = bona fide with score > θ.
pub fn apcer_bpcer_at(scores: &MadScores, theta: f64) -> Result<(f64, f64), MadError> {
    scores.check()?;
    let apcer = scores.attack.iter().filter(|&&s| s <= theta).count() as f64 / scores.attack.len() as f64;
    let bpcer = scores.bonafide.iter().filter(|&&s| s > theta).count() as f64 / scores.bonafide.len() as f64;
    Ok((apcer, bpcer))
}

/// Equal-error operating point. Between the two adjacent operating points
/// where `apcer − bpcer` changes sign the rates are interpolated linearly;
/// if the difference is exactly zero over a run of thresholds, the EER is
/// that common value and the threshold is the midpoint of the run.
pub fn d_eer(scores: &MadScores) -> Result<Eer, MadError> {
    let p = scores.sweep()?.points;
    let diff = |q: &OperatingPoint| q.apcer - q.bpcer;
    let i = p
        .iter()
        .position(|q| diff(q) >= 0.0)
        .expect("the last operating point has apcer 1, bpcer 0");
    if diff(&p[i]) == 0.0 {
        let mut j = i;
        while j + 1 < p.len() && diff(&p[j + 1]) == 0.0 {
            j += 1;
        }
        let end = p.get(j + 1).map_or(p[j].threshold, |q| q.threshold);
        return Ok(Eer {
            eer: p[i].apcer,
            threshold: (p[i].threshold + end) / 2.0,
        });
    }
    let (a, b) = (&p[i - 1], &p[i]);
    let t = -diff(a) / (diff(b) - diff(a));
    let threshold = if a.threshold.is_finite() {
        a.threshold + t * (b.threshold - a.threshold)
    } else {
        b.threshold
    };
    Ok(Eer {
        eer: a.apcer + t * (b.apcer - a.apcer),
        threshold,
    })
}

/// Lowest BPCER over thresholds whose APCER does not exceed `target`.
pub fn bpcer_at_apcer(scores: &MadScores, target: f64) -> Result<OperatingPoint, MadError> {
    if !(target > 0.0 && target < 1.0) {
        return Err(MadError::InvalidTarget(target));
    }
    let p = scores.sweep()?.points;
    // apcer rises and bpcer falls with θ: the last admissible point wins
    p.iter()
        .rev()
        .find(|q| q.apcer <= target)
        .copied()
        .ok_or(MadError::Unreachable(target))
}

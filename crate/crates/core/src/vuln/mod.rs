//! Face-recognition vulnerability to morphs: threshold at a target FMR,
//! FNMR, MMPMR, FMMPMR and RMMR, with grouped table-style reports.
//!
//! A comparison counts as a match when `score > τ`.

mod report;
mod scores;

pub use report::{vulnerability_report, GroupBy, GroupRow, ThresholdSource, VulnOptions, VulnReport};
pub use scores::{read_score_csv, GroupTags, MorphScores, Polarity, ScoreSet, SCORE_HEADER};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VulnError {
    #[error("{0} score list is empty")]
    Empty(&'static str),
    #[error("target FMR must lie in (0, 1), got {0}")]
    InvalidFmr(f64),
    #[error("non-finite score in {0}")]
    NonFinite(String),
    #[error("morph {morph} has {subjects} contributing subject(s); at least 2 required")]
    TooFewSubjects { morph: String, subjects: usize },
    #[error("morph {morph}: subject {subject} has no attempts")]
    NoAttempts { morph: String, subject: usize },
    #[error("{name} = {value} outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn check_pool(scores: &[f64], name: &'static str) -> Result<(), VulnError> {
    if scores.is_empty() {
        return Err(VulnError::Empty(name));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(VulnError::NonFinite(name.into()));
    }
    Ok(())
}

/// Smallest impostor score τ with `#{s > τ} / n ≤ fmr`.
pub fn threshold_at_fmr(impostor: &[f64], fmr: f64) -> Result<f64, VulnError> {
    check_pool(impostor, "impostor")?;
    if !(fmr > 0.0 && fmr < 1.0) {
        return Err(VulnError::InvalidFmr(fmr));
    }
    let mut sorted = impostor.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut i = 0;
    while i < n {
        let tau = sorted[i];
        let mut j = i;
        while j < n && sorted[j] == tau {
            j += 1;
        }
        // j = index of the first score strictly above tau
        if (n - j) as f64 / n as f64 <= fmr {
            return Ok(tau);
        }
        i = j;
    }
    unreachable!("the maximum score always satisfies the target")
}

/// Fraction of impostor scores strictly above τ.
pub fn fmr_at(impostor: &[f64], tau: f64) -> Result<f64, VulnError> {
    check_pool(impostor, "impostor")?;
    Ok(impostor.iter().filter(|&&s| s > tau).count() as f64 / impostor.len() as f64)
}

/// Fraction of genuine scores at or below τ.
pub fn fnmr_at(genuine: &[f64], tau: f64) -> Result<f64, VulnError> {
    check_pool(genuine, "genuine")?;
    Ok(genuine.iter().filter(|&&s| s <= tau).count() as f64 / genuine.len() as f64)
}

/// A rate with its counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rate {
    pub rate: f64,
    pub successes: usize,
    pub trials: usize,
}

impl Rate {
    fn new(successes: usize, trials: usize) -> Self {
        Self {
            rate: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
            successes,
            trials,
        }
    }
}

fn check_morph(m: &MorphScores) -> Result<(), VulnError> {
    if m.attempts.len() < 2 {
        return Err(VulnError::TooFewSubjects {
            morph: m.morph_id.clone(),
            subjects: m.attempts.len(),
        });
    }
    if let Some(k) = m.attempts.iter().position(Vec::is_empty) {
        return Err(VulnError::NoAttempts {
            morph: m.morph_id.clone(),
            subject: k + 1,
        });
    }
    Ok(())
}

/// Attempt-paired rate over a list of morphs. Ragged morphs are truncated
/// to their common attempt count.
pub fn fmmpmr_counts<'a>(
    morphs: impl IntoIterator<Item = &'a MorphScores>,
    tau: f64,
) -> Result<Rate, VulnError> {
    let (mut hits, mut pairs) = (0, 0);
    for m in morphs {
        check_morph(m)?;
        let p_max = m.common_attempts();
        for p in 0..p_max {
            pairs += 1;
            if m.attempts.iter().all(|a| a[p] > tau) {
                hits += 1;
            }
        }
    }
    Ok(Rate::new(hits, pairs))
}

/// Fraction of morphs whose weakest subject still matches on its best
/// attempt.
pub fn mmpmr_counts<'a>(
    morphs: impl IntoIterator<Item = &'a MorphScores>,
    tau: f64,
) -> Result<Rate, VulnError> {
    let (mut hits, mut total) = (0, 0);
    for m in morphs {
        check_morph(m)?;
        total += 1;
        let weakest = m
            .attempts
            .iter()
            .map(|a| a.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .fold(f64::INFINITY, f64::min);
        if weakest > tau {
            hits += 1;
        }
    }
    Ok(Rate::new(hits, total))
}

pub fn fmmpmr(scores: &ScoreSet, tau: f64) -> Result<f64, VulnError> {
    if scores.morphs.is_empty() {
        return Err(VulnError::Empty("mated morph"));
    }
    Ok(fmmpmr_counts(&scores.morphs, tau)?.rate)
}

pub fn mmpmr(scores: &ScoreSet, tau: f64) -> Result<f64, VulnError> {
    if scores.morphs.is_empty() {
        return Err(VulnError::Empty("mated morph"));
    }
    Ok(mmpmr_counts(&scores.morphs, tau)?.rate)
}

/// `1 + rate − (1 − fnmr)`, evaluated as `rate + fnmr` so that a zero
/// FNMR returns `rate` bit for bit.
pub fn rmmr(rate: f64, fnmr: f64) -> Result<f64, VulnError> {
    for (name, value) in [("rate", rate), ("fnmr", fnmr)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(VulnError::OutOfRange { name, value });
        }
    }
    Ok(rate + fnmr)
}

use std::collections::BTreeSet;
use std::io::Write;

use serde::Serialize;

use super::{
    fmmpmr_counts, fmr_at, fnmr_at, mmpmr_counts, rmmr, threshold_at_fmr, MorphScores, Polarity,
    ScoreSet, VulnError,
};

pub const COMBINED: &str = "combined";
pub const ALL_MEDIA: &str = "all";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GroupBy {
    pub gender: bool,
    pub medium: bool,
}

impl Default for GroupBy {
    fn default() -> Self {
        Self {
            gender: true,
            medium: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum ThresholdSource {
    /// Empirical quantile of the impostor pool at the target FMR.
    EmpiricalQuantile,
    /// Externally supplied operating threshold, e.g. a vendor setting.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VulnOptions {
    pub fmr_target: f64,
    pub threshold: ThresholdSource,
    pub group_by: GroupBy,
}

impl Default for VulnOptions {
    fn default() -> Self {
        Self {
            fmr_target: 0.001,
            threshold: ThresholdSource::EmpiricalQuantile,
            group_by: GroupBy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRow {
    pub medium: String,
    pub gender: String,
    pub morphs: usize,
    pub attempt_pairs: usize,
    pub mmpmr: f64,
    pub fmmpmr: f64,
    pub rmmr_mmpmr: f64,
    pub rmmr_fmmpmr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VulnReport {
    pub options: VulnOptions,
    pub polarity: Polarity,
    /// Threshold in the similarity orientation used internally.
    pub tau: f64,
    pub empirical_fmr: f64,
    pub fnmr: f64,
    pub genuine_count: usize,
    pub impostor_count: usize,
    pub decision_rule: &'static str,
    pub mmpmr_definition: &'static str,
    pub fmmpmr_normalization: &'static str,
    pub truncation_policy: &'static str,
    pub groups: Vec<GroupRow>,
    pub warnings: Vec<String>,
}

impl VulnReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Table grid: one row per gender plus `combined`, one column block of
    /// four rates per medium. Omitted groups leave empty cells.
    pub fn write_grid_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let media: BTreeSet<&str> = self.groups.iter().map(|g| g.medium.as_str()).collect();
        let mut genders: Vec<&str> = self
            .groups
            .iter()
            .map(|g| g.gender.as_str())
            .filter(|g| *g != COMBINED)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        genders.push(COMBINED);

        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["group".to_string()];
        for m in &media {
            for metric in ["mmpmr", "fmmpmr", "rmmr_mmpmr", "rmmr_fmmpmr"] {
                header.push(format!("{m}:{metric}"));
            }
        }
        w.write_record(&header)?;
        for gender in genders {
            let mut rec = vec![gender.to_string()];
            for m in &media {
                match self.groups.iter().find(|g| g.medium == *m && g.gender == gender) {
                    Some(g) => {
                        for v in [g.mmpmr, g.fmmpmr, g.rmmr_mmpmr, g.rmmr_fmmpmr] {
                            rec.push(v.to_string());
                        }
                    }
                    None => rec.extend(std::iter::repeat_n(String::new(), 4)),
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Computes τ once from the whole impostor pool (or takes the fixed
/// threshold), FNMR from the whole genuine pool, then the four rates for
/// every (medium, gender) group and for each medium's combined row.
pub fn vulnerability_report(scores: &ScoreSet, opts: &VulnOptions) -> Result<VulnReport, VulnError> {
    scores.validate()?;
    if scores.morphs.is_empty() {
        return Err(VulnError::Empty("mated morph"));
    }
    if !(opts.fmr_target > 0.0 && opts.fmr_target < 1.0) {
        return Err(VulnError::InvalidFmr(opts.fmr_target));
    }
    let tau = match opts.threshold {
        ThresholdSource::EmpiricalQuantile => threshold_at_fmr(&scores.impostor, opts.fmr_target)?,
        ThresholdSource::Fixed(t) if t.is_finite() => t,
        ThresholdSource::Fixed(t) => return Err(VulnError::NonFinite(format!("threshold {t}"))),
    };
    let empirical_fmr = fmr_at(&scores.impostor, tau)?;
    let fnmr = fnmr_at(&scores.genuine, tau)?;

    let mut warnings = Vec::new();
    for m in &scores.morphs {
        if m.is_ragged() {
            let counts: Vec<usize> = m.attempts.iter().map(Vec::len).collect();
            warnings.push(format!(
                "morph {}: attempt counts {counts:?} differ; FMMPMR pairs the first {} attempts",
                m.morph_id,
                m.common_attempts()
            ));
        }
    }

    let medium_of = |t: &super::GroupTags| -> String {
        if opts.group_by.medium {
            t.medium.clone()
        } else {
            ALL_MEDIA.to_string()
        }
    };
    let all_tags = scores.morphs.iter().map(|m| &m.tags).chain(&scores.extra_tags);
    let media: BTreeSet<String> = all_tags.clone().map(medium_of).collect();
    let genders: BTreeSet<String> = if opts.group_by.gender {
        all_tags.map(|t| t.gender.clone()).collect()
    } else {
        BTreeSet::new()
    };

    let mut groups = Vec::new();
    for medium in &media {
        let in_medium: Vec<&MorphScores> = scores
            .morphs
            .iter()
            .filter(|m| medium_of(&m.tags) == *medium)
            .collect();
        let rows = genders
            .iter()
            .map(|g| (g.as_str(), Some(g.as_str())))
            .chain(std::iter::once((COMBINED, None)));
        for (label, gender) in rows {
            let members: Vec<&MorphScores> = in_medium
                .iter()
                .copied()
                .filter(|m| gender.is_none_or(|g| m.tags.gender == g))
                .collect();
            if members.is_empty() {
                warnings.push(format!("group medium={medium} gender={label} has no morphs; omitted"));
                continue;
            }
            let mm = mmpmr_counts(members.iter().copied(), tau)?;
            let fm = fmmpmr_counts(members.iter().copied(), tau)?;
            groups.push(GroupRow {
                medium: medium.clone(),
                gender: label.to_string(),
                morphs: mm.trials,
                attempt_pairs: fm.trials,
                mmpmr: mm.rate,
                fmmpmr: fm.rate,
                rmmr_mmpmr: rmmr(mm.rate, fnmr)?,
                rmmr_fmmpmr: rmmr(fm.rate, fnmr)?,
            });
        }
    }

    Ok(VulnReport {
        options: *opts,
        polarity: scores.polarity,
        tau,
        empirical_fmr,
        fnmr,
        genuine_count: scores.genuine.len(),
        impostor_count: scores.impostor.len(),
        decision_rule: "match if score > tau",
        mmpmr_definition: "fraction of morphs whose minimum over subjects of the maximum over attempts exceeds tau",
        fmmpmr_normalization: "successful (morph, attempt) pairs divided by all (morph, attempt) pairs",
        truncation_policy: "FMMPMR truncates each morph to its common attempt count; MMPMR uses all attempts",
        groups,
        warnings,
    })
}

use std::collections::BTreeMap;
use std::io::Read;

use serde::Deserialize;

use super::VulnError;

/// Orientation of the scores in a file. Internally everything is
/// similarity-oriented: a higher score is a stronger match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    #[default]
    Similarity,
    Distance,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default, serde::Serialize)]
pub struct GroupTags {
    pub gender: String,
    pub medium: String,
}

/// Mated comparison scores of one morph: `attempts[k][p]` is the score of
/// contributing subject `k` at its `p`-th attempt (ordered by attempt index).
#[derive(Debug, Clone, PartialEq)]
pub struct MorphScores {
    pub morph_id: String,
    pub tags: GroupTags,
    pub attempts: Vec<Vec<f64>>,
}

impl MorphScores {
    pub fn new(morph_id: impl Into<String>, tags: GroupTags, attempts: Vec<Vec<f64>>) -> Self {
        Self {
            morph_id: morph_id.into(),
            tags,
            attempts,
        }
    }

    /// Attempt count shared by every subject.
    pub fn common_attempts(&self) -> usize {
        self.attempts.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn is_ragged(&self) -> bool {
        self.attempts.iter().any(|a| a.len() != self.common_attempts())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    pub morphs: Vec<MorphScores>,
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
    /// Tags seen on genuine / impostor rows, kept so that groups without
    /// morphs can still be reported as omitted.
    pub extra_tags: Vec<GroupTags>,
    pub polarity: Polarity,
}

impl ScoreSet {
    /// Checks K ≥ 2, non-empty attempt lists and finite scores.
    pub fn validate(&self) -> Result<(), VulnError> {
        for m in &self.morphs {
            if m.attempts.len() < 2 {
                return Err(VulnError::TooFewSubjects {
                    morph: m.morph_id.clone(),
                    subjects: m.attempts.len(),
                });
            }
            for (k, a) in m.attempts.iter().enumerate() {
                if a.is_empty() {
                    return Err(VulnError::NoAttempts {
                        morph: m.morph_id.clone(),
                        subject: k + 1,
                    });
                }
                if a.iter().any(|s| !s.is_finite()) {
                    return Err(VulnError::NonFinite(format!("morph {}", m.morph_id)));
                }
            }
        }
        for (name, pool) in [("genuine", &self.genuine), ("impostor", &self.impostor)] {
            if pool.iter().any(|s| !s.is_finite()) {
                return Err(VulnError::NonFinite(name.into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    kind: String,
    morph_id: String,
    subject_index: Option<u32>,
    attempt_index: Option<u32>,
    score: f64,
    group_gender: String,
    group_medium: String,
}

pub const SCORE_HEADER: [&str; 7] = [
    "kind",
    "morph_id",
    "subject_index",
    "attempt_index",
    "score",
    "group_gender",
    "group_medium",
];

/// Parses a score CSV. An optional first line `#polarity=similarity` or
/// `#polarity=distance` declares the orientation; distance scores are
/// negated on load.
pub fn read_score_csv<R: Read>(mut input: R) -> Result<ScoreSet, VulnError> {
    let mut text = String::new();
    input
        .read_to_string(&mut text)
        .map_err(|e| VulnError::Parse { line: 0, message: e.to_string() })?;
    let (polarity, body, offset) = match text.strip_prefix('#') {
        Some(rest) => {
            let (first, body) = rest.split_once('\n').unwrap_or((rest, ""));
            let value = first
                .trim()
                .strip_prefix("polarity=")
                .ok_or_else(|| VulnError::Parse {
                    line: 1,
                    message: format!("unknown directive #{}", first.trim()),
                })?;
            let p = match value {
                "similarity" => Polarity::Similarity,
                "distance" => Polarity::Distance,
                other => {
                    return Err(VulnError::Parse {
                        line: 1,
                        message: format!("unknown polarity {other}"),
                    })
                }
            };
            (p, body, 1)
        }
        None => (Polarity::Similarity, text.as_str(), 0),
    };
    let sign = if polarity == Polarity::Distance { -1.0 } else { 1.0 };

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let header = reader.headers().map_err(|e| VulnError::Parse {
        line: offset + 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(SCORE_HEADER) {
        return Err(VulnError::Parse {
            line: offset + 1,
            message: format!("header must be {}", SCORE_HEADER.join(",")),
        });
    }

    type Attempts = BTreeMap<u32, BTreeMap<u32, f64>>;
    let mut order: Vec<String> = Vec::new();
    let mut mated: BTreeMap<String, (GroupTags, Attempts)> = BTreeMap::new();
    let mut set = ScoreSet {
        polarity,
        ..ScoreSet::default()
    };
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let line = offset + i + 2;
        let fail = |message: String| VulnError::Parse { line, message };
        let row = row.map_err(|e| fail(e.to_string()))?;
        if !row.score.is_finite() {
            return Err(fail(format!("non-finite score {}", row.score)));
        }
        let score = sign * row.score;
        let tags = GroupTags {
            gender: row.group_gender,
            medium: row.group_medium,
        };
        match row.kind.as_str() {
            "mated_morph" => {
                let (Some(k), Some(p)) = (row.subject_index, row.attempt_index) else {
                    return Err(fail("mated_morph rows need subject_index and attempt_index".into()));
                };
                if row.morph_id.is_empty() {
                    return Err(fail("mated_morph rows need a morph_id".into()));
                }
                let entry = mated.entry(row.morph_id.clone()).or_insert_with(|| {
                    order.push(row.morph_id.clone());
                    (tags.clone(), BTreeMap::new())
                });
                if entry.0 != tags {
                    return Err(fail(format!("morph {} has conflicting group tags", row.morph_id)));
                }
                if entry.1.entry(k).or_default().insert(p, score).is_some() {
                    return Err(fail(format!(
                        "duplicate score for morph {} subject {k} attempt {p}",
                        row.morph_id
                    )));
                }
            }
            "genuine" | "impostor" => {
                if row.subject_index.is_some() || row.attempt_index.is_some() {
                    return Err(fail(format!("{} rows leave subject/attempt blank", row.kind)));
                }
                if row.kind == "genuine" {
                    set.genuine.push(score);
                } else {
                    set.impostor.push(score);
                }
                if !set.extra_tags.contains(&tags) {
                    set.extra_tags.push(tags);
                }
            }
            other => return Err(fail(format!("unknown kind {other}"))),
        }
    }
    for id in order {
        let (tags, subjects) = mated.remove(&id).expect("recorded");
        let attempts = subjects
            .into_values()
            .map(|a| a.into_values().collect())
            .collect();
        set.morphs.push(MorphScores::new(id, tags, attempts));
    }
    set.validate()?;
    Ok(set)
}

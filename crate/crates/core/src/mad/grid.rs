use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{bpcer_at_apcer, d_eer, MadError, MadScores};

pub const APCER_TARGETS: [f64; 2] = [0.05, 0.10];
pub const ABSENT: &str = "absent";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Attack,
    Bonafide,
}

/// One line of a MAD score file. `split` names the morph generation method
/// the detector was trained on; `generation_method` names the method that
/// produced the tested attack. Bona fide rows with an empty
/// `generation_method` are shared by every test method of their
/// (split, medium).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MadRow {
    pub class: Class,
    pub score: f64,
    pub generation_method: String,
    pub medium: String,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MadScoreFile {
    pub rows: Vec<MadRow>,
}

pub const MAD_HEADER: [&str; 5] = ["class", "score", "generation_method", "medium", "split"];

pub fn read_mad_csv<R: Read>(input: R) -> Result<MadScoreFile, MadError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers().map_err(|e| MadError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(MAD_HEADER) {
        return Err(MadError::Parse {
            line: 1,
            message: format!("header must be {}", MAD_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<MadRow>().enumerate() {
        let fail = |message: String| MadError::Parse { line: i + 2, message };
        let row = row.map_err(|e| fail(e.to_string()))?;
        if !row.score.is_finite() {
            return Err(fail(format!("non-finite score {}", row.score)));
        }
        if row.class == Class::Attack && row.generation_method.is_empty() {
            return Err(fail("attack rows need a generation_method".into()));
        }
        rows.push(row);
    }
    Ok(MadScoreFile { rows })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct CellKey {
    pub train: String,
    pub test: String,
    pub medium: String,
}

impl MadScoreFile {
    /// Every (train, test, medium) combination seen in the file, in sorted
    /// order; a class may be empty.
    pub fn cells(&self) -> Vec<(CellKey, MadScores)> {
        let trains: BTreeSet<&str> = self.rows.iter().map(|r| r.split.as_str()).collect();
        let media: BTreeSet<&str> = self.rows.iter().map(|r| r.medium.as_str()).collect();
        let tests: BTreeSet<&str> = self
            .rows
            .iter()
            .map(|r| r.generation_method.as_str())
            .filter(|m| !m.is_empty())
            .collect();
        let mut out = Vec::new();
        for &train in &trains {
            for &test in &tests {
                for &medium in &media {
                    let mut cell = MadScores::default();
                    for r in &self.rows {
                        if r.split != train || r.medium != medium {
                            continue;
                        }
                        match r.class {
                            Class::Attack if r.generation_method == test => cell.attack.push(r.score),
                            Class::Bonafide
                                if r.generation_method.is_empty() || r.generation_method == test =>
                            {
                                cell.bonafide.push(r.score)
                            }
                            _ => {}
                        }
                    }
                    let key = CellKey {
                        train: train.to_string(),
                        test: test.to_string(),
                        medium: medium.to_string(),
                    };
                    out.push((key, cell));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellResult {
    Present {
        d_eer: f64,
        eer_threshold: f64,
        /// BPCER at each entry of [`APCER_TARGETS`].
        bpcer_at_apcer: Vec<f64>,
        attack_count: usize,
        bonafide_count: usize,
    },
    Absent {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MadCell {
    #[serde(flatten)]
    pub key: CellKey,
    pub result: CellResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MadReport {
    pub decision_rule: &'static str,
    pub eer_interpolation: &'static str,
    pub apcer_targets: Vec<f64>,
    pub cells: Vec<MadCell>,
}

pub fn mad_grid_report(cells: &[(CellKey, MadScores)]) -> MadReport {
    let mut sorted: Vec<&(CellKey, MadScores)> = cells.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let cells = sorted
        .into_iter()
        .map(|(key, scores)| {
            let result = evaluate(scores).unwrap_or_else(|e| CellResult::Absent { reason: e.to_string() });
            MadCell {
                key: key.clone(),
                result,
            }
        })
        .collect();
    MadReport {
        decision_rule: "attack if score > threshold; ties fall to bona fide",
        eer_interpolation: "linear between adjacent operating points; plateau midpoint on exact crossing",
        apcer_targets: APCER_TARGETS.to_vec(),
        cells,
    }
}

fn evaluate(scores: &MadScores) -> Result<CellResult, MadError> {
    let eer = d_eer(scores)?;
    let bpcer = APCER_TARGETS
        .iter()
        .map(|&t| bpcer_at_apcer(scores, t).map(|p| p.bpcer))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CellResult::Present {
        d_eer: eer.eer,
        eer_threshold: eer.threshold,
        bpcer_at_apcer: bpcer,
        attack_count: scores.attack.len(),
        bonafide_count: scores.bonafide.len(),
    })
}

impl MadReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Rows = (train, test) method pairs, columns = medium × metric.
    pub fn write_grid_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let media: BTreeSet<&str> = self.cells.iter().map(|c| c.key.medium.as_str()).collect();
        let pairs: BTreeSet<(&str, &str)> = self
            .cells
            .iter()
            .map(|c| (c.key.train.as_str(), c.key.test.as_str()))
            .collect();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["train".to_string(), "test".to_string()];
        for m in &media {
            header.push(format!("{m}:d_eer"));
            for t in APCER_TARGETS {
                header.push(format!("{m}:bpcer@apcer{}", (t * 100.0).round()));
            }
        }
        w.write_record(&header)?;
        for (train, test) in pairs {
            let mut rec = vec![train.to_string(), test.to_string()];
            for m in &media {
                let cell = self
                    .cells
                    .iter()
                    .find(|c| c.key.train == train && c.key.test == test && c.key.medium == *m);
                match cell.map(|c| &c.result) {
                    Some(CellResult::Present {
                        d_eer,
                        bpcer_at_apcer,
                        ..
                    }) => {
                        rec.push(d_eer.to_string());
                        rec.extend(bpcer_at_apcer.iter().map(f64::to_string));
                    }
                    _ => rec.extend(std::iter::repeat_n(ABSENT.to_string(), 1 + APCER_TARGETS.len())),
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

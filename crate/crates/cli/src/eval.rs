use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use morphbench::io::load_png;
use morphbench::loss::MsSsimParams;
use morphbench::mad::{mad_grid_report, read_mad_csv, MadCell, MadReport};
use morphbench::quality::{morph_quality, summarize_quality, write_quality_csv, QualityRecord};
use morphbench::vuln::{read_score_csv, vulnerability_report, GroupBy, ThresholdSource, VulnOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::morph::resolve_pairs;
use crate::{
    check_out_dir, create_out_dir, require_dir, require_file, thread_pool, write_file, write_manifest,
    CliError, CmdResult, Command, Status,
};

#[derive(Debug, Clone, PartialEq, clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VulnArgs {
    /// Comparison score CSV.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, default_value_t = 0.001)]
    pub fmr: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed decision threshold in the file's own orientation; overrides
    /// the impostor quantile.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub no_gender: bool,
    #[arg(long)]
    pub no_medium: bool,
}

impl VulnArgs {
    pub fn new(scores: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            scores: scores.into(),
            fmr: 0.001,
            out: out.into(),
            threshold: None,
            no_gender: false,
            no_medium: false,
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Writes `vuln_report.json` and `vuln_grid.csv`.
pub fn cmd_vuln(mut args: VulnArgs) -> CmdResult {
    args.scores = require_file(&args.scores, "score file")?;
    args.out = check_out_dir(&args.out)?;
    if !(args.fmr > 0.0 && args.fmr < 1.0) {
        return Err(CliError::config(format!("--fmr must lie in (0, 1), got {}", args.fmr)));
    }
    let scores = read_score_csv(open(&args.scores)?).map_err(|e| CliError::data(format!("{}: {e}", args.scores.display())))?;
    let threshold = match args.threshold {
        None => ThresholdSource::EmpiricalQuantile,
        Some(t) => match scores.polarity {
            morphbench::vuln::Polarity::Similarity => ThresholdSource::Fixed(t),
            morphbench::vuln::Polarity::Distance => ThresholdSource::Fixed(-t),
        },
    };
    let opts = VulnOptions {
        fmr_target: args.fmr,
        threshold,
        group_by: GroupBy {
            gender: !args.no_gender,
            medium: !args.no_medium,
        },
    };
    let report = vulnerability_report(&scores, &opts).map_err(|e| CliError::data(e.to_string()))?;
    for w in &report.warnings {
        log::warn!("{w}");
    }

    create_out_dir(&args.out)?;
    write_manifest(&Command::Vuln(args.clone()))?;
    write_file(&args.out.join("vuln_report.json"), report.to_json().as_bytes())?;
    let mut grid = Vec::new();
    report.write_grid_csv(&mut grid).map_err(|e| CliError::data(e.to_string()))?;
    write_file(&args.out.join("vuln_grid.csv"), &grid)?;
    Ok(Status::Ok)
}

#[derive(Debug, Clone, PartialEq, clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityArgs {
    /// Directory holding `<morph_id>.png`.
    #[arg(long)]
    pub morphs: PathBuf,
    /// Pair list naming each morph's parents.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

/// Writes `quality.csv` and `quality_summary.json`. Records whose images
/// cannot be read become error rows; exit 1 if some fail, 3 if all do.
pub fn cmd_quality(mut args: QualityArgs) -> CmdResult {
    let pool = thread_pool(args.jobs)?;
    args.morphs = require_dir(&args.morphs, "morph directory")?;
    let resolved = resolve_pairs(&args.pairs)?;
    args.pairs = require_file(&args.pairs, "pair list")?;
    args.out = check_out_dir(&args.out)?;

    let params = MsSsimParams::default();
    let jobs: Vec<(&str, PathBuf, &(PathBuf, PathBuf))> = resolved
        .pairs
        .iter()
        .zip(&resolved.paths)
        .map(|(p, parents)| (p.morph_id.as_str(), args.morphs.join(format!("{}.png", p.morph_id)), parents))
        .collect();
    let rows: Vec<Result<QualityRecord, (String, String)>> = pool.install(|| {
        jobs.par_iter()
            .map(|(id, morph, (a, b))| {
                let fail = |e: String| (id.to_string(), e);
                let im = load_png(morph).map_err(|e| fail(e.to_string()))?;
                let p1 = load_png(a).map_err(|e| fail(e.to_string()))?;
                let p2 = load_png(b).map_err(|e| fail(e.to_string()))?;
                morph_quality(id, &im, &p1, &p2, &params).map_err(|e| fail(e.to_string()))
            })
            .collect()
    });
    let ok: Vec<QualityRecord> = rows.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
    for (id, e) in rows.iter().filter_map(|r| r.as_ref().err()) {
        log::warn!("{id}: {e}");
    }

    create_out_dir(&args.out)?;
    write_manifest(&Command::Quality(args.clone()))?;
    let mut csv_buf = Vec::new();
    write_quality_csv(&rows, &mut csv_buf).map_err(|e| CliError::data(e.to_string()))?;
    write_file(&args.out.join("quality.csv"), &csv_buf)?;
    let summary = serde_json::to_string_pretty(&summarize_quality(&ok)).expect("summary serialises");
    write_file(&args.out.join("quality_summary.json"), summary.as_bytes())?;

    match ok.len() {
        0 => Err(CliError::data("no morph could be evaluated; see quality.csv")),
        n if n < rows.len() => Ok(Status::Partial),
        _ => Ok(Status::Ok),
    }
}

#[derive(Debug, Clone, PartialEq, clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MadArgs {
    /// Detector score CSV: class,score,generation_method,medium,split.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

/// Writes `mad_report.json` and `mad_grid.csv`.
pub fn cmd_mad(mut args: MadArgs) -> CmdResult {
    let pool = thread_pool(args.jobs)?;
    args.scores = require_file(&args.scores, "score file")?;
    args.out = check_out_dir(&args.out)?;
    let file = read_mad_csv(open(&args.scores)?).map_err(|e| CliError::data(format!("{}: {e}", args.scores.display())))?;
    if file.rows.is_empty() {
        return Err(CliError::data(format!("{} has no scores", args.scores.display())));
    }
    let cells = file.cells();
    let report = pool.install(|| {
        let mut evaluated: Vec<MadCell> = cells
            .par_iter()
            .flat_map_iter(|c| mad_grid_report(std::slice::from_ref(c)).cells)
            .collect();
        evaluated.sort_by(|x, y| x.key.cmp(&y.key));
        MadReport {
            cells: evaluated,
            ..mad_grid_report(&[])
        }
    });

    create_out_dir(&args.out)?;
    write_manifest(&Command::Mad(args.clone()))?;
    write_file(&args.out.join("mad_report.json"), report.to_json().as_bytes())?;
    let mut grid = Vec::new();
    report.write_grid_csv(&mut grid).map_err(|e| CliError::data(e.to_string()))?;
    write_file(&args.out.join("mad_grid.csv"), &grid)?;
    Ok(Status::Ok)
}

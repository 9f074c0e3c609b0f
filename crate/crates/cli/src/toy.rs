use std::fs;
use std::path::{Path, PathBuf};

use morphbench::io::{load_png, save_png, write_pairs, PairRecord};
use morphbench::mad::median_residual_score;
use morphbench::morph::toy_subject;
use serde::{Deserialize, Serialize};

use crate::morph::{parse_shape, ModelSource};
use crate::{
    check_out_dir, create_out_dir, require_dir, write_file, write_manifest, CliError, CmdResult, Command,
    Status,
};

#[derive(Debug, Clone, PartialEq, clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySubjectsArgs {
    /// `toy:<seed>` or a weight container file.
    #[arg(long)]
    pub models: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of subjects; consecutive subjects are paired.
    #[arg(long, default_value_t = 2)]
    pub count: usize,
    /// Subject `i` is rendered from the latent drawn with `seed + i`.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "18x512")]
    pub latent_shape: String,
    #[arg(long, default_value_t = 64)]
    pub image_side: usize,
    #[arg(long, default_value_t = 64)]
    pub embed_dim: usize,
}

/// Writes `subject_<i>.png` and `pairs.csv`.
pub fn cmd_toy_subjects(mut args: ToySubjectsArgs) -> CmdResult {
    if args.count < 2 {
        return Err(CliError::config("--count must be >= 2"));
    }
    let (r, c) = parse_shape(&args.latent_shape)?;
    let spec = morphbench::morph::ToySpec::new(args.image_side, (r, c), args.embed_dim);
    spec.validate().map_err(|e| CliError::config(e.to_string()))?;
    let (source, text) = ModelSource::resolve(&args.models)?;
    args.models = text;
    args.out = check_out_dir(&args.out)?;
    let models = source.load(spec)?;

    let images = (0..args.count)
        .map(|i| toy_subject(&models, args.seed + i as u64))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::compute(e.to_string()))?;

    create_out_dir(&args.out)?;
    write_manifest(&Command::ToySubjects(args.clone()))?;
    let name = |i: usize| format!("subject_{i:03}.png");
    for (i, img) in images.iter().enumerate() {
        save_png(img, args.out.join(name(i))).map_err(|e| CliError::data(e.to_string()))?;
    }
    let pairs: Vec<PairRecord> = (0..args.count / 2)
        .map(|k| PairRecord {
            morph_id: format!("m{k:03}"),
            subject1_image: name(2 * k),
            subject2_image: name(2 * k + 1),
        })
        .collect();
    write_pairs(args.out.join("pairs.csv"), &pairs).map_err(|e| CliError::data(e.to_string()))?;
    Ok(Status::Ok)
}

#[derive(Debug, Clone, PartialEq, clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MadBaselineArgs {
    /// Directory of bona fide PNGs.
    #[arg(long)]
    pub bonafide: PathBuf,
    /// Directory of morph PNGs.
    #[arg(long)]
    pub attack: PathBuf,
    /// Generation method of the attacks.
    #[arg(long)]
    pub method: String,
    #[arg(long, default_value = "digital")]
    pub medium: String,
    /// Training-method label of the detector.
    #[arg(long, default_value = "baseline")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn pngs(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(CliError::config(format!("{} holds no PNG files", dir.display())));
    }
    Ok(out)
}

/// Writes `mad_scores.csv` in the format read by `mad`.
pub fn cmd_mad_baseline(mut args: MadBaselineArgs) -> CmdResult {
    args.bonafide = require_dir(&args.bonafide, "bona fide directory")?;
    args.attack = require_dir(&args.attack, "attack directory")?;
    args.out = check_out_dir(&args.out)?;
    if args.method.is_empty() {
        return Err(CliError::config("--method must not be empty"));
    }
    let bona = pngs(&args.bonafide)?;
    let attack = pngs(&args.attack)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(morphbench::mad::MAD_HEADER).expect("in-memory write");
    for (class, files, method) in [("bonafide", &bona, ""), ("attack", &attack, args.method.as_str())] {
        for f in files {
            let img = load_png(f).map_err(|e| CliError::data(e.to_string()))?;
            let s = median_residual_score(&img).map_err(|e| CliError::data(format!("{}: {e}", f.display())))?;
            w.write_record([class, &s.to_string(), method, &args.medium, &args.split])
                .expect("in-memory write");
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;

    create_out_dir(&args.out)?;
    write_manifest(&Command::MadBaseline(args.clone()))?;
    write_file(&args.out.join("mad_scores.csv"), &bytes)?;
    Ok(Status::Ok)
}

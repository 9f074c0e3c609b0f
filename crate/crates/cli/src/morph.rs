use std::path::{Path, PathBuf};
use std::str::FromStr;

use morphbench::io::{load_png, read_pairs, save_png, PairRecord};
use morphbench::loss::LossWeights;
use morphbench::morph::{
    optimize_morph, read_model_weights, write_trace_csv, ModelBundle, MorphError, MorphResult,
    OptimizerConfig, ToyModels, ToySpec,
};
use morphbench::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{
    absolute, check_out_dir, create_out_dir, relative_to, require_file, thread_pool, write_file,
    write_manifest, CliError, CmdResult, Command, Status,
};

#[derive(Debug, Clone, PartialEq, clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphArgs {
    /// CSV with columns morph_id,subject1_image,subject2_image; image paths
    /// are relative to the CSV.
    #[arg(long)]
    pub pairs: PathBuf,
    /// `toy:<seed>` or a weight container file.
    #[arg(long)]
    pub models: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value_t = 0.0002)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 10.0)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda3: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda4: f64,
    #[arg(long, default_value_t = 150)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.03)]
    pub lr0: f64,
    #[arg(long, default_value_t = 0.95)]
    pub decay: f64,
    #[arg(long, default_value_t = 6)]
    pub decay_every: usize,
    /// Latent shape as RxC.
    #[arg(long, default_value = "18x512")]
    pub latent_shape: String,
    #[arg(long, default_value_t = 64)]
    pub image_side: usize,
    #[arg(long, default_value_t = 64)]
    pub embed_dim: usize,
}

impl MorphArgs {
    /// Defaults of every optional flag.
    pub fn new(pairs: impl Into<PathBuf>, models: impl Into<String>, out: impl Into<PathBuf>) -> Self {
        let d = OptimizerConfig::default();
        Self {
            pairs: pairs.into(),
            models: models.into(),
            out: out.into(),
            seed: d.seed,
            jobs: 1,
            lambda1: d.weights.lambda1,
            lambda2: d.weights.lambda2,
            lambda3: d.weights.lambda3,
            lambda4: d.weights.lambda4,
            iterations: d.iterations,
            lr0: d.lr0,
            decay: d.decay,
            decay_every: d.decay_every,
            latent_shape: "18x512".into(),
            image_side: 64,
            embed_dim: 64,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            iterations: self.iterations,
            lr0: self.lr0,
            decay: self.decay,
            decay_every: self.decay_every,
            weights: LossWeights {
                lambda1: self.lambda1,
                lambda2: self.lambda2,
                lambda3: self.lambda3,
                lambda4: self.lambda4,
            },
            seed: self.seed,
            ..OptimizerConfig::default()
        }
    }

    pub fn toy_spec(&self) -> Result<ToySpec, CliError> {
        let (r, c) = parse_shape(&self.latent_shape)?;
        Ok(ToySpec::new(self.image_side, (r, c), self.embed_dim))
    }
}

pub(crate) fn parse_shape(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::config(format!("latent shape must be RxC, got {s:?}"));
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let r: usize = r.trim().parse().map_err(|_| bad())?;
    let c: usize = c.trim().parse().map_err(|_| bad())?;
    Ok((r, c))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Toy(u64),
    File(PathBuf),
}

impl FromStr for ModelSource {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.strip_prefix("toy:") {
            Some(seed) => seed
                .parse()
                .map(ModelSource::Toy)
                .map_err(|_| CliError::config(format!("bad toy model seed in {s:?}"))),
            None if s.is_empty() => Err(CliError::config("--models is empty")),
            None => Ok(ModelSource::File(PathBuf::from(s))),
        }
    }
}

impl ModelSource {
    /// Validated source with an absolute path, still unloaded.
    pub(crate) fn resolve(s: &str) -> Result<(Self, String), CliError> {
        match s.parse()? {
            ModelSource::File(p) => {
                let p = require_file(&p, "model file")?;
                let text = p.to_string_lossy().into_owned();
                Ok((ModelSource::File(p), text))
            }
            toy => Ok((toy, s.to_string())),
        }
    }

    /// Loads the models; a weight file must match the requested spec.
    pub(crate) fn load(&self, spec: ToySpec) -> Result<ModelBundle, CliError> {
        match self {
            ModelSource::Toy(seed) => ToyModels::from_seed(*seed, spec)
                .map(|m| m.bundle())
                .map_err(|e| CliError::config(e.to_string())),
            ModelSource::File(p) => {
                let file = std::fs::File::open(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
                let models = read_model_weights(std::io::BufReader::new(file))
                    .map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
                let found = models.spec;
                if (found.image_side, found.latent_layers, found.latent_dims, found.embed_dim)
                    != (spec.image_side, spec.latent_layers, spec.latent_dims, spec.embed_dim)
                {
                    return Err(CliError::data(format!(
                        "{}: weights are for {}x{} latents, {}px images, {}-d embeddings; \
                         run configured for {}x{}, {}px, {}-d",
                        p.display(),
                        found.latent_layers,
                        found.latent_dims,
                        found.image_side,
                        found.embed_dim,
                        spec.latent_layers,
                        spec.latent_dims,
                        spec.image_side,
                        spec.embed_dim
                    )));
                }
                Ok(models.bundle())
            }
        }
    }
}

/// Morph ids become file names.
pub(crate) fn check_id(id: &str) -> Result<(), CliError> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(CliError::config(format!("morph_id {id:?} is not a safe file name")))
    }
}

pub(crate) struct ResolvedPairs {
    pub pairs: Vec<PairRecord>,
    pub paths: Vec<(PathBuf, PathBuf)>,
}

pub(crate) fn resolve_pairs(path: &Path) -> Result<ResolvedPairs, CliError> {
    let path = require_file(path, "pair list")?;
    let pairs = read_pairs(&path).map_err(|e| CliError::config(e.to_string()))?;
    if pairs.is_empty() {
        return Err(CliError::config(format!("{} lists no pairs", path.display())));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut paths = Vec::with_capacity(pairs.len());
    for p in &pairs {
        check_id(&p.morph_id)?;
        let a = relative_to(base, &p.subject1_image);
        let b = relative_to(base, &p.subject2_image);
        for img in [&a, &b] {
            if !img.is_file() {
                return Err(CliError::config(format!(
                    "morph {}: image {} does not exist",
                    p.morph_id,
                    img.display()
                )));
            }
        }
        paths.push((a, b));
    }
    Ok(ResolvedPairs { pairs, paths })
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    morph_id: &'a str,
    status: &'a str,
    iterations: usize,
    total_first: String,
    total_last: String,
    cos1_first: String,
    cos1_last: String,
    cos2_first: String,
    cos2_last: String,
    error: String,
}

fn summary_row<'a>(id: &'a str, outcome: &'a Result<MorphResult, MorphError>) -> SummaryRow<'a> {
    let trace = match outcome {
        Ok(r) => r.trace.as_slice(),
        Err(MorphError::Diverged { trace, .. }) => trace.as_slice(),
        Err(_) => &[],
    };
    let fmt = |f: fn(&morphbench::morph::TraceRow) -> f64, row: Option<&morphbench::morph::TraceRow>| {
        row.map(|r| f(r).to_string()).unwrap_or_default()
    };
    SummaryRow {
        morph_id: id,
        status: if outcome.is_ok() { "ok" } else { "failed" },
        iterations: trace.len(),
        total_first: fmt(|r| r.total, trace.first()),
        total_last: fmt(|r| r.total, trace.last()),
        cos1_first: fmt(|r| r.cos1, trace.first()),
        cos1_last: fmt(|r| r.cos1, trace.last()),
        cos2_first: fmt(|r| r.cos2, trace.first()),
        cos2_last: fmt(|r| r.cos2, trace.last()),
        error: outcome.as_ref().err().map(|e| e.to_string()).unwrap_or_default(),
    }
}

/// Per pair: `<id>.png` and `<id>.trace.csv`; plus `morphs.csv` and the
/// manifest. Exit 4 if any pair fails; the other pairs still complete.
pub fn cmd_morph(mut args: MorphArgs) -> CmdResult {
    let pool = thread_pool(args.jobs)?;
    let cfg = args.optimizer_config();
    cfg.validate().map_err(|e| CliError::config(e.to_string()))?;
    let spec = args.toy_spec()?;
    spec.validate().map_err(|e| CliError::config(e.to_string()))?;
    let (source, models_text) = ModelSource::resolve(&args.models)?;
    args.models = models_text;
    let resolved = resolve_pairs(&args.pairs)?;
    args.pairs = absolute(&args.pairs)?;
    args.out = check_out_dir(&args.out)?;

    let models = source.load(spec)?;
    let shape = models.image_shape();
    let load = |p: &Path| -> Result<Tensor, CliError> {
        let t = load_png(p).map_err(|e| CliError::data(e.to_string()))?;
        if t.shape() != shape {
            return Err(CliError::data(format!(
                "{}: image is {:?}, models expect {:?}",
                p.display(),
                t.shape(),
                shape
            )));
        }
        Ok(t)
    };
    let images = resolved
        .paths
        .iter()
        .map(|(a, b)| Ok((load(a)?, load(b)?)))
        .collect::<Result<Vec<_>, CliError>>()?;

    create_out_dir(&args.out)?;
    write_manifest(&Command::Morph(args.clone()))?;
    log::info!("morphing {} pairs with {} job(s)", images.len(), args.jobs);

    let outcomes: Vec<Result<MorphResult, MorphError>> = pool.install(|| {
        images
            .par_iter()
            .map(|(i1, i2)| optimize_morph(i1, i2, &models, &cfg))
            .collect()
    });

    let mut failures = 0;
    let mut summary = csv::Writer::from_writer(Vec::new());
    for (pair, outcome) in resolved.pairs.iter().zip(&outcomes) {
        let id = &pair.morph_id;
        let trace_path = args.out.join(format!("{id}.trace.csv"));
        match outcome {
            Ok(r) => {
                log::info!("{id}: {} iterations in {:.2?}", r.trace.len(), r.wall_time);
                save_png(&r.image, args.out.join(format!("{id}.png"))).map_err(|e| CliError::data(e.to_string()))?;
                write_trace(&trace_path, &r.trace)?;
            }
            Err(e) => {
                failures += 1;
                log::error!("{id}: {e}");
                if let MorphError::Diverged { trace, .. } = e {
                    write_trace(&trace_path, trace)?;
                }
            }
        }
        summary
            .serialize(summary_row(id, outcome))
            .map_err(|e| CliError::data(e.to_string()))?;
    }
    let bytes = summary.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    write_file(&args.out.join("morphs.csv"), &bytes)?;

    if failures > 0 {
        return Err(CliError::compute(format!(
            "{failures} of {} pairs failed; see morphs.csv",
            outcomes.len()
        )));
    }
    Ok(Status::Ok)
}

fn write_trace(path: &Path, trace: &[morphbench::morph::TraceRow]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_trace_csv(trace, &mut buf).map_err(|e| CliError::data(e.to_string()))?;
    write_file(path, &buf)
}

pub const ABLATION_DIRS: [&str; 4] = ["no_lambda1", "no_lambda2", "no_lambda3", "no_lambda4"];

/// Four morph runs, each with one λ set to zero, under `out/no_lambdaK`.
pub fn cmd_ablation(mut args: MorphArgs) -> CmdResult {
    args.out = check_out_dir(&args.out)?;
    let mut runs = Vec::new();
    for (k, dir) in ABLATION_DIRS.iter().enumerate() {
        let mut a = args.clone();
        match k {
            0 => a.lambda1 = 0.0,
            1 => a.lambda2 = 0.0,
            2 => a.lambda3 = 0.0,
            _ => a.lambda4 = 0.0,
        }
        a.out = args.out.join(dir);
        runs.push(a);
    }
    // validate everything once before any run writes output
    thread_pool(args.jobs)?;
    for a in &runs {
        a.optimizer_config().validate().map_err(|e| CliError::config(e.to_string()))?;
    }
    let (_, models_text) = ModelSource::resolve(&args.models)?;
    resolve_pairs(&args.pairs)?;
    args.models = models_text;
    args.pairs = absolute(&args.pairs)?;
    for a in &mut runs {
        a.models.clone_from(&args.models);
        a.pairs.clone_from(&args.pairs);
    }

    create_out_dir(&args.out)?;
    write_manifest(&Command::Ablation(args))?;
    let mut worst: Option<CliError> = None;
    for a in runs {
        if let Err(e) = cmd_morph(a) {
            log::error!("{e}");
            if worst.as_ref().is_none_or(|w| e.status.code() > w.status.code()) {
                worst = Some(e);
            }
        }
    }
    match worst {
        Some(e) => Err(e),
        None => Ok(Status::Ok),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_sources() {
        assert_eq!(parse_shape("18x512").unwrap(), (18, 512));
        assert_eq!(parse_shape("4X16").unwrap(), (4, 16));
        assert!(parse_shape("18*512").is_err());
        assert_eq!("toy:7".parse::<ModelSource>().unwrap(), ModelSource::Toy(7));
        assert!("toy:x".parse::<ModelSource>().is_err());
        assert_eq!(
            "w.mbw".parse::<ModelSource>().unwrap(),
            ModelSource::File(PathBuf::from("w.mbw"))
        );
    }

    #[test]
    fn unsafe_ids_rejected() {
        assert!(check_id("m_01.a").is_ok());
        for id in ["", "..", "a/b", "a b"] {
            assert!(check_id(id).is_err());
        }
    }
}

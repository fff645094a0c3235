use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use spine_enhance::io::{read_image, write_atomic, write_pfm, write_png8};
use spine_enhance::metrics::{MetricReport, MetricSuite, RegressorModel, DEFAULT_KERNEL, DEFAULT_RIDGE};
use spine_enhance::model::{Checkpoint, CheckpointMeta, NetParams, UNet};
use spine_enhance::preprocess::PreprocessParams;
use spine_enhance::synthetic::distortion_corpus;
use spine_enhance::training::{
    crop_spine_patch, iterative_enhance, run_ablation, train_run, AblationCell, AblationData, CropMode,
    IterationResult, IterationStatus, PatchSpec, Stage, Study, MAX_ITERATIONS,
};
use spine_enhance::{ImageGrid, ImageGrid32};
use tracing::{info, warn};

use crate::config::RunConfig;
use crate::inputs::{check_target, expand, image_name, stem};
use crate::manifest::RunManifest;
use crate::OutputArgs;

pub const CACHE_ENV: &str = "SPINE_ENHANCE_CACHE";
const REGRESSOR_FILE: &str = "brisque_regressor.toml";

fn write_image(path: &Path, img: &ImageGrid, lossless: bool) -> Result<()> {
    if lossless {
        write_pfm(path, img)?;
    } else {
        write_png8(path, img)?;
    }
    Ok(())
}

/// Runs `f` on every file in parallel; failures are logged and skipped.
/// Errors only when nothing succeeded.
fn for_each_image(files: &[PathBuf], f: impl Fn(&Path) -> Result<()> + Sync) -> Result<usize> {
    let failed: Vec<String> = files
        .par_iter()
        .filter_map(|p| f(p).err().map(|e| format!("{}: {e:#}", p.display())))
        .collect();
    for msg in &failed {
        warn!("skipped {msg}");
    }
    let done = files.len() - failed.len();
    if done == 0 {
        bail!("all {} inputs failed", files.len());
    }
    Ok(done)
}

fn checkpoint_path(run: &Path, t: usize) -> PathBuf {
    run.join("checkpoints").join(format!("iter{t}.ckpt"))
}

fn trace_csv(result: &IterationResult<f32>) -> String {
    let mut out = String::from("epoch,L,L1,L2\n");
    for row in &result.trace {
        out.push_str(&format!("{},{},{},{}\n", row.epoch, row.total, row.l1, row.l2));
    }
    out
}

fn load_checkpoints(run: &Path) -> Result<Vec<Checkpoint>> {
    let mut out = Vec::new();
    for t in 1..=MAX_ITERATIONS {
        let path = checkpoint_path(run, t);
        if !path.exists() {
            break;
        }
        out.push(Checkpoint::load(&path)?);
    }
    Ok(out)
}

fn load_training_patches(cfg: &RunConfig, pattern: &str) -> Result<Vec<ImageGrid32>> {
    let files = expand(&cfg.resolve(pattern))?;
    let patches: Vec<Option<ImageGrid32>> = files
        .par_iter()
        .map(|p| {
            read_image(p)
                .and_then(|img| crop_spine_patch(&img, &cfg.patch, CropMode::Train, None))
                .map(|g| g.cast())
                .map_err(|e| warn!("skipped {}: {e}", p.display()))
                .ok()
        })
        .collect();
    let patches: Vec<ImageGrid32> = patches.into_iter().flatten().collect();
    if patches.is_empty() {
        bail!("no readable training images");
    }
    Ok(patches)
}

fn load_named(pattern: &str) -> Result<Vec<(String, ImageGrid)>> {
    expand(pattern)?
        .par_iter()
        .map(|p| Ok((stem(p), read_image(p).with_context(|| format!("reading {}", p.display()))?)))
        .collect()
}

fn regressor(path: Option<&Path>) -> Result<RegressorModel> {
    if let Some(p) = path {
        return Ok(RegressorModel::load(p)?);
    }
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        let cached = Path::new(&dir).join(REGRESSOR_FILE);
        if cached.exists() {
            info!("using regressor {}", cached.display());
            return Ok(RegressorModel::load(&cached)?);
        }
    }
    Ok(RegressorModel::bundled())
}

fn write_reports(dir: &Path, name: &str, reports: &[MetricReport]) -> Result<()> {
    let reports_dir = dir.join("reports");
    write_atomic(&reports_dir.join(format!("{name}.json")), serde_json::to_string_pretty(reports)?.as_bytes())?;
    write_atomic(&reports_dir.join(format!("{name}.csv")), MetricReport::table_csv(reports).as_bytes())?;
    let mut cmp = String::from("method_a,method_b,metric,p_value\n");
    for c in reports.iter().flat_map(|r| &r.comparisons) {
        cmp.push_str(&format!("{},{},{},{}\n", c.method_a, c.method_b, c.metric.name(), c.p_value));
    }
    write_atomic(&reports_dir.join(format!("{name}-comparisons.csv")), cmp.as_bytes())?;
    Ok(())
}

pub fn preprocess(input: &str, out: &OutputArgs, config: Option<&Path>, lossless: bool) -> Result<()> {
    let files = expand(input)?;
    let params = match config {
        Some(p) => RunConfig::load(p)?.preprocess,
        None => PreprocessParams::default(),
    };
    let mut manifest = RunManifest::new("preprocess", &out.out);
    manifest.input = Some(input.to_string());
    manifest.config = config.map(|p| p.display().to_string());
    manifest.claim(&out.out, out.overwrite, false)?;
    let done = for_each_image(&files, |p| {
        let target = out.out.join(image_name(p, lossless));
        check_target(&target, out.overwrite)?;
        let img = read_image(p)?;
        write_image(&target, &spine_enhance::preprocess::preprocess(&img, &params)?, lossless)
    })?;
    info!("preprocessed {done} of {} images", files.len());
    Ok(())
}

pub fn train(config: &Path, out: &OutputArgs, seed: Option<u64>, resume: bool) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let spec = cfg.trained_spec();
    let mut finished: Vec<NetParams<f32>> = Vec::new();
    if resume {
        for ck in load_checkpoints(&out.out)? {
            if ck.spec != spec {
                bail!("checkpoint {} was trained with a different network", checkpoint_path(&out.out, ck.meta.iteration).display());
            }
            finished.push(ck.params_as());
        }
        if finished.len() >= cfg.train.iterations {
            info!("all {} iterations already trained; nothing to do", cfg.train.iterations);
            return Ok(());
        }
    } else if !out.overwrite && checkpoint_path(&out.out, 1).exists() {
        bail!("{} already holds checkpoints; pass --resume or --overwrite", out.out.display());
    }
    let mut manifest = RunManifest::new("train", &out.out);
    manifest.config = Some(config.display().to_string());
    manifest.input = Some(cfg.data.train.clone());
    manifest.seed = Some(cfg.train.seed);
    manifest.claim(&out.out, out.overwrite, resume)?;

    let raw = load_training_patches(&cfg, &cfg.data.train)?;
    info!(patches = raw.len(), resumed = finished.len(), "training");
    let results = train_run(&raw, &cfg.net, &cfg.train, &cfg.preprocess, &finished, |r| {
        write_atomic(&out.out.join("traces").join(format!("iter{}.csv", r.iteration)), trace_csv(r).as_bytes())?;
        if r.completed() {
            let meta = CheckpointMeta {
                iteration: r.iteration,
                epoch: r.trace.len(),
                seed: cfg.train.seed,
            };
            Checkpoint::new(spec.clone(), &r.params, meta).save(&checkpoint_path(&out.out, r.iteration))?;
            let last = r.trace.last().map(|row| row.total).unwrap_or(f64::NAN);
            info!(iteration = r.iteration, loss = last, "iteration finished");
        }
        Ok(())
    })?;
    if let Some(IterationStatus::Aborted { epoch, step, reason }) = results.last().map(|r| &r.status) {
        bail!("training aborted at epoch {epoch}, step {step}: {reason}; earlier checkpoints are kept");
    }
    Ok(())
}

pub fn enhance(
    input: &str,
    out: &OutputArgs,
    run: &Path,
    iterations: Option<usize>,
    config: Option<&Path>,
    lossless: bool,
) -> Result<()> {
    let files = expand(input)?;
    let cfg = config.map(RunConfig::load).transpose()?;
    let stages: Vec<Stage<f32>> = load_checkpoints(run)?
        .into_iter()
        .map(|ck| Stage {
            net: UNet::new(ck.spec.clone()),
            params: ck.params_as(),
        })
        .collect();
    if stages.is_empty() {
        bail!("no checkpoints under {}", run.join("checkpoints").display());
    }
    let t = iterations.unwrap_or(stages.len());
    if t > stages.len() {
        bail!("iteration {t} requested but only {} checkpoints are available", stages.len());
    }
    let default_prep = PreprocessParams::default();
    let prep = match &cfg {
        Some(c) => c.preprocessing(),
        None => Some(&default_prep),
    };
    let mut manifest = RunManifest::new("enhance", &out.out);
    manifest.input = Some(input.to_string());
    manifest.config = config.map(|p| p.display().to_string());
    manifest.claim(&out.out, out.overwrite, false)?;
    let done = for_each_image(&files, |p| {
        let target = out.out.join(image_name(p, lossless));
        check_target(&target, out.overwrite)?;
        let img: ImageGrid32 = read_image(p)?.cast();
        let y = iterative_enhance(&img, &stages, t, prep)?;
        write_image(&target, &y.cast(), lossless)
    })?;
    info!("enhanced {done} of {} images with {t} iterations", files.len());
    Ok(())
}

pub struct EvaluateArgs<'a> {
    pub input: &'a str,
    pub out: &'a OutputArgs,
    pub compare: Option<&'a str>,
    pub regressor: Option<&'a Path>,
    pub method: &'a str,
    pub crop: bool,
    pub config: Option<&'a Path>,
}

pub fn evaluate(args: EvaluateArgs<'_>) -> Result<()> {
    let patch = match args.config {
        Some(p) => RunConfig::load(p)?.patch,
        None => PatchSpec::default(),
    };
    let suite = MetricSuite {
        regressor: regressor(args.regressor)?,
        ..MetricSuite::default()
    };
    let load = |pattern: &str| -> Result<Vec<(String, ImageGrid)>> {
        let items = load_named(pattern)?;
        if !args.crop {
            return Ok(items);
        }
        items
            .into_iter()
            .map(|(id, img)| Ok((id, crop_spine_patch(&img, &patch, CropMode::Eval, None)?)))
            .collect()
    };
    let items = load(args.input)?;
    let other = args.compare.map(load).transpose()?;
    if let Some(o) = &other {
        if o.len() != items.len() {
            bail!("--compare matched {} images but --in matched {}", o.len(), items.len());
        }
    }
    let mut manifest = RunManifest::new("evaluate", &args.out.out);
    manifest.input = Some(args.input.to_string());
    manifest.config = args.config.map(|p| p.display().to_string());
    manifest.claim(&args.out.out, args.out.overwrite, false)?;

    let mut reports = vec![suite.report(args.method, &items)?];
    if let Some(o) = other {
        let reference = suite.report("compare", &o)?;
        reports[0].comparisons = reports[0].compare(&reference)?;
        reports.push(reference);
    }
    for r in &reports {
        write_atomic(
            &args.out.out.join("reports").join(format!("{}-images.csv", r.method)),
            r.rows_csv().as_bytes(),
        )?;
    }
    write_reports(&args.out.out, "report", &reports)?;
    info!(images = items.len(), "evaluation written to {}", args.out.out.join("reports").display());
    Ok(())
}

fn study_name(study: Study) -> String {
    serde_json::to_value(study)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| format!("{study:?}"))
}

pub fn ablate(
    config: &Path,
    out: &OutputArgs,
    studies: &[Study],
    seed: Option<u64>,
    regressor_path: Option<&Path>,
) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let Some(eval_glob) = cfg.data.eval.clone() else {
        bail!("config has no data.eval glob of held-out images");
    };
    let suite = MetricSuite {
        regressor: regressor(regressor_path)?,
        ..MetricSuite::default()
    };
    let mut manifest = RunManifest::new("ablate", &out.out);
    manifest.config = Some(config.display().to_string());
    manifest.input = Some(cfg.data.train.clone());
    manifest.seed = Some(cfg.train.seed);
    manifest.claim(&out.out, out.overwrite, false)?;

    let train = load_training_patches(&cfg, &cfg.data.train)?;
    let eval: Vec<(String, ImageGrid32)> = load_named(&cfg.resolve(&eval_glob))?
        .into_iter()
        .map(|(id, img)| (id, img.cast()))
        .collect();
    let data = AblationData {
        train: &train,
        eval: &eval,
        spec: &cfg.net,
        prep: &cfg.preprocess,
        patch: &cfg.patch,
    };
    // one call so every study shares the trained configurations
    let grids: Vec<Vec<AblationCell>> = studies.iter().map(|&s| AblationCell::for_study(s, &cfg.train)).collect();
    let cells: Vec<AblationCell> = grids.iter().flatten().cloned().collect();
    let mut reports = run_ablation(&data, &cfg.train, &cells, &suite)?.into_iter();
    for (study, grid) in studies.iter().zip(&grids) {
        let part: Vec<MetricReport> = reports.by_ref().take(grid.len()).collect();
        let name = format!("ablation-{}", study_name(*study));
        write_reports(&out.out, &name, &part)?;
        print!("{}", MetricReport::table_csv(&part));
    }
    Ok(())
}

pub fn report(input: &str, out: &OutputArgs) -> Result<()> {
    let mut reports = Vec::new();
    for path in expand(input)? {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let items = match value {
            serde_json::Value::Array(items) => items,
            other => vec![other],
        };
        for item in items {
            let r = MetricReport::from_json(&item.to_string()).with_context(|| format!("in {}", path.display()))?;
            reports.push(r);
        }
    }
    let mut manifest = RunManifest::new("report", &out.out);
    manifest.input = Some(input.to_string());
    manifest.claim(&out.out, out.overwrite, false)?;
    write_reports(&out.out, "summary", &reports)?;
    print!("{}", MetricReport::table_csv(&reports));
    Ok(())
}

fn read_labels(path: &Path) -> Result<Vec<(ImageGrid, f64)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let rows: Vec<(PathBuf, f64)> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|line| {
            let (file, score) = line.rsplit_once(',')?;
            // header and malformed rows have no numeric score
            let score: f64 = score.trim().parse().ok()?;
            Some((base.join(file.trim()), score))
        })
        .collect();
    if rows.is_empty() {
        bail!("{} has no `path,score` rows", path.display());
    }
    rows.par_iter()
        .map(|(p, s)| Ok((read_image(p).with_context(|| format!("reading {}", p.display()))?, *s)))
        .collect()
}

pub fn fit_brisque(
    labels: Option<&Path>,
    out: Option<&Path>,
    overwrite: bool,
    sources: usize,
    size: usize,
    seed: u64,
) -> Result<()> {
    let target = match (out, std::env::var_os(CACHE_ENV)) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(dir)) => Path::new(&dir).join(REGRESSOR_FILE),
        (None, None) => bail!("pass --out or set {CACHE_ENV}"),
    };
    check_target(&target, overwrite)?;
    let (items, description) = match labels {
        Some(p) => (read_labels(p)?, format!("kernel ridge on {}", p.display())),
        None => (
            distortion_corpus(sources, size, seed)?,
            format!("kernel ridge on the synthetic distortion corpus ({sources} sources, {size} px, seed {seed})"),
        ),
    };
    info!(samples = items.len(), "fitting regressor");
    let mut model = RegressorModel::fit_images(&items, DEFAULT_KERNEL, DEFAULT_RIDGE)?;
    model.description = description;
    model.save(&target)?;
    info!("regressor written to {}", target.display());
    Ok(())
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use tearnet::data::{gen_dataset, write_ply, Dataset, DatasetConfig, Sample, Split};
use tearnet::downstream::{
    count_cv, count_rows, dk_analysis, extract_codes, presence_cv, write_dk_csv, write_results_csv,
    CodewordTable, ResultRow, SvmConfig,
};
use tearnet::geometry::resample as resample_surface;
use tearnet::nets::{gradient_check, Model, ModelCheckpoint};
use tearnet::train::{self, Stage, TrainConfig, EVAL_EMD_POINTS};
use tearnet::{ModelConfig, Variant};

use crate::config::{resolve, CliError, CliResult, Run};
use crate::Common;

fn need<T: Clone>(v: &Option<T>, flag: &str) -> CliResult<T> {
    v.clone().ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn seed_of(c: &Common) -> CliResult<u64> {
    need(&c.seed, "seed")
}

fn out_of(c: &Common) -> CliResult<PathBuf> {
    need(&c.out, "out")
}

fn parse_split(s: &Option<String>, default: Split) -> CliResult<Split> {
    match s.as_deref() {
        None => Ok(default),
        Some("train") => Ok(Split::Train),
        Some("test") => Ok(Split::Test),
        Some(o) => Err(CliError::Usage(format!("split must be `train` or `test`, got `{o}`"))),
    }
}

fn parse_variant(s: &str) -> CliResult<Variant> {
    Ok(s.parse::<Variant>()?)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| tearnet::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| tearnet::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn load_split(manifest: &Path, split: Split) -> CliResult<(Dataset, Vec<Sample<f32>>)> {
    let ds = Dataset::open(manifest)?;
    let samples = ds.load::<f32>(split)?;
    if samples.is_empty() {
        return Err(CliError::Usage(format!(
            "{} has no {} clouds",
            manifest.display(),
            split.name()
        )));
    }
    Ok((ds, samples))
}

// ---------------------------------------------------------------- synth

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthOpts {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Override the preset's training-split size.
    #[arg(long)]
    pub train: Option<usize>,
    /// Override the preset's test-split size.
    #[arg(long)]
    pub test: Option<usize>,
    /// Override the points per cloud.
    #[arg(long)]
    pub points: Option<usize>,
}

pub fn synth(flags: SynthOpts) -> CliResult<()> {
    let o = resolve(&flags, flags.common.config.as_deref())?;
    let seed = seed_of(&o.common)?;
    let out = out_of(&o.common)?;
    let mut cfg = DatasetConfig::preset(o.common.preset.as_deref().unwrap_or("torus"))?;
    cfg.train = o.train.unwrap_or(cfg.train);
    cfg.test = o.test.unwrap_or(cfg.test);
    cfg.points = o.points.unwrap_or(cfg.points);
    let mut run = Run::new("synth", &o, Some(seed));
    let manifest = gen_dataset(&out, &cfg, seed)?;
    println!(
        "wrote {} train + {} test clouds of {} points; manifest {}",
        cfg.train,
        cfg.test,
        cfg.points,
        manifest.display()
    );
    run.outputs.push(manifest);
    run.finish(&out)
}

// ---------------------------------------------------------------- train

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOpts {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// `pretrain` or `finetune` (default: finetune when --pretrained is set).
    #[arg(long)]
    pub stage: Option<String>,
    /// Decoder variant (default: FoldingNet to pretrain, TearingNet to finetune).
    #[arg(long)]
    pub variant: Option<String>,
    /// Dataset manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Checkpoint to finetune from.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    pub max_steps: Option<usize>,
}

pub fn train(flags: TrainOpts) -> CliResult<()> {
    let o = resolve(&flags, flags.common.config.as_deref())?;
    let seed = seed_of(&o.common)?;
    let out = out_of(&o.common)?;
    let manifest = need(&o.manifest, "manifest")?;
    let stage = match o.stage.as_deref() {
        Some("pretrain") => Stage::Pretrain,
        Some("finetune") => Stage::Finetune,
        None if o.pretrained.is_some() => Stage::Finetune,
        None => Stage::Pretrain,
        Some(other) => {
            return Err(CliError::Usage(format!(
                "stage must be `pretrain` or `finetune`, got `{other}`"
            )))
        }
    };
    let mut cfg = TrainConfig::preset(o.common.preset.as_deref().unwrap_or("desk"), stage, seed)?;
    if let Some(v) = &o.variant {
        cfg.variant = parse_variant(v)?;
    }
    cfg.epochs = o.epochs.unwrap_or(cfg.epochs);
    cfg.lr = o.lr.unwrap_or(cfg.lr);
    cfg.batch_size = o.batch_size.unwrap_or(cfg.batch_size);
    cfg.max_steps = o.max_steps.or(cfg.max_steps);
    cfg.manifest = Some(manifest.clone());
    cfg.pretrained = o.pretrained.clone();

    let mut run = Run::new("train", &cfg, Some(seed));
    let (_, samples) = load_split(&manifest, Split::Train)?;
    let clouds: Vec<_> = samples.into_iter().map(|s| s.cloud).collect();
    run.inputs.push(manifest);
    let report = match stage {
        Stage::Pretrain => train::pretrain(&cfg, &clouds, Some(&out))?,
        Stage::Finetune => {
            let path = need(&cfg.pretrained, "pretrained")?;
            let ck = ModelCheckpoint::<f32>::load(&path)?;
            run.inputs.push(path);
            train::finetune(&cfg, &ck, &clouds, Some(&out))?
        }
    };
    println!(
        "{} {}: {} steps, train loss {:.6} -> {:.6} (best epoch {})",
        stage.name(),
        cfg.variant,
        report.steps,
        report.initial_loss,
        report.final_loss,
        report.best_epoch
    );
    for f in ["best.json", "last.json", "log.csv"] {
        run.outputs.push(out.join(f));
    }
    run.finish(&out)
}

// ---------------------------------------------------------------- eval

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOpts {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Checkpoint(s) to evaluate; one metrics row each.
    #[arg(long, required = false)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// `train` or `test` (default).
    #[arg(long)]
    pub split: Option<String>,
    /// Points per cloud used for EMD.
    #[arg(long)]
    pub emd_points: Option<usize>,
}

pub fn eval(flags: EvalOpts) -> CliResult<()> {
    let o = resolve(&flags, flags.common.config.as_deref())?;
    let seed = seed_of(&o.common)?;
    let out = out_of(&o.common)?;
    let manifest = need(&o.manifest, "manifest")?;
    if o.checkpoint.is_empty() {
        return Err(CliError::Usage("at least one --checkpoint is required".into()));
    }
    let split = parse_split(&o.split, Split::Test)?;
    let mut run = Run::new("eval", &o, Some(seed));
    let (ds, samples) = load_split(&manifest, split)?;
    run.inputs.push(manifest);
    let clouds: Vec<_> = samples.iter().map(|s| s.cloud.clone()).collect();
    let mut reports = Vec::new();
    let mut scores = String::from("variant,scene_id,k,cd,emd,kept,edges,components\n");
    for path in &o.checkpoint {
        let (model, _) = Model::<f32>::load(path)?;
        run.inputs.push(path.clone());
        let name = format!("{}-{}", ds.manifest.config.name, split.name());
        let r = train::evaluate(&model, &clouds, &name, seed, o.emd_points.unwrap_or(EVAL_EMD_POINTS))?;
        println!("{}: CD {:.4} (x1e-2)  EMD {:.4}", r.variant, r.cd, r.emd);
        for (s, sc) in samples.iter().zip(&r.scores) {
            let _ = writeln!(
                scores,
                "{},{},{},{},{},{},{},{}",
                r.variant, s.item.id, s.item.count, sc.cd, sc.emd, sc.kept, sc.edges, sc.components
            );
        }
        reports.push(r);
    }
    let metrics = out.join("metrics.csv");
    train::write_metrics_csv(&metrics, &reports)?;
    let per_cloud = out.join("scores.csv");
    write_text(&per_cloud, &scores)?;
    run.outputs.extend([metrics, per_cloud]);
    run.finish(&out)
}

// ---------------------------------------------------------------- reconstruct / resample

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructOpts {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// `train` or `test` (default: test, or train when the test split is empty).
    #[arg(long)]
    pub split: Option<String>,
    /// Scene indices within the split (default: 0).
    #[arg(long, value_delimiter = ',')]
    pub scenes: Vec<usize>,
}

fn default_split(manifest: &Path, given: &Option<String>) -> CliResult<Split> {
    if given.is_some() {
        return parse_split(given, Split::Test);
    }
    let m = tearnet::data::Manifest::load(manifest)?;
    Ok(if m.items(Split::Test).next().is_some() {
        Split::Test
    } else {
        Split::Train
    })
}

fn pick<'a>(samples: &'a [Sample<f32>], index: usize) -> CliResult<&'a Sample<f32>> {
    samples.iter().find(|s| s.item.index == index).ok_or_else(|| {
        CliError::Usage(format!("scene {index} is out of range ({} scenes)", samples.len()))
    })
}

pub fn reconstruct(flags: ReconstructOpts) -> CliResult<()> {
    let o = resolve(&flags, flags.common.config.as_deref())?;
    let seed = seed_of(&o.common)?;
    let out = out_of(&o.common)?;
    let manifest = need(&o.manifest, "manifest")?;
    let ck = need(&o.checkpoint, "checkpoint")?;
    let split = default_split(&manifest, &o.split)?;
    let mut run = Run::new("reconstruct", &o, Some(seed));
    let (model, _) = Model::<f32>::load(&ck)?;
    let (_, samples) = load_split(&manifest, split)?;
    run.inputs.extend([manifest, ck]);
    let scenes = if o.scenes.is_empty() { vec![0] } else { o.scenes.clone() };
    for i in scenes {
        let s = pick(&samples, i)?;
        let dir = out.join(&s.item.id);
        let d = model.reconstruct(&s.cloud)?;
        let input = dir.join("input.ply");
        write_ply(&input, &s.cloud, None)?;
        run.outputs.push(input);
        run.outputs.extend(d.export(&dir)?);
        println!(
            "{}: {} points, {} graph edges -> {}",
            s.item.id,
            d.output.len(),
            d.graph.edge_count(),
            dir.display()
        );
    }
    run.finish(&out)
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleOpts {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// Scene index within the split (default: 0).
    #[arg(long)]
    pub scene: Option<usize>,
    /// Points to draw (default: 4096).
    #[arg(long)]
    pub count: Option<usize>,
}

pub fn resample(flags: ResampleOpts) -> CliResult<()> {
    let o = resolve(&flags, flags.common.config.as_deref())?;
    let seed = seed_of(&o.common)?;
    let out = out_of(&o.common)?;
    let manifest = need(&o.manifest, "manifest")?;
    let ck = need(&o.checkpoint, "checkpoint")?;
    let split = default_split(&manifest, &o.split)?;
    let mut run = Run::new("resample", &o, Some(seed));
    let (model, _) = Model::<f32>::load(&ck)?;
    let (_, samples) = load_split(&manifest, split)?;
    run.inputs.extend([manifest, ck]);
    let s = pick(&samples, o.scene.unwrap_or(0))?;
    let d = model.reconstruct(&s.cloud)?;
    let cfg = model.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = o.count.unwrap_or(4096);
    let cloud = resample_surface(&model, &d.code, count, cfg.grid_dim, cfg.spacing, &d.graph, &mut rng)?;
    let path = out.join(format!("{}-resampled.ply", s.item.id));
    write_ply(&path, &cloud, None)?;
    println!("{}: {} points -> {}", s.item.id, cloud.len(), path.display());
    run.outputs.push(path);
    run.finish(&out)
}

// ---------------------------------------------------------------- codewords

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CodesOpts {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// `train` or `test` (default).
    #[arg(long)]
    pub split: Option<String>,
}

pub fn codes(flags: CodesOpts) -> CliResult<()> {
    let o = resolve(&flags, flags.common.config.as_deref())?;
    let seed = seed_of(&o.common)?;
    let out = out_of(&o.common)?;
    let manifest = need(&o.manifest, "manifest")?;
    let ck = need(&o.checkpoint, "checkpoint")?;
    let split = parse_split(&o.split, Split::Test)?;
    let mut run = Run::new("codes", &o, Some(seed));
    let (model, _) = Model::<f32>::load(&ck)?;
    let (_, samples) = load_split(&manifest, split)?;
    run.inputs.extend([manifest, ck]);
    let table = extract_codes(&model, &samples)?;
    let path = out.join("codes.csv");
    table.write_csv(&path)?;
    println!("{} codewords of length {} -> {}", table.len(), table.dim(), path.display());
    run.outputs.push(path);
    run.finish(&out)
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CountOpts {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Codeword table written by `codes`.
    #[arg(long)]
    pub codes: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Classifier C (inverse regularization).
    #[arg(long)]
    pub c: Option<f64>,
    /// Classifier passes over the training fold.
    #[arg(long)]
    pub svm_epochs: Option<usize>,
    /// Name written in the results' variant column.
    #[arg(long)]
    pub label: Option<String>,
}

pub fn count(flags: CountOpts) -> CliResult<()> {
    let o = resolve(&flags, flags.common.config.as_deref())?;
    let seed = seed_of(&o.common)?;
    let out = out_of(&o.common)?;
    let path = need(&o.codes, "codes")?;
    let mut run = Run::new("count", &o, Some(seed));
    let table = CodewordTable::read_csv(&path)?;
    run.inputs.push(path);
    let defaults = SvmConfig::default();
    let svm = SvmConfig {
        c: o.c.unwrap_or(defaults.c),
        epochs: o.svm_epochs.unwrap_or(defaults.epochs),
        seed,
    };
    let folds = o.folds.unwrap_or(4);
    let label = o.label.clone().unwrap_or_else(|| "codes".into());
    let cv = count_cv(&table, folds, &svm, seed)?;
    println!(
        "counting MAE (x1e-1): {:.3}  constant {:.3}  majority {:.3}  chance {:.3}  shuffled {:.3}",
        cv.mae * 10.0,
        cv.constant_mae * 10.0,
        cv.majority_mae * 10.0,
        cv.chance_mae * 10.0,
        cv.shuffled_mae * 10.0
    );
    let mut rows = count_rows(&cv, "count", &label, seed);
    if let Some(col) = table.presence_names.iter().position(|n| n == "torus") {
        let (err, base) = presence_cv(&table, col, folds, &svm, seed)?;
        println!("torus presence (analog task) error rate: {err:.3}  majority {base:.3}");
        rows.push(ResultRow::new("presence_torus_analog", &label, "error_rate", err, seed));
        rows.push(ResultRow::new("presence_torus_analog", &label, "majority_error_rate", base, seed));
    }
    let results = out.join("results.csv");
    write_results_csv(&results, &rows)?;
    run.outputs.push(results);
    run.finish(&out)
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DkOpts {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub codes: Option<PathBuf>,
}

pub fn dk(flags: DkOpts) -> CliResult<()> {
    let o = resolve(&flags, flags.common.config.as_deref())?;
    let out = out_of(&o.common)?;
    let path = need(&o.codes, "codes")?;
    let mut run = Run::new("dk", &o, o.common.seed);
    let table = CodewordTable::read_csv(&path)?;
    run.inputs.push(path);
    let rows = dk_analysis(&table)?;
    for r in &rows {
        println!("k={} n={} d_k={:.4} +/- {:.4} (raw {:.4})", r.k, r.n, r.dk, r.stderr, r.raw);
    }
    let csv = out.join("dk.csv");
    write_dk_csv(&csv, &rows)?;
    run.outputs.push(csv);
    run.finish(&out)
}

// ---------------------------------------------------------------- gradcheck

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckOpts {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Only this variant (default: all).
    #[arg(long)]
    pub variant: Option<String>,
    /// Seeds per variant, starting at --seed (default: 20).
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Largest accepted relative error (default: 1e-4).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Coordinates probed per parameter tensor (default: 3).
    #[arg(long)]
    pub per_tensor: Option<usize>,
}

pub fn gradcheck(flags: GradcheckOpts) -> CliResult<()> {
    let o = resolve(&flags, flags.common.config.as_deref())?;
    let seed = seed_of(&o.common)?;
    let preset = o.common.preset.clone().unwrap_or_else(|| "tiny".into());
    let variants = match &o.variant {
        Some(v) => vec![parse_variant(v)?],
        None => Variant::ALL.to_vec(),
    };
    let seeds = o.seeds.unwrap_or(20);
    let tol = o.tol.unwrap_or(1e-4);
    let per_tensor = o.per_tensor.unwrap_or(3);
    let run = Run::new("gradcheck", &o, Some(seed));
    let mut csv = String::from("variant,seed,max_rel_err,checked,skipped\n");
    let mut failed = Vec::new();
    for v in variants {
        let cfg = ModelConfig::preset(&preset, v)?;
        let mut merged = tearnet::numeric::gradcheck::GradCheckReport::default();
        for s in seed..seed + seeds {
            let r = gradient_check(&cfg, s, 0.15, per_tensor)?;
            let _ = writeln!(csv, "{v},{s},{},{},{}", r.max_rel_err, r.checked, r.skipped);
            merged.merge(r);
        }
        println!(
            "{v}: max relative error {:.3e} over {seeds} seeds ({} coordinates, {} near kinks skipped)",
            merged.max_rel_err, merged.checked, merged.skipped
        );
        if !merged.passes(tol) {
            failed.push(format!("{v}: {:.3e} at {:?}", merged.max_rel_err, merged.worst));
        }
    }
    if let Some(out) = &o.common.out {
        let path = out.join("gradcheck.csv");
        write_text(&path, &csv)?;
        let mut run = run;
        run.outputs.push(path);
        run.finish(out)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("tolerance {tol:e} exceeded: {}", failed.join("; "))))
    }
}

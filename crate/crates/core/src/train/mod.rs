//! Two-stage training (fold-only pretraining, then end-to-end finetuning),
//! checkpointed runs and test-set evaluation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud3;
use crate::error::{Error, Result};
use crate::metrics::{chamfer_aug, emd_subsampled, CD_REPORT_SCALE};
use crate::nets::{Model, ModelCheckpoint, ModelConfig, Variant};
use crate::numeric::{AdamState, ParamStore, Scalar};

/// Default subsample size for EMD during evaluation.
pub const EVAL_EMD_POINTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }
}

/// One training run. Mirrors the TOML/JSON config files accepted by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub variant: Variant,
    /// Model preset (`tiny`, `desk`, `full`).
    pub preset: String,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many optimizer steps even mid-epoch.
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Dataset manifest.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Checkpoint to start from (required for finetuning).
    #[serde(default)]
    pub pretrained: Option<PathBuf>,
    /// Architecture override; defaults to the preset.
    #[serde(default)]
    pub model: Option<ModelConfig>,
}

impl TrainConfig {
    /// Stage defaults for a preset: the reference schedule is 640 epochs at
    /// 2e-4 for pretraining and 480 epochs at 1e-6 for finetuning, batch 32.
    pub fn preset(preset: &str, stage: Stage, seed: u64) -> Result<Self> {
        let (epochs, lr, batch_size) = match (preset, stage) {
            ("full", Stage::Pretrain) => (640, 2e-4, 32),
            ("full", Stage::Finetune) => (480, 1e-6, 32),
            ("desk", Stage::Pretrain) => (40, 1e-3, 8),
            ("desk", Stage::Finetune) => (20, 2e-4, 8),
            ("tiny", Stage::Pretrain) => (3, 1e-3, 2),
            ("tiny", Stage::Finetune) => (2, 1e-3, 2),
            (other, _) => {
                return Err(Error::invalid(format!(
                    "unknown training preset `{other}` (known: tiny, desk, full)"
                )))
            }
        };
        Ok(Self {
            stage,
            variant: match stage {
                Stage::Pretrain => Variant::FoldingNet,
                Stage::Finetune => Variant::TearingNet,
            },
            preset: preset.to_string(),
            epochs,
            lr,
            batch_size,
            seed,
            max_steps: None,
            manifest: None,
            pretrained: None,
            model: None,
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = match &self.model {
            Some(m) => m.with_variant(self.variant),
            None => ModelConfig::preset(&self.preset, self.variant)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.lr)));
        }
        self.model_config()?;
        Ok(())
    }
}

/// One row of the per-epoch log. Epoch 0 is the loss of the starting
/// parameters over the training set, before any update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_time: f64,
}

pub fn write_log_csv(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut s = String::from("epoch,mean_loss,wall_time\n");
    for r in log {
        s.push_str(&format!("{},{},{:.3}\n", r.epoch, r.mean_loss, r.wall_time));
    }
    write_file(path, s.as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainReport<T: Scalar> {
    pub model: Model<T>,
    pub adam: AdamState<T>,
    pub log: Vec<EpochLog>,
    pub steps: usize,
    /// Loss of the starting parameters over the training set.
    pub initial_loss: f64,
    /// Loss of the final parameters over the training set.
    pub final_loss: f64,
    pub best_epoch: usize,
    pub best_loss: f64,
}

/// Mean loss of `model` over `data` (order-fixed reduction).
pub fn mean_loss<T: Scalar>(model: &Model<T>, data: &[PointCloud3<T>]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty set"));
    }
    let losses: Vec<T> = data.par_iter().map(|c| model.loss(c)).collect::<Result<_>>()?;
    Ok(losses.iter().map(|l| l.as_f64()).sum::<f64>() / data.len() as f64)
}

/// Seed for the shuffle of `epoch`, derived from the run seed.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (epoch as u64).wrapping_add(1).wrapping_mul(0xd1b5_4a32_d192_ed03)
}

/// Train the encoder and fold network of a fold-only model from scratch.
pub fn pretrain<T: Scalar>(
    cfg: &TrainConfig,
    data: &[PointCloud3<T>],
    out: Option<&Path>,
) -> Result<TrainReport<T>> {
    if cfg.stage != Stage::Pretrain {
        return Err(Error::invalid("pretrain called with a finetune config"));
    }
    if cfg.variant.has_tear() {
        return Err(Error::invalid(format!(
            "pretraining runs without the tearing network; {} has one",
            cfg.variant
        )));
    }
    cfg.validate()?;
    let model = Model::new(cfg.model_config()?, cfg.seed)?;
    run(cfg, model, data, out)
}

/// Load the pretrained encoder and fold network into `cfg.variant` and train
/// everything end to end.
pub fn finetune<T: Scalar>(
    cfg: &TrainConfig,
    pretrained: &ModelCheckpoint<T>,
    data: &[PointCloud3<T>],
    out: Option<&Path>,
) -> Result<TrainReport<T>> {
    if cfg.stage != Stage::Finetune {
        return Err(Error::invalid("finetune called with a pretrain config"));
    }
    cfg.validate()?;
    let model = Model::from_pretrained(cfg.model_config()?, cfg.seed, &pretrained.params)?;
    run(cfg, model, data, out)
}

fn save<T: Scalar>(
    model: &Model<T>,
    cfg: &TrainConfig,
    epoch: usize,
    loss: Option<f64>,
    eval_loss: Option<f64>,
    adam: Option<&AdamState<T>>,
    path: &Path,
) -> Result<()> {
    let mut ck = model.checkpoint(cfg.stage.name(), epoch, cfg.seed, loss, adam.cloned());
    ck.header.eval_loss = eval_loss;
    ck.save(path)
}

/// Shared epoch loop. With `out`, writes `log.csv`, `best.json` and
/// `last.json` there (plus `last_good.json` if the loss blows up).
pub fn run<T: Scalar>(
    cfg: &TrainConfig,
    mut model: Model<T>,
    data: &[PointCloud3<T>],
    out: Option<&Path>,
) -> Result<TrainReport<T>> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let start = Instant::now();
    let mut adam = AdamState::new(&model.params, cfg.lr);
    let initial_loss = mean_loss(&model, data)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        mean_loss: initial_loss,
        wall_time: start.elapsed().as_secs_f64(),
    }];
    let mut best = (0, initial_loss);
    if let Some(dir) = out {
        save(&model, cfg, 0, None, Some(initial_loss), None, &dir.join("best.json"))?;
    }
    let mut steps = 0;
    let mut order: Vec<usize> = (0..data.len()).collect();
    'epochs: for epoch in 1..=cfg.epochs {
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch)));
        let mut total = 0.0;
        let mut seen = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PointCloud3<T>> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grads) = model.arch.batch_loss_and_grad(&model.params, &batch)?;
            let loss = loss.as_f64();
            let bad_grad = grads.iter().any(|g| !g.all_finite());
            if !loss.is_finite() || bad_grad {
                if let Some(dir) = out {
                    save(&model, cfg, epoch - 1, None, None, Some(&adam), &dir.join("last_good.json"))?;
                    write_log_csv(&dir.join("log.csv"), &log)?;
                }
                return Err(Error::NonFiniteLoss { epoch, step: b });
            }
            adam.step(&mut model.params, &grads)?;
            total += loss * batch.len() as f64;
            seen += batch.len();
            steps += 1;
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                log.push(EpochLog {
                    epoch,
                    mean_loss: total / seen as f64,
                    wall_time: start.elapsed().as_secs_f64(),
                });
                break 'epochs;
            }
        }
        let mean = total / seen as f64;
        log::info!("{} {} epoch {epoch}: loss {mean:.6}", cfg.stage.name(), cfg.variant);
        log.push(EpochLog {
            epoch,
            mean_loss: mean,
            wall_time: start.elapsed().as_secs_f64(),
        });
        if mean < best.1 {
            best = (epoch, mean);
            if let Some(dir) = out {
                save(&model, cfg, epoch, Some(mean), None, None, &dir.join("best.json"))?;
            }
        }
    }
    let final_loss = if steps == 0 {
        initial_loss
    } else {
        mean_loss(&model, data)?
    };
    if let Some(dir) = out {
        let last_epoch = log.last().map_or(0, |r| r.epoch);
        let train_loss = (steps > 0).then(|| log.last().unwrap().mean_loss);
        save(&model, cfg, last_epoch, train_loss, Some(final_loss), Some(&adam), &dir.join("last.json"))?;
        write_log_csv(&dir.join("log.csv"), &log)?;
    }
    Ok(TrainReport {
        model,
        adam,
        log,
        steps,
        initial_loss,
        final_loss,
        best_epoch: best.0,
        best_loss: best.1,
    })
}

/// Per-cloud evaluation numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudScore {
    /// Augmented Chamfer distance (raw, not rescaled).
    pub cd: f64,
    pub emd: f64,
    /// Points left after isolated-point removal.
    pub kept: usize,
    /// Edges of the (possibly torn) graph.
    pub edges: usize,
    /// Connected components with at least two vertices.
    pub components: usize,
}

/// Mean metrics over a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub variant: Variant,
    pub seed: u64,
    /// Mean augmented Chamfer distance, multiplied by [`CD_REPORT_SCALE`].
    pub cd: f64,
    pub emd: f64,
    pub scores: Vec<CloudScore>,
}

impl EvalReport {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.dataset, self.variant, self.cd, self.emd, self.seed)
    }
}

pub const METRICS_HEADER: &str = "dataset,variant,CD,EMD,seed";

/// Write a metrics CSV. EMD is normalized by the matched point count.
pub fn write_metrics_csv(path: &Path, rows: &[EvalReport]) -> Result<()> {
    let mut s = format!("# EMD is the mean matched distance per point; CD is scaled by {CD_REPORT_SCALE}\n");
    s.push_str(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    write_file(path, s.as_bytes())
}

/// Components with at least two vertices.
pub fn nontrivial_components<T: Scalar>(g: &crate::geometry::SparseGraph<T>) -> usize {
    let (labels, count) = crate::geometry::connected_components(g);
    let mut sizes = vec![0usize; count];
    for l in labels {
        sizes[l] += 1;
    }
    sizes.into_iter().filter(|&s| s >= 2).count()
}

/// Score one reconstruction. Tearing variants drop isolated points first.
pub fn score_cloud<T: Scalar>(
    model: &Model<T>,
    input: &PointCloud3<T>,
    emd_points: usize,
    emd_seed: u64,
) -> Result<CloudScore> {
    let d = model.reconstruct(input)?;
    let recon = d.cleaned_output().cast::<f64>();
    let x = input.cast::<f64>();
    let cd = chamfer_aug(&x, &recon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(emd_seed);
    let emd = emd_subsampled(&x, &recon, emd_points, &mut rng)?;
    Ok(CloudScore {
        cd,
        emd,
        kept: recon.len(),
        edges: d.graph.edge_count(),
        components: nontrivial_components(&d.graph),
    })
}

/// Mean CD (rescaled) and EMD of `model` over `data`.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    data: &[PointCloud3<T>],
    dataset: &str,
    seed: u64,
    emd_points: usize,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let scores: Vec<CloudScore> = data
        .par_iter()
        .enumerate()
        .map(|(i, c)| score_cloud(model, c, emd_points, seed ^ (i as u64).wrapping_mul(0x2545_f491_4f6c_dd1d)))
        .collect::<Result<_>>()?;
    let n = scores.len() as f64;
    Ok(EvalReport {
        dataset: dataset.to_string(),
        variant: model.variant(),
        seed,
        cd: CD_REPORT_SCALE * scores.iter().map(|s| s.cd).sum::<f64>() / n,
        emd: scores.iter().map(|s| s.emd).sum::<f64>() / n,
        scores,
    })
}

/// Parameters equal, tensor by tensor (used to verify zero-epoch runs).
pub fn same_params<T: Scalar>(a: &ParamStore<T>, b: &ParamStore<T>) -> bool {
    a.shapes() == b.shapes() && a.tensors().iter().zip(b.tensors()).all(|(x, y)| x.data() == y.data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_torus, TorusSpec};

    fn tori(n: usize, points: usize) -> Vec<PointCloud3<f64>> {
        (0..n)
            .map(|i| gen_torus(&TorusSpec::new(1 + i % 3, points, i as u64)).unwrap())
            .collect()
    }

    fn tiny(stage: Stage, variant: Variant) -> TrainConfig {
        TrainConfig {
            variant,
            ..TrainConfig::preset("tiny", stage, 7).unwrap()
        }
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let data = tori(3, 40);
        let cfg = TrainConfig {
            epochs: 0,
            ..tiny(Stage::Pretrain, Variant::FoldingNet)
        };
        let r = pretrain(&cfg, &data, None).unwrap();
        let init = Model::<f64>::new(cfg.model_config().unwrap(), cfg.seed).unwrap();
        assert!(same_params(&r.model.params, &init.params));
        assert_eq!(r.steps, 0);
        assert_eq!(r.initial_loss, r.final_loss);
    }

    #[test]
    fn resumed_checkpoint_reproduces_logged_loss() {
        let data = tori(4, 40);
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(Stage::Pretrain, Variant::FoldingNet);
        let r = pretrain(&cfg, &data, Some(dir.path())).unwrap();
        let (m, ck) = Model::<f64>::load(&dir.path().join("last.json")).unwrap();
        assert_eq!(ck.header.eval_loss, Some(r.final_loss));
        let again = run(&TrainConfig { epochs: 0, ..cfg.clone() }, m, &data, None).unwrap();
        assert_eq!(again.initial_loss, r.final_loss);
        let log = fs::read_to_string(dir.path().join("log.csv")).unwrap();
        assert_eq!(log.lines().count(), 1 + 1 + cfg.epochs);
    }

    #[test]
    fn finetune_starts_from_pretrained_loss() {
        let data = tori(4, 40);
        let cfg = tiny(Stage::Pretrain, Variant::FoldingNet);
        let r = pretrain(&cfg, &data, None).unwrap();
        let ck = r.model.checkpoint("pretrain", 3, 7, None, None);
        let ft = TrainConfig {
            seed: 99,
            ..tiny(Stage::Finetune, Variant::TearingNetNoGf)
        };
        let f = finetune(&ft, &ck, &data, None).unwrap();
        assert_eq!(f.initial_loss, r.final_loss);
        let t_moved = f
            .model
            .params
            .iter()
            .filter(|(n, _)| n.starts_with("tear.s2.2."))
            .any(|(_, t)| t.data().iter().any(|v| *v != 0.0));
        assert!(t_moved, "tear output layer never received a gradient");
    }

    #[test]
    fn finetune_rejects_mismatched_checkpoint() {
        let data = tori(2, 30);
        let mut small = ModelConfig::tiny(Variant::FoldingNet);
        small.code_dim = 5;
        let m = Model::<f64>::new(small, 1).unwrap();
        let ck = m.checkpoint("pretrain", 0, 1, None, None);
        let err = finetune(&tiny(Stage::Finetune, Variant::TearingNet), &ck, &data, None).unwrap_err();
        assert!(matches!(err, Error::Mismatch(_)), "{err}");
        assert!(err.to_string().contains("[5,") || err.to_string().contains(", 5]"), "{err}");
    }

    #[test]
    fn pretrain_rejects_tearing_variant() {
        let cfg = tiny(Stage::Pretrain, Variant::TearingNet);
        assert!(pretrain::<f64>(&cfg, &tori(1, 20), None).is_err());
    }

    #[test]
    fn evaluation_is_repeatable() {
        let data = tori(3, 40);
        let m = Model::<f64>::new(ModelConfig::tiny(Variant::TearingNet), 3).unwrap();
        let a = evaluate(&m, &data, "t", 1, 16).unwrap();
        let b = evaluate(&m, &data, "t", 1, 16).unwrap();
        assert_eq!(a.csv_row(), b.csv_row());
        assert!(a.cd > 0.0 && a.emd > 0.0);
    }
}

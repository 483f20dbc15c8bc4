//! Encoder, folding and tearing networks and their assembly into the decoder
//! variants.
//!
//! Parameters live in a [`ParamStore`] separate from the [`Architecture`], so
//! the same wiring can be evaluated on perturbed copies (finite differences)
//! or on a store loaded from disk.

mod config;
mod decoded;
mod layers;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud3;
use crate::error::{Error, Result};
use crate::geometry::{
    grid_graph, make_grid, tear_and_filter, tear_graph, PointDecoder, PointSet2, SparseGraph,
};
use crate::metrics::chamfer_loss;
use crate::numeric::{AdamState, Bound, Checkpoint, ParamStore, Scalar, Tape, Tensor, Var};

pub use config::{ModelConfig, Variant, VariantConfig};
pub use decoded::{Decoded, DecodedStage};
pub use layers::{Linear, PointMlp, PointwiseLinear};

/// PointNet encoder: shared per-point MLP, max-pool over points, then an MLP
/// on the pooled feature.
#[derive(Debug, Clone)]
pub struct Encoder {
    point: PointMlp,
    head: PointMlp,
}

impl Encoder {
    fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let point = PointMlp::new(store, "enc.point", &[3], None, &cfg.encoder_widths, true, false, rng);
        let mut head_widths = cfg.encoder_head.clone();
        head_widths.push(cfg.code_dim);
        let pooled = *cfg.encoder_widths.last().unwrap();
        let head = PointMlp::new(store, "enc.head", &[pooled], None, &head_widths, false, false, rng);
        Self { point, head }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.point.forward(tape, p, &[x], None)?;
        let g = tape.max_rows(h)?;
        self.head.forward(tape, p, &[g], None)
    }
}

/// Two-stage point-wise folding network: `[u; c] -> y`, then `[y; c] -> x`.
#[derive(Debug, Clone)]
pub struct Folder {
    stage1: PointMlp,
    stage2: PointMlp,
}

impl Folder {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        point_width: usize,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut widths = cfg.fold_hidden.clone();
        widths.push(3);
        let d = Some(cfg.code_dim);
        Self {
            stage1: PointMlp::new(store, &format!("{name}.s1"), &[point_width], d, &widths, false, false, rng),
            stage2: PointMlp::new(store, &format!("{name}.s2"), &[3], d, &widths, false, false, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, pts: Var, code: Var) -> Result<Var> {
        let y = self.stage1.forward(tape, p, &[pts], Some(code))?;
        self.stage2.forward(tape, p, &[y], Some(code))
    }
}

/// Two-stage tearing network producing a residual 2D displacement.
///
/// Stage 1 maps `[u; x; c]` to a mid-width feature, stage 2 maps
/// `[u; x; c; t1]` to the displacement. Stage 2's last layer starts at zero,
/// so an untrained tear leaves the grid where it is.
#[derive(Debug, Clone)]
pub struct Tearer {
    stage1: PointMlp,
    stage2: PointMlp,
}

impl Tearer {
    fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = Some(cfg.code_dim);
        let mut w1 = cfg.tear_hidden.clone();
        w1.push(cfg.tear_mid);
        let mut w2 = cfg.tear_hidden.clone();
        w2.push(2);
        Self {
            stage1: PointMlp::new(store, "tear.s1", &[2, 3], d, &w1, false, false, rng),
            stage2: PointMlp::new(store, "tear.s2", &[2, 3, cfg.tear_mid], d, &w2, false, true, rng),
        }
    }

    /// `u + T(u, x; c)`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        u: Var,
        x: Var,
        code: Var,
    ) -> Result<Var> {
        if tape.value(u).rows() != tape.value(x).rows() {
            return Err(Error::shape(
                "tear",
                format!(
                    "{} grid points for {} 3D points",
                    tape.value(u).rows(),
                    tape.value(x).rows()
                ),
            ));
        }
        let t1 = self.stage1.forward(tape, p, &[u, x], Some(code))?;
        let du = self.stage2.forward(tape, p, &[u, x, t1], Some(code))?;
        tape.add(u, du)
    }
}

/// One fold evaluation recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapeStage {
    /// Superscript of the fold output (`x^(index)`).
    pub index: usize,
    /// The 2D points that were folded; `None` when the fold took 3D input.
    pub coords: Option<Var>,
    pub x: Var,
}

/// Everything one decode recorded on a tape.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub code: Var,
    pub u0: Var,
    pub stages: Vec<TapeStage>,
    pub filtered: Option<Var>,
    pub torn: Option<SparseGraph<T>>,
    /// The variant's final output (the loss target).
    pub output: Var,
}

/// Network wiring for one [`ModelConfig`], independent of parameter values.
#[derive(Debug, Clone)]
pub struct Architecture<T> {
    pub config: ModelConfig,
    encoder: Encoder,
    fold: Folder,
    fold2: Option<Folder>,
    tear: Option<Tearer>,
    grid: PointSet2<T>,
    grid_graph: SparseGraph<T>,
}

impl<T: Scalar> Architecture<T> {
    /// Build the wiring and a freshly initialized parameter store.
    ///
    /// Parameters are created in a fixed order (encoder, fold, second fold,
    /// tear), so two variants built from the same seed share identical
    /// encoder and fold initializations.
    pub fn build(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let variant = config.variant.variant;
        let encoder = Encoder::new(&mut store, &config, &mut rng);
        let fold = Folder::new(&mut store, "fold", 2, &config, &mut rng);
        let fold2 = (variant == Variant::CascadedF)
            .then(|| Folder::new(&mut store, "fold2", 3, &config, &mut rng));
        let tear = variant
            .has_tear()
            .then(|| Tearer::new(&mut store, &config, &mut rng));
        let grid = make_grid(config.grid_dim, config.spacing)?;
        let grid_graph = grid_graph(&grid, &config.graph)?;
        Ok((
            Self {
                config,
                encoder,
                fold,
                fold2,
                tear,
                grid,
                grid_graph,
            },
            store,
        ))
    }

    pub fn variant(&self) -> Variant {
        self.config.variant.variant
    }

    pub fn grid(&self) -> &PointSet2<T> {
        &self.grid
    }

    pub fn grid_graph(&self) -> &SparseGraph<T> {
        &self.grid_graph
    }

    pub fn encode_on(&self, tape: &mut Tape<T>, p: &Bound, input: Var) -> Result<Var> {
        let v = tape.value(input);
        if v.shape().len() != 2 || v.cols() != 3 {
            return Err(Error::shape("encode", format!("expected n x 3 input, got {:?}", v.shape())));
        }
        if v.rows() == 0 {
            return Err(Error::invalid("cannot encode an empty point cloud"));
        }
        self.encoder.forward(tape, p, input)
    }

    fn check_code(&self, tape: &Tape<T>, code: Var) -> Result<()> {
        let shape = tape.value(code).shape();
        if shape != [1, self.config.code_dim] {
            return Err(Error::shape(
                "decode",
                format!("codeword of shape {shape:?}, expected [1, {}]", self.config.code_dim),
            ));
        }
        Ok(())
    }

    /// Point-wise part of the decoder applied to arbitrary 2D points `u0`.
    fn unroll(&self, tape: &mut Tape<T>, p: &Bound, code: Var, u0: Var) -> Result<Vec<TapeStage>> {
        self.check_code(tape, code)?;
        let mut stages = Vec::with_capacity(3);
        match self.variant() {
            Variant::FoldingNet => {
                let x = self.fold.forward(tape, p, u0, code)?;
                stages.push(TapeStage { index: 1, coords: Some(u0), x });
            }
            Variant::CascadedF => {
                let x1 = self.fold.forward(tape, p, u0, code)?;
                stages.push(TapeStage { index: 1, coords: Some(u0), x: x1 });
                let f2 = self.fold2.as_ref().expect("cascaded model has a second fold");
                let x2 = f2.forward(tape, p, x1, code)?;
                stages.push(TapeStage { index: 2, coords: None, x: x2 });
            }
            Variant::TearingNetTf => {
                let tear = self.tear.as_ref().expect("tearing model has a tear net");
                let m = tape.value(u0).rows();
                let zeros = tape.constant(Tensor::zeros(&[m, 3]));
                let u1 = tear.forward(tape, p, u0, zeros, code)?;
                let x2 = self.fold.forward(tape, p, u1, code)?;
                stages.push(TapeStage { index: 2, coords: Some(u1), x: x2 });
            }
            Variant::TearingNet | Variant::TearingNetNoGf | Variant::TearingNet3 => {
                let tear = self.tear.as_ref().expect("tearing model has a tear net");
                let mut u = u0;
                let mut x = self.fold.forward(tape, p, u0, code)?;
                stages.push(TapeStage { index: 1, coords: Some(u0), x });
                for index in 2..=self.variant().folds() {
                    u = tear.forward(tape, p, u, x, code)?;
                    x = self.fold.forward(tape, p, u, code)?;
                    stages.push(TapeStage { index, coords: Some(u), x });
                }
            }
        }
        Ok(stages)
    }

    /// Full decode of `code` over the primitive grid.
    pub fn decode_on(&self, tape: &mut Tape<T>, p: &Bound, code: Var) -> Result<Trace<T>> {
        let u0 = tape.constant(self.grid.to_tensor());
        let stages = self.unroll(tape, p, code, u0)?;
        let last = *stages.last().expect("at least one fold");
        let (filtered, torn) = if self.config.variant.graph_filter {
            let coords = last.coords.expect("filter variants fold 2D points last");
            let out = tear_and_filter(
                tape,
                last.x,
                coords,
                &self.grid_graph,
                &self.config.graph,
                T::lit(self.config.lambda),
            )?;
            (Some(out.output), Some(out.torn))
        } else {
            (None, None)
        };
        Ok(Trace {
            code,
            u0,
            stages,
            filtered,
            torn,
            output: filtered.unwrap_or(last.x),
        })
    }

    /// Encode `input`, decode, and record the augmented Chamfer loss against
    /// the variant's final output.
    pub fn loss_on(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        input: &PointCloud3<T>,
    ) -> Result<(Var, Trace<T>)> {
        let x = tape.constant(input.to_tensor());
        let code = self.encode_on(tape, p, x)?;
        let trace = self.decode_on(tape, p, code)?;
        let loss = chamfer_loss(tape, x, trace.output)?;
        Ok((loss, trace))
    }

    pub fn loss(&self, params: &ParamStore<T>, input: &PointCloud3<T>) -> Result<T> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let (loss, _) = self.loss_on(&mut tape, &p, input)?;
        Ok(tape.value(loss).item())
    }

    /// Loss and one gradient tensor per parameter (store order).
    pub fn loss_and_grad(
        &self,
        params: &ParamStore<T>,
        input: &PointCloud3<T>,
    ) -> Result<(T, Vec<Tensor<T>>)> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let (loss, _) = self.loss_on(&mut tape, &p, input)?;
        let grads = tape.backward(loss)?;
        let out = p.vars().iter().map(|v| grads.get_or_zero(&tape, *v)).collect();
        Ok((tape.value(loss).item(), out))
    }

    /// Mean loss and mean gradient over a batch. Elements may be evaluated on
    /// worker threads; the reduction always runs in batch order, so the result
    /// does not depend on the worker count.
    pub fn batch_loss_and_grad(
        &self,
        params: &ParamStore<T>,
        batch: &[&PointCloud3<T>],
    ) -> Result<(T, Vec<Tensor<T>>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let per: Vec<(T, Vec<Tensor<T>>)> = batch
            .par_iter()
            .map(|c| self.loss_and_grad(params, c))
            .collect::<Result<_>>()?;
        let mut iter = per.into_iter();
        let (mut loss, mut grads) = iter.next().unwrap();
        for (l, g) in iter {
            loss += l;
            for (a, b) in grads.iter_mut().zip(&g) {
                a.add_assign(b);
            }
        }
        let inv = T::one() / T::lit(batch.len() as f64);
        for g in &mut grads {
            g.scale_in_place(inv);
        }
        Ok((loss * inv, grads))
    }

    pub fn encode(&self, params: &ParamStore<T>, input: &PointCloud3<T>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let x = tape.constant(input.to_tensor());
        let code = self.encode_on(&mut tape, &p, x)?;
        Ok(tape.value(code).data().to_vec())
    }

    pub fn decode(&self, params: &ParamStore<T>, code: &[T]) -> Result<Decoded<T>> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let c = tape.constant(Tensor::row_vector(code));
        let trace = self.decode_on(&mut tape, &p, c)?;
        self.materialize(&tape, &trace)
    }

    pub fn reconstruct(&self, params: &ParamStore<T>, input: &PointCloud3<T>) -> Result<Decoded<T>> {
        let code = self.encode(params, input)?;
        self.decode(params, &code)
    }

    /// Copy the tape values of a decode into plain point sets and compute the
    /// torn graph for tearing variants that skip the filter.
    pub fn materialize(&self, tape: &Tape<T>, trace: &Trace<T>) -> Result<Decoded<T>> {
        let stages: Vec<DecodedStage<T>> = trace
            .stages
            .iter()
            .map(|s| {
                Ok(DecodedStage {
                    index: s.index,
                    coords: s.coords.map(|u| PointSet2::from_tensor(tape.value(u))).transpose()?,
                    x: PointCloud3::from_tensor(tape.value(s.x))?,
                })
            })
            .collect::<Result<_>>()?;
        let torn = match (&trace.torn, self.variant().has_tear()) {
            (Some(g), _) => Some(g.clone()),
            (None, true) => {
                let last = stages.last().unwrap();
                let u = last.coords.as_ref().expect("tear variants fold 2D points");
                Some(self.tear_positions(u, &last.x)?)
            }
            (None, false) => None,
        };
        Ok(Decoded {
            variant: self.variant(),
            grid_dim: self.config.grid_dim,
            code: tape.value(trace.code).data().to_vec(),
            u0: self.grid.clone(),
            stages,
            filtered: trace
                .filtered
                .map(|v| PointCloud3::from_tensor(tape.value(v)))
                .transpose()?,
            output: PointCloud3::from_tensor(tape.value(trace.output))?,
            graph: torn.unwrap_or_else(|| self.grid_graph.clone()),
            torn: self.variant().has_tear(),
        })
    }

    fn tear_positions(&self, u: &PointSet2<T>, x: &PointCloud3<T>) -> Result<SparseGraph<T>> {
        use crate::geometry::TearMode;
        match self.config.graph.mode {
            TearMode::Weight5d => {
                let p: Vec<[T; 5]> = u
                    .points
                    .iter()
                    .zip(&x.points)
                    .map(|(a, b)| [a[0], a[1], b[0], b[1], b[2]])
                    .collect();
                tear_graph(&self.grid_graph, &p, &self.config.graph)
            }
            TearMode::Distance2d { .. } => tear_graph(&self.grid_graph, &u.points, &self.config.graph),
        }
    }

    /// Decode arbitrary primitive-square samples (no graph filter; it needs
    /// the grid graph).
    pub fn decode_samples(
        &self,
        params: &ParamStore<T>,
        code: &[T],
        samples: &[[T; 2]],
    ) -> Result<Vec<[T; 3]>> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let c = tape.constant(Tensor::row_vector(code));
        let u = tape.constant(Tensor::from_rows(samples));
        let stages = self.unroll(&mut tape, &p, c, u)?;
        Ok(tape.value(stages.last().unwrap().x).to_rows::<3>())
    }
}

/// Run metadata stored next to the parameters in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub config: ModelConfig,
    /// Training stage that produced the parameters (`init`, `pretrain`, `finetune`).
    pub stage: String,
    pub epoch: usize,
    pub seed: u64,
    /// Mean training loss of the last completed epoch.
    pub loss: Option<f64>,
    /// Mean loss of these exact parameters over the training split.
    #[serde(default)]
    pub eval_loss: Option<f64>,
}

pub type ModelCheckpoint<T> = Checkpoint<T, ModelHeader>;

/// Architecture plus parameter values.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub arch: Architecture<T>,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let (arch, params) = Architecture::build(config, seed)?;
        Ok(Self { arch, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn variant(&self) -> Variant {
        self.arch.variant()
    }

    /// Initialize `config` from `seed`, then take every encoder and fold
    /// parameter from `pretrained`. Tear parameters keep their fresh
    /// initialization (zero final layer).
    pub fn from_pretrained(config: ModelConfig, seed: u64, pretrained: &ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(config, seed)?;
        let mut problems = Vec::new();
        for (name, t) in pretrained.iter() {
            match model.params.id(name) {
                None => problems.push(format!("`{name}` {:?} has no counterpart", t.shape())),
                Some(id) if model.params.get(id).shape() != t.shape() => problems.push(format!(
                    "`{name}` is {:?} in the checkpoint but {:?} in the model",
                    t.shape(),
                    model.params.get(id).shape()
                )),
                Some(_) => {}
            }
        }
        for (name, t) in model.params.iter() {
            if !name.starts_with("tear.") && pretrained.id(name).is_none() {
                problems.push(format!("`{name}` {:?} missing from the checkpoint", t.shape()));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Mismatch(format!(
                "checkpoint does not fit {}: {}",
                model.variant(),
                problems.join("; ")
            )));
        }
        model.params.copy_shared_from(pretrained)?;
        Ok(model)
    }

    pub fn loss(&self, input: &PointCloud3<T>) -> Result<T> {
        self.arch.loss(&self.params, input)
    }

    pub fn encode(&self, input: &PointCloud3<T>) -> Result<Vec<T>> {
        self.arch.encode(&self.params, input)
    }

    pub fn decode(&self, code: &[T]) -> Result<Decoded<T>> {
        self.arch.decode(&self.params, code)
    }

    pub fn reconstruct(&self, input: &PointCloud3<T>) -> Result<Decoded<T>> {
        self.arch.reconstruct(&self.params, input)
    }

    pub fn checkpoint(
        &self,
        stage: &str,
        epoch: usize,
        seed: u64,
        loss: Option<f64>,
        adam: Option<AdamState<T>>,
    ) -> ModelCheckpoint<T> {
        Checkpoint::new(
            ModelHeader {
                config: self.config().clone(),
                stage: stage.to_string(),
                epoch,
                seed,
                loss,
                eval_loss: None,
            },
            self.params.clone(),
            adam,
        )
    }

    /// Rebuild a model from a checkpoint, checking every parameter shape
    /// against the stored configuration.
    pub fn from_checkpoint(ck: &ModelCheckpoint<T>) -> Result<Self> {
        let (arch, fresh) = Architecture::build(ck.header.config.clone(), ck.header.seed)?;
        if fresh.shapes() != ck.params.shapes() {
            let want = fresh.shapes();
            let got = ck.params.shapes();
            let mut diffs = Vec::new();
            for (name, shape) in &want {
                match got.get(name) {
                    Some(s) if s == shape => {}
                    Some(s) => diffs.push(format!("`{name}`: {s:?} stored, {shape:?} expected")),
                    None => diffs.push(format!("`{name}` missing")),
                }
            }
            for name in got.keys().filter(|n| !want.contains_key(*n)) {
                diffs.push(format!("`{name}` unexpected"));
            }
            return Err(Error::Mismatch(format!(
                "checkpoint parameters do not match its configuration: {}",
                diffs.join("; ")
            )));
        }
        Ok(Self {
            arch,
            params: ck.params.clone(),
        })
    }

    pub fn load(path: &Path) -> Result<(Self, ModelCheckpoint<T>)> {
        let ck = ModelCheckpoint::<T>::load(path)?;
        Ok((Self::from_checkpoint(&ck)?, ck))
    }
}

impl<T: Scalar> PointDecoder<T> for Model<T> {
    fn decode_points(&self, code: &[T], samples: &[[T; 2]]) -> Result<Vec<[T; 3]>> {
        self.arch.decode_samples(&self.params, code, samples)
    }
}

/// Points in the random cloud used by [`gradient_check`].
pub const GRADCHECK_POINTS: usize = 24;

/// Finite-difference check of the full loss gradient for `config` (f64).
///
/// Every parameter, the zero-initialized tear layer included, is jittered by
/// up to `jitter` so that no branch sits at a degenerate start. The cloud and
/// the probed coordinates are drawn from `seed`.
pub fn gradient_check(
    config: &ModelConfig,
    seed: u64,
    jitter: f64,
    per_tensor: usize,
) -> Result<crate::numeric::gradcheck::GradCheckReport> {
    use rand::Rng;
    let (arch, mut params) = Architecture::<f64>::build(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-jitter..jitter);
        }
    }
    let x = PointCloud3::new(
        (0..GRADCHECK_POINTS)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect(),
    );
    let (_, grads) = arch.loss_and_grad(&params, &x)?;
    crate::numeric::gradcheck::check_gradients(&params, &grads, |p| arch.loss(p, &x), per_tensor, &mut rng)
}

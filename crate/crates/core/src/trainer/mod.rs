//! Training loop: windowed rollouts, AdamW over three parameter partitions,
//! per-partition OneCycle schedules, best/last checkpoints.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalcli::Checkpoint;
use crate::models::{Model, ModelConfig, ModelKind, Scaler};
use crate::netcore::{ParamStore, Partition, Tape, Tensor};
use crate::objective::{window_loss, LossConfig};
use crate::systems::{SplitKind, SystemKind, Trajectory, TrajectoryDataset};

pub const DIV_FACTOR: f64 = 25.0;
pub const FINAL_DIV_FACTOR: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRates {
    pub main: f64,
    pub gate: f64,
    pub generator: f64,
}

impl LearningRates {
    pub fn uniform(lr: f64) -> Self {
        Self {
            main: lr,
            gate: lr,
            generator: lr,
        }
    }

    pub fn for_partition(&self, p: Partition) -> f64 {
        match p {
            Partition::Main => self.main,
            Partition::Gate => self.gate,
            Partition::Generator => self.generator,
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            main: f(self.main),
            gate: f(self.gate),
            generator: f(self.generator),
        }
    }
}

fn default_samples() -> usize {
    30
}
fn default_warmup() -> f64 {
    0.1
}
fn default_wd() -> f64 {
    1e-4
}
fn default_sobolev() -> u32 {
    1
}
fn default_clip() -> Option<f64> {
    Some(10.0)
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lrs: LearningRates,
    pub alpha: f64,
    #[serde(default = "default_sobolev")]
    pub sobolev_k: u32,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_samples")]
    pub samples_per_traj: usize,
    #[serde(default = "default_warmup")]
    pub warmup_ratio: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    /// Snapshots between consecutive window samples. `None` spreads the window
    /// over the whole trajectory, anchored at the first snapshot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_stride: Option<usize>,
    #[serde(default = "default_clip", skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl TrainConfig {
    pub fn preset(system: SystemKind, kind: ModelKind) -> Self {
        let (lrs, alpha, epochs, stride) = match system {
            SystemKind::Pendulum => (LearningRates { main: 0.005, gate: 0.001, generator: 0.005 }, 0.1, 100, 5),
            SystemKind::Lorenz63 => (LearningRates { main: 0.005, gate: 0.001, generator: 0.005 }, 1.0, 200, 1),
            SystemKind::Lorenz96 => (LearningRates { main: 0.005, gate: 0.001, generator: 0.005 }, 0.1, 500, 1),
            SystemKind::Ks => (LearningRates::uniform(0.001), 1.0, 500, 1),
        };
        let (lrs, alpha) = match (kind, system) {
            (ModelKind::KoopGen, _) => (lrs, alpha),
            (ModelKind::Lran, SystemKind::Ks) => (LearningRates::uniform(0.001), 0.1),
            (ModelKind::Lran, _) => (LearningRates::uniform(0.001), alpha),
            (ModelKind::DeepKoopman, SystemKind::Ks) => (LearningRates::uniform(0.0001), alpha),
            (ModelKind::DeepKoopman, _) => (LearningRates::uniform(0.001), alpha),
        };
        Self {
            lrs,
            alpha,
            sobolev_k: default_sobolev(),
            epochs,
            batch_size: 128,
            samples_per_traj: default_samples(),
            warmup_ratio: default_warmup(),
            weight_decay: default_wd(),
            seed: 0,
            window_stride: Some(stride),
            grad_clip: default_clip(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            k: self.sobolev_k,
        }
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for p in Partition::ALL {
            let lr = self.lrs.for_partition(p);
            if !(lr > 0.0) || !lr.is_finite() {
                return bad(format!("learning rate for {p:?} must be positive, got {lr}"));
            }
        }
        if !(self.warmup_ratio > 0.0 && self.warmup_ratio < 1.0) {
            return bad(format!("warmup_ratio must lie in (0, 1), got {}", self.warmup_ratio));
        }
        if self.samples_per_traj < 2 {
            return bad(format!("samples_per_traj must be at least 2, got {}", self.samples_per_traj));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("AdamW needs 0 <= beta < 1 and eps > 0".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        if self.window_stride == Some(0) {
            return bad("window_stride must be at least 1".into());
        }
        self.loss().validate()
    }

    /// Stride actually used on trajectories of `snapshots` samples.
    pub fn resolve_stride(&self, snapshots: usize) -> Result<usize> {
        let n = self.samples_per_traj;
        if n > snapshots {
            return Err(Error::InvalidInput(format!("window of {n} samples exceeds {snapshots} snapshots")));
        }
        let stride = self.window_stride.unwrap_or((snapshots - 1) / (n - 1));
        if stride == 0 || stride * (n - 1) > snapshots - 1 {
            return Err(Error::Config(format!(
                "window of {n} samples at stride {stride} does not fit {snapshots} snapshots"
            )));
        }
        Ok(stride)
    }
}

/// Architecture plus optimization settings, as read from a run config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn preset(system: SystemKind, kind: ModelKind, state_dim: usize) -> Self {
        Self {
            model: ModelConfig::preset(system, kind, state_dim),
            train: TrainConfig::preset(system, kind),
        }
    }

    /// Overlays the `[model]` and `[train]` tables of `text` onto `self`; keys
    /// absent from `text` keep their current values.
    pub fn overlay_toml(&self, text: &str) -> Result<Self> {
        let over: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let mut base = toml::Table::try_from(self).map_err(|e| Error::Config(format!("{e}")))?;
        merge_tables(&mut base, over);
        let out: RunConfig = base.try_into().map_err(|e| Error::Config(format!("{e}")))?;
        out.model.validate()?;
        out.train.validate()?;
        Ok(out)
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First and second moments, one tensor per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            step: 0,
            m: store.zeros_like(),
            v: store.zeros_like(),
        }
    }

    pub fn check_shapes(&self, store: &ParamStore) -> Result<()> {
        if self.m.len() != store.len() || self.v.len() != store.len() {
            return Err(Error::Shape("optimizer state does not mirror the parameter store".into()));
        }
        for ((_, p), (m, v)) in store.iter().zip(self.m.iter().zip(&self.v)) {
            if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                return Err(Error::Shape(format!("optimizer state for {} has the wrong shape", p.name)));
            }
        }
        Ok(())
    }
}

/// One decoupled AdamW update; each parameter uses its partition's rate.
pub fn adamw_step(
    store: &mut ParamStore,
    grads: &[Tensor],
    state: &mut OptimizerState,
    lrs: &LearningRates,
    hyper: &AdamHyper,
) -> Result<()> {
    state.check_shapes(store)?;
    if grads.len() != store.len() {
        return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), store.len())));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        let lr = lrs.for_partition(store.get(id).partition);
        let g = &grads[i];
        if g.shape() != store.value(id).shape() {
            return Err(Error::Shape(format!("gradient for {} has the wrong shape", store.get(id).name)));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let theta = store.value_mut(id);
        for (((th, &gk), mk), vk) in theta
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mk = hyper.beta1 * *mk + (1.0 - hyper.beta1) * gk;
            *vk = hyper.beta2 * *vk + (1.0 - hyper.beta2) * gk * gk;
            let m_hat = *mk / bc1;
            let v_hat = *vk / bc2;
            *th -= lr * (m_hat / (v_hat.sqrt() + hyper.eps) + hyper.weight_decay * *th);
        }
    }
    Ok(())
}

/// Linear warm-up from `max_lr / 25` to `max_lr`, then cosine decay to `max_lr / 1e4`.
pub fn onecycle_lr(step: usize, total_steps: usize, max_lr: f64, warmup_ratio: f64) -> f64 {
    let initial = max_lr / DIV_FACTOR;
    let last = max_lr / FINAL_DIV_FACTOR;
    let total = total_steps as f64;
    let s = (step as f64).min(total);
    let warm_end = warmup_ratio * total;
    if s < warm_end {
        initial + (max_lr - initial) * s / warm_end
    } else {
        let span = total - warm_end;
        let p = if span > 0.0 { (s - warm_end) / span } else { 1.0 };
        last + (max_lr - last) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

/// `n` rows of `states` starting at `offset`, `stride` snapshots apart.
pub fn window(states: &Tensor, offset: usize, stride: usize, n: usize) -> Result<Tensor> {
    if n == 0 || stride == 0 || offset + stride * (n - 1) >= states.rows() {
        return Err(Error::InvalidInput(format!(
            "window of {n} samples at stride {stride} from {offset} exceeds {} snapshots",
            states.rows()
        )));
    }
    let d = states.cols();
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        data.extend_from_slice(states.row(offset + i * stride));
    }
    Tensor::new(n, d, data)
}

/// `n` equally spaced snapshots anchored at index 0 with stride `(T-1)/(n-1)`.
pub fn subsample_trajectory(states: &Tensor, n: usize) -> Result<Tensor> {
    let t = states.rows();
    if n < 2 || n > t {
        return Err(Error::InvalidInput(format!("cannot take {n} samples from {t} snapshots")));
    }
    window(states, 0, (t - 1) / (n - 1), n)
}

/// Window at a uniformly drawn offset so that all `n` samples fit.
pub fn sample_window<R: Rng + ?Sized>(states: &Tensor, n: usize, stride: usize, rng: &mut R) -> Result<Tensor> {
    let span = stride * n.saturating_sub(1);
    if n < 2 || span >= states.rows() {
        return Err(Error::InvalidInput(format!(
            "window of {n} samples at stride {stride} exceeds {} snapshots",
            states.rows()
        )));
    }
    let offset = rng.gen_range(0..states.rows() - span);
    window(states, offset, stride, n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr_main: f64,
    pub lr_gate: f64,
    pub lr_gen: f64,
    pub wall_ms: u64,
}

/// One JSON record per line.
pub fn metrics_jsonl(metrics: &[EpochMetrics]) -> Result<String> {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&serde_json::to_string(m)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_metrics(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(metrics_jsonl(metrics)?.as_bytes())?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
    pub initial_val_loss: f64,
    /// Train-split loss before the first update, on windows anchored at the first snapshot.
    pub initial_train_loss: f64,
    /// Diagnostic when training stopped on a non-finite loss or gradient.
    pub aborted: Option<String>,
    /// Optimizer steps whose gradient was rescaled to the clip norm.
    pub clipped_steps: usize,
}

/// Mean loss and mean gradient over standardized windows.
pub fn batch_gradient(model: &Model, windows: &[Tensor], loss: &LossConfig) -> Result<(f64, Vec<Tensor>)> {
    if windows.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let store = model.params();
    let mut acc = store.zeros_like();
    let mut total = 0.0;
    let w = 1.0 / windows.len() as f64;
    for win in windows {
        let mut tape = Tape::new(store);
        let l = window_loss(model, &mut tape, win, loss)?;
        let value = tape.value(l).data()[0];
        if !value.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {value}")));
        }
        total += value;
        let grads = tape.backward(l)?.into_dense(store);
        for (a, g) in acc.iter_mut().zip(&grads) {
            a.add_scaled_assign(g, w);
        }
    }
    if acc.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    Ok((total * w, acc))
}

/// Rescales `grads` in place to global norm at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.dot(g)).sum::<f64>().sqrt();
    if norm > max_norm {
        let c = max_norm / norm;
        for g in grads.iter_mut() {
            *g = g.scale(c);
        }
    }
    norm
}

/// Mean window loss over `trajs`, each windowed from its first snapshot.
pub fn validation_loss(model: &Model, trajs: &[&Trajectory], n: usize, stride: usize, loss: &LossConfig) -> Result<f64> {
    if trajs.is_empty() {
        return Err(Error::InvalidInput("no validation trajectories".into()));
    }
    let mut total = 0.0;
    for tr in trajs {
        let win = model.scaler().normalize(&window(&tr.states, 0, stride, n)?);
        total += crate::objective::window_loss_value(model, &win, loss)?;
    }
    Ok(total / trajs.len() as f64)
}

struct RunMeta<'a> {
    cfg: &'a TrainConfig,
    system: SystemKind,
    hash: &'a str,
    stride: usize,
}

impl RunMeta<'_> {
    fn checkpoint(&self, model: &Model, epoch: usize, val_loss: f64, opt: &OptimizerState) -> Checkpoint {
        Checkpoint {
            model: model.clone(),
            train: self.cfg.clone(),
            system: self.system,
            dataset_hash: self.hash.to_string(),
            window_stride: self.stride,
            epoch,
            val_loss,
            optimizer: Some(opt.clone()),
        }
    }
}

/// Trains a fresh model on the train split, selecting the best checkpoint by
/// validation loss.
pub fn train(
    dataset: &TrajectoryDataset,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    dataset_hash: &str,
) -> Result<TrainReport> {
    cfg.validate()?;
    model_config.validate()?;
    if model_config.state_dim != dataset.state_dim() {
        return Err(Error::Config(format!(
            "model expects state dimension {}, dataset has {}",
            model_config.state_dim,
            dataset.state_dim()
        )));
    }
    let train_set = dataset.split(SplitKind::Train);
    let val_set = dataset.split(SplitKind::Val);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidInput("training needs non-empty train and validation splits".into()));
    }
    let n = cfg.samples_per_traj;
    let stride = cfg.resolve_stride(dataset.snapshot_count())?;
    let loss_cfg = cfg.loss();
    let hyper = cfg.adam();
    let meta = RunMeta {
        cfg,
        system: dataset.system.kind(),
        hash: dataset_hash,
        stride,
    };

    let scaler = Scaler::fit(train_set.iter().map(|t| &t.states))?;
    let mut model = Model::new(model_config.clone(), scaler, cfg.seed)?;
    let mut opt = OptimizerState::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7452_4149_4E00_0001);

    let initial_val_loss = validation_loss(&model, &val_set, n, stride, &loss_cfg)?;
    let initial_train_loss = validation_loss(&model, &train_set, n, stride, &loss_cfg)?;
    log::info!("initial loss: train {initial_train_loss:.6}, validation {initial_val_loss:.6}");
    let batches = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches;

    let mut best = meta.checkpoint(&model, 0, initial_val_loss, &opt);
    let mut best_val = f64::INFINITY;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut clipped_steps = 0;
    let mut step = 0;
    let mut aborted = None;
    let mut last_val = initial_val_loss;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    'epochs: for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lrs = cfg.lrs;
        for chunk in order.chunks(cfg.batch_size) {
            let mut windows = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let raw = sample_window(&train_set[i].states, n, stride, &mut rng)?;
                windows.push(model.scaler().normalize(&raw));
            }
            let (loss, mut grads) = match batch_gradient(&model, &windows, &loss_cfg) {
                Ok(r) => r,
                Err(Error::Numerical(msg)) => {
                    aborted = Some(format!("epoch {epoch}, step {step}: {msg}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            if let Some(c) = cfg.grad_clip {
                let norm = clip_grad_norm(&mut grads, c);
                if norm > c {
                    clipped_steps += 1;
                    log::debug!("step {step}: gradient norm {norm:.3e} clipped to {c}");
                }
            }
            lrs = cfg.lrs.map(|max| onecycle_lr(step, total_steps, max, cfg.warmup_ratio));
            let before = model.params().clone();
            adamw_step(model.params_mut(), &grads, &mut opt, &lrs, &hyper)?;
            if model.params().iter().any(|(_, p)| !p.value.is_finite()) {
                *model.params_mut() = before;
                aborted = Some(format!("epoch {epoch}, step {step}: parameters became non-finite"));
                break 'epochs;
            }
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
        }
        if model.kind() == ModelKind::KoopGen {
            model.generator_bank()?.verify_structure()?;
        }
        let val_loss = match validation_loss(&model, &val_set, n, stride, &loss_cfg) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => {
                aborted = Some(format!("epoch {epoch}: non-finite validation loss {v}"));
                break;
            }
            Err(Error::Numerical(msg)) => {
                aborted = Some(format!("epoch {epoch}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        last_val = val_loss;
        let m = EpochMetrics {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss,
            lr_main: lrs.main,
            lr_gate: lrs.gate,
            lr_gen: lrs.generator,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        log::info!(
            "epoch {epoch}: train {:.6} val {:.6} ({} ms)",
            m.train_loss,
            m.val_loss,
            m.wall_ms
        );
        metrics.push(m);
        if val_loss < best_val {
            best_val = val_loss;
            best = meta.checkpoint(&model, epoch, val_loss, &opt);
        }
    }
    if clipped_steps > 0 {
        log::info!("gradient clipping active on {clipped_steps} of {step} steps");
    }
    if let Some(msg) = &aborted {
        log::warn!("training aborted: {msg}");
    }
    let last = meta.checkpoint(&model, metrics.len(), last_val, &opt);
    Ok(TrainReport {
        best,
        last,
        metrics,
        initial_val_loss,
        initial_train_loss,
        aborted,
        clipped_steps,
    })
}

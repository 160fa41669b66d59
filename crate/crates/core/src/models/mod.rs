//! KoopGen and the two baselines: encoder, latent advance, decoder.
//!
//! Latents are real rows of length `2D` holding `[re_0..re_{D-1}, im_0..im_{D-1}]`.
//! States are standardized per component by a [`Scaler`] before encoding and
//! restored after decoding; the networks only ever see standardized values.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genops::{self, GeneratorBank, RealBlockOp, SelfGenParams, SkewGenParams};
use crate::netcore::tape::spectral_advance;
use crate::netcore::{softmax_gate, Activation, Mlp, ParamId, ParamStore, Partition, Tape, Tensor, Var};
use crate::systems::SystemKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    KoopGen,
    Lran,
    DeepKoopman,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::KoopGen, ModelKind::Lran, ModelKind::DeepKoopman];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::KoopGen => "koopgen",
            ModelKind::Lran => "lran",
            ModelKind::DeepKoopman => "deepkoopman",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ModelKind::KoopGen => 0,
            ModelKind::Lran => 1,
            ModelKind::DeepKoopman => 2,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.code() == c)
            .ok_or_else(|| Error::Format(format!("unknown model code {c}")))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown model {s}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub state_dim: usize,
    /// Complex latent dimension `D`; the real latent has length `2D`.
    pub latent_dim: usize,
    pub main_depth: usize,
    pub main_width: usize,
    pub gate_depth: usize,
    pub gate_width: usize,
    pub n_skew: usize,
    pub n_selfadj: usize,
    /// DeepKoopman eigenvalue layout.
    pub n_complex: usize,
    pub n_real: usize,
    pub dt: f64,
    pub activation: Activation,
    /// Half-width of the uniform init for generator matrices and the LRAN perturbation.
    pub generator_init: f64,
}

impl ModelConfig {
    /// Architecture for `system`. Pendulum uses `D = 2` complex latent
    /// coordinates; the other systems halve the real latent width.
    pub fn preset(system: SystemKind, kind: ModelKind, state_dim: usize) -> Self {
        let (depth, width, d, n_skew, n_selfadj, n_complex) = match system {
            SystemKind::Pendulum => (3, 32, 2, 2, 0, 1),
            SystemKind::Lorenz63 => (4, 128, 3, 6, 2, 3),
            SystemKind::Lorenz96 => (4, 256, 32, 64, 8, 32),
            SystemKind::Ks => (4, 1024, 128, 32, 16, 512),
        };
        Self {
            kind,
            state_dim,
            latent_dim: d,
            main_depth: depth,
            main_width: width,
            gate_depth: 2,
            gate_width: width,
            n_skew,
            n_selfadj,
            n_complex,
            n_real: 0,
            dt: 0.1,
            activation: Activation::Tanh,
            generator_init: 0.01,
        }
    }

    /// Length of the real latent row.
    pub fn latent_width(&self) -> usize {
        match self.kind {
            ModelKind::DeepKoopman => 2 * self.n_complex + self.n_real,
            _ => 2 * self.latent_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.state_dim == 0 || self.main_depth == 0 || self.main_width == 0 {
            return bad("state_dim, main_depth and main_width must be positive");
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad("dt must be positive");
        }
        match self.kind {
            ModelKind::KoopGen => {
                if self.latent_dim == 0 || self.n_skew == 0 {
                    return bad("KoopGen needs latent_dim >= 1 and at least one skew generator");
                }
                if self.gate_depth == 0 || self.gate_width == 0 {
                    return bad("gate_depth and gate_width must be positive");
                }
            }
            ModelKind::Lran => {
                if self.latent_dim == 0 {
                    return bad("latent_dim must be positive");
                }
            }
            ModelKind::DeepKoopman => {
                if self.latent_width() == 0 || self.gate_depth == 0 || self.gate_width == 0 {
                    return bad("DeepKoopman needs eigenvalues and a non-empty auxiliary network");
                }
            }
        }
        if !(self.generator_init >= 0.0) {
            return bad("generator_init must be non-negative");
        }
        Ok(())
    }
}

/// Per-component standardization `(x - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    /// Fits mean and standard deviation over every row of every matrix.
    /// Components with (near) zero spread keep unit scale.
    pub fn fit<'a>(data: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        for t in data {
            if sum.is_empty() {
                sum = vec![0.0; t.cols()];
                sq = vec![0.0; t.cols()];
            }
            if t.cols() != sum.len() {
                return Err(Error::Shape("inconsistent state dimension".into()));
            }
            for r in 0..t.rows() {
                for (c, &v) in t.row(r).iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            count += t.rows();
        }
        if count == 0 {
            return Err(Error::InvalidInput("cannot fit a scaler to no data".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var.sqrt() > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &Tensor) -> Tensor {
        let d = self.dim();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[i % d]) / self.std[i % d];
        }
        out
    }

    pub fn denormalize(&self, x: &Tensor) -> Tensor {
        let d = self.dim();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * self.std[i % d] + self.mean[i % d];
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Head {
    KoopGen {
        gate_hat: Mlp,
        gate_tilde: Option<Mlp>,
        skew: Vec<(ParamId, ParamId)>,
        selfadj: Vec<(ParamId, ParamId)>,
    },
    Lran {
        k: ParamId,
    },
    DeepKoopman {
        aux: Mlp,
    },
}

/// Tape handles for operators that do not depend on the latent, built once per tape.
pub struct Prepared {
    skew: Vec<Var>,
    selfadj: Vec<Var>,
    lran: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    scaler: Scaler,
    store: ParamStore,
    encoder: Mlp,
    decoder: Mlp,
    head: Head,
}

fn uniform(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Tensor {
    if scale == 0.0 {
        return Tensor::zeros(d, d);
    }
    Tensor::from_fn(d, d, |_, _| rng.gen_range(-scale..=scale))
}

impl Model {
    pub fn new(config: ModelConfig, scaler: Scaler, seed: u64) -> Result<Self> {
        config.validate()?;
        if scaler.dim() != config.state_dim {
            return Err(Error::Shape(format!(
                "scaler has {} components, model expects {}",
                scaler.dim(),
                config.state_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let lw = c.latent_width();
        let encoder = Mlp::new(
            &mut store, "encoder", Partition::Main, c.state_dim, c.main_width, lw, c.main_depth, c.activation, &mut rng,
        )?;
        let decoder = Mlp::new(
            &mut store, "decoder", Partition::Main, lw, c.main_width, c.state_dim, c.main_depth, c.activation, &mut rng,
        )?;
        let head = match c.kind {
            ModelKind::KoopGen => {
                let gate_hat = Mlp::new(
                    &mut store, "gate_hat", Partition::Gate, lw, c.gate_width, c.n_skew, c.gate_depth, c.activation, &mut rng,
                )?;
                let gate_tilde = if c.n_selfadj > 0 {
                    Some(Mlp::new(
                        &mut store, "gate_tilde", Partition::Gate, lw, c.gate_width, c.n_selfadj, c.gate_depth, c.activation,
                        &mut rng,
                    )?)
                } else {
                    None
                };
                let d = c.latent_dim;
                let mut skew = Vec::with_capacity(c.n_skew);
                for n in 0..c.n_skew {
                    let p = store.insert(&format!("skew.{n}.p"), Partition::Generator, uniform(&mut rng, d, c.generator_init))?;
                    let q = store.insert(&format!("skew.{n}.q"), Partition::Generator, uniform(&mut rng, d, c.generator_init))?;
                    skew.push((p, q));
                }
                let mut selfadj = Vec::with_capacity(c.n_selfadj);
                for m in 0..c.n_selfadj {
                    let u = store.insert(&format!("selfadj.{m}.u"), Partition::Generator, uniform(&mut rng, d, c.generator_init))?;
                    let v = store.insert(&format!("selfadj.{m}.v"), Partition::Generator, uniform(&mut rng, d, c.generator_init))?;
                    selfadj.push((u, v));
                }
                Head::KoopGen {
                    gate_hat,
                    gate_tilde,
                    skew,
                    selfadj,
                }
            }
            ModelKind::Lran => {
                let k = uniform(&mut rng, lw, c.generator_init).add_identity();
                Head::Lran {
                    k: store.insert("lran.k", Partition::Generator, k)?,
                }
            }
            ModelKind::DeepKoopman => {
                let aux = Mlp::new(
                    &mut store, "aux", Partition::Gate, c.n_complex + c.n_real, c.gate_width, lw, c.gate_depth,
                    c.activation, &mut rng,
                )?;
                Head::DeepKoopman { aux }
            }
        };
        Ok(Self {
            config,
            scaler,
            store,
            encoder,
            decoder,
            head,
        })
    }

    /// Rebuilds a model around an existing parameter store (checkpoint loading).
    pub fn from_parts(config: ModelConfig, scaler: Scaler, store: ParamStore) -> Result<Self> {
        let template = Model::new(config.clone(), scaler.clone(), 0)?;
        if template.store.len() != store.len() {
            return Err(Error::Format(format!(
                "expected {} parameters, found {}",
                template.store.len(),
                store.len()
            )));
        }
        for ((_, a), (_, b)) in template.store.iter().zip(store.iter()) {
            if a.name != b.name || a.partition != b.partition || a.value.shape() != b.value.shape() {
                return Err(Error::Format(format!(
                    "parameter {} does not match the model layout",
                    b.name
                )));
            }
        }
        Ok(Self { store, ..template })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn scaler(&self) -> &Scaler {
        &self.scaler
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn latent_width(&self) -> usize {
        self.config.latent_width()
    }

    pub fn n_skew(&self) -> usize {
        match &self.head {
            Head::KoopGen { skew, .. } => skew.len(),
            _ => 0,
        }
    }

    pub fn n_selfadj(&self) -> usize {
        match &self.head {
            Head::KoopGen { selfadj, .. } => selfadj.len(),
            _ => 0,
        }
    }

    pub fn prepare(&self, tape: &mut Tape<'_>) -> Result<Prepared> {
        let mut out = Prepared {
            skew: Vec::new(),
            selfadj: Vec::new(),
            lran: None,
        };
        match &self.head {
            Head::KoopGen { skew, selfadj, .. } => {
                for &(p, q) in skew {
                    let (pv, qv) = (tape.param(p), tape.param(q));
                    out.skew.push(tape.skew_block(pv, qv)?);
                }
                for &(u, v) in selfadj {
                    let (uv, vv) = (tape.param(u), tape.param(v));
                    out.selfadj.push(tape.selfadj_block(uv, vv)?);
                }
            }
            Head::Lran { k } => out.lran = Some(tape.param(*k)),
            Head::DeepKoopman { .. } => {}
        }
        Ok(out)
    }

    /// Encodes standardized state rows.
    pub fn encode_rows(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        self.encoder.forward(tape, x)
    }

    /// Decodes latent rows into standardized states.
    pub fn decode_rows(&self, tape: &mut Tape<'_>, z: Var) -> Result<Var> {
        self.decoder.forward(tape, z)
    }

    /// Advances one latent row by one model step.
    pub fn step_row(&self, tape: &mut Tape<'_>, prep: &Prepared, z: Var) -> Result<Var> {
        match &self.head {
            Head::KoopGen {
                gate_hat, gate_tilde, ..
            } => {
                let logits = gate_hat.forward(tape, z)?;
                let w_hat = tape.softmax_rows(logits);
                let w_tilde = match gate_tilde {
                    Some(g) => {
                        let l = g.forward(tape, z)?;
                        Some(tape.softmax_rows(l))
                    }
                    None => None,
                };
                self.advance_koopgen(tape, prep, z, w_hat, w_tilde)
            }
            Head::Lran { .. } => {
                let k = prep.lran.ok_or_else(|| Error::InvalidInput("graph not prepared".into()))?;
                tape.apply_row(k, z)
            }
            Head::DeepKoopman { aux } => {
                let nc = self.config.n_complex;
                let radii = tape.pair_radius(z, nc)?;
                let input = if self.config.n_real > 0 {
                    let tail = self.real_tail(tape, z, self.config.n_real)?;
                    tape.concat_cols(&[radii, tail])?
                } else {
                    radii
                };
                let eig = aux.forward(tape, input)?;
                tape.spectral_step(z, eig, nc, self.config.n_real, self.config.dt)
            }
        }
    }

    fn real_tail(&self, tape: &mut Tape<'_>, z: Var, n: usize) -> Result<Var> {
        // Trailing `n` coordinates via a constant selection matrix.
        let w = tape.value(z).cols();
        let sel = Tensor::from_fn(w, n, |i, j| if i == w - n + j { 1.0 } else { 0.0 });
        let s = tape.input(sel);
        tape.matmul(z, s)
    }

    /// KoopGen step with gate weights supplied by the caller (rows on the tape).
    pub fn step_row_with_weights(
        &self,
        tape: &mut Tape<'_>,
        prep: &Prepared,
        z: Var,
        w_hat: &[f64],
        w_tilde: Option<&[f64]>,
    ) -> Result<Var> {
        let wh = tape.input(Tensor::row_vector(w_hat.to_vec()));
        let wt = w_tilde.map(|w| tape.input(Tensor::row_vector(w.to_vec())));
        self.advance_koopgen(tape, prep, z, wh, wt)
    }

    fn advance_koopgen(
        &self,
        tape: &mut Tape<'_>,
        prep: &Prepared,
        z: Var,
        w_hat: Var,
        w_tilde: Option<Var>,
    ) -> Result<Var> {
        if prep.skew.is_empty() {
            return Err(Error::InvalidInput("model has no skew generators on this tape".into()));
        }
        let mut g = tape.mix(w_hat, &prep.skew)?;
        match (w_tilde, prep.selfadj.is_empty()) {
            (Some(w), false) => {
                let t = tape.mix(w, &prep.selfadj)?;
                g = tape.add(g, t)?;
            }
            (None, true) => {}
            _ => return Err(Error::InvalidInput("self-adjoint weights do not match the generator set".into())),
        }
        let k = tape.expm(g, self.config.dt)?;
        tape.apply_row(k, z)
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.state_dim {
            return Err(Error::Shape(format!(
                "state has {} components, model expects {}",
                x.len(),
                self.config.state_dim
            )));
        }
        Ok(())
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.latent_width() {
            return Err(Error::Shape(format!(
                "latent has {} components, model expects {}",
                z.len(),
                self.latent_width()
            )));
        }
        Ok(())
    }

    /// `z = Phi(x)` for a state in physical units.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x)?;
        let xn = self.scaler.normalize(&Tensor::row_vector(x.to_vec()));
        let mut tape = Tape::new(&self.store);
        let xv = tape.input(xn);
        let z = self.encode_rows(&mut tape, xv)?;
        Ok(tape.value(z).data().to_vec())
    }

    /// Physical-unit state decoded from a latent.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        let mut tape = Tape::new(&self.store);
        let zv = tape.input(Tensor::row_vector(z.to_vec()));
        let x = self.decode_rows(&mut tape, zv)?;
        Ok(self.scaler.denormalize(tape.value(x)).into_data())
    }

    /// Raw generator parameters as a bank (KoopGen only).
    pub fn generator_bank(&self) -> Result<GeneratorBank> {
        let Head::KoopGen { skew, selfadj, .. } = &self.head else {
            return Err(Error::InvalidInput(format!("{} has no generator bank", self.kind())));
        };
        let s = skew
            .iter()
            .map(|&(p, q)| SkewGenParams {
                p: self.store.value(p).clone(),
                q: self.store.value(q).clone(),
            })
            .collect();
        let a = selfadj
            .iter()
            .map(|&(u, v)| SelfGenParams {
                u: self.store.value(u).clone(),
                v: self.store.value(v).clone(),
            })
            .collect();
        GeneratorBank::new(s, a, self.config.latent_dim)
    }

    /// Gate weights `(w_hat, w_tilde)` at latent `z` (KoopGen only).
    pub fn gate_weights(&self, z: &[f64]) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        self.check_latent(z)?;
        let Head::KoopGen {
            gate_hat, gate_tilde, ..
        } = &self.head
        else {
            return Err(Error::InvalidInput(format!("{} has no gates", self.kind())));
        };
        let zt = Tensor::row_vector(z.to_vec());
        let logits = crate::netcore::mlp_forward(&self.store, gate_hat, &zt)?;
        let w_hat = softmax_gate(logits.data());
        let w_tilde = match gate_tilde {
            Some(g) => Some(softmax_gate(crate::netcore::mlp_forward(&self.store, g, &zt)?.data())),
            None => None,
        };
        Ok((w_hat, w_tilde))
    }

    /// State-dependent generator `G(z)` (KoopGen only).
    pub fn generator_at(&self, z: &[f64]) -> Result<RealBlockOp> {
        let (w_hat, w_tilde) = self.gate_weights(z)?;
        self.generator_bank()?.generator(&w_hat, w_tilde.as_deref())
    }

    /// The linear operator applied to `z` in one model step.
    pub fn operator_at(&self, z: &[f64]) -> Result<Tensor> {
        self.check_latent(z)?;
        match &self.head {
            Head::KoopGen { .. } => genops::matrix_exp(&self.generator_at(z)?, self.config.dt),
            Head::Lran { k } => Ok(self.store.value(*k).clone()),
            Head::DeepKoopman { .. } => {
                let eig = self.eigen_parameters(z)?;
                let w = self.latent_width();
                let mut k = Tensor::zeros(w, w);
                for j in 0..w {
                    let mut e = vec![0.0; w];
                    e[j] = 1.0;
                    let col = spectral_advance(&e, &eig, self.config.n_complex, self.config.n_real, self.config.dt);
                    for (i, v) in col.iter().enumerate() {
                        k.set(i, j, *v);
                    }
                }
                Ok(k)
            }
        }
    }

    /// DeepKoopman `[mu.., omega.., lambda..]` at latent `z`.
    pub fn eigen_parameters(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        let Head::DeepKoopman { aux } = &self.head else {
            return Err(Error::InvalidInput(format!("{} has no auxiliary network", self.kind())));
        };
        let nc = self.config.n_complex;
        let mut input: Vec<f64> = (0..nc).map(|j| z[j].hypot(z[j + nc])).collect();
        input.extend_from_slice(&z[2 * nc..]);
        Ok(crate::netcore::mlp_forward(&self.store, aux, &Tensor::row_vector(input))?.into_data())
    }

    /// One latent step.
    pub fn step(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        match &self.head {
            Head::KoopGen { .. } => genops::apply(&self.operator_at(z)?, z),
            Head::Lran { k } => genops::apply(self.store.value(*k), z),
            Head::DeepKoopman { .. } => Ok(spectral_advance(
                z,
                &self.eigen_parameters(z)?,
                self.config.n_complex,
                self.config.n_real,
                self.config.dt,
            )),
        }
    }

    /// KoopGen step with caller-chosen gate weights.
    pub fn step_with_weights(&self, z: &[f64], w_hat: &[f64], w_tilde: Option<&[f64]>) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        let g = self.generator_bank()?.generator(w_hat, w_tilde)?;
        genops::apply(&genops::matrix_exp(&g, self.config.dt)?, z)
    }

    /// Latent trajectory `z_0 = Phi(x0)`, `z_{t+1} = K(z_t) z_t`, length `steps + 1`.
    pub fn rollout_latent(&self, x0: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
        let mut z = self.encode(x0)?;
        let mut out = Vec::with_capacity(steps + 1);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: 0 });
        }
        out.push(z.clone());
        for t in 1..=steps {
            z = match self.step(&z) {
                Ok(next) => next,
                Err(Error::Numerical(_)) => return Err(Error::Divergence { step: t }),
                Err(e) => return Err(e),
            };
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { step: t });
            }
            out.push(z.clone());
        }
        Ok(out)
    }

    /// Decoded predictions `(steps + 1) x state_dim` in physical units, starting
    /// with `decode(encode(x0))`.
    pub fn rollout(&self, x0: &[f64], steps: usize) -> Result<Tensor> {
        let zs = self.rollout_latent(x0, steps)?;
        let z = Tensor::from_rows(&zs)?;
        let mut tape = Tape::new(&self.store);
        let zv = tape.input(z);
        let x = self.decode_rows(&mut tape, zv)?;
        let out = self.scaler.denormalize(tape.value(x));
        if let Some(r) = (0..out.rows()).find(|&r| out.row(r).iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence { step: r });
        }
        Ok(out)
    }
}

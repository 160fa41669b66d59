//! The benchmark systems, their integrators and dataset generation.

pub(crate) mod dataset;
pub mod ks;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use dataset::{dataset_hash, load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use ks::{etdrk4_precompute, etdrk4_step, etdrk4_step_linear, Etdrk4Coeffs};

use crate::error::{Error, Result};
use crate::netcore::Tensor;

const MAX_REJECTION_DRAWS: usize = 10_000;
const MAX_RESAMPLES: u32 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Pendulum,
    Lorenz63,
    Lorenz96,
    Ks,
}

impl SystemKind {
    pub const ALL: [SystemKind; 4] = [
        SystemKind::Pendulum,
        SystemKind::Lorenz63,
        SystemKind::Lorenz96,
        SystemKind::Ks,
    ];

    pub fn code(self) -> u8 {
        match self {
            SystemKind::Pendulum => 0,
            SystemKind::Lorenz63 => 1,
            SystemKind::Lorenz96 => 2,
            SystemKind::Ks => 3,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.code() == c)
            .ok_or_else(|| Error::Format(format!("unknown system code {c}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Pendulum => "pendulum",
            SystemKind::Lorenz63 => "lorenz63",
            SystemKind::Lorenz96 => "lorenz96",
            SystemKind::Ks => "ks",
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown system {s}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SystemParams {
    Pendulum,
    Lorenz63 { sigma: f64, rho: f64, beta: f64 },
    Lorenz96 { k: usize, forcing: f64 },
    Ks { length: f64, n: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BurnIn {
    None,
    /// Integrate this many time units and discard.
    Time(f64),
    /// Discard this many integrator steps.
    Steps(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub params: SystemParams,
    pub integrator_dt: f64,
    pub dt_sample: f64,
    pub snapshot_count: usize,
    pub burn_in: BurnIn,
}

impl SystemSpec {
    pub fn pendulum() -> Self {
        Self {
            params: SystemParams::Pendulum,
            integrator_dt: 0.01,
            dt_sample: 0.02,
            snapshot_count: 301,
            burn_in: BurnIn::None,
        }
    }

    pub fn lorenz63() -> Self {
        Self {
            params: SystemParams::Lorenz63 {
                sigma: 10.0,
                rho: 28.0,
                beta: 8.0 / 3.0,
            },
            integrator_dt: 0.01,
            dt_sample: 0.01,
            snapshot_count: 401,
            burn_in: BurnIn::Time(10.0),
        }
    }

    pub fn lorenz96() -> Self {
        Self {
            params: SystemParams::Lorenz96 { k: 36, forcing: 8.0 },
            integrator_dt: 0.01,
            dt_sample: 0.01,
            snapshot_count: 401,
            burn_in: BurnIn::Time(10.0),
        }
    }

    pub fn ks() -> Self {
        Self {
            params: SystemParams::Ks {
                length: 8.0 * PI,
                n: 128,
            },
            integrator_dt: 1.0,
            dt_sample: 1.0,
            snapshot_count: 201,
            burn_in: BurnIn::Steps(20),
        }
    }

    pub fn default_for(kind: SystemKind) -> Self {
        match kind {
            SystemKind::Pendulum => Self::pendulum(),
            SystemKind::Lorenz63 => Self::lorenz63(),
            SystemKind::Lorenz96 => Self::lorenz96(),
            SystemKind::Ks => Self::ks(),
        }
    }

    pub fn kind(&self) -> SystemKind {
        match self.params {
            SystemParams::Pendulum => SystemKind::Pendulum,
            SystemParams::Lorenz63 { .. } => SystemKind::Lorenz63,
            SystemParams::Lorenz96 { .. } => SystemKind::Lorenz96,
            SystemParams::Ks { .. } => SystemKind::Ks,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.params {
            SystemParams::Pendulum => 2,
            SystemParams::Lorenz63 { .. } => 3,
            SystemParams::Lorenz96 { k, .. } => k,
            SystemParams::Ks { n, .. } => n,
        }
    }

    /// Integrator steps per sampling interval.
    pub fn substeps(&self) -> Result<usize> {
        let ratio = self.dt_sample / self.integrator_dt;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "sampling interval {} is not a whole multiple of the integrator step {}",
                self.dt_sample, self.integrator_dt
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.integrator_dt > 0.0) || !self.integrator_dt.is_finite() {
            return Err(Error::Config("integrator_dt must be positive".into()));
        }
        if self.snapshot_count < 2 {
            return Err(Error::Config("snapshot_count must be at least 2".into()));
        }
        match self.params {
            SystemParams::Lorenz96 { k, .. } if k < 4 => {
                return Err(Error::Config(format!("Lorenz-96 needs K >= 4, got {k}")))
            }
            SystemParams::Ks { n, length } if n < 16 || !n.is_power_of_two() || !(length > 0.0) => {
                return Err(Error::Config(format!("KS grid must be a power of two >= 16, got {n}")))
            }
            _ => {}
        }
        if let BurnIn::Time(t) = self.burn_in {
            if !(t >= 0.0) {
                return Err(Error::Config("burn-in time must be non-negative".into()));
            }
        }
        self.substeps()?;
        Ok(())
    }

    /// Four reals recorded in dataset headers: three system parameters and the integrator step.
    pub(crate) fn header_reals(&self) -> [f64; 4] {
        let (a, b, c) = match self.params {
            SystemParams::Pendulum => (0.0, 0.0, 0.0),
            SystemParams::Lorenz63 { sigma, rho, beta } => (sigma, rho, beta),
            SystemParams::Lorenz96 { k, forcing } => (k as f64, forcing, 0.0),
            SystemParams::Ks { length, n } => (length, n as f64, 0.0),
        };
        [a, b, c, self.integrator_dt]
    }
}

/// Optional overrides read from a TOML file by `generate --config`.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub integrator_dt: Option<f64>,
    pub dt_sample: Option<f64>,
    pub snapshot_count: Option<usize>,
    pub burn_in_time: Option<f64>,
    pub burn_in_steps: Option<usize>,
    pub sigma: Option<f64>,
    pub rho: Option<f64>,
    pub beta: Option<f64>,
    pub k: Option<usize>,
    pub forcing: Option<f64>,
    pub length: Option<f64>,
    pub grid: Option<usize>,
    pub train_fraction: Option<f64>,
    pub val_fraction: Option<f64>,
}

impl GenerateConfig {
    pub fn apply(&self, spec: &mut SystemSpec, split: &mut SplitFractions) {
        if let Some(v) = self.integrator_dt {
            spec.integrator_dt = v;
        }
        if let Some(v) = self.dt_sample {
            spec.dt_sample = v;
        }
        if let Some(v) = self.snapshot_count {
            spec.snapshot_count = v;
        }
        if let Some(v) = self.burn_in_time {
            spec.burn_in = BurnIn::Time(v);
        }
        if let Some(v) = self.burn_in_steps {
            spec.burn_in = BurnIn::Steps(v);
        }
        match &mut spec.params {
            SystemParams::Pendulum => {}
            SystemParams::Lorenz63 { sigma, rho, beta } => {
                *sigma = self.sigma.unwrap_or(*sigma);
                *rho = self.rho.unwrap_or(*rho);
                *beta = self.beta.unwrap_or(*beta);
            }
            SystemParams::Lorenz96 { k, forcing } => {
                *k = self.k.unwrap_or(*k);
                *forcing = self.forcing.unwrap_or(*forcing);
            }
            SystemParams::Ks { length, n } => {
                *length = self.length.unwrap_or(*length);
                *n = self.grid.unwrap_or(*n);
            }
        }
        if let Some(v) = self.train_fraction {
            split.train = v;
        }
        if let Some(v) = self.val_fraction {
            split.val = v;
        }
    }
}

fn check_dim(spec: &SystemSpec, state: &[f64]) -> Result<()> {
    if state.len() != spec.state_dim() {
        return Err(Error::InvalidInput(format!(
            "{} state has {} components, expected {}",
            spec.kind(),
            state.len(),
            spec.state_dim()
        )));
    }
    Ok(())
}

/// Time derivative of the ODE systems; for KS the pseudo-spectral right-hand side
/// `-u u_x - u_xx - u_xxxx` is evaluated on the grid.
pub fn eval_rhs(spec: &SystemSpec, state: &[f64]) -> Result<Vec<f64>> {
    check_dim(spec, state)?;
    Ok(match spec.params {
        SystemParams::Pendulum => vec![state[1], -state[0].sin()],
        SystemParams::Lorenz63 { sigma, rho, beta } => {
            let (x, y, z) = (state[0], state[1], state[2]);
            vec![sigma * (y - x), x * (rho - z) - y, x * y - beta * z]
        }
        SystemParams::Lorenz96 { k, forcing } => (0..k)
            .map(|i| {
                let xp1 = state[(i + 1) % k];
                let xm1 = state[(i + k - 1) % k];
                let xm2 = state[(i + k - 2) % k];
                (xp1 - xm2) * xm1 - state[i] + forcing
            })
            .collect(),
        SystemParams::Ks { length, n } => {
            let v = ks::to_spectral(state);
            let mut lin = v.clone();
            let mut deriv = v;
            for j in 0..n {
                let k = 2.0 * PI * ks::mode_index(j, n) as f64 / length;
                lin[j] *= k * k - k.powi(4);
                deriv[j] *= if j == n / 2 { Complex64::new(0.0, 0.0) } else { Complex64::new(0.0, k) };
            }
            let (lin, _) = ks::to_physical(&lin);
            let (ux, _) = ks::to_physical(&deriv);
            (0..n).map(|i| lin[i] - state[i] * ux[i]).collect()
        }
    })
}

/// Classical fourth-order Runge–Kutta step of `x' = f(x)`.
pub fn rk4<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let axpy = |a: &[f64], c: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| a + c * b).collect() };
    let k1 = f(x);
    let k2 = f(&axpy(x, h / 2.0, &k1));
    let k3 = f(&axpy(x, h / 2.0, &k2));
    let k4 = f(&axpy(x, h, &k3));
    (0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

pub fn rk4_step(spec: &SystemSpec, state: &[f64], h: f64) -> Result<Vec<f64>> {
    if spec.kind() == SystemKind::Ks {
        return Err(Error::UnsupportedIntegrator("ks (use ETDRK4)".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("step must be positive, got {h}")));
    }
    check_dim(spec, state)?;
    Ok(rk4(|x| eval_rhs(spec, x).expect("dimension checked"), state, h))
}

pub fn pendulum_energy(state: &[f64]) -> f64 {
    0.5 * state[1] * state[1] - state[0].cos()
}

pub fn sample_initial<R: Rng + ?Sized>(spec: &SystemSpec, rng: &mut R) -> Result<Vec<f64>> {
    match spec.params {
        SystemParams::Pendulum => {
            for _ in 0..MAX_REJECTION_DRAWS {
                let x = vec![rng.gen_range(-3.1..=3.1), rng.gen_range(-2.0..=2.0)];
                if pendulum_energy(&x) < 0.99 {
                    return Ok(x);
                }
            }
            Err(Error::Sampler(format!(
                "no pendulum state under the energy bound in {MAX_REJECTION_DRAWS} draws"
            )))
        }
        SystemParams::Lorenz63 { .. } => Ok(vec![
            rng.gen_range(-18.0..=18.0),
            rng.gen_range(-20.0..=20.0),
            rng.gen_range(0.0..=50.0),
        ]),
        SystemParams::Lorenz96 { k, .. } => Ok((0..k).map(|_| rng.gen_range(-5.0..=5.0)).collect()),
        SystemParams::Ks { n, .. } => {
            let mut v = vec![Complex64::new(0.0, 0.0); n];
            for m in 1..=3 {
                let c = Complex64::new(rng.gen_range(-0.5..=0.5), rng.gen_range(-0.5..=0.5)) * n as f64;
                v[m] = c;
                v[n - m] = c.conj();
            }
            let (u, max_im) = ks::to_physical(&v);
            if max_im > 1e-12 {
                return Err(Error::Sampler(format!("KS initial field not real ({max_im:e})")));
            }
            Ok(u)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `snapshot_count x state_dim`.
    pub states: Tensor,
    pub dt_sample: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.7, val: 0.1 }
    }
}

impl SplitFractions {
    /// `(n_train, n_val, n_test)` with rounded train and validation counts.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        if !(self.train > 0.0) || !(self.val >= 0.0) || self.train + self.val > 1.0 {
            return Err(Error::Config(format!("invalid split fractions {self:?}")));
        }
        let train = (self.train * n as f64).round() as usize;
        let val = ((self.val * n as f64).round() as usize).min(n - train);
        Ok((train, val, n - train - val))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    fn contiguous(n_train: usize, n_val: usize, n: usize) -> Self {
        Self {
            train: (0..n_train).collect(),
            val: (n_train..n_train + n_val).collect(),
            test: (n_train + n_val..n).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub system: SystemSpec,
    pub trajectories: Vec<Trajectory>,
    pub splits: Splits,
    pub master_seed: u64,
    /// Trajectories regenerated after a non-finite integration.
    pub resampled: usize,
}

impl TrajectoryDataset {
    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn snapshot_count(&self) -> usize {
        self.system.snapshot_count
    }

    pub fn split(&self, which: SplitKind) -> Vec<&Trajectory> {
        let idx = match which {
            SplitKind::Train => &self.splits.train,
            SplitKind::Val => &self.splits.val,
            SplitKind::Test => &self.splits.test,
        };
        idx.iter().map(|&i| &self.trajectories[i]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for trajectory `index`, attempt `attempt`; depends on nothing else.
pub fn child_seed(master_seed: u64, index: u64, attempt: u32) -> u64 {
    splitmix64(splitmix64(master_seed ^ splitmix64(index)) ^ (attempt as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

fn integrate_ode(spec: &SystemSpec, x0: Vec<f64>) -> Result<Option<Tensor>> {
    let h = spec.integrator_dt;
    let sub = spec.substeps()?;
    let mut x = x0;
    let burn_steps = match spec.burn_in {
        BurnIn::None => 0,
        BurnIn::Time(t) => (t / h).round() as usize,
        BurnIn::Steps(n) => n,
    };
    for _ in 0..burn_steps {
        x = rk4_step(spec, &x, h)?;
    }
    let d = spec.state_dim();
    let mut data = Vec::with_capacity(spec.snapshot_count * d);
    for s in 0..spec.snapshot_count {
        if s > 0 {
            for _ in 0..sub {
                x = rk4_step(spec, &x, h)?;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        data.extend_from_slice(&x);
    }
    Ok(Some(Tensor::new(spec.snapshot_count, d, data)?))
}

fn integrate_ks(spec: &SystemSpec, coeffs: &Etdrk4Coeffs, u0: &[f64]) -> Result<Option<Tensor>> {
    let sub = spec.substeps()?;
    let mut v = ks::to_spectral(u0);
    let burn_steps = match spec.burn_in {
        BurnIn::None => 0,
        BurnIn::Time(t) => (t / spec.integrator_dt).round() as usize,
        BurnIn::Steps(n) => n,
    };
    let step = |v: &[Complex64]| -> Result<Option<Vec<Complex64>>> {
        match etdrk4_step(v, coeffs) {
            Ok(next) => Ok(Some(next)),
            Err(Error::Numerical(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    for _ in 0..burn_steps {
        match step(&v)? {
            Some(next) => v = next,
            None => return Ok(None),
        }
    }
    let n = spec.state_dim();
    let mut data = Vec::with_capacity(spec.snapshot_count * n);
    for s in 0..spec.snapshot_count {
        if s > 0 {
            for _ in 0..sub {
                match step(&v)? {
                    Some(next) => v = next,
                    None => return Ok(None),
                }
            }
        }
        let (u, _) = ks::to_physical(&v);
        data.extend_from_slice(&u);
    }
    Ok(Some(Tensor::new(spec.snapshot_count, n, data)?))
}

/// Generates `n_traj` trajectories. Trajectories are stored in shuffled order
/// so that train, validation and test are contiguous index ranges; values are
/// rounded to `f32` so that saved and in-memory datasets agree exactly.
pub fn generate_dataset(
    spec: &SystemSpec,
    n_traj: usize,
    master_seed: u64,
    fractions: SplitFractions,
) -> Result<TrajectoryDataset> {
    spec.validate()?;
    if n_traj < 10 {
        return Err(Error::InvalidInput(format!("need at least 10 trajectories, got {n_traj}")));
    }
    let (n_train, n_val, _) = fractions.counts(n_traj)?;
    let coeffs = match spec.params {
        SystemParams::Ks { length, n } => Some(etdrk4_precompute(length, n, spec.integrator_dt)?),
        _ => None,
    };
    let mut order: Vec<usize> = (0..n_traj).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix64(master_seed ^ 0x5EED_5EED)));

    let mut resampled = 0;
    let mut trajectories = Vec::with_capacity(n_traj);
    for &index in &order {
        let mut attempt = 0;
        let traj = loop {
            let seed = child_seed(master_seed, index as u64, attempt);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x0 = sample_initial(spec, &mut rng)?;
            let states = match &coeffs {
                Some(c) => integrate_ks(spec, c, &x0)?,
                None => integrate_ode(spec, x0)?,
            };
            match states {
                Some(s) => break Trajectory {
                    states: s.map(|v| v as f32 as f64),
                    dt_sample: spec.dt_sample,
                    seed,
                },
                None => {
                    attempt += 1;
                    resampled += 1;
                    if attempt > MAX_RESAMPLES {
                        return Err(Error::Numerical(format!(
                            "trajectory {index} diverged in {MAX_RESAMPLES} attempts"
                        )));
                    }
                }
            }
        };
        trajectories.push(traj);
    }
    if resampled > 0 {
        log::info!("resampled {resampled} diverged trajectories");
    }
    Ok(TrajectoryDataset {
        system: *spec,
        trajectories,
        splits: Splits::contiguous(n_train, n_val, n_traj),
        master_seed,
        resampled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rhs_examples() {
        assert_eq!(eval_rhs(&SystemSpec::pendulum(), &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let l63 = SystemSpec::lorenz63();
        assert_eq!(eval_rhs(&l63, &[0.0; 3]).unwrap(), vec![0.0; 3]);
        let r = eval_rhs(&l63, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(r[0], 0.0);
        assert_eq!(r[1], 26.0);
        assert!((r[2] + 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(eval_rhs(&SystemSpec::lorenz96(), &[8.0; 36]).unwrap(), vec![0.0; 36]);
        assert!(eval_rhs(&l63, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn lorenz96_wraps_indices() {
        let spec = SystemSpec {
            params: SystemParams::Lorenz96 { k: 4, forcing: 0.0 },
            ..SystemSpec::lorenz96()
        };
        let x = [1.0, 2.0, 3.0, 4.0];
        let r = eval_rhs(&spec, &x).unwrap();
        // i = 0: (x1 - x_{-2}) x_{-1} - x0 = (2 - 3) * 4 - 1
        assert_eq!(r[0], -5.0);
        // i = 3: (x0 - x1) x2 - x3 = (1 - 2) * 3 - 4
        assert_eq!(r[3], -7.0);
    }

    #[test]
    fn ks_rhs_matches_spectral_pieces() {
        let spec = SystemSpec {
            params: SystemParams::Ks { length: 2.0 * PI, n: 32 },
            ..SystemSpec::ks()
        };
        // u = sin x: u_xx = -sin x, u_xxxx = sin x, u u_x = sin x cos x.
        let x: Vec<f64> = (0..32).map(|i| 2.0 * PI * i as f64 / 32.0).collect();
        let u: Vec<f64> = x.iter().map(|x| x.sin()).collect();
        let r = eval_rhs(&spec, &u).unwrap();
        for (i, xi) in x.iter().enumerate() {
            let expected = -xi.sin() * xi.cos() + xi.sin() - xi.sin();
            assert!((r[i] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn rk4_rejects_ks_and_bad_steps() {
        let ks = SystemSpec::ks();
        assert!(matches!(
            rk4_step(&ks, &vec![0.0; 128], 0.1),
            Err(Error::UnsupportedIntegrator(_))
        ));
        assert!(rk4_step(&SystemSpec::pendulum(), &[0.1, 0.0], 0.0).is_err());
    }

    #[test]
    fn rk4_linear_decay() {
        let x = rk4(|x| vec![-x[0]], &[1.0], 0.1);
        assert!((x[0] - (-0.1f64).exp()).abs() <= 1e-5);
        let tiny = rk4_step(&SystemSpec::pendulum(), &[0.3, -0.2], 1e-300).unwrap();
        assert_eq!(tiny, vec![0.3, -0.2]);
    }

    #[test]
    fn small_angle_period() {
        let spec = SystemSpec::pendulum();
        let mut x = vec![0.1, 0.0];
        for _ in 0..628 {
            x = rk4_step(&spec, &x, 0.01).unwrap();
        }
        assert!((x[0] - 0.1).abs() < 1e-3 && x[1].abs() < 2e-3, "{x:?}");
    }

    #[test]
    fn sampler_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let p = sample_initial(&SystemSpec::pendulum(), &mut rng).unwrap();
            assert!(pendulum_energy(&p) < 0.99);
            let l = sample_initial(&SystemSpec::lorenz96(), &mut rng).unwrap();
            assert!(l.iter().all(|v| (-5.0..=5.0).contains(v)));
            let z = sample_initial(&SystemSpec::lorenz63(), &mut rng).unwrap();
            assert!(z[0].abs() <= 18.0 && z[1].abs() <= 20.0 && (0.0..=50.0).contains(&z[2]));
        }
        let u = sample_initial(&SystemSpec::ks(), &mut rng).unwrap();
        assert_eq!(u.len(), 128);
        assert!(u.iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn split_counts() {
        assert_eq!(SplitFractions::default().counts(20_000).unwrap(), (14_000, 2_000, 4_000));
        assert_eq!(SplitFractions::default().counts(10).unwrap(), (7, 1, 2));
        assert!(SplitFractions { train: 0.9, val: 0.2 }.counts(10).is_err());
    }

    #[test]
    fn spec_validation() {
        for kind in SystemKind::ALL {
            SystemSpec::default_for(kind).validate().unwrap();
            assert_eq!(kind.name().parse::<SystemKind>().unwrap(), kind);
            assert_eq!(SystemKind::from_code(kind.code()).unwrap(), kind);
        }
        let mut bad = SystemSpec::lorenz96();
        bad.params = SystemParams::Lorenz96 { k: 3, forcing: 8.0 };
        assert!(bad.validate().is_err());
        let mut bad = SystemSpec::ks();
        bad.params = SystemParams::Ks { length: 1.0, n: 100 };
        assert!(bad.validate().is_err());
        let mut bad = SystemSpec::pendulum();
        bad.dt_sample = 0.015;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic_and_split() {
        let mut spec = SystemSpec::lorenz63();
        spec.snapshot_count = 21;
        spec.burn_in = BurnIn::Time(0.5);
        let a = generate_dataset(&spec, 20, 42, SplitFractions::default()).unwrap();
        let b = generate_dataset(&spec, 20, 42, SplitFractions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.splits.train.len(), a.splits.val.len(), a.splits.test.len()), (14, 2, 4));
        assert_eq!(a.trajectories[0].states.shape(), [21, 3]);
        let c = generate_dataset(&spec, 20, 43, SplitFractions::default()).unwrap();
        assert_ne!(a.trajectories[0].states, c.trajectories[0].states);
        assert!(generate_dataset(&spec, 9, 1, SplitFractions::default()).is_err());
    }

    #[test]
    fn ks_generation_runs() {
        let mut spec = SystemSpec::ks();
        spec.params = SystemParams::Ks { length: 8.0 * PI, n: 32 };
        spec.snapshot_count = 5;
        let ds = generate_dataset(&spec, 10, 3, SplitFractions::default()).unwrap();
        assert_eq!(ds.trajectories[0].states.shape(), [5, 32]);
        assert!(ds.trajectories.iter().all(|t| t.states.is_finite()));
    }

    #[test]
    fn overrides_apply() {
        let cfg: GenerateConfig = toml::from_str("snapshot_count = 50\nforcing = 10.0\nval_fraction = 0.2").unwrap();
        let mut spec = SystemSpec::lorenz96();
        let mut fr = SplitFractions::default();
        cfg.apply(&mut spec, &mut fr);
        assert_eq!(spec.snapshot_count, 50);
        assert_eq!(spec.params, SystemParams::Lorenz96 { k: 36, forcing: 10.0 });
        assert_eq!(fr.val, 0.2);
        assert!(toml::from_str::<GenerateConfig>("bogus = 1").is_err());
    }
}

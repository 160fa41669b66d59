//! Rollout metrics, operator and latent inspection, CSV output, checkpoints and
//! the command-line front end.

mod checkpoint;
pub mod cli;

use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::error::{Error, Result};
use crate::genops;
use crate::models::{Model, ModelKind};
use crate::netcore::Tensor;
use crate::systems::Trajectory;

/// Anything that forecasts a trajectory from its first snapshot.
pub trait Predictor {
    /// `(horizon + 1) x d` predictions in physical units for snapshots
    /// `0, stride, 2 stride, ..` of `states`.
    fn predict(&self, states: &Tensor, horizon: usize, stride: usize) -> Result<Tensor>;
}

impl Predictor for Model {
    fn predict(&self, states: &Tensor, horizon: usize, _stride: usize) -> Result<Tensor> {
        self.rollout(states.row(0), horizon)
    }
}

/// Snapshots `0, stride, .., horizon * stride`.
pub fn truth_rows(states: &Tensor, horizon: usize, stride: usize) -> Result<Tensor> {
    check_horizon(states.rows(), horizon, stride)?;
    crate::trainer::window(states, 0, stride, horizon + 1)
}

fn check_horizon(snapshots: usize, horizon: usize, stride: usize) -> Result<()> {
    if horizon == 0 || stride == 0 || horizon * stride > snapshots.saturating_sub(1) {
        return Err(Error::InvalidInput(format!(
            "horizon {horizon} at stride {stride} needs {} snapshots, trajectories have {snapshots}",
            horizon * stride + 1
        )));
    }
    Ok(())
}

/// Per-step NRMSE over trajectories:
/// `sqrt(sum_i |x_hat_it - x_it|^2) / sqrt(sum_i |x_it|^2)`.
pub fn nrmse_from_predictions(preds: &[Tensor], truth: &[Tensor]) -> Result<Vec<f64>> {
    if preds.is_empty() || preds.len() != truth.len() {
        return Err(Error::Shape("predictions and truth must pair up".into()));
    }
    let shape = truth[0].shape();
    let mut num = vec![0.0; shape[0]];
    let mut den = vec![0.0; shape[0]];
    for (p, x) in preds.iter().zip(truth) {
        if p.shape() != shape || x.shape() != shape {
            return Err(Error::Shape(format!("prediction {:?} vs truth {:?}", p.shape(), x.shape())));
        }
        for t in 0..shape[0] {
            for (a, b) in p.row(t).iter().zip(x.row(t)) {
                num[t] += (a - b) * (a - b);
                den[t] += b * b;
            }
        }
    }
    Ok(num
        .iter()
        .zip(&den)
        .map(|(n, d)| if *n == 0.0 { 0.0 } else { (n / d).sqrt() })
        .collect())
}

/// NRMSE curve of length `horizon + 1` over `trajs`.
pub fn nrmse_curve(pred: &dyn Predictor, trajs: &[&Trajectory], horizon: usize, stride: usize) -> Result<Vec<f64>> {
    if trajs.is_empty() {
        return Err(Error::InvalidInput("no trajectories to evaluate".into()));
    }
    let mut preds = Vec::with_capacity(trajs.len());
    let mut truth = Vec::with_capacity(trajs.len());
    for tr in trajs {
        truth.push(truth_rows(&tr.states, horizon, stride)?);
        preds.push(pred.predict(&tr.states, horizon, stride)?);
    }
    nrmse_from_predictions(&preds, &truth)
}

/// `|x_hat - x|` over `(horizon + 1) x d`.
pub fn error_field(pred: &dyn Predictor, traj: &Trajectory, horizon: usize, stride: usize) -> Result<Tensor> {
    let truth = truth_rows(&traj.states, horizon, stride)?;
    let p = pred.predict(&traj.states, horizon, stride)?;
    if p.shape() != truth.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs truth {:?}", p.shape(), truth.shape())));
    }
    Ok(p.zip_map(&truth, |a, b| (a - b).abs()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumEntry {
    /// `state` for `K(z)`, `mean` for uniform gate weights, `skew_<n>` /
    /// `selfadj_<m>` for single generators.
    pub generator_id: String,
    pub re: f64,
    pub im: f64,
    /// `|lambda| - 1`.
    pub abs_dev: f64,
}

fn spectrum_entries(id: &str, k: &Tensor) -> Result<Vec<SpectrumEntry>> {
    Ok(genops::spectrum(k)?
        .into_iter()
        .map(|l| SpectrumEntry {
            generator_id: id.to_string(),
            re: l.re,
            im: l.im,
            abs_dev: l.norm() - 1.0,
        })
        .collect())
}

/// Operator with uniform gate weights (KoopGen only).
pub fn mean_operator(model: &Model) -> Result<Tensor> {
    let bank = model.generator_bank()?;
    let n = model.n_skew();
    let m = model.n_selfadj();
    let w_hat = vec![1.0 / n as f64; n];
    let w_tilde = (m > 0).then(|| vec![1.0 / m as f64; m]);
    genops::matrix_exp(&bank.generator(&w_hat, w_tilde.as_deref())?, model.config().dt)
}

/// Spectrum of `K(z)`; for KoopGen also of the uniform-weight operator and of
/// every single generator's exponential.
pub fn inspect_spectrum(model: &Model, z: &[f64]) -> Result<Vec<SpectrumEntry>> {
    let mut out = spectrum_entries("state", &model.operator_at(z)?)?;
    if model.kind() == ModelKind::KoopGen {
        let dt = model.config().dt;
        out.extend(spectrum_entries("mean", &mean_operator(model)?)?);
        let bank = model.generator_bank()?;
        for (i, op) in bank.skew_ops()?.iter().enumerate() {
            out.extend(spectrum_entries(&format!("skew_{i}"), &genops::matrix_exp(op, dt)?)?);
        }
        for (i, op) in bank.selfadj_ops()?.iter().enumerate() {
            out.extend(spectrum_entries(&format!("selfadj_{i}"), &genops::matrix_exp(op, dt)?)?);
        }
    }
    Ok(out)
}

/// Eigen-decomposition `K = V diag(lambda) V^-1` used to express latents in
/// eigenvector coordinates.
#[derive(Clone, Debug)]
pub struct EigenBasis {
    pub eigenvalues: Vec<Complex64>,
    /// Column `j` of `V`, unit norm.
    pub vectors: Vec<Vec<Complex64>>,
}

impl EigenBasis {
    pub fn of(k: &Tensor) -> Result<Self> {
        let eigenvalues = genops::spectrum(k)?;
        let vectors = eigenvalues
            .iter()
            .map(|&l| genops::eigenvector(k, l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { eigenvalues, vectors })
    }

    /// Coordinates `c` with `V c = z`.
    pub fn project(&self, z: &[f64]) -> Result<Vec<Complex64>> {
        let n = self.vectors.len();
        if z.len() != n {
            return Err(Error::Shape(format!("latent of {} for a basis of {n}", z.len())));
        }
        let a: Vec<Vec<Complex64>> = (0..n).map(|i| (0..n).map(|j| self.vectors[j][i]).collect()).collect();
        let b: Vec<Complex64> = z.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        genops::solve_complex(a, &b)
    }
}

/// Rectangular grid over two state coordinates; the others stay at `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub axes: [usize; 2],
    /// `(lo, hi, points)` per axis; a single point sits at `lo`.
    pub x1: (f64, f64, usize),
    pub x2: (f64, f64, usize),
    /// Full physical state supplying the non-grid coordinates.
    pub base: Vec<f64>,
}

impl GridSpec {
    fn validate(&self, d: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if d < 2 {
            return bad(format!("grid inspection needs a state dimension of at least 2, got {d}"));
        }
        if self.base.len() != d {
            return bad(format!("base state has {} components, expected {d}", self.base.len()));
        }
        let [a, b] = self.axes;
        if a == b || a >= d || b >= d {
            return bad(format!("grid axes {a}, {b} invalid for dimension {d}"));
        }
        for (lo, hi, n) in [self.x1, self.x2] {
            if n == 0 || !lo.is_finite() || !hi.is_finite() || hi < lo || (n > 1 && hi == lo) {
                return bad(format!("invalid grid range [{lo}, {hi}] with {n} points"));
            }
        }
        Ok(())
    }
}

fn linspace((lo, hi, n): (f64, f64, usize)) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub x1: f64,
    pub x2: f64,
    /// `sqrt(z_i^2 + z_{i+D}^2)` per complex latent coordinate.
    pub magnitude: Vec<f64>,
    /// `atan2(z_{i+D}, z_i)`, in `(-pi, pi]`.
    pub phase: Vec<f64>,
    pub w_hat: Vec<f64>,
    pub w_tilde: Vec<f64>,
    /// Latent in eigenvector coordinates of the uniform-weight operator, when requested.
    pub eigen: Option<Vec<Complex64>>,
}

// atan2 yields -pi for a negative real part and a -0.0 imaginary part.
fn half_open_phase(p: f64) -> f64 {
    if p <= -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        p
    }
}

fn complex_pairs(model: &Model) -> usize {
    match model.kind() {
        ModelKind::DeepKoopman => model.config().n_complex,
        _ => model.config().latent_dim,
    }
}

/// Encodes every grid state and reports latent magnitude, phase and gate weights.
pub fn inspect_grid(model: &Model, spec: &GridSpec, basis: Option<&EigenBasis>) -> Result<Vec<GridCell>> {
    spec.validate(model.config().state_dim)?;
    let pairs = complex_pairs(model);
    let xs1 = linspace(spec.x1);
    let xs2 = linspace(spec.x2);
    let mut out = Vec::with_capacity(xs1.len() * xs2.len());
    for &a in &xs1 {
        for &b in &xs2 {
            let mut x = spec.base.clone();
            x[spec.axes[0]] = a;
            x[spec.axes[1]] = b;
            let z = model.encode(&x)?;
            let magnitude = (0..pairs).map(|i| z[i].hypot(z[i + pairs])).collect();
            let phase = (0..pairs).map(|i| half_open_phase(z[i + pairs].atan2(z[i]))).collect();
            let (w_hat, w_tilde) = if model.kind() == ModelKind::KoopGen {
                let (h, t) = model.gate_weights(&z)?;
                (h, t.unwrap_or_default())
            } else {
                (Vec::new(), Vec::new())
            };
            let eigen = basis.map(|bs| bs.project(&z)).transpose()?;
            out.push(GridCell {
                x1: a,
                x2: b,
                magnitude,
                phase,
                w_hat,
                w_tilde,
                eigen,
            });
        }
    }
    Ok(out)
}

/// String-valued CSV table with a header row. Reals are written in shortest
/// round-trip form, so re-reading reproduces them exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(headers: Vec<String>) -> Self {
        Self {
            headers,
            rows: Vec::new(),
        }
    }

    pub fn push_reals(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|v| v.to_string()).collect());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.headers)?;
        for r in &self.rows {
            if r.len() != self.headers.len() {
                return Err(Error::Shape(format!("CSV row of {} for {} columns", r.len(), self.headers.len())));
            }
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Ok(Self { headers, rows })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("no column {name}")))?;
        self.rows
            .iter()
            .map(|r| {
                r[j].parse::<f64>()
                    .map_err(|e| Error::Format(format!("column {name}: {e}")))
            })
            .collect()
    }
}

/// `step, nrmse`.
pub fn nrmse_table(curve: &[f64]) -> CsvTable {
    let mut t = CsvTable::new(vec!["step".into(), "nrmse".into()]);
    for (i, v) in curve.iter().enumerate() {
        t.rows.push(vec![i.to_string(), v.to_string()]);
    }
    t
}

/// `step, c0 .. c{d-1}`.
pub fn error_field_table(field: &Tensor) -> CsvTable {
    let mut headers = vec!["step".to_string()];
    headers.extend((0..field.cols()).map(|c| format!("c{c}")));
    let mut t = CsvTable::new(headers);
    for i in 0..field.rows() {
        let mut row = vec![i.to_string()];
        row.extend(field.row(i).iter().map(|v| v.to_string()));
        t.rows.push(row);
    }
    t
}

/// `x1, x2, mag_*, phase_*, w_hat_*, w_tilde_*`.
pub fn grid_table(cells: &[GridCell]) -> CsvTable {
    let Some(first) = cells.first() else {
        return CsvTable::new(vec!["x1".into(), "x2".into()]);
    };
    let mut headers = vec!["x1".to_string(), "x2".to_string()];
    headers.extend((0..first.magnitude.len()).map(|i| format!("mag_{i}")));
    headers.extend((0..first.phase.len()).map(|i| format!("phase_{i}")));
    headers.extend((0..first.w_hat.len()).map(|i| format!("w_hat_{i}")));
    headers.extend((0..first.w_tilde.len()).map(|i| format!("w_tilde_{i}")));
    let mut t = CsvTable::new(headers);
    for c in cells {
        let mut row = vec![c.x1, c.x2];
        row.extend(&c.magnitude);
        row.extend(&c.phase);
        row.extend(&c.w_hat);
        row.extend(&c.w_tilde);
        t.push_reals(&row);
    }
    t
}

/// `x1, x2, eig_mag_*, eig_phase_*`: latent coordinates in the eigenvector basis.
pub fn eigen_grid_table(cells: &[GridCell]) -> CsvTable {
    let n = cells.first().and_then(|c| c.eigen.as_ref()).map_or(0, Vec::len);
    let mut headers = vec!["x1".to_string(), "x2".to_string()];
    headers.extend((0..n).map(|i| format!("eig_mag_{i}")));
    headers.extend((0..n).map(|i| format!("eig_phase_{i}")));
    let mut t = CsvTable::new(headers);
    for c in cells {
        let Some(e) = &c.eigen else { continue };
        let mut row = vec![c.x1, c.x2];
        row.extend(e.iter().map(|v| v.norm()));
        row.extend(e.iter().map(|v| v.arg()));
        t.push_reals(&row);
    }
    t
}

/// `generator_id, re, im, abs_dev`.
pub fn spectrum_table(entries: &[SpectrumEntry]) -> CsvTable {
    let mut t = CsvTable::new(vec!["generator_id".into(), "re".into(), "im".into(), "abs_dev".into()]);
    for e in entries {
        t.rows.push(vec![
            e.generator_id.clone(),
            e.re.to_string(),
            e.im.to_string(),
            e.abs_dev.to_string(),
        ]);
    }
    t
}

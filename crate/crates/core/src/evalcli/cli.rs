//! `koopgen` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use super::{
    eigen_grid_table, error_field, error_field_table, grid_table, inspect_grid, inspect_spectrum, load_checkpoint,
    mean_operator, nrmse_curve, nrmse_table, save_checkpoint, spectrum_table, EigenBasis, GridSpec,
};
use crate::error::{Error, Result};
use crate::models::ModelKind;
use crate::systems::{
    dataset_hash, generate_dataset, load_dataset, save_dataset, GenerateConfig, SplitFractions, SplitKind,
    SystemKind, SystemSpec,
};
use crate::trainer::{train, write_metrics, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "koopgen", version, about = "Koopman generator networks: data, training, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a benchmark system and write a dataset file.
    Generate(GenerateArgs),
    /// Train a model and write its best-validation checkpoint.
    Train(TrainArgs),
    /// Roll out a checkpoint on the test split and write NRMSE and error fields.
    Evaluate(EvaluateArgs),
    /// Export operator spectra or latent grids of a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub system: SystemKind,
    #[arg(long)]
    pub n_traj: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML overrides for the system preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: ModelKind,
    /// TOML with optional `[model]` and `[train]` tables overriding the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `train.epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub horizon: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Error fields written for the first this many test trajectories.
    #[arg(long, default_value_t = 4)]
    pub fields: usize,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, global = true)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub what: InspectCommand,
}

#[derive(Debug, Subcommand)]
pub enum InspectCommand {
    /// Eigenvalues of K(z) and of every single-generator exponential.
    Spectrum {
        /// Physical state whose latent defines K(z); defaults to the training mean.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        state: Option<Vec<f64>>,
    },
    /// Latent magnitude, phase and gate weights over a 2-D slice of state space.
    Grid(GridArgs),
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    pub axes: Vec<usize>,
    /// `lo,hi` for the first axis; defaults to mean +- 2 std of the training data.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x1: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x2: Option<Vec<f64>>,
    /// Points per axis.
    #[arg(long, default_value_t = 41)]
    pub n: usize,
    /// Full state holding the non-grid coordinates; defaults to the training mean.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub base: Option<Vec<f64>>,
    /// Also write latent coordinates in the eigenvector basis of the uniform-weight operator.
    #[arg(long)]
    pub eigenbasis: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => run_generate(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Inspect(a) => run_inspect(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn run_generate(a: GenerateArgs) -> Result<()> {
    let mut spec = SystemSpec::default_for(a.system);
    let mut fractions = SplitFractions::default();
    if let Some(p) = &a.config {
        let cfg: GenerateConfig = toml::from_str(&read_text(p)?).map_err(|e| Error::Config(format!("{e}")))?;
        cfg.apply(&mut spec, &mut fractions);
    }
    let ds = generate_dataset(&spec, a.n_traj, a.seed, fractions)?;
    save_dataset(&ds, &a.out)?;
    log::info!(
        "wrote {} trajectories ({} resampled) to {}",
        ds.trajectories.len(),
        ds.resampled,
        a.out.display()
    );
    println!("{}", dataset_hash(&ds));
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_train(a: TrainArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let system = ds.system.kind();
    let mut run = RunConfig::preset(system, a.model, ds.state_dim());
    if let Some(p) = &a.config {
        run = run.overlay_toml(&read_text(p)?)?;
    }
    if run.model.kind != a.model {
        return Err(Error::Config(format!(
            "config sets model kind {} but --model is {}",
            run.model.kind, a.model
        )));
    }
    if let Some(s) = a.seed {
        run.train.seed = s;
    }
    if let Some(e) = a.epochs {
        run.train.epochs = e;
    }
    let report = train(&ds, &run.model, &run.train, &dataset_hash(&ds))?;
    save_checkpoint(&report.best, &a.out)?;
    save_checkpoint(&report.last, &sibling(&a.out, ".last"))?;
    write_metrics(&sibling(&a.out, ".metrics.jsonl"), &report.metrics)?;
    log::info!(
        "best epoch {} with validation loss {:.6} (initial {:.6})",
        report.best.epoch,
        report.best.val_loss,
        report.initial_val_loss
    );
    match report.aborted {
        Some(msg) => Err(Error::Numerical(format!("training aborted, last good checkpoint written: {msg}"))),
        None => Ok(()),
    }
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let ds = load_dataset(&a.data)?;
    let hash = dataset_hash(&ds);
    if hash != ckpt.dataset_hash {
        log::warn!(
            "dataset hash {hash} differs from the training dataset {}",
            ckpt.dataset_hash
        );
    }
    let test = ds.split(SplitKind::Test);
    let stride = ckpt.window_stride;
    let curve = nrmse_curve(&ckpt.model, &test, a.horizon, stride)?;
    fs::create_dir_all(&a.out)?;
    nrmse_table(&curve).write(&a.out.join("nrmse.csv"))?;
    for (i, tr) in test.iter().take(a.fields).enumerate() {
        let field = error_field(&ckpt.model, tr, a.horizon, stride)?;
        error_field_table(&field).write(&a.out.join(format!("error_field_{i}.csv")))?;
    }
    let mean = curve[1..].iter().sum::<f64>() / a.horizon as f64;
    let report = json!({
        "model": ckpt.model.kind(),
        "system": ckpt.system,
        "epoch": ckpt.epoch,
        "horizon": a.horizon,
        "window_stride": stride,
        "test_trajectories": test.len(),
        "dataset_hash": hash,
        "dataset_hash_matches": hash == ckpt.dataset_hash,
        "nrmse_normalization": "per step: sqrt(sum_i |x_hat - x|^2) / sqrt(sum_i |x|^2) over test trajectories",
        "mean_nrmse": mean,
        "nrmse": curve,
    });
    fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    println!("mean NRMSE over {} steps: {mean:.6}", a.horizon);
    Ok(())
}

fn range(v: &Option<Vec<f64>>, mean: f64, std: f64, n: usize) -> Result<(f64, f64, usize)> {
    match v.as_deref() {
        None => Ok((mean - 2.0 * std, mean + 2.0 * std, n)),
        Some([lo, hi]) => Ok((*lo, *hi, n)),
        Some(other) => Err(Error::InvalidInput(format!("grid range needs lo,hi, got {other:?}"))),
    }
}

fn run_inspect(a: InspectArgs) -> Result<()> {
    let ckpt_path = a.ckpt.ok_or_else(|| Error::InvalidInput("--ckpt is required".into()))?;
    let out = a.out.ok_or_else(|| Error::InvalidInput("--out is required".into()))?;
    let ckpt = load_checkpoint(&ckpt_path)?;
    let model = &ckpt.model;
    let scaler = model.scaler();
    fs::create_dir_all(&out)?;
    match a.what {
        InspectCommand::Spectrum { state } => {
            let x = state.unwrap_or_else(|| scaler.mean.clone());
            let entries = inspect_spectrum(model, &model.encode(&x)?)?;
            spectrum_table(&entries).write(&out.join("spectrum.csv"))?;
            let worst = entries
                .iter()
                .filter(|e| e.generator_id.starts_with("skew_"))
                .map(|e| e.abs_dev.abs())
                .fold(0.0, f64::max);
            println!("{} eigenvalues; max ||lambda| - 1| over skew generators {worst:.3e}", entries.len());
        }
        InspectCommand::Grid(g) => {
            let [i, j] = <[usize; 2]>::try_from(g.axes.as_slice())
                .map_err(|_| Error::InvalidInput("--axes needs exactly two indices".into()))?;
            let d = scaler.dim();
            if i >= d || j >= d {
                return Err(Error::InvalidInput(format!("grid axes {i}, {j} invalid for dimension {d}")));
            }
            let spec = GridSpec {
                axes: [i, j],
                x1: range(&g.x1, scaler.mean[i], scaler.std[i], g.n)?,
                x2: range(&g.x2, scaler.mean[j], scaler.std[j], g.n)?,
                base: g.base.unwrap_or_else(|| scaler.mean.clone()),
            };
            let basis = if g.eigenbasis {
                Some(EigenBasis::of(&mean_operator(model)?)?)
            } else {
                None
            };
            let cells = inspect_grid(model, &spec, basis.as_ref())?;
            grid_table(&cells).write(&out.join("grid.csv"))?;
            if basis.is_some() {
                eigen_grid_table(&cells).write(&out.join("grid_eigenbasis.csv"))?;
            }
            println!("{} grid cells", cells.len());
        }
    }
    Ok(())
}

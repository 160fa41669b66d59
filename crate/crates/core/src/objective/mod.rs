//! Sobolev trajectory loss `||x - x_hat||_k + alpha ||z - z_hat||_k` with `p = 2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::netcore::{dft, Tape, Tensor, Var};

pub const MAX_SOBOLEV_ORDER: u32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    /// Sobolev order, shared by both terms.
    pub k: u32,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 0.1, k: 1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if self.k > MAX_SOBOLEV_ORDER {
            return Err(Error::Config(format!("Sobolev order {} exceeds {MAX_SOBOLEV_ORDER}", self.k)));
        }
        Ok(())
    }
}

/// `sqrt(sum_c sum_xi (1 + xi^2 + ... + xi^2k) |u_hat_c(xi)|^2)` over the
/// columns of a `T x C` series, unitary DFT along time.
pub fn sobolev_norm(u: &Tensor, k: u32) -> Result<f64> {
    if u.rows() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {}", u.rows())));
    }
    if k > MAX_SOBOLEV_ORDER {
        return Err(Error::Config(format!("Sobolev order {k} exceeds {MAX_SOBOLEV_ORDER}")));
    }
    Ok(dft::sobolev_energy(u, k).sqrt())
}

/// Batch mean of `||x - x_hat||_k + alpha ||z - z_hat||_k`; each slice holds one
/// matrix per trajectory.
pub fn total_loss(x: &[Tensor], x_hat: &[Tensor], z: &[Tensor], z_hat: &[Tensor], cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let n = x.len();
    if n == 0 || x_hat.len() != n || z.len() != n || z_hat.len() != n {
        return Err(Error::Shape("loss inputs must hold the same non-zero number of trajectories".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        let state = sobolev_norm(&x[i].sub(&x_hat[i])?, cfg.k)?;
        let latent = sobolev_norm(&z[i].sub(&z_hat[i])?, cfg.k)?;
        total += state + cfg.alpha * latent;
    }
    Ok(total / n as f64)
}

/// Tape version of the per-trajectory loss.
pub fn loss_on_tape(tape: &mut Tape<'_>, x: Var, x_hat: Var, z: Var, z_hat: Var, cfg: &LossConfig) -> Result<Var> {
    let dx = tape.sub(x, x_hat)?;
    let ex = tape.sobolev_energy(dx, cfg.k)?;
    let state = tape.sqrt(ex);
    let dz = tape.sub(z, z_hat)?;
    let ez = tape.sobolev_energy(dz, cfg.k)?;
    let latent = tape.sqrt(ez);
    let latent = tape.scale(latent, cfg.alpha);
    tape.add(state, latent)
}

/// Records the loss of one window of standardized states (`T x d`): encode every
/// sample, roll the latent forward from `z_hat(0) = z(0)`, decode the rollout.
pub fn window_loss(model: &Model, tape: &mut Tape<'_>, window: &Tensor, cfg: &LossConfig) -> Result<Var> {
    if window.rows() < 2 {
        return Err(Error::InvalidInput("a training window needs at least 2 samples".into()));
    }
    let prep = model.prepare(tape)?;
    let x = tape.input(window.clone());
    let z = model.encode_rows(tape, x)?;
    let mut rows = Vec::with_capacity(window.rows());
    let mut cur = tape.row(z, 0)?;
    rows.push(cur);
    for _ in 1..window.rows() {
        cur = model.step_row(tape, &prep, cur)?;
        rows.push(cur);
    }
    let z_hat = tape.stack_rows(&rows)?;
    let x_hat = model.decode_rows(tape, z_hat)?;
    loss_on_tape(tape, x, x_hat, z, z_hat, cfg)
}

/// Loss value of one window without keeping gradients.
pub fn window_loss_value(model: &Model, window: &Tensor, cfg: &LossConfig) -> Result<f64> {
    let mut tape = Tape::new(model.params());
    let l = window_loss(model, &mut tape, window, cfg)?;
    Ok(tape.value(l).data()[0])
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn series(t: usize, c: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
        Tensor::from_fn(t, c, f)
    }

    #[test]
    fn zero_and_parseval() {
        assert_eq!(sobolev_norm(&Tensor::zeros(8, 2), 2).unwrap(), 0.0);
        let u = series(9, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.1);
        let l2 = u.frobenius();
        assert!((sobolev_norm(&u, 0).unwrap() - l2).abs() <= 1e-10 * l2.max(1.0));
        assert!(sobolev_norm(&Tensor::zeros(1, 2), 0).is_err());
    }

    #[test]
    fn single_frequency() {
        let t = 32;
        let u = series(t, 1, |i, _| (2.0 * PI * 3.0 * i as f64 / t as f64).cos());
        let e = u.dot(&u);
        let n = sobolev_norm(&u, 1).unwrap();
        assert!((n * n - 10.0 * e).abs() <= 1e-10 * e);
    }

    #[test]
    fn monotone_in_order() {
        let u = series(11, 2, |i, j| (i as f64 * 0.7 + j as f64).sin());
        let mut last = 0.0;
        for k in 0..=4 {
            let n = sobolev_norm(&u, k).unwrap();
            assert!(n >= last);
            last = n;
        }
        assert!(sobolev_norm(&u, 5).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let x = vec![series(6, 2, |i, j| (i + j) as f64)];
        let z = vec![series(6, 4, |i, j| (i * j) as f64 * 0.1)];
        let cfg = LossConfig { alpha: 0.1, k: 1 };
        assert_eq!(total_loss(&x, &x, &z, &z, &cfg).unwrap(), 0.0);

        let e = series(6, 2, |i, j| ((i * 3 + j) % 4) as f64 - 1.5);
        let xh = vec![x[0].sub(&e).unwrap()];
        let no_alpha = LossConfig { alpha: 0.0, k: 1 };
        let zh = vec![z[0].scale(2.0)];
        assert_eq!(
            total_loss(&x, &xh, &z, &zh, &no_alpha).unwrap(),
            sobolev_norm(&e, 1).unwrap()
        );

        // Equal residuals in both terms: (1 + alpha) * ||e||.
        let zz = vec![x[0].clone()];
        let l = total_loss(&x, &xh, &zz, &xh, &cfg).unwrap();
        assert!((l - 1.1 * sobolev_norm(&e, 1).unwrap()).abs() < 1e-12);

        assert!(total_loss(&x, &[], &z, &z, &cfg).is_err());
        assert!(LossConfig { alpha: -1.0, k: 1 }.validate().is_err());
    }

    #[test]
    fn spectral_matches_time_domain_derivatives() {
        // Band-limited periodic signal: ||u||^2 + ||u'||^2 with u' from the DFT
        // derivative equals the k = 1 spectral sum.
        let t = 16;
        let u = series(t, 1, |i, _| {
            let s = 2.0 * PI * i as f64 / t as f64;
            1.0 + 0.5 * s.sin() - 0.25 * (3.0 * s).cos()
        });
        let du = series(t, 1, |i, _| {
            let s = 2.0 * PI * i as f64 / t as f64;
            0.5 * s.cos() + 0.75 * (3.0 * s).sin()
        });
        let direct = u.dot(&u) + du.dot(&du);
        let n = sobolev_norm(&u, 1).unwrap();
        assert!((n * n - direct).abs() <= 1e-8);
    }

    #[test]
    fn tape_loss_matches_plain_loss() {
        let x = series(7, 2, |i, j| (i as f64 * 0.3 + j as f64).sin());
        let xh = series(7, 2, |i, j| (i as f64 * 0.31 + j as f64).sin());
        let z = series(7, 3, |i, j| (i * j) as f64 * 0.05);
        let zh = series(7, 3, |i, j| (i * j) as f64 * 0.04);
        let cfg = LossConfig { alpha: 0.7, k: 2 };
        let store = crate::netcore::ParamStore::new();
        let mut tape = Tape::new(&store);
        let vars = [x.clone(), xh.clone(), z.clone(), zh.clone()].map(|t| tape.input(t));
        let l = loss_on_tape(&mut tape, vars[0], vars[1], vars[2], vars[3], &cfg).unwrap();
        let plain = total_loss(&[x], &[xh], &[z], &[zh], &cfg).unwrap();
        assert!((tape.value(l).data()[0] - plain).abs() < 1e-13);
    }
}

//! Unitary DFT over time and the Sobolev-weighted spectral energy it feeds.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Tensor;

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|p| {
        let mut guard = p.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// In-place unnormalized forward DFT.
pub fn fft_forward(buf: &mut [Complex64]) {
    plan(buf.len(), false).process(buf);
}

/// In-place unnormalized inverse DFT.
pub fn fft_inverse(buf: &mut [Complex64]) {
    plan(buf.len(), true).process(buf);
}

/// Integer frequency of DFT bin `j` for a length-`t` transform:
/// `xi` runs over `-floor(t/2) ..= ceil(t/2) - 1`.
pub fn bin_frequency(j: usize, t: usize) -> i64 {
    if j < t.div_ceil(2) {
        j as i64
    } else {
        j as i64 - t as i64
    }
}

/// Per-bin weights `1 + xi^2 + ... + xi^(2k)` in DFT bin order.
pub fn sobolev_weights(t: usize, k: u32) -> Vec<f64> {
    (0..t)
        .map(|j| {
            let xi2 = (bin_frequency(j, t) as f64).powi(2);
            let mut w = 0.0;
            let mut p = 1.0;
            for _ in 0..=k {
                w += p;
                p *= xi2;
            }
            w
        })
        .collect()
}

fn column_spectrum(u: &Tensor, c: usize) -> Vec<Complex64> {
    let t = u.rows();
    let norm = 1.0 / (t as f64).sqrt();
    let mut buf: Vec<Complex64> = (0..t)
        .map(|i| Complex64::new(u.get(i, c), 0.0))
        .collect();
    fft_forward(&mut buf);
    buf.iter_mut().for_each(|v| *v *= norm);
    buf
}

/// `sum_c sum_xi w(xi) |u_hat_c(xi)|^2` with the unitary DFT taken down each column.
pub fn sobolev_energy(u: &Tensor, k: u32) -> f64 {
    let w = sobolev_weights(u.rows(), k);
    (0..u.cols())
        .map(|c| {
            column_spectrum(u, c)
                .iter()
                .zip(&w)
                .map(|(v, wi)| wi * v.norm_sqr())
                .sum::<f64>()
        })
        .sum()
}

/// Gradient of [`sobolev_energy`] with respect to `u`: `2 Re(F^H (w * F u))` per column.
pub fn sobolev_energy_grad(u: &Tensor, k: u32) -> Tensor {
    let t = u.rows();
    let w = sobolev_weights(t, k);
    let norm = 1.0 / (t as f64).sqrt();
    let mut out = Tensor::zeros(t, u.cols());
    for c in 0..u.cols() {
        let mut spec = column_spectrum(u, c);
        for (v, wi) in spec.iter_mut().zip(&w) {
            *v *= *wi;
        }
        fft_inverse(&mut spec);
        for (i, v) in spec.iter().enumerate() {
            out.set(i, c, 2.0 * norm * v.re);
        }
    }
    out
}

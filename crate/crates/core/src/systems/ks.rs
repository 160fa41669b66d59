//! Kuramoto–Sivashinsky `u_t = -u u_x - u_xx - u_xxxx` on a periodic domain,
//! advanced in Fourier space with ETDRK4.
//!
//! Spectral arrays use FFT bin order: bin `j` holds mode `m = j` for `j < N/2`
//! and `m = j - N` otherwise, so the Nyquist bin is `m = -N/2`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::netcore::dft::{fft_forward, fft_inverse};

const CONTOUR_POINTS: usize = 32;

#[derive(Clone, Debug)]
pub struct Etdrk4Coeffs {
    pub n: usize,
    pub length: f64,
    pub dt: f64,
    /// Wavenumber `k = 2 pi m / L` per bin.
    pub wavenumber: Vec<f64>,
    /// Linear symbol `k^2 - k^4` per bin.
    pub linear: Vec<f64>,
    pub e: Vec<f64>,
    pub e2: Vec<f64>,
    pub q: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub f3: Vec<f64>,
    /// `-i k / 2`, zero at the Nyquist bin.
    pub nonlinear: Vec<Complex64>,
    /// True for bins with `|m| <= N/3`.
    pub keep: Vec<bool>,
}

pub fn mode_index(j: usize, n: usize) -> i64 {
    if j < n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

pub fn etdrk4_precompute(length: f64, n: usize, dt: f64) -> Result<Etdrk4Coeffs> {
    if n < 16 || !n.is_power_of_two() {
        return Err(Error::InvalidInput(format!("KS grid size must be a power of two >= 16, got {n}")));
    }
    if !(length > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidInput("KS domain length and step must be positive".into()));
    }
    let roots: Vec<Complex64> = (0..CONTOUR_POINTS)
        .map(|j| {
            let theta = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / CONTOUR_POINTS as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect();
    let contour_mean = |c: f64, f: &dyn Fn(Complex64) -> Complex64| -> f64 {
        roots.iter().map(|&r| f(c + r)).sum::<Complex64>().re / CONTOUR_POINTS as f64
    };

    let mut out = Etdrk4Coeffs {
        n,
        length,
        dt,
        wavenumber: Vec::with_capacity(n),
        linear: Vec::with_capacity(n),
        e: Vec::with_capacity(n),
        e2: Vec::with_capacity(n),
        q: Vec::with_capacity(n),
        f1: Vec::with_capacity(n),
        f2: Vec::with_capacity(n),
        f3: Vec::with_capacity(n),
        nonlinear: Vec::with_capacity(n),
        keep: Vec::with_capacity(n),
    };
    let cutoff = n as f64 / 3.0;
    for j in 0..n {
        let m = mode_index(j, n);
        let k = 2.0 * std::f64::consts::PI * m as f64 / length;
        let l = k * k - k.powi(4);
        let c = l * dt;
        out.wavenumber.push(k);
        out.linear.push(l);
        out.e.push(c.exp());
        out.e2.push((c / 2.0).exp());
        out.q.push(dt * contour_mean(c, &|z| ((z / 2.0).exp() - 1.0) / z));
        out.f1.push(dt * contour_mean(c, &|z| (-4.0 - z + z.exp() * (4.0 - 3.0 * z + z * z)) / z.powi(3)));
        out.f2.push(dt * contour_mean(c, &|z| (2.0 + z + z.exp() * (z - 2.0)) / z.powi(3)));
        out.f3.push(dt * contour_mean(c, &|z| (-4.0 - 3.0 * z - z * z + z.exp() * (4.0 - z)) / z.powi(3)));
        let nyquist = j == n / 2;
        out.nonlinear.push(if nyquist {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, -0.5 * k)
        });
        out.keep.push((m.unsigned_abs() as f64) <= cutoff);
    }
    Ok(out)
}

/// Checks `u_hat[N - j] == conj(u_hat[j])` with tolerance `1e-10 * max(1, max |u_hat|)`.
pub fn check_conjugate_symmetry(u_hat: &[Complex64]) -> Result<()> {
    let n = u_hat.len();
    let scale = u_hat.iter().map(|v| v.norm()).fold(1.0, f64::max);
    let tol = 1e-10 * scale;
    if u_hat.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::CorruptedState("non-finite spectral coefficient".into()));
    }
    for j in 0..=n / 2 {
        let mirror = (n - j) % n;
        let gap = (u_hat[j] - u_hat[mirror].conj()).norm();
        if gap > tol {
            return Err(Error::CorruptedState(format!(
                "conjugate symmetry broken at bin {j} (gap {gap:e})"
            )));
        }
    }
    Ok(())
}

/// Dealiased `-(i k / 2) FFT(u^2)` for the spectral state `v`.
fn nonlinear_term(v: &[Complex64], c: &Etdrk4Coeffs, buf: &mut Vec<Complex64>) -> Vec<Complex64> {
    let n = c.n;
    buf.clear();
    buf.extend(v.iter().zip(&c.keep).map(|(&x, &k)| if k { x } else { Complex64::new(0.0, 0.0) }));
    fft_inverse(buf);
    let inv_n = 1.0 / n as f64;
    for x in buf.iter_mut() {
        let u = x.re * inv_n;
        *x = Complex64::new(u * u, 0.0);
    }
    fft_forward(buf);
    buf.iter()
        .zip(&c.nonlinear)
        .zip(&c.keep)
        .map(|((&x, &g), &k)| if k { g * x } else { Complex64::new(0.0, 0.0) })
        .collect()
}

/// One ETDRK4 step. Dealiased bins of the result are exactly zero.
pub fn etdrk4_step(u_hat: &[Complex64], c: &Etdrk4Coeffs) -> Result<Vec<Complex64>> {
    step_impl(u_hat, c, true)
}

/// ETDRK4 step with the nonlinear term switched off; exact `exp(L dt)` per mode.
pub fn etdrk4_step_linear(u_hat: &[Complex64], c: &Etdrk4Coeffs) -> Result<Vec<Complex64>> {
    step_impl(u_hat, c, false)
}

fn step_impl(v: &[Complex64], c: &Etdrk4Coeffs, with_nonlinear: bool) -> Result<Vec<Complex64>> {
    if v.len() != c.n {
        return Err(Error::Shape(format!("spectral state has {} bins, expected {}", v.len(), c.n)));
    }
    check_conjugate_symmetry(v)?;
    if !with_nonlinear {
        return Ok(v.iter().zip(&c.e).map(|(&x, &e)| x * e).collect());
    }
    let mut buf = Vec::with_capacity(c.n);
    let nv = nonlinear_term(v, c, &mut buf);
    let a: Vec<Complex64> = (0..c.n).map(|j| c.e2[j] * v[j] + c.q[j] * nv[j]).collect();
    let na = nonlinear_term(&a, c, &mut buf);
    let b: Vec<Complex64> = (0..c.n).map(|j| c.e2[j] * v[j] + c.q[j] * na[j]).collect();
    let nb = nonlinear_term(&b, c, &mut buf);
    let cc: Vec<Complex64> = (0..c.n)
        .map(|j| c.e2[j] * a[j] + c.q[j] * (2.0 * nb[j] - nv[j]))
        .collect();
    let nc = nonlinear_term(&cc, c, &mut buf);
    let mut out: Vec<Complex64> = (0..c.n)
        .map(|j| {
            if !c.keep[j] {
                return Complex64::new(0.0, 0.0);
            }
            c.e[j] * v[j] + nv[j] * c.f1[j] + 2.0 * (na[j] + nb[j]) * c.f2[j] + nc[j] * c.f3[j]
        })
        .collect();
    if out.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return Err(Error::Numerical("KS step produced non-finite coefficients".into()));
    }
    // Project onto real fields; otherwise FFT round-off in the unstable low
    // modes grows an imaginary component step after step.
    for j in 0..=c.n / 2 {
        let mirror = (c.n - j) % c.n;
        let sym = 0.5 * (out[j] + out[mirror].conj());
        out[j] = sym;
        out[mirror] = sym.conj();
    }
    Ok(out)
}

pub fn to_spectral(u: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft_forward(&mut buf);
    buf
}

/// Real field from a spectral state, together with the largest discarded imaginary part.
pub fn to_physical(u_hat: &[Complex64]) -> (Vec<f64>, f64) {
    let mut buf = u_hat.to_vec();
    fft_inverse(&mut buf);
    let inv_n = 1.0 / u_hat.len() as f64;
    let max_im = buf.iter().map(|x| (x.im * inv_n).abs()).fold(0.0, f64::max);
    (buf.iter().map(|x| x.re * inv_n).collect(), max_im)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn coeffs() -> Etdrk4Coeffs {
        etdrk4_precompute(8.0 * std::f64::consts::PI, 64, 1.0).unwrap()
    }

    fn smooth_state(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        v[0] = Complex64::new(rng.gen_range(-1.0..1.0) * n as f64, 0.0);
        for m in 1..6 {
            let c = Complex64::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)) * n as f64;
            v[m] = c;
            v[n - m] = c.conj();
        }
        v
    }

    #[test]
    fn linear_symbol_examples() {
        let c = etdrk4_precompute(8.0 * std::f64::consts::PI, 128, 1.0).unwrap();
        assert_eq!(c.linear[0], 0.0);
        assert_eq!(c.e[0], 1.0);
        assert!(c.linear[4].abs() < 1e-12);
        assert!((c.linear[8] + 12.0).abs() < 1e-12);
        assert!((c.linear[128 - 8] + 12.0).abs() < 1e-12);
    }

    #[test]
    fn contour_matches_series_for_moderate_arguments() {
        // Direct formulas are accurate where |L dt| is not small.
        let c = coeffs();
        for j in 0..c.n {
            let z = c.linear[j] * c.dt;
            if z.abs() < 0.5 || z.abs() > 50.0 {
                continue;
            }
            let f1 = (-4.0 - z + z.exp() * (4.0 - 3.0 * z + z * z)) / z.powi(3);
            let q = ((z / 2.0).exp() - 1.0) / z;
            assert!((c.f1[j] - f1).abs() <= 1e-12 * f1.abs().max(1.0), "bin {j}");
            assert!((c.q[j] - q).abs() <= 1e-12 * q.abs().max(1.0), "bin {j}");
        }
        // Limits at z = 0: f1 = 1/6, f2 = 1/6, f3 = 1/6 ... times dt; q = 1/2.
        assert!((c.q[0] - 0.5).abs() < 1e-13);
        assert!((c.f1[0] - 1.0 / 6.0).abs() < 1e-13);
        assert!((c.f2[0] - 1.0 / 6.0).abs() < 1e-13);
        assert!((c.f3[0] - 1.0 / 6.0).abs() < 1e-13);
    }

    #[test]
    fn zero_stays_zero() {
        let c = coeffs();
        let z = vec![Complex64::new(0.0, 0.0); c.n];
        assert_eq!(etdrk4_step(&z, &c).unwrap(), z);
    }

    #[test]
    fn linear_hook_is_exact() {
        let c = coeffs();
        let v = smooth_state(c.n, 1);
        let out = etdrk4_step_linear(&v, &c).unwrap();
        for j in 0..c.n {
            assert!((out[j] - v[j] * c.linear[j].exp()).norm() <= 1e-12 * v[j].norm().max(1.0));
        }
    }

    #[test]
    fn mean_mode_and_dealiasing() {
        let c = coeffs();
        let mut v = smooth_state(c.n, 2);
        let mean = v[0];
        for _ in 0..100 {
            v = etdrk4_step(&v, &c).unwrap();
            for j in 0..c.n {
                if !c.keep[j] {
                    assert_eq!(v[j], Complex64::new(0.0, 0.0));
                }
            }
        }
        assert!((v[0] - mean).norm() / c.n as f64 <= 1e-10);
        check_conjugate_symmetry(&v).unwrap();
    }

    #[test]
    fn asymmetric_state_rejected() {
        let c = coeffs();
        let mut v = smooth_state(c.n, 3);
        v[2] += Complex64::new(0.0, 1.0);
        assert!(matches!(etdrk4_step(&v, &c), Err(Error::CorruptedState(_))));
    }

    #[test]
    fn invalid_grid_rejected() {
        assert!(etdrk4_precompute(1.0, 48, 1.0).is_err());
        assert!(etdrk4_precompute(1.0, 8, 1.0).is_err());
    }
}

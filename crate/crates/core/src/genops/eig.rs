//! Eigenvalues of real matrices for operator inspection: balancing, reduction to
//! upper Hessenberg form by stabilized elimination, then Francis double-shift QR.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::netcore::Tensor;

const MAX_DIM: usize = 1024;
const MAX_ITS_PER_EIGENVALUE: usize = 60;

/// All eigenvalues of a square real matrix, complex pairs adjacent.
pub fn spectrum(k: &Tensor) -> Result<Vec<Complex64>> {
    if !k.is_square() {
        return Err(Error::Shape(format!("spectrum of {:?}", k.shape())));
    }
    let n = k.rows();
    if n > MAX_DIM {
        return Err(Error::InvalidInput(format!("spectrum limited to {MAX_DIM}x{MAX_DIM}")));
    }
    if !k.is_finite() {
        return Err(Error::Numerical("non-finite matrix entries".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut a: Vec<Vec<f64>> = k.to_rows();
    balance(&mut a);
    hessenberg(&mut a);
    hqr(&mut a)
}

fn balance(a: &mut [Vec<f64>]) {
    const RADIX: f64 = 2.0;
    let n = a.len();
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let s = c + r;
                let mut f = 1.0;
                let mut g = r / RADIX;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[i][j] *= g;
                    }
                    for row in a.iter_mut() {
                        row[i] *= f;
                    }
                }
            }
        }
    }
}

fn hessenberg(a: &mut [Vec<f64>]) {
    let n = a.len();
    for m in 1..n.saturating_sub(1) {
        let mut x = 0.0f64;
        let mut piv = m;
        for (j, row) in a.iter().enumerate().skip(m) {
            if row[m - 1].abs() > x.abs() {
                x = row[m - 1];
                piv = j;
            }
        }
        if piv != m {
            a.swap(piv, m);
            for row in a.iter_mut() {
                row.swap(piv, m);
            }
        }
        if x != 0.0 {
            for i in m + 1..n {
                let mut y = a[i][m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..n {
                        a[i][j] -= y * a[m][j];
                    }
                    for row in a.iter_mut() {
                        row[m] += y * row[i];
                    }
                }
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        for v in row.iter_mut().take(i.saturating_sub(1)) {
            *v = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

fn hqr(a: &mut [Vec<f64>]) -> Result<Vec<Complex64>> {
    let n = a.len();
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut found = vec![false; n];

    let mut anorm = 0.0;
    for (i, row) in a.iter().enumerate() {
        for v in row.iter().skip(i.saturating_sub(1)) {
            anorm += v.abs();
        }
    }

    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let nu = nn as usize;
        let mut its = 0;
        loop {
            let mut l = nu;
            while l >= 1 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[nu][nu];
            if l == nu {
                wr[nu] = x + t;
                wi[nu] = 0.0;
                found[nu] = true;
                nn -= 1;
                break;
            }
            let mut y = a[nu - 1][nu - 1];
            let mut w = a[nu][nu - 1] * a[nu - 1][nu];
            if l == nu - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + sign(z, p);
                    wr[nu - 1] = x + z;
                    wr[nu] = x + z;
                    if z != 0.0 {
                        wr[nu] = x - w / z;
                    }
                    wi[nu - 1] = 0.0;
                    wi[nu] = 0.0;
                } else {
                    wr[nu - 1] = x + p;
                    wr[nu] = x + p;
                    wi[nu - 1] = z;
                    wi[nu] = -z;
                }
                found[nu - 1] = true;
                found[nu] = true;
                nn -= 2;
                break;
            }
            if its == MAX_ITS_PER_EIGENVALUE {
                let partial = (0..n)
                    .filter(|&i| found[i])
                    .map(|i| Complex64::new(wr[i], wi[i]))
                    .collect::<Vec<_>>();
                return Err(Error::NoConvergence {
                    found: partial.len(),
                    total: n,
                    partial,
                });
            }
            if its > 0 && its % 10 == 0 {
                // Exceptional shift.
                t += x;
                for (i, row) in a.iter_mut().enumerate().take(nu + 1) {
                    row[i] -= x;
                }
                let s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;

            let mut m = nu - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = a[m][m];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - rr - ss;
                r = a[m + 2][m + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nu {
                a[i][i - 2] = 0.0;
                if i != m + 2 {
                    a[i][i - 3] = 0.0;
                }
            }
            let mut k = m;
            while k < nu {
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = if k != nu - 1 { a[k + 2][k - 1] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        let mut pp = a[k][j] + q * a[k + 1][j];
                        if k != nu - 1 {
                            pp += r * a[k + 2][j];
                            a[k + 2][j] -= pp * z;
                        }
                        a[k + 1][j] -= pp * y;
                        a[k][j] -= pp * x;
                    }
                    let mmin = if nu < k + 3 { nu } else { k + 3 };
                    for row in a.iter_mut().take(mmin + 1).skip(l) {
                        let mut pp = x * row[k] + y * row[k + 1];
                        if k != nu - 1 {
                            pp += z * row[k + 2];
                            row[k + 2] -= pp * r;
                        }
                        row[k + 1] -= pp * q;
                        row[k] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(wr
        .into_iter()
        .zip(wi)
        .map(|(re, im)| Complex64::new(re, im))
        .collect())
}

/// Unit eigenvector for `lambda` by inverse iteration on `K - lambda I` in
/// complex arithmetic.
pub fn eigenvector(k: &Tensor, lambda: Complex64) -> Result<Vec<Complex64>> {
    if !k.is_square() {
        return Err(Error::Shape(format!("eigenvector of {:?}", k.shape())));
    }
    let n = k.rows();
    let scale = k.max_abs().max(1.0);
    let mut shifted: Vec<Vec<Complex64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let v = Complex64::new(k.get(i, j), 0.0);
                    if i == j {
                        v - lambda
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    let perm = lu_in_place(&mut shifted, scale * f64::EPSILON);
    let mut v: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(1.0 + 0.1 * i as f64, 0.3 - 0.05 * i as f64))
        .collect();
    for _ in 0..3 {
        v = lu_solve(&shifted, &perm, &v);
        let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Numerical("inverse iteration broke down".into()));
        }
        v.iter_mut().for_each(|c| *c /= norm);
    }
    Ok(v)
}

/// Residual `||K v - lambda v|| / ||v||` for each eigenvalue, with `v` from [`eigenvector`].
pub fn eigen_residuals(k: &Tensor, eigs: &[Complex64]) -> Result<Vec<f64>> {
    let n = k.rows();
    eigs.iter()
        .map(|&lambda| {
            let v = eigenvector(k, lambda)?;
            let mut res = 0.0;
            for i in 0..n {
                let mut kv = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    kv += v[j] * k.get(i, j);
                }
                res += (kv - lambda * v[i]).norm_sqr();
            }
            Ok(res.sqrt())
        })
        .collect()
}

/// Solves the complex system `a x = b` by partial-pivoting LU.
pub fn solve_complex(mut a: Vec<Vec<Complex64>>, b: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = a.len();
    if b.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(Error::Shape("complex system is not square".into()));
    }
    let scale = a.iter().flatten().map(|c| c.norm()).fold(0.0, f64::max).max(1.0);
    let perm = lu_in_place(&mut a, 0.0);
    if (0..n).any(|i| a[i][i].norm() <= scale * 1e-14) {
        return Err(Error::Numerical("singular complex system".into()));
    }
    Ok(lu_solve(&a, &perm, b))
}

fn lu_in_place(a: &mut [Vec<Complex64>], tiny: f64) -> Vec<usize> {
    let n = a.len();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm()))
            .unwrap_or(col);
        if piv != col {
            a.swap(piv, col);
            perm.swap(piv, col);
        }
        if a[col][col].norm() < tiny {
            a[col][col] = Complex64::new(tiny.max(f64::MIN_POSITIVE), 0.0);
        }
        let pivot = a[col][col];
        for i in col + 1..n {
            let f = a[i][col] / pivot;
            a[i][col] = f;
            for j in col + 1..n {
                let u = a[col][j];
                a[i][j] -= f * u;
            }
        }
    }
    perm
}

fn lu_solve(lu: &[Vec<Complex64>], perm: &[usize], b: &[Complex64]) -> Vec<Complex64> {
    let n = lu.len();
    let mut y: Vec<Complex64> = perm.iter().map(|&p| b[p]).collect();
    for i in 0..n {
        for j in 0..i {
            let l = lu[i][j];
            y[i] = y[i] - l * y[j];
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            let u = lu[i][j];
            y[i] = y[i] - u * y[j];
        }
        y[i] /= lu[i][i];
    }
    y
}

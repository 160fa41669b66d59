//! Generator algebra in real block form.
//!
//! A complex `D x D` operator `A + iB` is stored as the real `2D x 2D` matrix
//! `[[A, -B], [B, A]]`. Skew-adjoint generators come from raw `(P, Q)` through
//! `A = (P - P^T)/2`, `B = (Q + Q^T)/2`; self-adjoint ones from `(U, V)` through
//! `A = (U + U^T)/2`, `B = (V - V^T)/2`. Each antisymmetric entry is computed once
//! and written negated into its mirror slot, so the structure holds bit-exactly
//! rather than up to rounding.

mod eig;

pub use eig::{eigen_residuals, eigenvector, solve_complex, spectrum};

use crate::error::{Error, Result};
use crate::netcore::Tensor;

/// Taylor order used on the scaled matrix inside [`expm`].
pub const TAYLOR_ORDER: usize = 18;

#[derive(Clone, Debug, PartialEq)]
pub struct SkewGenParams {
    pub p: Tensor,
    pub q: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfGenParams {
    pub u: Tensor,
    pub v: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockTag {
    Skew,
    SelfAdj,
    Mixed,
}

/// Real `2D x 2D` representation of a complex operator.
#[derive(Clone, Debug, PartialEq)]
pub struct RealBlockOp {
    m: Tensor,
    tag: BlockTag,
}

/// Raw parameters of the skew-adjoint and self-adjoint generator sets.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorBank {
    pub skew: Vec<SkewGenParams>,
    pub selfadj: Vec<SelfGenParams>,
    pub d: usize,
}

impl RealBlockOp {
    /// Wraps an already-assembled block matrix, checking the block layout.
    pub fn from_matrix(m: Tensor, tag: BlockTag) -> Result<Self> {
        let op = Self { m, tag };
        op.check_block_structure()?;
        Ok(op)
    }

    pub fn zeros(d: usize, tag: BlockTag) -> Self {
        Self {
            m: Tensor::zeros(2 * d, 2 * d),
            tag,
        }
    }

    pub fn matrix(&self) -> &Tensor {
        &self.m
    }

    pub fn into_matrix(self) -> Tensor {
        self.m
    }

    pub fn tag(&self) -> BlockTag {
        self.tag
    }

    /// Complex dimension `D`.
    pub fn dim(&self) -> usize {
        self.m.rows() / 2
    }

    /// Splits into the `(A, B)` pair of the complex operator `A + iB`.
    pub fn complex_parts(&self) -> (Tensor, Tensor) {
        let d = self.dim();
        let a = Tensor::from_fn(d, d, |i, j| self.m.get(i, j));
        let b = Tensor::from_fn(d, d, |i, j| self.m.get(i + d, j));
        (a, b)
    }

    /// Top-left equals bottom-right and top-right equals the negated bottom-left, exactly.
    pub fn check_block_structure(&self) -> Result<()> {
        let n = self.m.rows();
        if !self.m.is_square() || n % 2 != 0 {
            return Err(Error::Shape(format!(
                "block operator must be 2D x 2D, got {:?}",
                self.m.shape()
            )));
        }
        let d = n / 2;
        for i in 0..d {
            for j in 0..d {
                if self.m.get(i, j) != self.m.get(i + d, j + d)
                    || self.m.get(i, j + d) != -self.m.get(i + d, j)
                {
                    return Err(Error::Numerical(format!(
                        "real block structure broken at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks the exact symmetry implied by the tag: `M = -M^T` for skew,
    /// `M = M^T` for self-adjoint. Mixed operators only need the block layout.
    pub fn check_tag_invariant(&self) -> Result<()> {
        self.check_block_structure()?;
        let n = self.m.rows();
        let sign = match self.tag {
            BlockTag::Skew => -1.0,
            BlockTag::SelfAdj => 1.0,
            BlockTag::Mixed => return Ok(()),
        };
        for i in 0..n {
            for j in 0..n {
                if self.m.get(i, j) != sign * self.m.get(j, i) {
                    return Err(Error::Numerical(format!(
                        "{:?} symmetry broken at ({i}, {j})",
                        self.tag
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_square_pair(a: &Tensor, b: &Tensor) -> Result<usize> {
    if !a.is_square() || a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "generator parameters must be square and equal-sized, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.rows())
}

/// Writes `[[A, -B], [B, A]]` where `A` is the (anti)symmetric part of `a_raw`
/// and `B` the (anti)symmetric part of `b_raw`.
fn assemble(a_raw: &Tensor, b_raw: &Tensor, a_skew: bool) -> Tensor {
    let d = a_raw.rows();
    let mut m = Tensor::zeros(2 * d, 2 * d);
    // A: skew when a_skew, symmetric otherwise; B: the opposite.
    let a_sign = if a_skew { -1.0 } else { 1.0 };
    let b_sign = -a_sign;
    for i in 0..d {
        for j in i..d {
            let a = 0.5 * (a_raw.get(i, j) + a_sign * a_raw.get(j, i));
            let b = 0.5 * (b_raw.get(i, j) + b_sign * b_raw.get(j, i));
            let (a_mirror, b_mirror) = if i == j {
                (a, b)
            } else {
                (a_sign * a, b_sign * b)
            };
            for off in [0, d] {
                m.set(i + off, j + off, a);
                m.set(j + off, i + off, a_mirror);
            }
            // Bottom-left holds B, top-right holds -B.
            m.set(i + d, j, b);
            m.set(j + d, i, b_mirror);
            m.set(i, j + d, -b);
            m.set(j, i + d, -b_mirror);
        }
    }
    m
}

/// Skew-adjoint generator from raw `(P, Q)`.
pub fn build_skew(p: &SkewGenParams) -> Result<RealBlockOp> {
    check_square_pair(&p.p, &p.q)?;
    Ok(RealBlockOp {
        m: assemble(&p.p, &p.q, true),
        tag: BlockTag::Skew,
    })
}

/// Self-adjoint generator from raw `(U, V)`.
pub fn build_selfadj(p: &SelfGenParams) -> Result<RealBlockOp> {
    check_square_pair(&p.u, &p.v)?;
    Ok(RealBlockOp {
        m: assemble(&p.u, &p.v, false),
        tag: BlockTag::SelfAdj,
    })
}

/// Validates a simplex weight vector (nonnegative, sums to one within `1e-6`).
pub fn check_simplex(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidInput("empty weight vector".into()));
    }
    if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidInput(format!("negative or non-finite weight in {w:?}")));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Weighted sum of matrices in the order given; shared with the tape so both
/// paths round identically.
pub(crate) fn weighted_sum(mats: &[&Tensor], w: &[f64]) -> Tensor {
    let mut acc = mats[0].scale(w[0]);
    for (m, &wi) in mats.iter().zip(w).skip(1) {
        acc.add_scaled_assign(m, wi);
    }
    acc
}

/// Convex combination `sum_i w_i * op_i` of operators sharing one tag.
pub fn mix(ops: &[RealBlockOp], w: &[f64]) -> Result<RealBlockOp> {
    if ops.is_empty() || ops.len() != w.len() {
        return Err(Error::InvalidInput(format!(
            "{} operators with {} weights",
            ops.len(),
            w.len()
        )));
    }
    let tag = ops[0].tag;
    let shape = ops[0].m.shape();
    if ops.iter().any(|o| o.tag != tag) {
        return Err(Error::InvalidInput("cannot mix operators with different tags".into()));
    }
    if ops.iter().any(|o| o.m.shape() != shape) {
        return Err(Error::Shape("mixed operators differ in size".into()));
    }
    check_simplex(w)?;
    let mats: Vec<&Tensor> = ops.iter().map(|o| &o.m).collect();
    Ok(RealBlockOp {
        m: weighted_sum(&mats, w),
        tag,
    })
}

/// `G = G_hat + G_tilde`. With no self-adjoint part the skew operator is returned as-is.
pub fn combine(g_hat: &RealBlockOp, g_tilde: Option<&RealBlockOp>) -> Result<RealBlockOp> {
    match g_tilde {
        None => Ok(g_hat.clone()),
        Some(t) => {
            if t.m.shape() != g_hat.m.shape() {
                return Err(Error::Shape(format!(
                    "combine {:?} with {:?}",
                    g_hat.m.shape(),
                    t.m.shape()
                )));
            }
            Ok(RealBlockOp {
                m: g_hat.m.add(&t.m)?,
                tag: BlockTag::Mixed,
            })
        }
    }
}

/// Number of squarings for a matrix of 1-norm `norm`: `max(0, ceil(log2(norm)) + 1)`.
pub fn squaring_count(norm: f64) -> u32 {
    if norm <= 0.0 {
        return 0;
    }
    let s = norm.log2().ceil() + 1.0;
    if s <= 0.0 {
        0
    } else {
        s as u32
    }
}

/// `exp(dt * m)` for any square matrix by scaling and squaring with a Horner-form
/// Taylor polynomial of order [`TAYLOR_ORDER`].
pub fn expm(m: &Tensor, dt: f64) -> Result<Tensor> {
    if !m.is_square() {
        return Err(Error::Shape(format!("expm of {:?}", m.shape())));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    if !m.is_finite() {
        return Err(Error::Numerical("non-finite generator entries".into()));
    }
    let s = squaring_count(m.norm1() * dt);
    let a = m.scale(dt / f64::powi(2.0, s as i32));
    let mut x = Tensor::identity(m.rows());
    for j in (1..=TAYLOR_ORDER).rev() {
        x = a.matmul(&x)?.scale(1.0 / j as f64).add_identity();
    }
    for _ in 0..s {
        x = x.matmul(&x)?;
    }
    if !x.is_finite() {
        return Err(Error::Numerical("matrix exponential overflowed".into()));
    }
    Ok(x)
}

/// Discrete-time operator `K = exp(dt * G)`.
pub fn matrix_exp(g: &RealBlockOp, dt: f64) -> Result<Tensor> {
    expm(&g.m, dt)
}

/// `K z` for a `2D x 2D` operator and a latent of length `2D`.
pub fn apply(k: &Tensor, z: &[f64]) -> Result<Vec<f64>> {
    if !k.is_square() {
        return Err(Error::Shape(format!("operator is {:?}", k.shape())));
    }
    k.matvec(z)
}

impl GeneratorBank {
    pub fn new(skew: Vec<SkewGenParams>, selfadj: Vec<SelfGenParams>, d: usize) -> Result<Self> {
        if skew.is_empty() {
            return Err(Error::InvalidInput("at least one skew generator is required".into()));
        }
        for s in &skew {
            if check_square_pair(&s.p, &s.q)? != d {
                return Err(Error::Shape(format!("skew generator is not {d}x{d}")));
            }
        }
        for s in &selfadj {
            if check_square_pair(&s.u, &s.v)? != d {
                return Err(Error::Shape(format!("self-adjoint generator is not {d}x{d}")));
            }
        }
        Ok(Self { skew, selfadj, d })
    }

    pub fn skew_ops(&self) -> Result<Vec<RealBlockOp>> {
        self.skew.iter().map(build_skew).collect()
    }

    pub fn selfadj_ops(&self) -> Result<Vec<RealBlockOp>> {
        self.selfadj.iter().map(build_selfadj).collect()
    }

    /// Rebuilds every generator and checks its exact symmetry.
    pub fn verify_structure(&self) -> Result<()> {
        for op in self.skew_ops()?.iter().chain(self.selfadj_ops()?.iter()) {
            op.check_tag_invariant()?;
        }
        Ok(())
    }

    /// State-dependent generator for given gate weights; `w_tilde` must be `None`
    /// exactly when the self-adjoint set is empty.
    pub fn generator(&self, w_hat: &[f64], w_tilde: Option<&[f64]>) -> Result<RealBlockOp> {
        let g_hat = mix(&self.skew_ops()?, w_hat)?;
        let g_tilde = match (self.selfadj.is_empty(), w_tilde) {
            (true, None) => None,
            (false, Some(w)) => Some(mix(&self.selfadj_ops()?, w)?),
            _ => {
                return Err(Error::InvalidInput(
                    "self-adjoint weights do not match the generator set".into(),
                ))
            }
        };
        combine(&g_hat, g_tilde.as_ref())
    }
}

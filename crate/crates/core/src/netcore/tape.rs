//! Tape-based reverse-mode differentiation over small dense matrices.
//!
//! Every operation appends a node holding its output value and the indices of its
//! inputs. Nodes only ever reference earlier nodes, so the tape is acyclic and a
//! single reverse sweep visits each node once. Parameter leaves borrow their
//! values from the [`ParamStore`] the tape was created with.

use super::dft;
use super::layers::Activation;
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::genops;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddIdentity(Var),
    Act(Var, Activation),
    SoftmaxRows(Var),
    SkewBlock(Var, Var),
    SelfAdjBlock(Var, Var),
    Mix(Var, Vec<Var>),
    ApplyRow(Var, Var),
    Row(Var, usize),
    StackRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SobolevEnergy(Var, u32),
    Sqrt(Var),
    HalfSumSquares(Var),
    PairRadius(Var, usize),
    SpectralStep {
        z: Var,
        eig: Var,
        n_complex: usize,
        n_real: usize,
        dt: f64,
    },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    first_non_finite: Option<usize>,
}

/// Gradients of a scalar with respect to every leaf (inputs and parameters).
#[derive(Debug)]
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for an input or parameter leaf; `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// One tensor per stored parameter, zeros where the loss does not reach.
    pub fn into_dense(self, store: &ParamStore) -> Vec<Tensor> {
        self.params
            .into_iter()
            .zip(store.iter())
            .map(|(g, (_, p))| g.unwrap_or_else(|| Tensor::zeros(p.value.rows(), p.value.cols())))
            .collect()
    }
}

fn shape_err(what: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape(format!("{what}: {:?} and {:?}", a.shape(), b.shape()))
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
            param_vars: vec![None; params.len()],
            first_non_finite: None,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the first node whose value contains NaN or infinity.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.first_non_finite
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some(self.nodes.len());
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.value(id),
            _ => node.value.as_ref().expect("non-parameter node without value"),
        }
    }

    pub fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode(v.0))
        }
    }

    /// A constant leaf; gradients with respect to it are still reported.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Leaf for a stored parameter, created once per tape.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a + b` with the `1 x n` row `b` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(shape_err("add_row", av, bv));
        }
        let mut out = av.clone();
        let n = av.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bv.data()[i % n];
        }
        Ok(self.push(out, Op::AddRow(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_identity(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if !av.is_square() {
            return Err(Error::Shape(format!("add_identity on {:?}", av.shape())));
        }
        let out = av.add_identity();
        Ok(self.push(out, Op::AddIdentity(a)))
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        let out = self.value(a).map(|x| act.apply(x));
        self.push(out, Op::Act(a, act))
    }

    /// Row-wise softmax, max-shifted.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        let n = av.cols();
        for row in out.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn skew_block(&mut self, p: Var, q: Var) -> Result<Var> {
        let op = genops::build_skew(&genops::SkewGenParams {
            p: self.value(p).clone(),
            q: self.value(q).clone(),
        })?;
        Ok(self.push(op.into_matrix(), Op::SkewBlock(p, q)))
    }

    pub fn selfadj_block(&mut self, u: Var, v: Var) -> Result<Var> {
        let op = genops::build_selfadj(&genops::SelfGenParams {
            u: self.value(u).clone(),
            v: self.value(v).clone(),
        })?;
        Ok(self.push(op.into_matrix(), Op::SelfAdjBlock(u, v)))
    }

    /// `sum_n w[n] * ops[n]` for a `1 x N` weight row.
    pub fn mix(&mut self, w: Var, ops: &[Var]) -> Result<Var> {
        let wv = self.value(w);
        if wv.rows() != 1 || wv.cols() != ops.len() || ops.is_empty() {
            return Err(Error::Shape(format!(
                "mix: weights {:?} for {} operators",
                wv.shape(),
                ops.len()
            )));
        }
        let shape = self.value(ops[0]).shape();
        let mats: Vec<&Tensor> = ops.iter().map(|&o| self.value(o)).collect();
        if mats.iter().any(|m| m.shape() != shape) {
            return Err(Error::Shape("mix: operators differ in size".into()));
        }
        let out = genops::weighted_sum(&mats, wv.data());
        Ok(self.push(out, Op::Mix(w, ops.to_vec())))
    }

    /// `(K z^T)^T` for a square `K` and a `1 x n` row `z`.
    pub fn apply_row(&mut self, k: Var, z: Var) -> Result<Var> {
        let (kv, zv) = (self.value(k), self.value(z));
        if !kv.is_square() || zv.rows() != 1 || zv.cols() != kv.cols() {
            return Err(shape_err("apply_row", kv, zv));
        }
        let out = Tensor::row_vector(kv.matvec(zv.data())?);
        Ok(self.push(out, Op::ApplyRow(k, z)))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let av = self.value(a);
        if i >= av.rows() {
            return Err(Error::Shape(format!("row {i} of {:?}", av.shape())));
        }
        let out = Tensor::row_vector(av.row(i).to_vec());
        Ok(self.push(out, Op::Row(a, i)))
    }

    /// Stacks `1 x n` rows into a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Shape("stack_rows of nothing".into()))?;
        let n = self.value(*first).cols();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            let rv = self.value(r);
            if rv.rows() != 1 || rv.cols() != n {
                return Err(Error::Shape(format!("stack_rows: row of shape {:?}", rv.shape())));
            }
            data.extend_from_slice(rv.data());
        }
        let out = Tensor::new(rows.len(), n, data)?;
        Ok(self.push(out, Op::StackRows(rows.to_vec())))
    }

    /// Concatenates `1 x n_i` rows side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != 1 {
                return Err(Error::Shape(format!("concat_cols: part of shape {:?}", pv.shape())));
            }
            data.extend_from_slice(pv.data());
        }
        let out = Tensor::row_vector(data);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Scalar `sum_c sum_xi (1 + xi^2 + ... + xi^2k) |u_hat_c(xi)|^2` over the columns of `u`.
    pub fn sobolev_energy(&mut self, u: Var, k: u32) -> Result<Var> {
        let uv = self.value(u);
        if uv.rows() < 2 {
            return Err(Error::Shape("Sobolev energy needs at least 2 samples".into()));
        }
        let out = Tensor::scalar(dft::sobolev_energy(uv, k));
        Ok(self.push(out, Op::SobolevEnergy(u, k)))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        self.push(out, Op::Sqrt(a))
    }

    /// `0.5 * sum(a^2)` as a scalar.
    pub fn half_sum_squares(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = Tensor::scalar(0.5 * av.dot(av));
        self.push(out, Op::HalfSumSquares(a))
    }

    /// Radii `sqrt(z_j^2 + z_{j+n}^2)` of the first `n` complex pairs of a latent row.
    pub fn pair_radius(&mut self, z: Var, n: usize) -> Result<Var> {
        let zv = self.value(z);
        if zv.rows() != 1 || zv.cols() < 2 * n {
            return Err(Error::Shape(format!("pair_radius({n}) of {:?}", zv.shape())));
        }
        let d = zv.data();
        let out = Tensor::row_vector((0..n).map(|j| d[j].hypot(d[j + n])).collect());
        Ok(self.push(out, Op::PairRadius(z, n)))
    }

    /// Block-diagonal spectral advance. The latent row is laid out as
    /// `[re_0..re_{nc-1}, im_0..im_{nc-1}, r_0..r_{nr-1}]`; `eig` holds
    /// `[mu_0.., omega_0.., lambda_0..]`. Pair `j` is rotated by `omega_j dt` and
    /// scaled by `exp(mu_j dt)`; real coordinate `i` is scaled by `exp(lambda_i dt)`.
    pub fn spectral_step(
        &mut self,
        z: Var,
        eig: Var,
        n_complex: usize,
        n_real: usize,
        dt: f64,
    ) -> Result<Var> {
        let (zv, ev) = (self.value(z), self.value(eig));
        let dim = 2 * n_complex + n_real;
        if zv.rows() != 1 || zv.cols() != dim || ev.rows() != 1 || ev.cols() != dim {
            return Err(shape_err("spectral_step", zv, ev));
        }
        let out = Tensor::row_vector(spectral_advance(zv.data(), ev.data(), n_complex, n_real, dt));
        Ok(self.push(
            out,
            Op::SpectralStep {
                z,
                eig,
                n_complex,
                n_real,
                dt,
            },
        ))
    }

    /// `exp(dt * g)` recorded as the same scaling, Horner-Taylor and squaring
    /// sequence that [`genops::expm`] evaluates, so gradients are exact for the
    /// computed value.
    pub fn expm(&mut self, g: Var, dt: f64) -> Result<Var> {
        let gv = self.value(g);
        if !gv.is_square() {
            return Err(Error::Shape(format!("expm of {:?}", gv.shape())));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        if !gv.is_finite() {
            return Err(Error::Numerical("non-finite generator entries".into()));
        }
        let n = gv.rows();
        let s = genops::squaring_count(gv.norm1() * dt);
        let a = self.scale(g, dt / f64::powi(2.0, s as i32));
        let mut x = self.input(Tensor::identity(n));
        for j in (1..=genops::TAYLOR_ORDER).rev() {
            let ax = self.matmul(a, x)?;
            let ax = self.scale(ax, 1.0 / j as f64);
            x = self.add_identity(ax)?;
        }
        for _ in 0..s {
            x = self.matmul(x, x)?;
        }
        Ok(x)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape(format!("loss must be scalar, got {:?}", lv.shape())));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut leaves: Vec<Option<Tensor>> = Vec::with_capacity(n);
        leaves.resize_with(n, || None);
        let mut params: Vec<Option<Tensor>> = vec![None; self.params.len()];

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => leaves[i] = Some(g),
                Op::Param(id) => {
                    params[id.0] = Some(g.clone());
                    leaves[i] = Some(g);
                }
                op => self.propagate(op, i, &g, &mut grads)?,
            }
        }
        Ok(Gradients { leaves, params })
    }

    fn propagate(&self, op: &Op, node: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = self.nodes[node].value.as_ref().expect("value");
        match *op {
            Op::Input | Op::Param(_) => unreachable!("leaves handled by caller"),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let mut ga = Tensor::zeros(m, k);
                super::tensor::gemm(
                    m, n, k, 1.0, g.data(), n as isize, 1, bv.data(), 1, n as isize, 0.0,
                    ga.data_mut(), k as isize, 1,
                );
                let mut gb = Tensor::zeros(k, n);
                super::tensor::gemm(
                    k, m, n, 1.0, av.data(), 1, k as isize, g.data(), n as isize, 1, 0.0,
                    gb.data_mut(), n as isize, 1,
                );
                accumulate(grads, a, ga);
                accumulate(grads, b, gb);
            }
            Op::AddRow(a, b) => {
                let n = g.cols();
                let mut gb = vec![0.0; n];
                for (i, v) in g.data().iter().enumerate() {
                    gb[i % n] += v;
                }
                accumulate(grads, a, g.clone());
                accumulate(grads, b, Tensor::row_vector(gb));
            }
            Op::Add(a, b) => {
                accumulate(grads, a, g.clone());
                accumulate(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, a, g.clone());
                accumulate(grads, b, g.scale(-1.0));
            }
            Op::Scale(a, c) => accumulate(grads, a, g.scale(c)),
            Op::AddIdentity(a) => accumulate(grads, a, g.clone()),
            Op::Act(a, act) => {
                let x = self.value(a);
                let mut ga = g.clone();
                for ((gi, &xi), &yi) in ga.data_mut().iter_mut().zip(x.data()).zip(out.data()) {
                    *gi *= act.derivative(xi, yi);
                }
                accumulate(grads, a, ga);
            }
            Op::SoftmaxRows(a) => {
                let n = out.cols();
                let mut ga = g.clone();
                for (grow, yrow) in ga.data_mut().chunks_mut(n).zip(out.data().chunks(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (gi, yi) in grow.iter_mut().zip(yrow) {
                        *gi = yi * (*gi - dot);
                    }
                }
                accumulate(grads, a, ga);
            }
            Op::SkewBlock(p, q) | Op::SelfAdjBlock(p, q) => {
                let skew = matches!(op, Op::SkewBlock(..));
                let d = g.rows() / 2;
                let ga = Tensor::from_fn(d, d, |i, j| g.get(i, j) + g.get(i + d, j + d));
                let gb = Tensor::from_fn(d, d, |i, j| g.get(i + d, j) - g.get(i, j + d));
                // Skew: A antisymmetric, B symmetric. Self-adjoint: the reverse.
                let (sa, sb) = if skew { (-1.0, 1.0) } else { (1.0, -1.0) };
                let gp = Tensor::from_fn(d, d, |i, j| 0.5 * (ga.get(i, j) + sa * ga.get(j, i)));
                let gq = Tensor::from_fn(d, d, |i, j| 0.5 * (gb.get(i, j) + sb * gb.get(j, i)));
                accumulate(grads, p, gp);
                accumulate(grads, q, gq);
            }
            Op::Mix(w, ref ops) => {
                let wv = self.value(w);
                let mut gw = Vec::with_capacity(ops.len());
                for (n, &o) in ops.iter().enumerate() {
                    gw.push(self.value(o).dot(g));
                    accumulate(grads, o, g.scale(wv.data()[n]));
                }
                accumulate(grads, w, Tensor::row_vector(gw));
            }
            Op::ApplyRow(k, z) => {
                let (kv, zv) = (self.value(k), self.value(z));
                let n = kv.rows();
                let gk = Tensor::from_fn(n, n, |i, j| g.data()[i] * zv.data()[j]);
                let gz: Vec<f64> = (0..n)
                    .map(|j| (0..n).map(|i| kv.get(i, j) * g.data()[i]).sum())
                    .collect();
                accumulate(grads, k, gk);
                accumulate(grads, z, Tensor::row_vector(gz));
            }
            Op::Row(a, r) => {
                let av = self.value(a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                let c = av.cols();
                ga.data_mut()[r * c..(r + 1) * c].copy_from_slice(g.data());
                accumulate(grads, a, ga);
            }
            Op::StackRows(ref rows) => {
                for (i, &r) in rows.iter().enumerate() {
                    accumulate(grads, r, Tensor::row_vector(g.row(i).to_vec()));
                }
            }
            Op::ConcatCols(ref parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).cols();
                    accumulate(grads, p, Tensor::row_vector(g.data()[off..off + n].to_vec()));
                    off += n;
                }
            }
            Op::SobolevEnergy(u, k) => {
                let gu = dft::sobolev_energy_grad(self.value(u), k).scale(g.data()[0]);
                accumulate(grads, u, gu);
            }
            Op::Sqrt(a) => {
                let ga = g.zip_map(out, |gi, yi| if yi > 0.0 { gi / (2.0 * yi) } else { 0.0 });
                accumulate(grads, a, ga);
            }
            Op::HalfSumSquares(a) => accumulate(grads, a, self.value(a).scale(g.data()[0])),
            Op::PairRadius(z, n) => {
                let zv = self.value(z);
                let mut gz = Tensor::zeros(1, zv.cols());
                for j in 0..n {
                    let r = out.data()[j];
                    if r > 0.0 {
                        gz.data_mut()[j] = g.data()[j] * zv.data()[j] / r;
                        gz.data_mut()[j + n] = g.data()[j] * zv.data()[j + n] / r;
                    }
                }
                accumulate(grads, z, gz);
            }
            Op::SpectralStep {
                z,
                eig,
                n_complex: nc,
                n_real: nr,
                dt,
            } => {
                let (zv, ev) = (self.value(z).data(), self.value(eig).data());
                let y = out.data();
                let gy = g.data();
                let mut gz = vec![0.0; zv.len()];
                let mut ge = vec![0.0; ev.len()];
                for j in 0..nc {
                    let s = (ev[j] * dt).exp();
                    let (sin, cos) = (ev[j + nc] * dt).sin_cos();
                    let (ga, gb) = (gy[j], gy[j + nc]);
                    let (ya, yb) = (y[j], y[j + nc]);
                    gz[j] = s * (cos * ga + sin * gb);
                    gz[j + nc] = s * (-sin * ga + cos * gb);
                    ge[j] = dt * (ga * ya + gb * yb);
                    ge[j + nc] = dt * (-ga * yb + gb * ya);
                }
                for i in 0..nr {
                    let idx = 2 * nc + i;
                    gz[idx] = gy[idx] * (ev[idx] * dt).exp();
                    ge[idx] = gy[idx] * dt * y[idx];
                }
                accumulate(grads, z, Tensor::row_vector(gz));
                accumulate(grads, eig, Tensor::row_vector(ge));
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Plain evaluation of the block-diagonal spectral advance used by [`Tape::spectral_step`].
pub(crate) fn spectral_advance(z: &[f64], eig: &[f64], nc: usize, nr: usize, dt: f64) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    for j in 0..nc {
        let s = (eig[j] * dt).exp();
        let (sin, cos) = (eig[j + nc] * dt).sin_cos();
        let (a, b) = (z[j], z[j + nc]);
        out[j] = s * (cos * a - sin * b);
        out[j + nc] = s * (sin * a + cos * b);
    }
    for i in 0..nr {
        let idx = 2 * nc + i;
        out[idx] = (eig[idx] * dt).exp() * z[idx];
    }
    out
}

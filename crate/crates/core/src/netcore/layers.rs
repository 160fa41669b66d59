use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::softmax_in_place;
use super::{ParamId, ParamStore, Partition, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Elu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative at input `x` with output `y = apply(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Stack of affine layers `x W + b` (weights stored `in x out`) with an
/// activation between layers and a linear final layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    activation: Activation,
    input_dim: usize,
    output_dim: usize,
}

impl Mlp {
    /// Registers `depth` affine layers named `{prefix}.{i}.w` / `{prefix}.{i}.b`.
    /// Hidden layers have `width` units; `depth == 1` is a single affine map.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        partition: Partition,
        input_dim: usize,
        width: usize,
        output_dim: usize,
        depth: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if depth == 0 || input_dim == 0 || output_dim == 0 || (depth > 1 && width == 0) {
            return Err(Error::Config(format!(
                "{prefix}: invalid network shape depth={depth} width={width} in={input_dim} out={output_dim}"
            )));
        }
        let mut layers = Vec::with_capacity(depth);
        for i in 0..depth {
            let fan_in = if i == 0 { input_dim } else { width };
            let fan_out = if i + 1 == depth { output_dim } else { width };
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Tensor::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..bound));
            let b = Tensor::from_fn(1, fan_out, |_, _| rng.gen_range(-bound..bound));
            let wid = store.insert(&format!("{prefix}.{i}.w"), partition, w)?;
            let bid = store.insert(&format!("{prefix}.{i}.b"), partition, b)?;
            layers.push((wid, bid));
        }
        Ok(Self {
            layers,
            activation,
            input_dim,
            output_dim,
        })
    }

    /// Rebinds an architecture to parameters already present in `store`.
    pub fn bind(store: &ParamStore, prefix: &str, depth: usize, activation: Activation) -> Result<Self> {
        let mut layers = Vec::with_capacity(depth);
        for i in 0..depth {
            let find = |suffix: &str| {
                let name = format!("{prefix}.{i}.{suffix}");
                store
                    .id(&name)
                    .ok_or_else(|| Error::Format(format!("missing parameter {name}")))
            };
            layers.push((find("w")?, find("b")?));
        }
        let (first, last) = match (layers.first(), layers.last()) {
            (Some(f), Some(l)) => (f.0, l.1),
            _ => return Err(Error::Config(format!("{prefix}: depth must be at least 1"))),
        };
        let input_dim = store.value(first).rows();
        let output_dim = store.value(last).cols();
        for w in layers.windows(2) {
            if store.value(w[0].0).cols() != store.value(w[1].0).rows() {
                return Err(Error::Shape(format!("{prefix}: layer sizes do not chain")));
            }
        }
        Ok(Self {
            layers,
            activation,
            input_dim,
            output_dim,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    /// Applies the network to every row of `x`.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.input_dim {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {cols}",
                self.input_dim
            )));
        }
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(w);
            let bv = tape.param(b);
            h = tape.matmul(h, wv)?;
            h = tape.add_row(h, bv)?;
            if i + 1 < self.layers.len() {
                h = tape.activation(h, self.activation);
            }
        }
        Ok(h)
    }
}

/// Evaluates `mlp` on the rows of `x` without keeping the graph.
pub fn mlp_forward(store: &ParamStore, mlp: &Mlp, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new(store);
    let xv = tape.input(x.clone());
    let out = mlp.forward(&mut tape, xv)?;
    Ok(tape.value(out).clone())
}

/// Softmax of a logit vector, max-shifted.
pub fn softmax_gate(logits: &[f64]) -> Vec<f64> {
    let mut w = logits.to_vec();
    softmax_in_place(&mut w);
    w
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn net(depth: usize) -> (ParamStore, Mlp) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&mut store, "net", Partition::Main, 3, 5, 2, depth, Activation::Tanh, &mut rng)
            .unwrap();
        (store, mlp)
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let (mut store, mlp) = net(3);
        for id in store.ids().collect::<Vec<_>>() {
            let v = store.value_mut(id);
            *v = Tensor::zeros(v.rows(), v.cols());
        }
        let y = mlp_forward(&store, &mlp, &Tensor::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_affine_identity() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&mut store, "e", Partition::Main, 3, 0, 3, 1, Activation::Tanh, &mut rng).unwrap();
        store.set_value("e.0.w", Tensor::identity(3)).unwrap();
        store.set_value("e.0.b", Tensor::zeros(1, 3)).unwrap();
        let x = Tensor::from_rows(&[vec![0.5, -7.0, 2.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(mlp_forward(&store, &mlp, &x).unwrap(), x);
    }

    #[test]
    fn matches_straight_line_evaluation() {
        let (store, mlp) = net(3);
        let x = [0.3, -0.1, 0.9];
        let mut h = x.to_vec();
        for (i, &(w, b)) in mlp.layers().iter().enumerate() {
            let (wv, bv) = (store.value(w), store.value(b));
            let mut next = bv.data().to_vec();
            for (j, out) in next.iter_mut().enumerate() {
                for (k, hk) in h.iter().enumerate() {
                    *out += hk * wv.get(k, j);
                }
            }
            if i + 1 < mlp.depth() {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = next;
        }
        let y = mlp_forward(&store, &mlp, &Tensor::row_vector(x.to_vec())).unwrap();
        for (a, b) in y.data().iter().zip(&h) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn bind_recovers_layout() {
        let (store, mlp) = net(3);
        let again = Mlp::bind(&store, "net", 3, Activation::Tanh).unwrap();
        assert_eq!(again, mlp);
        assert!(Mlp::bind(&store, "other", 1, Activation::Tanh).is_err());
    }

    #[test]
    fn input_width_checked() {
        let (store, mlp) = net(2);
        assert!(mlp_forward(&store, &mlp, &Tensor::zeros(1, 4)).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_gate(&[2.0; 4]), vec![0.25; 4]);
        let w = softmax_gate(&[0.0, 3f64.ln()]);
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15);
        let a = softmax_gate(&[0.1, -2.0, 5.0]);
        let b = softmax_gate(&[100.1, 98.0, 105.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let extreme = softmax_gate(&[800.0, -800.0]);
        assert!(extreme.iter().all(|v| v.is_finite()));
    }
}

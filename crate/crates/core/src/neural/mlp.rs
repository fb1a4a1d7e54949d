use rand::Rng;

use super::params::{Bound, ParameterSet};
use super::tape::sigmoid;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    LeakyRelu(f64),
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::LeakyRelu(s) => tape.leaky_relu(x, s),
        }
    }

    pub fn apply_scalar(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
        }
    }
}

/// Layer widths (input first, output last) and activations.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl LayerSpec {
    pub fn new(sizes: Vec<usize>, hidden: Activation, output: Activation) -> Self {
        LayerSpec {
            sizes,
            hidden,
            output,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len().saturating_sub(1)
    }
}

/// A dense feed-forward stack whose weights live in a [`ParameterSet`]
/// as `{prefix}.w{k}` (`in x out`) and `{prefix}.b{k}` (`1 x out`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: LayerSpec,
    first: usize,
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        spec: LayerSpec,
        rng: &mut R,
    ) -> Result<Self> {
        Self::init_with_output_bound(params, prefix, spec, None, rng)
    }

    /// As [`Mlp::init`], optionally drawing the output layer from
    /// `[-bound, bound]` so initial outputs sit near the activation's center.
    pub fn init_with_output_bound<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        spec: LayerSpec,
        output_bound: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        if spec.sizes.len() < 2 || spec.sizes.contains(&0) {
            return Err(Error::Argument(format!(
                "layer sizes {:?} need at least input and output",
                spec.sizes
            )));
        }
        let first = params.len();
        for k in 0..spec.n_layers() {
            let (fan_in, fan_out) = (spec.sizes[k], spec.sizes[k + 1]);
            match output_bound.filter(|_| k + 1 == spec.n_layers()) {
                Some(b) => {
                    params.add_bounded(format!("{prefix}.w{k}"), fan_in, fan_out, b, rng)?;
                    params.add_bounded(format!("{prefix}.b{k}"), 1, fan_out, b, rng)?;
                }
                None => {
                    params.add_uniform(format!("{prefix}.w{k}"), fan_in, fan_out, fan_in, rng)?;
                    params.add_uniform(format!("{prefix}.b{k}"), 1, fan_out, fan_in, rng)?;
                }
            }
        }
        Ok(Mlp { spec, first })
    }

    /// Re-attaches to parameters created by [`Mlp::init`] under `prefix`.
    pub fn attach(params: &ParameterSet, prefix: &str, spec: LayerSpec) -> Result<Self> {
        let first = params
            .index_of(&format!("{prefix}.w0"))
            .ok_or_else(|| Error::format(format!("{prefix}.w0"), "missing parameter"))?;
        for k in 0..spec.n_layers() {
            for (i, (name, shape)) in [
                (format!("{prefix}.w{k}"), [spec.sizes[k], spec.sizes[k + 1]]),
                (format!("{prefix}.b{k}"), [1, spec.sizes[k + 1]]),
            ]
            .into_iter()
            .enumerate()
            {
                let idx = first + 2 * k + i;
                if params.names().get(idx) != Some(&name) {
                    return Err(Error::format(name, "missing or out of order"));
                }
                if params.tensor(idx).shape() != shape {
                    return Err(Error::format(
                        name,
                        format!(
                            "expected shape {shape:?}, got {:?}",
                            params.tensor(idx).shape()
                        ),
                    ));
                }
            }
        }
        Ok(Mlp { spec, first })
    }

    pub fn param_range(&self) -> std::ops::Range<usize> {
        self.first..self.first + 2 * self.spec.n_layers()
    }

    /// Applies the stack to a `[batch x in]` input.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, input: Var) -> Result<Var> {
        let in_dim = tape.value(input).cols();
        if in_dim != self.spec.sizes[0] {
            return Err(Error::Argument(format!(
                "input has {in_dim} features, network expects {}",
                self.spec.sizes[0]
            )));
        }
        let n = self.spec.n_layers();
        let mut x = input;
        for k in 0..n {
            let w = bound.var(self.first + 2 * k);
            let b = bound.var(self.first + 2 * k + 1);
            x = tape.affine(x, w, b)?;
            let act = if k + 1 == n {
                self.spec.output
            } else {
                self.spec.hidden
            };
            x = act.apply(tape, x);
        }
        Ok(x)
    }

    /// Plain forward pass without recording, for acting.
    pub fn predict(&self, params: &ParameterSet, input: &Tensor) -> Result<Tensor> {
        if input.cols() != self.spec.sizes[0] {
            return Err(Error::Argument(format!(
                "input has {} features, network expects {}",
                input.cols(),
                self.spec.sizes[0]
            )));
        }
        let n = self.spec.n_layers();
        let mut x = input.clone();
        for k in 0..n {
            let w = params.tensor(self.first + 2 * k);
            let b = params.tensor(self.first + 2 * k + 1);
            let act = if k + 1 == n {
                self.spec.output
            } else {
                self.spec.hidden
            };
            let mut h = x.matmul(w);
            let cols = h.cols();
            for (i, v) in h.data_mut().iter_mut().enumerate() {
                *v = act.apply_scalar(*v + b.data()[i % cols]);
            }
            x = h;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(sizes: Vec<usize>) -> (ParameterSet, Mlp) {
        let mut p = ParameterSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = LayerSpec::new(sizes, Activation::Tanh, Activation::Identity);
        let m = Mlp::init(&mut p, "net", spec, &mut rng).unwrap();
        (p, m)
    }

    fn run(p: &ParameterSet, m: &Mlp, x: Tensor) -> Tensor {
        let mut tape = Tape::new();
        let b = p.bind(&mut tape);
        let x = tape.constant(x);
        let y = m.forward(&mut tape, &b, x).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let (mut p, m) = net(vec![3, 3]);
        p.set("net.w0", Tensor::identity(3)).unwrap();
        p.set("net.b0", Tensor::zeros(1, 3)).unwrap();
        let x = Tensor::from_rows(&[[0.1, -2.0, 3.5], [1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(run(&p, &m, x.clone()), x);
    }

    #[test]
    fn zero_weights_output_bias() {
        let (mut p, m) = net(vec![2, 2]);
        p.set("net.w0", Tensor::zeros(2, 2)).unwrap();
        p.set("net.b0", Tensor::row(&[0.25, -4.0])).unwrap();
        let y = run(&p, &m, Tensor::row(&[9.0, -9.0]));
        assert_eq!(y.data(), &[0.25, -4.0]);
    }

    #[test]
    fn two_by_two_matches_hand_product() {
        let (mut p, m) = net(vec![2, 2]);
        p.set(
            "net.w0",
            Tensor::from_rows(&[[0.5, -1.0], [2.0, 0.25]]).unwrap(),
        )
        .unwrap();
        p.set("net.b0", Tensor::row(&[0.1, 0.2])).unwrap();
        let y = run(&p, &m, Tensor::row(&[3.0, -2.0]));
        // [3, -2] . W + b = [1.5 - 4 + 0.1, -3 - 0.5 + 0.2]
        assert!((y.data()[0] - (-2.4)).abs() < 1e-12);
        assert!((y.data()[1] - (-3.3)).abs() < 1e-12);
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let (p, m) = net(vec![3, 4, 1]);
        let mut tape = Tape::new();
        let b = p.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(1, 2));
        assert!(matches!(
            m.forward(&mut tape, &b, x),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn attach_finds_existing_layers() {
        let (p, m) = net(vec![3, 4, 1]);
        let again = Mlp::attach(&p, "net", m.spec.clone()).unwrap();
        assert_eq!(again, m);
        let other = LayerSpec::new(vec![3, 5, 1], Activation::Tanh, Activation::Identity);
        assert!(Mlp::attach(&p, "net", other).is_err());
        assert!(Mlp::attach(&p, "nope", m.spec.clone()).is_err());
    }
}

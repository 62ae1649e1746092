//! The learner shared across tasks: a Tanh multilayer perceptron over a flat
//! parameter vector, its mean-squared-error loss and the gradient-flow
//! dynamics that loss induces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{self, ParamVector, Scalar, ScalarField};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::odesolve::GradientFlow;

/// A parametric regressor `ℝ^in → ℝ^out` with a flat parameter vector.
pub trait Learner: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn param_count(&self) -> usize;
    fn forward<S: Scalar>(&self, u: &[S], x: &[S]) -> Vec<S>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights `U(−1/√fan_in, 1/√fan_in)`, biases zero.
    #[default]
    UniformFanIn,
}

/// Layer sizes `(input, hidden.., output)`; Tanh on hidden layers, identity
/// on the output. Layer `l` occupies `fan_out·fan_in` row-major weights
/// followed by `fan_out` biases in the flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub init: InitScheme,
    #[serde(default)]
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, seed: u64) -> Result<Self> {
        let spec = MlpSpec {
            layer_sizes,
            init: InitScheme::UniformFanIn,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 3 {
            return Err(Error::config(format!(
                "an MLP needs at least one hidden layer, got sizes {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::config(format!(
                "layer sizes must be positive, got {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layer_sizes.windows(2).map(|w| (w[0], w[1]))
    }

    /// `Σ (fan_in + 1)·fan_out`.
    pub fn param_count(&self) -> usize {
        self.layers().map(|(i, o)| (i + 1) * o).sum()
    }

    /// Architecture fingerprint (sizes, activation, init); the seed is
    /// deliberately excluded so a trained θ can be tested under other seeds.
    pub fn spec_hash(&self) -> String {
        let sizes: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        let canon = format!("mlp;tanh;{:?};{}", self.init, sizes.join(","));
        Sha256::digest(canon.as_bytes())[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

impl Learner for MlpSpec {
    fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    fn param_count(&self) -> usize {
        MlpSpec::param_count(self)
    }

    fn forward<S: Scalar>(&self, u: &[S], x: &[S]) -> Vec<S> {
        let n_layers = self.layer_sizes.len() - 1;
        let mut act = x.to_vec();
        let mut offset = 0;
        for (l, (fan_in, fan_out)) in self.layers().enumerate() {
            let weights = &u[offset..offset + fan_in * fan_out];
            let biases = &u[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
            offset += (fan_in + 1) * fan_out;
            let last = l + 1 == n_layers;
            act = (0..fan_out)
                .map(|o| {
                    let z = S::dot(&weights[o * fan_in..(o + 1) * fan_in], &act) + biases[o];
                    if last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
        }
        act
    }
}

/// Deterministic in `(spec, seed)`.
pub fn init_params(spec: &MlpSpec) -> Result<ParamVector> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut u = Vec::with_capacity(spec.param_count());
    for (fan_in, fan_out) in spec.layers() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        u.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)));
        u.extend(std::iter::repeat(0.0).take(fan_out));
    }
    Ok(ParamVector::from_vec_unchecked(u))
}

/// Forward pass in plain `f64`.
pub fn predict<M: Learner>(model: &M, u: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_dim("predict parameters", model.param_count(), u.len())?;
    check_dim("predict input", model.input_dim(), x.len())?;
    let y = model.forward(u, x);
    check_finite("prediction", &y)?;
    Ok(y)
}

/// Row-major inputs and targets for `n_points` examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    input_dim: usize,
    output_dim: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        let n = inputs.len();
        check_dim("dataset rows", n, targets.len())?;
        if n == 0 {
            return Err(Error::Dataset(
                "dataset must hold at least one point".into(),
            ));
        }
        let input_dim = inputs[0].len();
        let output_dim = targets[0].len();
        Self::from_flat(
            inputs.into_iter().flatten().collect(),
            targets.into_iter().flatten().collect(),
            input_dim,
            output_dim,
        )
    }

    pub fn from_flat(
        inputs: Vec<f64>,
        targets: Vec<f64>,
        input_dim: usize,
        output_dim: usize,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::Dataset(
                "input and output dims must be positive".into(),
            ));
        }
        if inputs.is_empty() || inputs.len() % input_dim != 0 {
            return Err(Error::Dataset(format!(
                "{} input values do not form rows of width {input_dim}",
                inputs.len()
            )));
        }
        let n = inputs.len() / input_dim;
        check_dim("dataset targets", n * output_dim, targets.len())?;
        check_finite("dataset input", &inputs)?;
        check_finite("dataset target", &targets)?;
        Ok(Dataset {
            inputs,
            targets,
            input_dim,
            output_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.output_dim..(i + 1) * self.output_dim]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

/// `(1/n) Σ ‖predict(x_i) − y_i‖²`.
pub fn mse_loss<M: Learner>(model: &M, u: &[f64], data: &Dataset) -> Result<f64> {
    let loss = MseLoss::new(model, data)?;
    autodiff::value(&loss, u)
}

/// Mean-squared-error loss of a learner on a fixed dataset, as a field over
/// the learner's parameters.
#[derive(Debug, Clone, Copy)]
pub struct MseLoss<'a, M> {
    model: &'a M,
    data: &'a Dataset,
}

impl<'a, M: Learner> MseLoss<'a, M> {
    pub fn new(model: &'a M, data: &'a Dataset) -> Result<Self> {
        check_dim("dataset input width", model.input_dim(), data.input_dim())?;
        check_dim(
            "dataset target width",
            model.output_dim(),
            data.output_dim(),
        )?;
        if data.is_empty() {
            return Err(Error::Dataset("empty dataset".into()));
        }
        Ok(MseLoss { model, data })
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }
}

impl<M: Learner> ScalarField for MseLoss<'_, M> {
    fn dim(&self) -> usize {
        self.model.param_count()
    }

    fn eval<S: Scalar>(&self, u: &[S]) -> S {
        let n = self.data.len();
        let residuals: Vec<S> = (0..n)
            .flat_map(|i| {
                let x: Vec<S> = self.data.input(i).iter().map(|&v| S::from_f64(v)).collect();
                let y = self.model.forward(u, &x);
                y.into_iter()
                    .zip(self.data.target(i))
                    .map(|(p, &t)| p - S::from_f64(t))
                    .collect::<Vec<_>>()
            })
            .collect();
        S::dot(&residuals, &residuals) * S::from_f64(1.0 / n as f64)
    }
}

/// `f(u) = −∇L(u; data)`.
pub fn training_dynamics<'a, M: Learner>(
    model: &'a M,
    data: &'a Dataset,
) -> Result<GradientFlow<MseLoss<'a, M>>> {
    Ok(GradientFlow::new(MseLoss::new(model, data)?))
}

/// `H(u)·v` with `H = ∂f/∂u = −∇²L`.
pub fn dynamics_hvp<M: Learner>(
    model: &M,
    data: &Dataset,
    u: &[f64],
    v: &[f64],
) -> Result<ParamVector> {
    let mut h = autodiff::hvp(&MseLoss::new(model, data)?, u, v)?;
    h.iter_mut().for_each(|x| *x = -*x);
    Ok(h)
}

/// Affine regressor `y = W x + b`; its MSE is a convex quadratic in the
/// parameters, which makes it a useful closed-form hook.
#[derive(Debug, Clone, Copy)]
pub struct LinearModel {
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Learner for LinearModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn param_count(&self) -> usize {
        (self.input_dim + 1) * self.output_dim
    }

    fn forward<S: Scalar>(&self, u: &[S], x: &[S]) -> Vec<S> {
        let (i, o) = (self.input_dim, self.output_dim);
        (0..o)
            .map(|k| S::dot(&u[k * i..(k + 1) * i], x) + u[o * i + k])
            .collect()
    }
}

//! Fully connected tanh network `(z, t) -> p`, the positive coefficient
//! transform and the Adam optimizer.

use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{gemm, Jet, Matrix, Tape, Trans, Var};
use crate::error::{Error, Result};
use crate::problem::ProblemSpec;

pub const MODEL_FORMAT: &str = "pinn-consolidation-model";
pub const MODEL_VERSION: u32 = 1;
pub const INIT_SCHEME: &str = "glorot_uniform";

/// Layer sizes `[2, hidden..., 1]` for `layers` hidden layers of `units`.
pub fn layer_sizes(hidden_layers: usize, units: usize) -> Vec<usize> {
    let mut sizes = vec![2];
    sizes.extend(std::iter::repeat_n(units, hidden_layers));
    sizes.push(1);
    sizes
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::invalid("need at least an input and an output layer"));
    }
    if sizes[0] != 2 {
        return Err(Error::invalid(format!(
            "input layer must have 2 units, got {}",
            sizes[0]
        )));
    }
    if *sizes.last().unwrap() != 1 {
        return Err(Error::invalid("output layer must have 1 unit"));
    }
    if sizes.contains(&0) {
        return Err(Error::invalid("layer sizes must be positive"));
    }
    Ok(())
}

/// Weights of the network plus the optional log-coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    layer_sizes: Vec<usize>,
    /// Per layer, an `out x in` row-major matrix.
    weights: Vec<Matrix>,
    /// Per layer, a `1 x out` row.
    biases: Vec<Matrix>,
    /// Trainable `ln cv`, present only for inverse runs.
    pub w_cv: Option<f64>,
}

impl NetworkParams {
    /// Glorot-uniform weights, zero biases, deterministic in `seed`.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).map_err(|e| Error::invalid(e.to_string()))?;
            let data = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, data));
            biases.push(Matrix::zeros(1, fan_out));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            w_cv: None,
        })
    }

    /// Every weight and bias zero.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let weights = layer_sizes.windows(2).map(|p| Matrix::zeros(p[1], p[0])).collect();
        let biases = layer_sizes.windows(2).map(|p| Matrix::zeros(1, p[1])).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            w_cv: None,
        })
    }

    pub fn with_cv_weight(mut self, w_cv: f64) -> Self {
        self.w_cv = Some(w_cv);
        self
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, layer: usize) -> &Matrix {
        &self.weights[layer]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Matrix {
        &mut self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &Matrix {
        &self.biases[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Matrix {
        &mut self.biases[layer]
    }

    /// Current coefficient of consolidation if the network carries one.
    pub fn cv(&self) -> Option<f64> {
        self.w_cv.map(cv_from_weight)
    }

    /// Count of network weights and biases, excluding `w_cv`.
    pub fn num_network_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.as_slice().len() + b.as_slice().len())
            .sum()
    }

    pub fn num_params(&self) -> usize {
        self.num_network_params() + usize::from(self.w_cv.is_some())
    }

    /// Flattened parameters: per layer its weights then its biases, with
    /// `w_cv` last when present.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out.extend(self.w_cv);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut rest = flat;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (head, tail) = rest.split_at(w.as_slice().len());
            w.as_mut_slice().copy_from_slice(head);
            let (head, tail) = tail.split_at(b.as_slice().len());
            b.as_mut_slice().copy_from_slice(head);
            rest = tail;
        }
        if let Some(w_cv) = self.w_cv.as_mut() {
            *w_cv = rest[0];
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().all(Matrix::is_finite)
            && self.w_cv.is_none_or(f64::is_finite)
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Plain evaluation at a single point.
    pub fn forward(&self, z: f64, t: f64) -> f64 {
        self.predict(&[z], &[t])[0]
    }

    /// Plain batched evaluation, no tape.
    pub fn predict(&self, z: &[f64], t: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), t.len(), "z and t must have equal length");
        let n = z.len();
        let mut x = Matrix::zeros(n, 2);
        for i in 0..n {
            x.set(i, 0, z[i]);
            x.set(i, 1, t[i]);
        }
        let last = self.num_layers() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut y = Matrix::zeros(n, w.rows());
            for row in y.as_mut_slice().chunks_exact_mut(w.rows()) {
                row.copy_from_slice(b.as_slice());
            }
            gemm(&x, Trans::No, w, Trans::Yes, 1.0, &mut y);
            if l < last {
                y.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
            }
            x = y;
        }
        x.into_vec()
    }

    /// Registers every weight and bias on `tape` as parameters, in flat
    /// order.
    pub fn bind(&self, tape: &mut Tape) -> BoundNetwork {
        let mut weights = Vec::with_capacity(self.num_layers());
        let mut biases = Vec::with_capacity(self.num_layers());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            weights.push(tape.parameter(w.clone()));
            biases.push(tape.parameter(b.clone()));
        }
        BoundNetwork { weights, biases }
    }

    /// Flattens per-parameter tape gradients (as returned by
    /// [`Tape::parameter_gradient`] after [`NetworkParams::bind`]) and the
    /// optional `w_cv` derivative into the layout of
    /// [`NetworkParams::to_flat`].
    pub fn flatten_gradient(&self, grads: &[Matrix], d_w_cv: Option<f64>) -> Vec<f64> {
        assert_eq!(grads.len(), 2 * self.num_layers(), "gradient count mismatch");
        let mut out = Vec::with_capacity(self.num_params());
        for g in grads {
            out.extend_from_slice(g.as_slice());
        }
        if self.w_cv.is_some() {
            out.push(d_w_cv.unwrap_or(0.0));
        }
        out
    }
}

/// Network parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundNetwork {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl BoundNetwork {
    /// Output values only, for inputs of shape `(n, 2)`.
    pub fn forward_value(&self, tape: &mut Tape, x: Var) -> Var {
        let last = self.weights.len() - 1;
        let mut h = x;
        for (l, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = tape.affine(h, w, Some(b));
            if l < last {
                h = tape.tanh(h);
            }
        }
        h
    }

    /// Output jet: value plus `d/dz`, `d/dt` and `d2/dz2`.
    pub fn forward_jet(&self, tape: &mut Tape, input: &Jet) -> Jet {
        let last = self.weights.len() - 1;
        let mut h = *input;
        for (l, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.affine(tape, w, Some(b));
            if l < last {
                h = h.tanh(tape);
            }
        }
        h
    }
}

/// `exp(w_cv)`, strictly positive for finite input.
pub fn cv_from_weight(w_cv: f64) -> f64 {
    w_cv.exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

/// Moment estimates for bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: self.m.len(),
                got: params.len(),
            });
        }
        if grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: self.m.len(),
                got: grad.len(),
            });
        }
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    /// Applies one step to a network's flattened parameters.
    pub fn step_network(&mut self, params: &mut NetworkParams, grad: &[f64]) -> Result<()> {
        let mut flat = params.to_flat();
        self.step(&mut flat, grad)?;
        params.set_flat(&flat)
    }
}

/// Serialized form of a trained network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    /// Per layer, row-major `out x in`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub w_cv: Option<f64>,
    pub seed: u64,
    pub metadata: ModelMetadata,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMetadata {
    pub init: String,
    pub problem: Option<ProblemSpec>,
    pub epochs_run: usize,
}

impl ModelFile {
    pub fn new(params: &NetworkParams, seed: u64, problem: Option<ProblemSpec>, epochs_run: usize) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            layer_sizes: params.layer_sizes.clone(),
            weights: params.weights.iter().map(|w| w.as_slice().to_vec()).collect(),
            biases: params.biases.iter().map(|b| b.as_slice().to_vec()).collect(),
            w_cv: params.w_cv,
            seed,
            metadata: ModelMetadata {
                init: INIT_SCHEME.to_string(),
                problem,
                epochs_run,
            },
        }
    }

    pub fn to_params(&self) -> Result<NetworkParams> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format {} v{}",
                self.format, self.version
            )));
        }
        validate_sizes(&self.layer_sizes)?;
        let n = self.layer_sizes.len() - 1;
        if self.weights.len() != n || self.biases.len() != n {
            return Err(Error::Format("layer count does not match layer_sizes".into()));
        }
        let mut params = NetworkParams::zeros(&self.layer_sizes)?;
        for (l, pair) in self.layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            if self.weights[l].len() != fan_in * fan_out || self.biases[l].len() != fan_out {
                return Err(Error::Format(format!("layer {l} has the wrong number of entries")));
            }
            params.weights[l] = Matrix::from_vec(fan_out, fan_in, self.weights[l].clone());
            params.biases[l] = Matrix::from_vec(1, fan_out, self.biases[l].clone());
        }
        params.w_cv = self.w_cv;
        if !params.is_finite() {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

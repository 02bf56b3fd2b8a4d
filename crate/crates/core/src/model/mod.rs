//! The monitored AI element: a small feed-forward classifier.
//!
//! Deterministic seeded initialization and training, per-layer activation
//! tapping for hidden-layer monitors, softmax variants, an optional
//! reject-class head, MC-dropout sampling and ensemble combination.
//!
//! A trained model is immutable; `forward` and the prediction helpers take
//! `&self` and are safe to call concurrently. Randomness (dropout masks)
//! is always passed in as an explicit seed, never ambient.

mod ensemble;
mod mc_dropout;
mod softmax;
mod train;

pub use ensemble::{ensemble_predict, weighted_average, EnsemblePrediction, EnsembleSpec};
pub use mc_dropout::{mc_dropout_predict, McDropoutResult};
pub use softmax::{entropy, softmax, softmax_temperature};
pub use train::{
    cross_entropy_loss, input_gradient, loss_and_gradients, train, Gradients, TrainingHyper,
    TrainingResult,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// Hidden-layer activation function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Post-activation values of one layer, annotated with its index
/// (0 = first hidden layer; the last entry holds the linear logits).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivation {
    pub layer: usize,
    pub values: Vector,
}

/// Per-layer post-activation values, ordered input side to output side.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub layers: Vec<LayerActivation>,
}

impl ActivationTrace {
    /// Hidden-layer activations only (everything before the logits).
    pub fn hidden(&self) -> &[LayerActivation] {
        &self.layers[..self.layers.len().saturating_sub(1)]
    }
}

/// Output of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vector,
    pub trace: Option<ActivationTrace>,
}

/// A small fully-connected classifier.
///
/// `weights[l]` has shape `(layer_sizes[l+1], layer_sizes[l])`; the output
/// layer is linear (logits). When `has_reject_class` is set the last logit
/// is the designated reject class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
    #[serde(rename = "activation")]
    pub hidden_activation: Activation,
    pub has_reject_class: bool,
    pub dropout_rate: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl MlpModel {
    /// Build a model with seeded uniform initialization in `[-r, r]`,
    /// `r = sqrt(6 / (fan_in + fan_out))`, and zero biases.
    pub fn new(
        layer_sizes: Vec<usize>,
        hidden_activation: Activation,
        has_reject_class: bool,
        dropout_rate: f64,
        temperature: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len().saturating_sub(1));
        let mut biases = Vec::with_capacity(layer_sizes.len().saturating_sub(1));
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-r..r))
                .collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, data)?);
            biases.push(vec![0.0; fan_out]);
        }
        let model = Self {
            layer_sizes,
            weights,
            biases,
            hidden_activation,
            has_reject_class,
            dropout_rate,
            temperature,
            seed,
        };
        model.validate()?;
        Ok(model)
    }

    /// Validate the structural invariants (shape chaining, parameter ranges).
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(
                "model needs at least an input and an output layer".into(),
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if self.weights.len() != self.layer_sizes.len() - 1
            || self.biases.len() != self.layer_sizes.len() - 1
        {
            return Err(Error::Config(format!(
                "expected {} weight/bias layers, got {}/{}",
                self.layer_sizes.len() - 1,
                self.weights.len(),
                self.biases.len()
            )));
        }
        for (l, w) in self.weights.iter().enumerate() {
            if !w.is_consistent()
                || w.rows() != self.layer_sizes[l + 1]
                || w.cols() != self.layer_sizes[l]
            {
                return Err(Error::Config(format!(
                    "weight matrix {l} is {}x{}, expected {}x{}",
                    w.rows(),
                    w.cols(),
                    self.layer_sizes[l + 1],
                    self.layer_sizes[l]
                )));
            }
            if self.biases[l].len() != self.layer_sizes[l + 1] {
                return Err(Error::Config(format!("bias vector {l} has wrong length")));
            }
        }
        if self.dropout_rate.is_nan() || self.dropout_rate < 0.0 || self.dropout_rate >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.temperature <= 0.0 || !self.temperature.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.has_reject_class && self.output_dim() < 2 {
            return Err(Error::Config(
                "a reject class requires an output dimension of at least 2".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of hidden layers.
    pub fn hidden_layers(&self) -> usize {
        self.layer_sizes.len().saturating_sub(2)
    }

    /// The designated reject logit (the last one), if any.
    pub fn reject_index(&self) -> Option<usize> {
        self.has_reject_class.then(|| self.output_dim() - 1)
    }

    /// Forward pass. Deterministic given `(self, input, rng_seed, dropout_active)`.
    ///
    /// Dropout applies to hidden layers only, with inverted scaling
    /// (`1/(1-p)`), so `dropout_active = false` needs no rescaling. The
    /// trace, present iff `tap`, records post-activation (and post-dropout)
    /// values for every layer, the logits last.
    pub fn forward(
        &self,
        input: &[f64],
        tap: bool,
        dropout_active: bool,
        rng_seed: u64,
    ) -> Result<ForwardOutput> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has dimension {}, model expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let use_dropout = dropout_active && self.dropout_rate > 0.0;
        let mut rng = use_dropout.then(|| ChaCha8Rng::seed_from_u64(rng_seed));
        let keep_scale = 1.0 / (1.0 - self.dropout_rate);

        let mut trace = tap.then(|| ActivationTrace { layers: Vec::new() });
        let last = self.weights.len() - 1;
        let mut activation: Vector = input.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.mat_vec(&activation)?;
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
            }
            if l < last {
                for zi in z.iter_mut() {
                    *zi = self.hidden_activation.apply(*zi);
                }
                if let Some(rng) = rng.as_mut() {
                    for zi in z.iter_mut() {
                        if rng.random::<f64>() < self.dropout_rate {
                            *zi = 0.0;
                        } else {
                            *zi *= keep_scale;
                        }
                    }
                }
            }
            if let Some(t) = trace.as_mut() {
                t.layers.push(LayerActivation {
                    layer: l,
                    values: z.clone(),
                });
            }
            activation = z;
        }
        Ok(ForwardOutput {
            logits: activation,
            trace,
        })
    }

    /// Logits without tapping or dropout.
    pub fn logits(&self, input: &[f64]) -> Result<Vector> {
        Ok(self.forward(input, false, false, 0)?.logits)
    }

    /// Softmax class probabilities (temperature 1) without dropout.
    pub fn probabilities(&self, input: &[f64]) -> Result<Vector> {
        softmax(&self.logits(input)?)
    }

    /// Softmax over all logits including the designated reject logit.
    ///
    /// Errors with a configuration error when the model has no reject class.
    pub fn reject_probabilities(&self, logits: &[f64]) -> Result<Vector> {
        if !self.has_reject_class {
            return Err(Error::Config("model has no designated reject class".into()));
        }
        if logits.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "logits have length {}, model outputs {}",
                logits.len(),
                self.output_dim()
            )));
        }
        softmax(logits)
    }

    /// Probability assigned to the reject class for an input.
    pub fn reject_probability(&self, input: &[f64]) -> Result<f64> {
        let probs = self.reject_probabilities(&self.logits(input)?)?;
        Ok(probs[self.output_dim() - 1])
    }

    /// Most probable non-reject class for an input (ties to the lowest index).
    pub fn predicted_class(&self, input: &[f64]) -> Result<usize> {
        let probs = self.probabilities(input)?;
        let non_reject = match self.reject_index() {
            Some(r) => &probs[..r],
            None => &probs[..],
        };
        let mut best = 0;
        for (i, p) in non_reject.iter().enumerate() {
            if *p > non_reject[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let model: MlpModel = serde_json::from_str(json)?;
        model.validate()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_model(dim: usize) -> MlpModel {
        MlpModel {
            layer_sizes: vec![dim, dim],
            weights: vec![Matrix::identity(dim)],
            biases: vec![vec![0.0; dim]],
            hidden_activation: Activation::Relu,
            has_reject_class: false,
            dropout_rate: 0.0,
            temperature: 1.0,
            seed: 0,
        }
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let m = identity_model(3);
        let out = m.forward(&[0.5, -2.0, 3.0], false, false, 0).unwrap();
        assert_eq!(out.logits, vec![0.5, -2.0, 3.0]);
    }

    #[test]
    fn forward_is_deterministic_without_dropout() {
        let m = MlpModel::new(vec![2, 8, 3], Activation::Relu, false, 0.0, 1.0, 11).unwrap();
        let a = m.forward(&[0.3, -0.7], false, false, 1).unwrap().logits;
        let b = m.forward(&[0.3, -0.7], false, false, 2).unwrap().logits;
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_is_seed_reproducible() {
        let m = MlpModel::new(vec![2, 16, 3], Activation::Relu, false, 0.5, 1.0, 11).unwrap();
        let a = m.forward(&[0.3, -0.7], false, true, 99).unwrap().logits;
        let b = m.forward(&[0.3, -0.7], false, true, 99).unwrap().logits;
        let c = m.forward(&[0.3, -0.7], false, true, 100).unwrap().logits;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn dropout_inactive_ignores_rate() {
        let m = MlpModel::new(vec![2, 16, 3], Activation::Relu, false, 0.9, 1.0, 11).unwrap();
        let a = m.forward(&[0.3, -0.7], false, false, 1).unwrap().logits;
        let b = m.forward(&[0.3, -0.7], false, false, 2).unwrap().logits;
        assert_eq!(a, b);
    }

    #[test]
    fn trace_shapes_follow_layer_sizes() {
        let m = MlpModel::new(vec![2, 8, 4, 3], Activation::Tanh, false, 0.0, 1.0, 5).unwrap();
        let out = m.forward(&[0.1, 0.2], true, false, 0).unwrap();
        let trace = out.trace.unwrap();
        assert_eq!(trace.layers.len(), 3);
        for (i, layer) in trace.layers.iter().enumerate() {
            assert_eq!(layer.layer, i);
            assert_eq!(layer.values.len(), m.layer_sizes[i + 1]);
        }
        assert_eq!(trace.hidden().len(), 2);
        assert_eq!(trace.layers.last().unwrap().values, out.logits);
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let m = identity_model(3);
        assert!(matches!(
            m.forward(&[1.0, 2.0], false, false, 0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn reject_probabilities_requires_reject_head() {
        let m = identity_model(3);
        assert!(matches!(
            m.reject_probabilities(&[0.0, 0.0, 0.0]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn reject_probabilities_are_a_softmax_over_all_logits() {
        let mut m = identity_model(3);
        m.has_reject_class = true;
        let p = m.reject_probabilities(&[0.0, 0.0, 0.0]).unwrap();
        for x in &p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        // a dominant reject logit concentrates the mass on the reject class
        let p = m.reject_probabilities(&[0.0, 0.0, 10.0]).unwrap();
        assert!(p[2] > 0.999);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(m.reject_probabilities(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn json_round_trip_preserves_model() {
        let m = MlpModel::new(vec![2, 4, 3], Activation::Relu, true, 0.1, 2.0, 77).unwrap();
        let json = m.to_json().unwrap();
        let back = MlpModel::from_json(&json).unwrap();
        assert_eq!(back.layer_sizes, m.layer_sizes);
        assert_eq!(back.weights, m.weights);
        assert_eq!(back.biases, m.biases);
        assert_eq!(back.temperature, m.temperature);
        assert!(json.contains("\"activation\""));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(MlpModel::new(vec![2, 3], Activation::Relu, false, 1.0, 1.0, 0).is_err());
        assert!(MlpModel::new(vec![2, 3], Activation::Relu, false, 0.0, 0.0, 0).is_err());
        assert!(MlpModel::new(vec![2], Activation::Relu, false, 0.0, 1.0, 0).is_err());
        assert!(MlpModel::new(vec![2, 1], Activation::Relu, true, 0.0, 1.0, 0).is_err());
    }
}

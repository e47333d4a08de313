use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rig::{ExpressionParams, ANIME_EXPR_DIM, PARAM_DIM};
use crate::scalar::{all_finite, dot, Scalar};

pub const DEFAULT_HIDDEN: [usize; 2] = [256, 256];
pub const DEFAULT_LEAK: f64 = 0.2;

/// Offsets of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs` weights start here.
    pub weights: usize,
    pub biases: usize,
}

/// Feed-forward regressor `[psi; jaw] -> b` with leaky-ReLU hidden layers and
/// a sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslatorModel<T> {
    layers: Vec<LayerSlot>,
    params: Vec<T>,
    leak: T,
}

fn layout(sizes: &[usize]) -> Result<(Vec<LayerSlot>, usize)> {
    if sizes.len() < 2 {
        return Err(Error::Config("a model needs at least an input and an output layer".into()));
    }
    if sizes[0] != PARAM_DIM || sizes[sizes.len() - 1] != ANIME_EXPR_DIM {
        return Err(Error::Config(format!(
            "layer sizes must start at {PARAM_DIM} and end at {ANIME_EXPR_DIM}, got {sizes:?}"
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::Config(format!("zero-width layer in {sizes:?}")));
    }
    let mut slots = Vec::with_capacity(sizes.len() - 1);
    let mut off = 0;
    for w in sizes.windows(2) {
        let (i, o) = (w[0], w[1]);
        slots.push(LayerSlot {
            inputs: i,
            outputs: o,
            weights: off,
            biases: off + i * o,
        });
        off += i * o + o;
    }
    Ok((slots, off))
}

impl<T: Scalar> TranslatorModel<T> {
    /// Uniform `+-sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        Self::init_with_leak(sizes, seed, T::of(DEFAULT_LEAK))
    }

    pub fn init_with_leak(sizes: &[usize], seed: u64, leak: T) -> Result<Self> {
        if !(leak >= T::zero() && leak < T::one()) {
            return Err(Error::Config(format!("leak must be in [0, 1), got {leak}")));
        }
        let (layers, n) = layout(sizes)?;
        let mut params = vec![T::zero(); n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &layers {
            let bound = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
            for w in &mut params[l.weights..l.biases] {
                *w = T::of(bound * (2.0 * rng.gen::<f64>() - 1.0));
            }
        }
        Ok(Self { layers, params, leak })
    }

    /// Default `53 -> 256 -> 256 -> 17` model.
    pub fn default_init(seed: u64) -> Self {
        Self::init(&Self::sizes_with_hidden(&DEFAULT_HIDDEN), seed).expect("default layout is valid")
    }

    pub fn sizes_with_hidden(hidden: &[usize]) -> Vec<usize> {
        let mut s = vec![PARAM_DIM];
        s.extend_from_slice(hidden);
        s.push(ANIME_EXPR_DIM);
        s
    }

    /// Assembles a model from per-layer row-major weights and biases.
    pub fn from_parts(sizes: &[usize], weights: &[Vec<T>], biases: &[Vec<T>], leak: T) -> Result<Self> {
        let (layers, n) = layout(sizes)?;
        if weights.len() != layers.len() || biases.len() != layers.len() {
            return Err(Error::Arity {
                what: "model layers",
                expected: layers.len(),
                got: weights.len().min(biases.len()),
            });
        }
        let mut params = Vec::with_capacity(n);
        for (l, (w, b)) in layers.iter().zip(weights.iter().zip(biases)) {
            if w.len() != l.inputs * l.outputs {
                return Err(Error::Arity {
                    what: "layer weights",
                    expected: l.inputs * l.outputs,
                    got: w.len(),
                });
            }
            if b.len() != l.outputs {
                return Err(Error::Arity {
                    what: "layer biases",
                    expected: l.outputs,
                    got: b.len(),
                });
            }
            params.extend_from_slice(w);
            params.extend_from_slice(b);
        }
        let model = Self { layers, params, leak };
        model.check_finite()?;
        Ok(model)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn layers(&self) -> &[LayerSlot] {
        &self.layers
    }

    pub fn leak(&self) -> T {
        self.leak
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn layer_weights(&self, l: usize) -> &[T] {
        let s = self.layers[l];
        &self.params[s.weights..s.biases]
    }

    pub fn layer_biases(&self, l: usize) -> &[T] {
        let s = self.layers[l];
        &self.params[s.biases..s.biases + s.outputs]
    }

    /// Zeroes the output layer, so every prediction is exactly 0.5.
    pub fn zero_output_layer(&mut self) {
        let s = *self.layers.last().expect("at least one layer");
        for v in &mut self.params[s.weights..s.biases + s.outputs] {
            *v = T::zero();
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if all_finite(&self.params) && self.leak.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite("model parameters"))
        }
    }
}

/// Logit bound keeping the sigmoid strictly inside (0, 1) in `T`.
pub(crate) fn logit_bound<T: Scalar>() -> T {
    T::of(-(T::epsilon().to_f64_lossy()).ln() - 1.0)
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Dense forward pass that keeps every pre-activation for backprop.
pub(crate) struct Activations<T> {
    /// `pre[l]` is the pre-activation of layer `l`.
    pub pre: Vec<Vec<T>>,
    /// `post[0]` is the input; `post[l + 1]` the activation of layer `l`.
    pub post: Vec<Vec<T>>,
}

impl<T: Scalar> Activations<T> {
    pub fn new(model: &TranslatorModel<T>) -> Self {
        let pre = model.layers.iter().map(|l| vec![T::zero(); l.outputs]).collect();
        let mut post = vec![vec![T::zero(); model.layers[0].inputs]];
        post.extend(model.layers.iter().map(|l| vec![T::zero(); l.outputs]));
        Self { pre, post }
    }

    pub fn output(&self) -> &[T] {
        self.post.last().expect("output layer")
    }
}

impl<T: Scalar> TranslatorModel<T> {
    pub(crate) fn forward_into(&self, input: &[T], acts: &mut Activations<T>) {
        acts.post[0].copy_from_slice(input);
        let last = self.layers.len() - 1;
        let bound = logit_bound::<T>();
        for (l, s) in self.layers.iter().enumerate() {
            let w = &self.params[s.weights..s.biases];
            let b = &self.params[s.biases..s.biases + s.outputs];
            let (head, tail) = acts.post.split_at_mut(l + 1);
            let x = &head[l];
            let pre = &mut acts.pre[l];
            for o in 0..s.outputs {
                let row = &w[o * s.inputs..(o + 1) * s.inputs];
                pre[o] = b[o] + dot(row, x);
            }
            let out = &mut tail[0];
            if l == last {
                for (y, &z) in out.iter_mut().zip(pre.iter()) {
                    *y = sigmoid(z.max(-bound).min(bound));
                }
            } else {
                for (y, &z) in out.iter_mut().zip(pre.iter()) {
                    *y = if z > T::zero() { z } else { self.leak * z };
                }
            }
        }
    }

    /// Predicted anime coefficients for a raw `[psi; jaw]` vector.
    pub fn forward_vector(&self, input: &[T]) -> Result<[T; ANIME_EXPR_DIM]> {
        if input.len() != PARAM_DIM {
            return Err(Error::Arity {
                what: "translator input",
                expected: PARAM_DIM,
                got: input.len(),
            });
        }
        if !all_finite(input) {
            return Err(Error::NonFinite("translator input"));
        }
        self.check_finite()?;
        let mut acts = Activations::new(self);
        self.forward_into(input, &mut acts);
        if !all_finite(acts.pre.last().expect("output layer")) {
            return Err(Error::NonFinite("output logits"));
        }
        let mut b = [T::zero(); ANIME_EXPR_DIM];
        b.copy_from_slice(acts.output());
        Ok(b)
    }
}

/// Predicted anime coefficients, strictly inside (0, 1).
pub fn forward<T: Scalar>(model: &TranslatorModel<T>, p: &ExpressionParams<T>) -> Result<[T; ANIME_EXPR_DIM]> {
    model.forward_vector(&p.to_vector())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_output_layer_predicts_half() {
        let mut m = TranslatorModel::<f64>::init(&[PARAM_DIM, 8, ANIME_EXPR_DIM], 1).unwrap();
        m.zero_output_layer();
        let b = m.forward_vector(&[0.7; PARAM_DIM]).unwrap();
        assert_eq!(b, [0.5; ANIME_EXPR_DIM]);
    }

    #[test]
    fn outputs_stay_strictly_inside_unit_interval() {
        let m = TranslatorModel::<f32>::init(&[PARAM_DIM, 4, ANIME_EXPR_DIM], 2).unwrap();
        let mut big = m.clone();
        for w in big.params_mut() {
            *w *= 1e6;
        }
        for model in [m, big] {
            for x in [-3.0f32, 0.0, 3.0] {
                let b = model.forward_vector(&[x; PARAM_DIM]).unwrap();
                assert!(b.iter().all(|&v| v > 0.0 && v < 1.0), "{b:?}");
            }
        }
    }

    #[test]
    fn layout_and_inputs_are_validated() {
        assert!(TranslatorModel::<f64>::init(&[52, 8, 17], 0).is_err());
        assert!(TranslatorModel::<f64>::init(&[53, 0, 17], 0).is_err());
        assert!(TranslatorModel::<f64>::init(&[53], 0).is_err());
        let m = TranslatorModel::<f64>::init(&[53, 17], 0).unwrap();
        assert_eq!(m.param_count(), 53 * 17 + 17);
        assert!(m.forward_vector(&[0.0; 52]).is_err());
        assert!(m.forward_vector(&[f64::NAN; 53]).is_err());
        let mut bad = m.clone();
        bad.params_mut()[0] = f64::INFINITY;
        assert!(bad.forward_vector(&[0.0; 53]).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = TranslatorModel::<f64>::default_init(5);
        assert_eq!(a, TranslatorModel::default_init(5));
        assert_ne!(a, TranslatorModel::default_init(6));
        let bound = (6.0f64 / (53.0 + 256.0)).sqrt();
        assert!(a.layer_weights(0).iter().all(|w| w.abs() <= bound));
        assert!(a.layer_biases(1).iter().all(|&b| b == 0.0));
    }

    #[test]
    fn from_parts_round_trip() {
        let m = TranslatorModel::<f64>::init(&[53, 6, 17], 3).unwrap();
        let w: Vec<Vec<f64>> = (0..2).map(|l| m.layer_weights(l).to_vec()).collect();
        let b: Vec<Vec<f64>> = (0..2).map(|l| m.layer_biases(l).to_vec()).collect();
        assert_eq!(TranslatorModel::from_parts(&m.layer_sizes(), &w, &b, m.leak()).unwrap(), m);
        assert!(TranslatorModel::from_parts(&m.layer_sizes(), &w[..1], &b, m.leak()).is_err());
    }
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{anime_proxy_rig, AdapterMatrix};
use crate::error::{Error, Result};
use crate::rig::{ExpressionParams, RigSpec};
use crate::scalar::Scalar;
use crate::translator::grad::Objective;
use crate::translator::loss::{LossBreakdown, LossWeights, DEFAULT_LAMBDA_VER};
use crate::translator::model::{TranslatorModel, DEFAULT_HIDDEN, DEFAULT_LEAK};

const SHUFFLE_STREAM: u64 = 0x5348_5546;

/// Initial state of the output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputInit {
    /// All output weights and biases zero: every initial prediction is 0.5.
    #[default]
    Zero,
    /// Same uniform fan scaling as the hidden layers.
    Uniform,
}

/// Optimizer and objective settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lambda_ver: f64,
    pub landmark_weight: f64,
    pub closure_weight: f64,
    /// Seeds weight initialization and the per-epoch shuffle.
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub leak: f64,
    pub output_init: OutputInit,
    /// Number of samples for pipelines that draw their own training set.
    pub dataset_size: usize,
    /// Half-width of the expression range those samples are drawn from.
    pub param_range: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 512,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lambda_ver: DEFAULT_LAMBDA_VER,
            landmark_weight: 1.0,
            closure_weight: 1.0,
            seed: 0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            leak: DEFAULT_LEAK,
            output_init: OutputInit::Zero,
            dataset_size: 8192,
            param_range: crate::rig::DEFAULT_PARAM_RANGE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if self.hidden.contains(&0) {
            return bad(format!("hidden layer widths must be >= 1, got {:?}", self.hidden));
        }
        if !(self.leak >= 0.0 && self.leak < 1.0) {
            return bad(format!("leak must be in [0, 1), got {}", self.leak));
        }
        if self.dataset_size == 0 {
            return bad("dataset_size must be >= 1".into());
        }
        if !(self.param_range > 0.0 && self.param_range.is_finite()) {
            return bad(format!("param_range must be > 0, got {}", self.param_range));
        }
        self.weights::<f64>().validate()
    }

    pub fn weights<T: Scalar>(&self) -> LossWeights<T> {
        LossWeights {
            landmark: T::of(self.landmark_weight),
            closure: T::of(self.closure_weight),
            vertex: T::of(self.lambda_ver),
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        TranslatorModel::<f64>::sizes_with_hidden(&self.hidden)
    }

    /// Freshly initialized model for this configuration.
    pub fn init_model<T: Scalar>(&self) -> Result<TranslatorModel<T>> {
        let mut m = TranslatorModel::init_with_leak(&self.layer_sizes(), self.seed, T::of(self.leak))?;
        if self.output_init == OutputInit::Zero {
            m.zero_output_layer();
        }
        Ok(m)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    epsilon: T,
    m: Vec<T>,
    v: Vec<T>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: usize, lr: T, beta1: T, beta2: T, epsilon: T) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            epsilon,
            m: vec![T::zero(); params],
            v: vec![T::zero(); params],
            step: 0,
        }
    }

    pub fn from_config(params: usize, c: &TrainConfig) -> Self {
        Self::new(params, T::of(c.learning_rate), T::of(c.beta1), T::of(c.beta2), T::of(c.epsilon))
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, params: &mut [T], grad: &[T]) {
        debug_assert_eq!(params.len(), grad.len());
        self.step += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.step);
        let c2 = one - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Sample-weighted mean of the batch losses seen during one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord<T> {
    pub epoch: usize,
    pub loss: LossBreakdown<T>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: TranslatorModel<T>,
    pub history: Vec<EpochRecord<T>>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError<T: Scalar> {
    #[error(transparent)]
    Invalid(#[from] Error),
    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged {
        epoch: usize,
        step: usize,
        reason: String,
        /// Parameters before the failing step.
        last_good: Box<TranslatorModel<T>>,
        history: Vec<EpochRecord<T>>,
    },
}

/// Minibatch Adam on the mean geometric loss.
pub fn train<T: Scalar>(
    model: TranslatorModel<T>,
    dataset: &[ExpressionParams<T>],
    adapter: &AdapterMatrix<T>,
    human: &RigSpec<T>,
    anime: &RigSpec<T>,
    config: &TrainConfig,
) -> std::result::Result<TrainOutcome<T>, TrainError<T>> {
    train_with_progress(model, dataset, adapter, human, anime, config, |_| {})
}

pub fn train_with_progress<T: Scalar>(
    mut model: TranslatorModel<T>,
    dataset: &[ExpressionParams<T>],
    adapter: &AdapterMatrix<T>,
    human: &RigSpec<T>,
    anime: &RigSpec<T>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord<T>),
) -> std::result::Result<TrainOutcome<T>, TrainError<T>> {
    config.validate()?;
    model.check_finite()?;
    if dataset.is_empty() {
        return Err(Error::Invalid("training set is empty".into()).into());
    }
    let proxy = anime_proxy_rig(human, anime)?;
    let objective = Objective::new(human, &proxy, adapter, config.weights())?;
    let samples = objective.samples(dataset)?;
    let mut opt = Adam::from_config(model.param_count(), config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut step = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for idx in order.chunks(config.batch_size) {
            step += 1;
            batch.clear();
            batch.extend(idx.iter().map(|&i| &samples[i]));
            let diverged = |reason: String, last: &TranslatorModel<T>, history: &[EpochRecord<T>]| TrainError::Diverged {
                epoch,
                step,
                reason,
                last_good: Box::new(last.clone()),
                history: history.to_vec(),
            };
            let (loss, grad) = match objective.batch_gradient(&model, &batch) {
                Ok(v) => v,
                Err(e) => return Err(diverged(e.to_string(), &model, &history)),
            };
            let before = model.clone();
            opt.update(model.params_mut(), &grad);
            if model.check_finite().is_err() {
                return Err(diverged("non-finite parameters after update".into(), &before, &history));
            }
            sum.add(&loss.scaled(T::of(idx.len() as f64)));
        }
        let rec = EpochRecord {
            epoch,
            loss: sum.scaled(T::one() / T::of(samples.len() as f64)),
        };
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(TrainOutcome { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::fit_pose_adapter;
    use crate::synth::{make_rig_pair, sample_expressions, SynthSpec};

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 8,
            hidden: vec![6],
            output_init: OutputInit::Uniform,
            ..TrainConfig::default()
        }
    }

    fn fixture() -> (RigSpec<f64>, RigSpec<f64>, AdapterMatrix<f64>, Vec<ExpressionParams<f64>>) {
        let (h, a) = make_rig_pair(&SynthSpec::with_sizes(90, 2, 0.05).unwrap()).unwrap();
        let ad = fit_pose_adapter(&h, &a, 1e-4).unwrap();
        (h, a, ad, sample_expressions(20, 3, 3.0).unwrap())
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (h, a, ad, data) = fixture();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..small_config()
        };
        let m0 = cfg.init_model::<f64>().unwrap();
        let out = train(m0.clone(), &data, &ad, &h, &a, &cfg).unwrap();
        assert_eq!(out.model, m0);
        assert_eq!(out.history.len(), 2);
    }

    #[test]
    fn single_step_matches_hand_computed_adam() {
        let (h, a, ad, data) = fixture();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            ..small_config()
        };
        let m0 = cfg.init_model::<f64>().unwrap();
        let proxy = anime_proxy_rig(&h, &a).unwrap();
        let obj = Objective::new(&h, &proxy, &ad, cfg.weights()).unwrap();
        let (_, g) = obj.mean_gradient(&m0, &[obj.sample(&data[0]).unwrap()]).unwrap();
        let out = train(m0.clone(), &data[..1], &ad, &h, &a, &cfg).unwrap();
        for ((&p0, &p1), &gi) in m0.params().iter().zip(out.model.params()).zip(&g) {
            // m_hat = g and v_hat = g^2 after one step
            let expect = p0 - 1e-4 * gi / (gi.abs() + 1e-8);
            assert!((p1 - expect).abs() <= 1e-15 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn rerun_is_bit_identical() {
        let (h, a, ad, data) = fixture();
        let cfg = small_config();
        let r1 = train(cfg.init_model().unwrap(), &data, &ad, &h, &a, &cfg).unwrap();
        let r2 = train(cfg.init_model().unwrap(), &data, &ad, &h, &a, &cfg).unwrap();
        assert_eq!(r1.model, r2.model);
        assert_eq!(r1.history, r2.history);
    }

    #[test]
    fn divergence_returns_last_good_model() {
        let (h, a, ad, data) = fixture();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 5,
            ..small_config()
        };
        match train(cfg.init_model().unwrap(), &data, &ad, &h, &a, &cfg) {
            Err(TrainError::Diverged { last_good, step, .. }) => {
                assert!(last_good.check_finite().is_ok());
                assert!(step >= 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
            TrainConfig { lambda_ver: -1.0, ..TrainConfig::default() },
            TrainConfig { beta1: 1.0, ..TrainConfig::default() },
            TrainConfig { hidden: vec![0], ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        let parsed: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "seed": 9}"#).unwrap();
        assert_eq!((parsed.epochs, parsed.seed, parsed.batch_size), (3, 9, 512));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let (h, a, ad, _) = fixture();
        let cfg = small_config();
        assert!(matches!(
            train(cfg.init_model().unwrap(), &[], &ad, &h, &a, &cfg),
            Err(TrainError::Invalid(_))
        ));
    }
}

//! Central finite-difference check of the analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::translator::grad::{Objective, Sample};
use crate::translator::model::TranslatorModel;

/// Default finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;
/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
pub const RELATIVE_FLOOR: f64 = 1e-6;
/// Default pass threshold on the maximum relative error.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub sample: usize,
    pub param: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    /// Draws rejected because `theta +- h` straddle a kink.
    pub skipped: usize,
    pub max_relative_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares the per-sample analytic gradient with `(L(theta + h) - L(theta - h)) / 2h`
/// on `probes` random (sample, parameter) pairs. A draw is skipped when the
/// nonsmooth sign pattern differs between the two evaluation points.
pub fn gradient_check<T: Scalar>(
    objective: &Objective<T>,
    model: &TranslatorModel<T>,
    samples: &[Sample<T>],
    probes: usize,
    step: T,
    seed: u64,
) -> Result<GradCheckReport> {
    if samples.is_empty() || probes == 0 {
        return Err(Error::Invalid("gradient check needs at least one sample and one probe".into()));
    }
    if !(step > T::zero()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grads: Vec<Option<Vec<T>>> = vec![None; samples.len()];
    let mut out = Vec::with_capacity(probes);
    let mut skipped = 0;
    let max_draws = probes * 50;
    let mut draws = 0;
    while out.len() < probes {
        if draws == max_draws {
            return Err(Error::Degenerate(format!(
                "only {} of {probes} probes avoided kinks in {max_draws} draws",
                out.len()
            )));
        }
        draws += 1;
        let s = rng.gen_range(0..samples.len());
        let i = rng.gen_range(0..model.param_count());
        let one = std::slice::from_ref(&samples[s]);
        let mut plus = model.clone();
        plus.params_mut()[i] += step;
        let mut minus = model.clone();
        minus.params_mut()[i] -= step;
        if objective.kink_pattern(&plus, &samples[s]) != objective.kink_pattern(&minus, &samples[s])
            || objective.kink_pattern(model, &samples[s]) != objective.kink_pattern(&plus, &samples[s])
        {
            skipped += 1;
            continue;
        }
        if grads[s].is_none() {
            grads[s] = Some(objective.mean_gradient(model, one)?.1);
        }
        let analytic = grads[s].as_ref().expect("filled above")[i].to_f64_lossy();
        let lp = objective.mean_loss(&plus, one)?.l_total;
        let lm = objective.mean_loss(&minus, one)?.l_total;
        let numeric = ((lp - lm) / (T::of(2.0) * step)).to_f64_lossy();
        out.push(Probe {
            sample: s,
            param: i,
            analytic,
            numeric,
            relative_error: relative_error(analytic, numeric),
        });
    }
    let max_relative_error = out.iter().map(|p| p.relative_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        probes: out,
        skipped,
        max_relative_error,
    })
}

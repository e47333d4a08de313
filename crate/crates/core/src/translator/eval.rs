//! Held-out evaluation of a trained translator.

use crate::error::{Error, Result};
use crate::metrics::{kdr_sequence, EyePairs, KdrReport};
use crate::rig::{extract_keypoints, synthesize_mesh, synthesize_params, ExpressionParams, Point3, RigSpec, ANIME_EXPR_DIM};
use crate::scalar::Scalar;
use crate::translator::model::{forward, TranslatorModel};

/// Anime-rig keypoints under raw coefficients `b` (no jaw).
pub fn anime_keypoints<T: Scalar>(anime: &RigSpec<T>, b: &[T]) -> Result<Vec<Point3<T>>> {
    extract_keypoints(anime, &synthesize_mesh(anime, b, None)?)
}

/// Eye pairs of a rig split into left and right halves.
pub fn eye_pairs<T: Scalar>(rig: &RigSpec<T>) -> Result<EyePairs> {
    EyePairs::new(rig.left_eye_pairs().to_vec(), rig.right_eye_pairs().to_vec())
}

/// KDR of translated frames against the driving human frames.
///
/// The driving neutral is the human template; the predicted neutral is the
/// anime pose the model produces for the neutral human input.
pub fn translation_kdr<T: Scalar>(
    model: &TranslatorModel<T>,
    human: &RigSpec<T>,
    anime: &RigSpec<T>,
    frames: &[ExpressionParams<T>],
) -> Result<KdrReport<T>> {
    let driving = frames
        .iter()
        .map(|p| extract_keypoints(human, &synthesize_params(human, p)?))
        .collect::<Result<Vec<_>>>()?;
    let predicted = frames
        .iter()
        .map(|p| anime_keypoints(anime, &forward(model, p)?))
        .collect::<Result<Vec<_>>>()?;
    let neutral = anime_keypoints(anime, &forward(model, &ExpressionParams::zero())?)?;
    kdr_sequence(&driving, &predicted, &human.neutral_keypoints(), &neutral, &eye_pairs(human)?)
}

/// Mean over samples and coordinates of `|M(p) - b*|`.
pub fn mean_absolute_error<T: Scalar>(
    model: &TranslatorModel<T>,
    samples: &[ExpressionParams<T>],
    labels: &[[T; ANIME_EXPR_DIM]],
) -> Result<T> {
    if samples.len() != labels.len() || samples.is_empty() {
        return Err(Error::Invalid(format!(
            "{} samples for {} labels",
            samples.len(),
            labels.len()
        )));
    }
    let mut sum = T::zero();
    for (p, b) in samples.iter().zip(labels) {
        let y = forward(model, p)?;
        sum += y.iter().zip(b).map(|(&u, &v)| (u - v).abs()).sum::<T>();
    }
    Ok(sum / T::of((samples.len() * ANIME_EXPR_DIM) as f64))
}

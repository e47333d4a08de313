//! Keypoint Distance Ratio (KDR).
//!
//! Each domain's eyelid opening is divided by that domain's own neutral
//! opening, and the two ratios are compared. Absolute lid geometry can differ
//! arbitrarily between a human face and an anime face; only the degree of
//! closure is measured.

use crate::error::{Error, Result};
use crate::rig::{Pair, Point3};
use crate::scalar::Scalar;

/// Mean l1 distance between the upper and lower lid of each pair.
pub fn eyelid_distance<T: Scalar>(keypoints: &[Point3<T>], pairs: &[Pair]) -> Result<T> {
    if pairs.is_empty() {
        return Err(Error::Invalid("eyelid pair set is empty".into()));
    }
    let mut sum = T::zero();
    for &(i, j) in pairs {
        for idx in [i, j] {
            if idx >= keypoints.len() {
                return Err(Error::PairIndex {
                    index: idx,
                    limit: keypoints.len(),
                });
            }
        }
        let (a, b) = (keypoints[i], keypoints[j]);
        sum += (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs();
    }
    Ok(sum / T::of(pairs.len() as f64))
}

/// Lid pairs of the left and right eye.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EyePairs {
    pub left: Vec<Pair>,
    pub right: Vec<Pair>,
}

impl EyePairs {
    pub fn new(left: Vec<Pair>, right: Vec<Pair>) -> Result<Self> {
        if left.is_empty() || right.is_empty() {
            return Err(Error::Invalid("each eye needs at least one lid pair".into()));
        }
        Ok(Self { left, right })
    }

    fn eyes(&self) -> [&[Pair]; 2] {
        [&self.left, &self.right]
    }
}

fn closure_ratio<T: Scalar>(frame: &[Point3<T>], neutral: &[Point3<T>], pairs: &[Pair]) -> Result<T> {
    let rest = eyelid_distance(neutral, pairs)?;
    if !(rest > T::zero()) {
        return Err(Error::Degenerate(format!(
            "neutral eyelid distance must be positive, got {rest}"
        )));
    }
    Ok(eyelid_distance(frame, pairs)? / rest)
}

/// Mean over both eyes of `|r_driving - r_predicted|`.
pub fn kdr_frame<T: Scalar>(
    driving: &[Point3<T>],
    predicted: &[Point3<T>],
    driving_neutral: &[Point3<T>],
    predicted_neutral: &[Point3<T>],
    eyes: &EyePairs,
) -> Result<T> {
    let mut sum = T::zero();
    for pairs in eyes.eyes() {
        let rd = closure_ratio(driving, driving_neutral, pairs)?;
        let rp = closure_ratio(predicted, predicted_neutral, pairs)?;
        sum += (rd - rp).abs();
    }
    Ok(sum / T::of(2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdrReport<T> {
    pub per_frame: Vec<T>,
    pub mean: T,
    pub frame_count: usize,
}

/// KDR for every frame of a clip plus the arithmetic mean.
pub fn kdr_sequence<T: Scalar>(
    driving: &[Vec<Point3<T>>],
    predicted: &[Vec<Point3<T>>],
    driving_neutral: &[Point3<T>],
    predicted_neutral: &[Point3<T>],
    eyes: &EyePairs,
) -> Result<KdrReport<T>> {
    if driving.len() != predicted.len() {
        return Err(Error::Invalid(format!(
            "frame count mismatch: {} driving vs {} predicted",
            driving.len(),
            predicted.len()
        )));
    }
    if driving.is_empty() {
        return Err(Error::Invalid("KDR needs at least one frame".into()));
    }
    let per_frame = driving
        .iter()
        .zip(predicted)
        .map(|(d, p)| kdr_frame(d, p, driving_neutral, predicted_neutral, eyes))
        .collect::<Result<Vec<T>>>()?;
    let mean = per_frame.iter().copied().sum::<T>() / T::of(per_frame.len() as f64);
    Ok(KdrReport {
        frame_count: per_frame.len(),
        per_frame,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eyes() -> EyePairs {
        EyePairs::new(vec![(0, 1)], vec![(2, 3)]).unwrap()
    }

    /// Four points: two eyes with lid gaps `left` and `right` along y.
    fn face(left: f64, right: f64, scale: f64) -> Vec<Point3<f64>> {
        vec![
            [0.0, left * scale, 0.0],
            [0.0, 0.0, 0.0],
            [1.0, right * scale, 0.0],
            [1.0, 0.0, 0.0],
        ]
    }

    #[test]
    fn eyelid_distance_cases() {
        let k: Vec<Point3<f64>> = vec![[0.0, 0.2, 0.0], [0.0, 0.0, 0.0]];
        assert!((eyelid_distance(&k, &[(0, 1)]).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(eyelid_distance(&k, &[(0, 0)]).unwrap(), 0.0);
        assert!(eyelid_distance(&k, &[]).is_err());
    }

    #[test]
    fn identical_sequences_score_zero() {
        let n = face(0.1, 0.1, 1.0);
        let f = face(0.05, 0.08, 1.0);
        assert_eq!(kdr_frame(&f, &f, &n, &n, &eyes()).unwrap(), 0.0);
    }

    #[test]
    fn closed_versus_open_scores_one() {
        let n = face(0.1, 0.1, 1.0);
        let closed = face(0.0, 0.0, 1.0);
        assert!((kdr_frame(&closed, &n, &n, &n, &eyes()).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_neutral_is_degenerate() {
        let n = face(0.0, 0.1, 1.0);
        let f = face(0.05, 0.05, 1.0);
        assert!(matches!(kdr_frame(&f, &f, &n, &n, &eyes()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn sequence_mean_and_errors() {
        let n = face(0.1, 0.1, 1.0);
        let d = vec![face(0.05, 0.1, 1.0)];
        let p = vec![face(0.1, 0.1, 1.0)];
        let r = kdr_sequence(&d, &p, &n, &n, &eyes()).unwrap();
        assert_eq!(r.frame_count, 1);
        assert_eq!(r.mean, r.per_frame[0]);
        assert!(kdr_sequence(&d, &[], &n, &n, &eyes()).is_err());
        assert!(kdr_sequence::<f64>(&[], &[], &n, &n, &eyes()).is_err());
    }
}

use crate::adapter::{apply_adapter, AdapterMatrix};
use crate::error::{Error, Result};
use crate::rig::{extract_keypoints, synthesize_mesh, synthesize_params, ExpressionParams, Mesh, Pair, Point3, RigSpec};
use crate::scalar::Scalar;
use crate::translator::model::{forward, TranslatorModel};

/// Default weight of the vertex term.
pub const DEFAULT_LAMBDA_VER: f64 = 100.0;

/// Per-term weights of the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T> {
    pub landmark: T,
    pub closure: T,
    pub vertex: T,
}

impl<T: Scalar> LossWeights<T> {
    /// Landmark and closure at 1, vertex at `lambda_ver`.
    pub fn with_lambda_ver(lambda_ver: T) -> Self {
        Self {
            landmark: T::one(),
            closure: T::one(),
            vertex: lambda_ver,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("landmark", self.landmark),
            ("closure", self.closure),
            ("vertex", self.vertex),
        ] {
            if !(w >= T::zero() && w.is_finite()) {
                return Err(Error::Config(format!("{name} loss weight must be >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Default for LossWeights<T> {
    fn default() -> Self {
        Self::with_lambda_ver(T::of(DEFAULT_LAMBDA_VER))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown<T> {
    pub l_lm: T,
    pub l_closure: T,
    pub l_ver: T,
    pub l_total: T,
}

impl<T: Scalar> LossBreakdown<T> {
    pub fn compose(l_lm: T, l_closure: T, l_ver: T, w: &LossWeights<T>) -> Self {
        Self {
            l_lm,
            l_closure,
            l_ver,
            l_total: w.landmark * l_lm + w.closure * l_closure + w.vertex * l_ver,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_lm.is_finite() && self.l_closure.is_finite() && self.l_ver.is_finite() && self.l_total.is_finite()
    }

    pub(crate) fn add(&mut self, o: &Self) {
        self.l_lm += o.l_lm;
        self.l_closure += o.l_closure;
        self.l_ver += o.l_ver;
        self.l_total += o.l_total;
    }

    pub(crate) fn scaled(&self, s: T) -> Self {
        Self {
            l_lm: self.l_lm * s,
            l_closure: self.l_closure * s,
            l_ver: self.l_ver * s,
            l_total: self.l_total * s,
        }
    }
}

/// Sum over landmarks of the componentwise l1 distance.
pub fn loss_landmark<T: Scalar>(pred: &[Point3<T>], target: &[Point3<T>]) -> Result<T> {
    if pred.len() != target.len() {
        return Err(Error::Arity {
            what: "landmark set",
            expected: target.len(),
            got: pred.len(),
        });
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p[0] - t[0]).abs() + (p[1] - t[1]).abs() + (p[2] - t[2]).abs())
        .sum())
}

/// Sum over lid and lip pairs of `| |p_i - p_j| - |t_i - t_j| |_1`.
pub fn loss_closure<T: Scalar>(
    pred: &[Point3<T>],
    target: &[Point3<T>],
    eyelid_pairs: &[Pair],
    mouth_pairs: &[Pair],
) -> Result<T> {
    if pred.len() != target.len() {
        return Err(Error::Arity {
            what: "landmark set",
            expected: target.len(),
            got: pred.len(),
        });
    }
    let mut sum = T::zero();
    for &(i, j) in eyelid_pairs.iter().chain(mouth_pairs) {
        for idx in [i, j] {
            if idx >= pred.len() {
                return Err(Error::PairIndex {
                    index: idx,
                    limit: pred.len(),
                });
            }
        }
        for c in 0..3 {
            let dp = (pred[i][c] - pred[j][c]).abs();
            let dt = (target[i][c] - target[j][c]).abs();
            sum += (dp - dt).abs();
        }
    }
    Ok(sum)
}

/// Mean squared difference over every vertex coordinate.
pub fn loss_vertex<T: Scalar>(pred: &Mesh<T>, target: &Mesh<T>) -> Result<T> {
    if pred.vertex_count() != target.vertex_count() {
        return Err(Error::Topology(format!(
            "vertex count mismatch: {} vs {}",
            pred.vertex_count(),
            target.vertex_count()
        )));
    }
    let n = T::of((3 * pred.vertex_count()) as f64);
    let sum: T = pred
        .vertices()
        .iter()
        .zip(target.vertices())
        .map(|(p, t)| {
            let d = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
            d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
        })
        .sum();
    Ok(sum / n)
}

/// Loss terms between a predicted and a target mesh.
pub fn loss_between<T: Scalar>(
    rig: &RigSpec<T>,
    pred_mesh: &Mesh<T>,
    target_mesh: &Mesh<T>,
    weights: &LossWeights<T>,
) -> Result<LossBreakdown<T>> {
    let k_hat = extract_keypoints(rig, pred_mesh)?;
    let k = extract_keypoints(rig, target_mesh)?;
    let l_lm = loss_landmark(&k_hat, &k)?;
    let l_closure = loss_closure(&k_hat, &k, rig.eyelid_pairs(), rig.mouth_pairs())?;
    let l_ver = loss_vertex(pred_mesh, target_mesh)?;
    Ok(LossBreakdown::compose(l_lm, l_closure, l_ver, weights))
}

/// Full objective for one sample, evaluated through the public operations:
/// the target is the human mesh under `p`; the prediction is the proxy rig
/// under `A M(p)`.
pub fn loss_total<T: Scalar>(
    p: &ExpressionParams<T>,
    model: &TranslatorModel<T>,
    adapter: &AdapterMatrix<T>,
    human: &RigSpec<T>,
    anime_proxy: &RigSpec<T>,
    lambda_ver: T,
) -> Result<LossBreakdown<T>> {
    loss_total_weighted(p, model, adapter, human, anime_proxy, &LossWeights::with_lambda_ver(lambda_ver))
}

pub fn loss_total_weighted<T: Scalar>(
    p: &ExpressionParams<T>,
    model: &TranslatorModel<T>,
    adapter: &AdapterMatrix<T>,
    human: &RigSpec<T>,
    anime_proxy: &RigSpec<T>,
    weights: &LossWeights<T>,
) -> Result<LossBreakdown<T>> {
    weights.validate()?;
    let target = synthesize_params(human, p)?;
    let b_hat = forward(model, p)?;
    let psi_hat = apply_adapter(adapter, &b_hat)?;
    let jaw = anime_proxy.jaw_basis().map(|j| vec![T::zero(); j.dim()]);
    let pred = synthesize_mesh(anime_proxy, &psi_hat, jaw.as_deref())?;
    loss_between(human, &pred, &target, weights)
}

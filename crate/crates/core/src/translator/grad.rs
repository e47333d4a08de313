//! Hand-written reverse-mode gradient of the training objective.
//!
//! The adapter and the proxy expression basis are fused into one prediction
//! basis `W = E A` (one `V*3` field per anime coefficient), so a prediction
//! costs 17 field accumulations instead of 50. Samples are processed in
//! fixed-size chunks in dataset order and every reduction runs in a fixed
//! sequence, which makes the result bit-reproducible.

use crate::adapter::AdapterMatrix;
use crate::error::{Error, Result};
use crate::rig::{synthesize_params, ExpressionParams, Pair, RigSpec, ANIME_EXPR_DIM, HUMAN_EXPR_DIM, PARAM_DIM};
use crate::scalar::{all_finite, dot, Scalar};
use crate::translator::loss::{LossBreakdown, LossWeights};
use crate::translator::model::{logit_bound, TranslatorModel};

const CHUNK: usize = 32;

/// Precomputed human-side target of one training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    input: [T; PARAM_DIM],
    mesh: Vec<T>,
    keypoints: Vec<T>,
    closure: Vec<T>,
}

impl<T: Scalar> Sample<T> {
    pub fn input(&self) -> &[T; PARAM_DIM] {
        &self.input
    }

    pub fn target_mesh(&self) -> &[T] {
        &self.mesh
    }
}

/// Loss and gradient kernel for one rig pair and adapter.
#[derive(Debug, Clone)]
pub struct Objective<T> {
    human: RigSpec<T>,
    template: Vec<T>,
    fields: Vec<Vec<T>>,
    keypoint_indices: Vec<usize>,
    pairs: Vec<Pair>,
    weights: LossWeights<T>,
}

impl<T: Scalar> Objective<T> {
    pub fn new(
        human: &RigSpec<T>,
        anime_proxy: &RigSpec<T>,
        adapter: &AdapterMatrix<T>,
        weights: LossWeights<T>,
    ) -> Result<Self> {
        weights.validate()?;
        if anime_proxy.vertex_count() != human.vertex_count() {
            return Err(Error::Topology(format!(
                "proxy rig has {} vertices, human rig {}",
                anime_proxy.vertex_count(),
                human.vertex_count()
            )));
        }
        if anime_proxy.expr_dim() != HUMAN_EXPR_DIM {
            return Err(Error::Arity {
                what: "proxy expression basis",
                expected: HUMAN_EXPR_DIM,
                got: anime_proxy.expr_dim(),
            });
        }
        if human.jaw_basis().is_none() {
            return Err(Error::Topology("human rig needs a jaw basis".into()));
        }
        let n = 3 * human.vertex_count();
        let fields = adapter
            .columns()
            .iter()
            .map(|col| {
                let mut f = vec![T::zero(); n];
                anime_proxy.expr_basis().accumulate(col, &mut f);
                f
            })
            .collect();
        let mut pairs = human.eyelid_pairs().to_vec();
        pairs.extend_from_slice(human.mouth_pairs());
        Ok(Self {
            human: human.clone(),
            template: anime_proxy.template().flat(),
            fields,
            keypoint_indices: human.keypoint_indices().to_vec(),
            pairs,
            weights,
        })
    }

    pub fn weights(&self) -> &LossWeights<T> {
        &self.weights
    }

    pub fn sample(&self, p: &ExpressionParams<T>) -> Result<Sample<T>> {
        let mesh = synthesize_params(&self.human, p)?.flat();
        let keypoints = self.gather(&mesh);
        let closure = self.offsets(&keypoints);
        Ok(Sample {
            input: p.to_vector(),
            mesh,
            keypoints,
            closure,
        })
    }

    pub fn samples(&self, ps: &[ExpressionParams<T>]) -> Result<Vec<Sample<T>>> {
        ps.iter().map(|p| self.sample(p)).collect()
    }

    fn gather(&self, mesh: &[T]) -> Vec<T> {
        self.keypoint_indices
            .iter()
            .flat_map(|&v| [mesh[3 * v], mesh[3 * v + 1], mesh[3 * v + 2]])
            .collect()
    }

    fn offsets(&self, kp: &[T]) -> Vec<T> {
        self.pairs
            .iter()
            .flat_map(|&(i, j)| (0..3).map(move |c| (kp[3 * i + c] - kp[3 * j + c]).abs()))
            .collect()
    }

    /// Loss of one prediction; accumulates `d loss / d b` scaled by `scale`
    /// into `g_b` when given.
    fn head(&self, b: &[T], s: &Sample<T>, ws: &mut HeadBuffers<T>, g_b: Option<(&mut [T], T)>) -> LossBreakdown<T> {
        let w = &self.weights;
        let pred = &mut ws.mesh;
        pred.copy_from_slice(&self.template);
        for (&bj, f) in b.iter().zip(&self.fields) {
            for (o, &d) in pred.iter_mut().zip(f) {
                *o += bj * d;
            }
        }
        let n = T::of(pred.len() as f64);
        let mut l_ver = T::zero();
        for (&p, &t) in pred.iter().zip(&s.mesh) {
            l_ver += (p - t) * (p - t);
        }
        l_ver /= n;
        let pred = &*pred;
        let kp_hat = self.gather(pred);
        let mut l_lm = T::zero();
        for (&k, &t) in kp_hat.iter().zip(&s.keypoints) {
            l_lm += (k - t).abs();
        }
        let mut l_closure = T::zero();
        let mut closure_terms = Vec::with_capacity(self.pairs.len() * 3);
        for (pi, &(i, j)) in self.pairs.iter().enumerate() {
            for c in 0..3 {
                let delta = kp_hat[3 * i + c] - kp_hat[3 * j + c];
                let e = delta.abs() - s.closure[3 * pi + c];
                l_closure += e.abs();
                closure_terms.push((delta, e));
            }
        }
        let loss = LossBreakdown::compose(l_lm, l_closure, l_ver, w);

        if let Some((g_b, scale)) = g_b {
            let g_m = &mut ws.grad;
            let cv = T::of(2.0) * w.vertex / n;
            for (g, (&p, &t)) in g_m.iter_mut().zip(pred.iter().zip(&s.mesh)) {
                *g = cv * (p - t);
            }
            let mut g_kp = vec![T::zero(); kp_hat.len()];
            for (g, (&k, &t)) in g_kp.iter_mut().zip(kp_hat.iter().zip(&s.keypoints)) {
                *g = w.landmark * (k - t).sign0();
            }
            for (pi, &(i, j)) in self.pairs.iter().enumerate() {
                for c in 0..3 {
                    let (delta, e) = closure_terms[3 * pi + c];
                    let gd = w.closure * e.sign0() * delta.sign0();
                    g_kp[3 * i + c] += gd;
                    g_kp[3 * j + c] -= gd;
                }
            }
            for (slot, &v) in self.keypoint_indices.iter().enumerate() {
                for c in 0..3 {
                    g_m[3 * v + c] += g_kp[3 * slot + c];
                }
            }
            for (gj, f) in g_b.iter_mut().zip(&self.fields) {
                *gj = scale * dot(f, g_m);
            }
        }
        loss
    }

    /// Mean loss over `samples` without gradients.
    pub fn mean_loss(&self, model: &TranslatorModel<T>, samples: &[Sample<T>]) -> Result<LossBreakdown<T>> {
        let refs: Vec<&Sample<T>> = samples.iter().collect();
        self.run(model, &refs, None)
    }

    /// Mean loss and its gradient with respect to every model parameter.
    pub fn mean_gradient(&self, model: &TranslatorModel<T>, samples: &[Sample<T>]) -> Result<(LossBreakdown<T>, Vec<T>)> {
        let refs: Vec<&Sample<T>> = samples.iter().collect();
        self.batch_gradient(model, &refs)
    }

    pub fn batch_gradient(&self, model: &TranslatorModel<T>, samples: &[&Sample<T>]) -> Result<(LossBreakdown<T>, Vec<T>)> {
        let mut grad = vec![T::zero(); model.param_count()];
        let loss = self.run(model, samples, Some(&mut grad))?;
        if !all_finite(&grad) {
            return Err(Error::NonFinite("gradient"));
        }
        Ok((loss, grad))
    }

    fn run(&self, model: &TranslatorModel<T>, samples: &[&Sample<T>], mut grad: Option<&mut Vec<T>>) -> Result<LossBreakdown<T>> {
        if samples.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        if model.layer_sizes().last() != Some(&ANIME_EXPR_DIM) || model.layer_sizes()[0] != PARAM_DIM {
            return Err(Error::Config(format!("model layout {:?} does not map 53 -> 17", model.layer_sizes())));
        }
        let inv = T::one() / T::of(samples.len() as f64);
        let mut ws = ChunkBuffers::new(model, CHUNK.min(samples.len()));
        let mut head = HeadBuffers::new(self.template.len());
        let mut total = LossBreakdown::default();
        let bound = logit_bound::<T>();
        let last = model.layers().len() - 1;
        for chunk in samples.chunks(CHUNK) {
            let c = chunk.len();
            ws.forward(model, chunk);
            let out = &ws.post[last + 1];
            let z = &ws.pre[last];
            if !all_finite(z) {
                return Err(Error::NonFinite("output logits"));
            }
            match grad.as_deref_mut() {
                None => {
                    for (s, sample) in chunk.iter().enumerate() {
                        total.add(&self.head(&out[s * ANIME_EXPR_DIM..(s + 1) * ANIME_EXPR_DIM], sample, &mut head, None));
                    }
                }
                Some(g) => {
                    let mut g_top = vec![T::zero(); c * ANIME_EXPR_DIM];
                    for (s, sample) in chunk.iter().enumerate() {
                        let r = s * ANIME_EXPR_DIM..(s + 1) * ANIME_EXPR_DIM;
                        total.add(&self.head(&out[r.clone()], sample, &mut head, Some((&mut g_top[r.clone()], inv))));
                        for (k, gz) in r.clone().zip(&mut g_top[r]) {
                            let y = out[k];
                            *gz = if z[k].abs() < bound { *gz * y * (T::one() - y) } else { T::zero() };
                        }
                    }
                    ws.backward(model, c, g_top, g);
                }
            }
        }
        let mean = total.scaled(inv);
        if !mean.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        Ok(mean)
    }

    /// Sign pattern of every nonsmooth point on the path of one sample:
    /// hidden pre-activations, output clamps, landmark residuals and the two
    /// absolute values of each closure term. Two parameter vectors with equal
    /// patterns lie in the same smooth piece of the objective.
    pub fn kink_pattern(&self, model: &TranslatorModel<T>, sample: &Sample<T>) -> Vec<i8> {
        let mut ws = ChunkBuffers::new(model, 1);
        ws.forward(model, &[sample]);
        let last = model.layers().len() - 1;
        let bound = logit_bound::<T>();
        let sign = |v: T| -> i8 {
            if v > T::zero() {
                1
            } else if v < T::zero() {
                -1
            } else {
                0
            }
        };
        let mut pat: Vec<i8> = ws.pre[..last].iter().flatten().map(|&z| sign(z)).collect();
        pat.extend(ws.pre[last].iter().map(|&z| sign(z.abs() - bound)));
        let mut head = HeadBuffers::new(self.template.len());
        let b = ws.post[last + 1].clone();
        self.head(&b, sample, &mut head, None);
        let kp_hat = self.gather(&head.mesh);
        pat.extend(kp_hat.iter().zip(&sample.keypoints).map(|(&k, &t)| sign(k - t)));
        for (pi, &(i, j)) in self.pairs.iter().enumerate() {
            for c in 0..3 {
                let delta = kp_hat[3 * i + c] - kp_hat[3 * j + c];
                pat.push(sign(delta));
                pat.push(sign(delta.abs() - sample.closure[3 * pi + c]));
            }
        }
        pat
    }
}

struct HeadBuffers<T> {
    mesh: Vec<T>,
    grad: Vec<T>,
}

impl<T: Scalar> HeadBuffers<T> {
    fn new(n: usize) -> Self {
        Self {
            mesh: vec![T::zero(); n],
            grad: vec![T::zero(); n],
        }
    }
}

/// Activations of a chunk of samples, sample-major within each layer.
struct ChunkBuffers<T> {
    pre: Vec<Vec<T>>,
    post: Vec<Vec<T>>,
}

impl<T: Scalar> ChunkBuffers<T> {
    fn new(model: &TranslatorModel<T>, chunk: usize) -> Self {
        let layers = model.layers();
        let pre = layers.iter().map(|l| vec![T::zero(); chunk * l.outputs]).collect();
        let mut post = vec![vec![T::zero(); chunk * layers[0].inputs]];
        post.extend(layers.iter().map(|l| vec![T::zero(); chunk * l.outputs]));
        Self { pre, post }
    }

    fn forward(&mut self, model: &TranslatorModel<T>, chunk: &[&Sample<T>]) {
        let c = chunk.len();
        for (s, sample) in chunk.iter().enumerate() {
            self.post[0][s * PARAM_DIM..(s + 1) * PARAM_DIM].copy_from_slice(&sample.input);
        }
        let last = model.layers().len() - 1;
        let bound = logit_bound::<T>();
        let leak = model.leak();
        for (l, slot) in model.layers().iter().enumerate() {
            let w = model.layer_weights(l);
            let bias = model.layer_biases(l);
            let (ni, no) = (slot.inputs, slot.outputs);
            let x = &self.post[l];
            let pre = &mut self.pre[l];
            for o in 0..no {
                let row = &w[o * ni..(o + 1) * ni];
                for s in 0..c {
                    pre[s * no + o] = bias[o] + dot(row, &x[s * ni..(s + 1) * ni]);
                }
            }
            let pre = &self.pre[l];
            let out = &mut self.post[l + 1];
            for k in 0..c * no {
                let z = pre[k];
                out[k] = if l == last {
                    crate::translator::model::sigmoid(z.max(-bound).min(bound))
                } else if z > T::zero() {
                    z
                } else {
                    leak * z
                };
            }
        }
    }

    /// Accumulates parameter gradients into `grad` given `d loss / d z` of
    /// the output layer.
    fn backward(&self, model: &TranslatorModel<T>, c: usize, mut g: Vec<T>, grad: &mut [T]) {
        let leak = model.leak();
        for (l, slot) in model.layers().iter().enumerate().rev() {
            let (ni, no) = (slot.inputs, slot.outputs);
            let x = &self.post[l];
            for o in 0..no {
                let row = &mut grad[slot.weights + o * ni..slot.weights + (o + 1) * ni];
                let mut gb = T::zero();
                for s in 0..c {
                    let gso = g[s * no + o];
                    if gso == T::zero() {
                        continue;
                    }
                    gb += gso;
                    for (r, &xi) in row.iter_mut().zip(&x[s * ni..(s + 1) * ni]) {
                        *r += gso * xi;
                    }
                }
                grad[slot.biases + o] += gb;
            }
            if l == 0 {
                break;
            }
            let w = model.layer_weights(l);
            let mut gx = vec![T::zero(); c * ni];
            for o in 0..no {
                let row = &w[o * ni..(o + 1) * ni];
                for s in 0..c {
                    let gso = g[s * no + o];
                    if gso == T::zero() {
                        continue;
                    }
                    for (gi, &wi) in gx[s * ni..(s + 1) * ni].iter_mut().zip(row) {
                        *gi += gso * wi;
                    }
                }
            }
            let z = &self.pre[l - 1];
            for (gi, &zi) in gx.iter_mut().zip(z) {
                if zi <= T::zero() {
                    *gi *= leak;
                }
            }
            g = gx;
        }
    }
}

/// Loss and parameter gradient for one sample, evaluated on the human rig,
/// the anime proxy rig and the adapter.
pub fn gradient<T: Scalar>(
    p: &ExpressionParams<T>,
    model: &TranslatorModel<T>,
    adapter: &AdapterMatrix<T>,
    human: &RigSpec<T>,
    anime_proxy: &RigSpec<T>,
    lambda_ver: T,
) -> Result<(LossBreakdown<T>, Vec<T>)> {
    model.check_finite()?;
    let obj = Objective::new(human, anime_proxy, adapter, LossWeights::with_lambda_ver(lambda_ver))?;
    let sample = obj.sample(p)?;
    obj.mean_gradient(model, std::slice::from_ref(&sample))
}

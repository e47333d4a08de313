//! Seeded synthetic rig pairs with a known cross-domain mapping.
//!
//! The anime rig owns 17 offset fields `F`. Every human field is a linear
//! combination of them, `H = F G`, and the anime template sits at
//! `T_h - 0.5 F 1`, so for any `p` whose label `G p + 0.5` stays inside the
//! unit cube the anime mesh under that label equals the human mesh under `p`.
//! Lid closure is carried by anime dims 0 and 1 alone; it scales each eye
//! region towards its center, so every anime neutral lid offset is exactly
//! twice the human one and the lid distance closes linearly in the label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rig::{
    BlendshapeBasis, ExpressionParams, Mesh, Pair, RigSpec, ANIME_EXPR_DIM, HUMAN_EXPR_DIM, JAW_DIM,
    KEYPOINT_COUNT, PARAM_DIM,
};
use crate::scalar::Scalar;

pub const DEFAULT_VERTEX_COUNT: usize = 468;
pub const DEFAULT_DELTA_SCALE: f64 = 0.05;

/// Human neutral lid gap.
const LID_GAP: f64 = 0.06;
/// Outer-lip gap at neutral.
const LIP_GAP: f64 = 0.08;
/// Spread of each label around its 0.5 offset.
const LABEL_SPREAD: f64 = 0.1;
/// Anime non-lid fields move `FIELD_GAIN * delta_scale` at full activation.
const FIELD_GAIN: f64 = 8.0;
const LEFT_EYE: [f64; 2] = [-0.2, 0.15];
const RIGHT_EYE: [f64; 2] = [0.2, 0.15];
const MOUTH: [f64; 2] = [0.0, -0.3];

/// Left-eye pairs, then right-eye pairs.
pub const SYNTH_EYELID_PAIRS: [Pair; 6] = [(36, 41), (37, 40), (38, 39), (42, 47), (43, 46), (44, 45)];
pub const SYNTH_MOUTH_PAIRS: [Pair; 3] = [(50, 58), (51, 57), (52, 56)];

/// Generator settings and the ground-truth map `b* = clamp01(G p + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec<T> {
    pub vertex_count: usize,
    pub rng_seed: u64,
    pub delta_scale: T,
    ground_truth: Vec<[T; PARAM_DIM]>,
}

impl<T: Scalar> SynthSpec<T> {
    /// Default sizes with a ground-truth map drawn from `seed`.
    pub fn new(rng_seed: u64) -> Self {
        Self::with_sizes(DEFAULT_VERTEX_COUNT, rng_seed, T::of(DEFAULT_DELTA_SCALE))
            .expect("default synthetic sizes are valid")
    }

    pub fn with_sizes(vertex_count: usize, rng_seed: u64, delta_scale: T) -> Result<Self> {
        let g = random_ground_truth(rng_seed);
        let ground_truth = g
            .iter()
            .map(|row| {
                let mut r = [T::zero(); PARAM_DIM];
                for (o, &v) in r.iter_mut().zip(row) {
                    *o = T::of(v);
                }
                r
            })
            .collect();
        let spec = Self {
            vertex_count,
            rng_seed,
            delta_scale,
            ground_truth,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Replaces the ground-truth map (17 rows of 53).
    pub fn with_ground_truth(mut self, g: Vec<[T; PARAM_DIM]>) -> Result<Self> {
        if g.len() != ANIME_EXPR_DIM {
            return Err(Error::Arity {
                what: "ground-truth rows",
                expected: ANIME_EXPR_DIM,
                got: g.len(),
            });
        }
        self.ground_truth = g;
        self.validate()?;
        Ok(self)
    }

    pub fn ground_truth(&self) -> &[[T; PARAM_DIM]] {
        &self.ground_truth
    }

    fn validate(&self) -> Result<()> {
        if self.vertex_count < KEYPOINT_COUNT {
            return Err(Error::Config(format!(
                "vertex_count must be >= {KEYPOINT_COUNT}, got {}",
                self.vertex_count
            )));
        }
        if !(self.delta_scale > T::zero() && self.delta_scale.is_finite()) {
            return Err(Error::Config(format!(
                "delta_scale must be positive, got {}",
                self.delta_scale
            )));
        }
        if !self.ground_truth.iter().all(|r| r.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("ground-truth map"));
        }
        Ok(())
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Rows with orthogonal expression parts of norm `LABEL_SPREAD / sqrt(3)`,
/// so each label has standard deviation near `LABEL_SPREAD` under the
/// default sampler. Mouth dims additionally follow the jaw.
fn random_ground_truth(seed: u64) -> Vec<[f64; PARAM_DIM]> {
    let mut rng = stream(seed, 3);
    let mut rows: Vec<[f64; PARAM_DIM]> = Vec::with_capacity(ANIME_EXPR_DIM);
    let norm = LABEL_SPREAD / 3f64.sqrt();
    for j in 0..ANIME_EXPR_DIM {
        let mut psi: Vec<f64> = (0..HUMAN_EXPR_DIM).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        for prev in &rows {
            let dot: f64 = psi.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>() / (norm * norm);
            for (a, b) in psi.iter_mut().zip(prev) {
                *a -= dot * b;
            }
        }
        let len = psi.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut row = [0.0; PARAM_DIM];
        for (o, a) in row.iter_mut().zip(&psi) {
            *o = a / len * norm;
        }
        for k in 0..JAW_DIM {
            row[HUMAN_EXPR_DIM + k] = if j >= 12 {
                uniform(&mut rng, -0.06, 0.06)
            } else {
                0.0
            };
        }
        rows.push(row);
    }
    rows
}

fn surface_z(x: f64, y: f64) -> f64 {
    0.15 * (1.0 - (x / 0.5).powi(2) - (y / 0.6).powi(2)).max(0.0)
}

/// Synthetic 68-landmark layout (x right, y up, face roughly 1 x 1.2).
fn landmark_layout() -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(KEYPOINT_COUNT);
    // 0..17 jaw line
    for i in 0..17 {
        let t = std::f64::consts::PI * (1.0 + i as f64 / 16.0);
        pts.push([0.45 * t.cos(), 0.1 + 0.6 * t.sin()]);
    }
    // 17..27 brows
    for side in [-1.0, 1.0] {
        for i in 0..5 {
            let u = i as f64 / 4.0;
            let x = if side < 0.0 { -0.35 + 0.25 * u } else { 0.1 + 0.25 * u };
            pts.push([x, 0.3 + 0.03 * (std::f64::consts::PI * u).sin()]);
        }
    }
    // 27..36 nose
    for i in 0..4 {
        pts.push([0.0, 0.2 - 0.08 * i as f64]);
    }
    for i in 0..5 {
        pts.push([-0.08 + 0.04 * i as f64, -0.12]);
    }
    // 36..48 eyes: three upper lid points then the matching lower ones reversed
    for c in [LEFT_EYE, RIGHT_EYE] {
        for dx in [-0.05, 0.0, 0.05] {
            pts.push([c[0] + dx, c[1] + LID_GAP / 2.0]);
        }
        for dx in [0.05, 0.0, -0.05] {
            pts.push([c[0] + dx, c[1] - LID_GAP / 2.0]);
        }
    }
    // 48..60 outer lip: corner, upper, corner, lower
    pts.push([MOUTH[0] - 0.15, MOUTH[1]]);
    for dx in [-0.1, -0.05, 0.0, 0.05, 0.1] {
        pts.push([MOUTH[0] + dx, MOUTH[1] + LIP_GAP / 2.0]);
    }
    pts.push([MOUTH[0] + 0.15, MOUTH[1]]);
    for dx in [0.1, 0.05, 0.0, -0.05, -0.1] {
        pts.push([MOUTH[0] + dx, MOUTH[1] - LIP_GAP / 2.0]);
    }
    // 60..68 inner lip
    pts.push([MOUTH[0] - 0.11, MOUTH[1]]);
    for dx in [-0.05, 0.0, 0.05] {
        pts.push([MOUTH[0] + dx, MOUTH[1] + LIP_GAP / 5.0]);
    }
    pts.push([MOUTH[0] + 0.11, MOUTH[1]]);
    for dx in [0.05, 0.0, -0.05] {
        pts.push([MOUTH[0] + dx, MOUTH[1] - LIP_GAP / 5.0]);
    }
    debug_assert_eq!(pts.len(), KEYPOINT_COUNT);
    pts
}

/// 1 inside `inner`, 0 beyond `outer`, cosine taper between.
fn taper(u: f64, inner: f64, outer: f64) -> f64 {
    let a = u.abs();
    if a <= inner {
        1.0
    } else if a >= outer {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * (a - inner) / (outer - inner)).cos())
    }
}

fn eye_window(p: [f64; 3], c: [f64; 2]) -> f64 {
    taper(p[0] - c[0], 0.07, 0.12) * taper(p[1] - c[1], 0.045, 0.08)
}

fn region_window(p: [f64; 3], c: [f64; 2], half: [f64; 2]) -> f64 {
    taper(p[0] - c[0], half[0], half[0] * 1.8) * taper(p[1] - c[1], half[1], half[1] * 1.8)
}

/// Random low-frequency field over `cos`/`sin` of `pi (a x + b y)`.
struct SmoothField {
    terms: Vec<(f64, f64, [f64; 3], [f64; 3])>,
}

impl SmoothField {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut terms = Vec::new();
        for a in 0..4 {
            for b in 0..4 {
                let damp = 1.0 / (1.0 + (a + b) as f64);
                let mut cs = [0.0; 3];
                let mut sn = [0.0; 3];
                for c in 0..3 {
                    cs[c] = uniform(rng, -1.0, 1.0) * damp;
                    sn[c] = uniform(rng, -1.0, 1.0) * damp;
                }
                terms.push((a as f64, b as f64, cs, sn));
            }
        }
        Self { terms }
    }

    fn eval(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for &(a, b, cs, sn) in &self.terms {
            let phase = std::f64::consts::PI * (a * p[0] + b * p[1]);
            let (s, c) = phase.sin_cos();
            for k in 0..3 {
                out[k] += cs[k] * c + sn[k] * s;
            }
        }
        out
    }
}

/// Local affine displacement `M (p - c) + t` under a window; `c` lies on
/// the face surface.
fn local_affine(p: [f64; 3], c: [f64; 2], m: &[[f64; 3]; 3], t: [f64; 3], w: f64) -> [f64; 3] {
    let d = [p[0] - c[0], p[1] - c[1], p[2] - surface_z(c[0], c[1])];
    let mut out = [0.0; 3];
    for r in 0..3 {
        out[r] = w * (m[r][0] * d[0] + m[r][1] * d[1] + m[r][2] * d[2] + t[r]);
    }
    out
}

struct Geometry {
    template: Vec<[f64; 3]>,
    keypoint_indices: Vec<usize>,
    anime_fields: Vec<Vec<f64>>,
}

fn build_geometry(vertex_count: usize, seed: u64, scale: f64) -> Geometry {
    // template and landmark placement
    let mut rng = stream(seed, 1);
    let mut slots: Vec<usize> = (0..vertex_count).collect();
    for i in (1..vertex_count).rev() {
        let j = rng.gen_range(0..=i);
        slots.swap(i, j);
    }
    let keypoint_indices: Vec<usize> = slots[..KEYPOINT_COUNT].to_vec();
    let mut template = vec![[0.0; 3]; vertex_count];
    for (slot, xy) in landmark_layout().into_iter().enumerate() {
        template[keypoint_indices[slot]] = [xy[0], xy[1], surface_z(xy[0], xy[1])];
    }
    for &v in &slots[KEYPOINT_COUNT..] {
        // rejection-sample the face ellipse
        let (x, y) = loop {
            let x = uniform(&mut rng, -0.5, 0.5);
            let y = uniform(&mut rng, -0.6, 0.6);
            if (x / 0.5).powi(2) + (y / 0.6).powi(2) <= 1.0 {
                break (x, y);
            }
        };
        template[v] = [x, y, surface_z(x, y)];
    }

    // anime offset fields
    let mut rng = stream(seed, 2);
    let no_eyes = |p: [f64; 3]| 1.0 - eye_window(p, LEFT_EYE) - eye_window(p, RIGHT_EYE);
    let rand3 = |rng: &mut ChaCha8Rng, a: f64| {
        [uniform(rng, -a, a), uniform(rng, -a, a), uniform(rng, -a, a)]
    };
    let mut anime_fields = Vec::with_capacity(ANIME_EXPR_DIM);
    for j in 0..ANIME_EXPR_DIM {
        let global = SmoothField::random(&mut rng);
        let mut m = [[0.0; 3]; 3];
        let mut t = [0.0; 3];
        let (center, half, eye): ([f64; 2], [f64; 2], bool) = match j {
            // lid closure: full activation closes twice the human gap
            0 | 1 => {
                m[1][1] = -2.0;
                m[2][2] = -2.0;
                (if j == 0 { LEFT_EYE } else { RIGHT_EYE }, [0.0; 2], true)
            }
            // gaze / eye-region shifts keep lid gaps unchanged
            2..=5 => {
                t = rand3(&mut rng, 1.0);
                (if j % 2 == 0 { LEFT_EYE } else { RIGHT_EYE }, [0.0; 2], true)
            }
            6..=11 => {
                t = rand3(&mut rng, 1.0);
                t[1] += if j % 2 == 0 { 0.8 } else { -0.8 };
                let c = if j < 9 { [-0.225, 0.31] } else { [0.225, 0.31] };
                (c, [0.14, 0.05], false)
            }
            _ => {
                for row in m.iter_mut() {
                    for e in row.iter_mut() {
                        *e = uniform(&mut rng, -5.0, 5.0);
                    }
                }
                // vertical lip separation dominates mouth dims
                m[1][1] = uniform(&mut rng, 2.0, 6.0) * if j % 2 == 0 { 1.0 } else { -1.0 };
                t = rand3(&mut rng, 1.0);
                (MOUTH, [0.17, 0.07], false)
            }
        };
        // closure is specified in absolute units, everything else in delta units
        let gain = FIELD_GAIN * scale;
        let local_scale = if j < 2 { 1.0 } else { gain };
        let field: Vec<f64> = template
            .iter()
            .flat_map(|&p| {
                let g = global.eval(p);
                let keep = no_eyes(p);
                let w = if eye {
                    eye_window(p, center)
                } else {
                    region_window(p, center, half)
                };
                let local = local_affine(p, center, &m, t, w);
                let mut out = [0.0; 3];
                for k in 0..3 {
                    out[k] = gain * g[k] * keep + local_scale * local[k];
                }
                out
            })
            .collect();
        anime_fields.push(field);
    }
    Geometry {
        template,
        keypoint_indices,
        anime_fields,
    }
}

fn to_t<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}

/// Human rig (50 expression + 3 jaw fields) and anime rig (17 fields, no jaw)
/// over one topology.
pub fn make_rig_pair<T: Scalar>(spec: &SynthSpec<T>) -> Result<(RigSpec<T>, RigSpec<T>)> {
    spec.validate()?;
    let scale = spec.delta_scale.to_f64_lossy();
    let geo = build_geometry(spec.vertex_count, spec.rng_seed, scale);
    let n = spec.vertex_count * 3;
    let g: Vec<Vec<f64>> = spec
        .ground_truth
        .iter()
        .map(|r| r.iter().map(|v| v.to_f64_lossy()).collect())
        .collect();

    let combine = |col: usize| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (j, f) in geo.anime_fields.iter().enumerate() {
            let c = g[j][col];
            for (o, &d) in out.iter_mut().zip(f) {
                *o += c * d;
            }
        }
        out
    };
    let human_expr: Vec<Vec<T>> = (0..HUMAN_EXPR_DIM).map(|i| to_t(&combine(i))).collect();
    let human_jaw: Vec<Vec<T>> = (0..JAW_DIM).map(|k| to_t(&combine(HUMAN_EXPR_DIM + k))).collect();

    let human_flat: Vec<f64> = geo.template.iter().flatten().copied().collect();
    let mut anime_flat = human_flat.clone();
    for f in &geo.anime_fields {
        for (o, &d) in anime_flat.iter_mut().zip(f) {
            *o -= 0.5 * d;
        }
    }
    let anime_fields: Vec<Vec<T>> = geo.anime_fields.iter().map(|f| to_t(f)).collect();

    let eyelid = SYNTH_EYELID_PAIRS.to_vec();
    let mouth = SYNTH_MOUTH_PAIRS.to_vec();
    let v = spec.vertex_count;
    let human = RigSpec::new(
        Mesh::from_flat(&to_t(&human_flat))?,
        BlendshapeBasis::from_fields(v, &human_expr)?,
        Some(BlendshapeBasis::from_fields(v, &human_jaw)?),
        geo.keypoint_indices.clone(),
        eyelid.clone(),
        mouth.clone(),
    )?;
    let anime = RigSpec::new(
        Mesh::from_flat(&to_t(&anime_flat))?,
        BlendshapeBasis::from_fields(v, &anime_fields)?,
        None,
        geo.keypoint_indices,
        eyelid,
        mouth,
    )?;
    Ok((human, anime))
}

/// `n` parameter sets: `psi ~ U(-r, r)`, `jaw ~ U(0, r/3)`.
pub fn sample_expressions<T: Scalar>(n: usize, seed: u64, range: T) -> Result<Vec<ExpressionParams<T>>> {
    if n == 0 {
        return Err(Error::Config("sample count must be >= 1".into()));
    }
    let r = range.to_f64_lossy();
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Config(format!("sampling range must be positive, got {r}")));
    }
    let mut rng = stream(seed, 4);
    (0..n)
        .map(|_| {
            let psi: Vec<T> = (0..HUMAN_EXPR_DIM).map(|_| T::of(uniform(&mut rng, -r, r))).collect();
            let jaw: Vec<T> = (0..JAW_DIM).map(|_| T::of(uniform(&mut rng, 0.0, r / 3.0))).collect();
            ExpressionParams::with_range(&psi, &jaw, range)
        })
        .collect()
}

/// `clamp01(G p + 0.5)` for each sample.
pub fn oracle_labels<T: Scalar>(spec: &SynthSpec<T>, samples: &[ExpressionParams<T>]) -> Vec<[T; ANIME_EXPR_DIM]> {
    let half = T::of(0.5);
    samples
        .iter()
        .map(|s| {
            let p = s.to_vector();
            let mut b = [T::zero(); ANIME_EXPR_DIM];
            for (o, row) in b.iter_mut().zip(&spec.ground_truth) {
                let dot = row.iter().zip(&p).map(|(&g, &x)| g * x).sum::<T>();
                *o = (dot + half).max(T::zero()).min(T::one());
            }
            b
        })
        .collect()
}

//! Blendshape rigs: mesh synthesis, keypoint gathering, closure offsets and
//! head-angle conventions.
//!
//! A rig is a neutral template plus linear offset fields. Both the human and
//! the anime side are expressed as rigs over the same topology, which is what
//! lets the losses compare them vertex by vertex.

use crate::error::{Error, Result};
use crate::metrics::eyelid_distance;
use crate::scalar::{all_finite, Scalar};

/// Number of landmark slots every rig exposes.
pub const KEYPOINT_COUNT: usize = 68;
/// Human expression coefficients.
pub const HUMAN_EXPR_DIM: usize = 50;
/// Jaw rotation coefficients.
pub const JAW_DIM: usize = 3;
/// Translator input width: expression followed by jaw.
pub const PARAM_DIM: usize = HUMAN_EXPR_DIM + JAW_DIM;
/// Anime expression coefficients (6 eye, 6 eyebrow, 5 mouth).
pub const ANIME_EXPR_DIM: usize = 17;
/// Default clamp for sampled expression coefficients.
pub const DEFAULT_PARAM_RANGE: f64 = 3.0;

pub type Point3<T> = [T; 3];

/// A keypoint pair `(upper, lower)` referencing landmark slots.
pub type Pair = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh<T> {
    vertices: Vec<Point3<T>>,
}

impl<T: Scalar> Mesh<T> {
    pub fn new(vertices: Vec<Point3<T>>) -> Result<Self> {
        if !vertices.iter().all(|v| all_finite(v)) {
            return Err(Error::NonFinite("mesh vertices"));
        }
        Ok(Self { vertices })
    }

    /// Builds a mesh from a flat `x0 y0 z0 x1 ...` buffer.
    pub fn from_flat(flat: &[T]) -> Result<Self> {
        if !flat.len().is_multiple_of(3) {
            return Err(Error::Format(format!(
                "flat vertex buffer length {} is not a multiple of 3",
                flat.len()
            )));
        }
        Self::new(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn vertices(&self) -> &[Point3<T>] {
        &self.vertices
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn flat(&self) -> Vec<T> {
        self.vertices.iter().flatten().copied().collect()
    }

    /// Rigid translation of every vertex.
    pub fn translated(&self, by: Point3<T>) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|v| [v[0] + by[0], v[1] + by[1], v[2] + by[2]])
                .collect(),
        }
    }
}

/// Linear offset fields, stored as `dim x V x 3` in a single buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendshapeBasis<T> {
    dim: usize,
    vertex_count: usize,
    deltas: Vec<T>,
}

impl<T: Scalar> BlendshapeBasis<T> {
    pub fn new(dim: usize, vertex_count: usize, deltas: Vec<T>) -> Result<Self> {
        let expected = dim * vertex_count * 3;
        if deltas.len() != expected {
            return Err(Error::Arity {
                what: "blendshape delta table",
                expected,
                got: deltas.len(),
            });
        }
        if !all_finite(&deltas) {
            return Err(Error::NonFinite("blendshape deltas"));
        }
        Ok(Self {
            dim,
            vertex_count,
            deltas,
        })
    }

    /// Stacks per-coefficient flat fields (each of length `V*3`).
    pub fn from_fields(vertex_count: usize, fields: &[Vec<T>]) -> Result<Self> {
        let mut deltas = Vec::with_capacity(fields.len() * vertex_count * 3);
        for f in fields {
            if f.len() != vertex_count * 3 {
                return Err(Error::Arity {
                    what: "blendshape field",
                    expected: vertex_count * 3,
                    got: f.len(),
                });
            }
            deltas.extend_from_slice(f);
        }
        Self::new(fields.len(), vertex_count, deltas)
    }

    pub fn zeros(dim: usize, vertex_count: usize) -> Self {
        Self {
            dim,
            vertex_count,
            deltas: vec![T::zero(); dim * vertex_count * 3],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    /// Flat `V*3` offset field of coefficient `i`.
    pub fn field(&self, i: usize) -> &[T] {
        let n = self.vertex_count * 3;
        &self.deltas[i * n..(i + 1) * n]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.deltas
    }

    /// Adds `sum_i coeffs[i] * field(i)` into `out` (length `V*3`).
    pub(crate) fn accumulate(&self, coeffs: &[T], out: &mut [T]) {
        debug_assert_eq!(coeffs.len(), self.dim);
        debug_assert_eq!(out.len(), self.vertex_count * 3);
        for (i, &c) in coeffs.iter().enumerate() {
            if c == T::zero() {
                continue;
            }
            for (o, &d) in out.iter_mut().zip(self.field(i)) {
                *o += c * d;
            }
        }
    }
}

/// One domain's face geometry: template, bases, landmark table and pair sets.
#[derive(Debug, Clone, PartialEq)]
pub struct RigSpec<T> {
    template: Mesh<T>,
    expr_basis: BlendshapeBasis<T>,
    jaw_basis: Option<BlendshapeBasis<T>>,
    keypoint_indices: Vec<usize>,
    eyelid_pairs: Vec<Pair>,
    mouth_pairs: Vec<Pair>,
    neutral_eye_distance: [T; 2],
}

impl<T: Scalar> RigSpec<T> {
    /// Validates and assembles a rig.
    ///
    /// `eyelid_pairs` lists the left eye's pairs followed by the right eye's;
    /// the count must be even and both halves must have a positive neutral
    /// lid distance.
    pub fn new(
        template: Mesh<T>,
        expr_basis: BlendshapeBasis<T>,
        jaw_basis: Option<BlendshapeBasis<T>>,
        keypoint_indices: Vec<usize>,
        eyelid_pairs: Vec<Pair>,
        mouth_pairs: Vec<Pair>,
    ) -> Result<Self> {
        let v = template.vertex_count();
        if expr_basis.vertex_count() != v {
            return Err(Error::Topology(format!(
                "expression basis has {} vertices, template has {v}",
                expr_basis.vertex_count()
            )));
        }
        if let Some(jaw) = &jaw_basis {
            if jaw.vertex_count() != v {
                return Err(Error::Topology(format!(
                    "jaw basis has {} vertices, template has {v}",
                    jaw.vertex_count()
                )));
            }
            if jaw.dim() != JAW_DIM {
                return Err(Error::Arity {
                    what: "jaw basis",
                    expected: JAW_DIM,
                    got: jaw.dim(),
                });
            }
        }
        if keypoint_indices.len() != KEYPOINT_COUNT {
            return Err(Error::Arity {
                what: "keypoint index table",
                expected: KEYPOINT_COUNT,
                got: keypoint_indices.len(),
            });
        }
        let mut seen = vec![false; v];
        for &k in &keypoint_indices {
            if k >= v {
                return Err(Error::Topology(format!(
                    "keypoint index {k} out of range for {v} vertices"
                )));
            }
            if seen[k] {
                return Err(Error::Topology(format!("duplicate keypoint index {k}")));
            }
            seen[k] = true;
        }
        validate_pairs(&eyelid_pairs)?;
        validate_pairs(&mouth_pairs)?;
        if eyelid_pairs.is_empty() || !eyelid_pairs.len().is_multiple_of(2) {
            return Err(Error::Degenerate(format!(
                "eyelid pair count must be even and nonzero, got {}",
                eyelid_pairs.len()
            )));
        }

        let mut rig = Self {
            template,
            expr_basis,
            jaw_basis,
            keypoint_indices,
            eyelid_pairs,
            mouth_pairs,
            neutral_eye_distance: [T::zero(); 2],
        };
        let neutral = extract_keypoints(&rig, &rig.template)?;
        let left = eyelid_distance(&neutral, rig.left_eye_pairs())?;
        let right = eyelid_distance(&neutral, rig.right_eye_pairs())?;
        if !(left > T::zero() && right > T::zero()) {
            return Err(Error::Degenerate(format!(
                "neutral eyelid distance must be positive, got ({left}, {right})"
            )));
        }
        rig.neutral_eye_distance = [left, right];
        Ok(rig)
    }

    pub fn template(&self) -> &Mesh<T> {
        &self.template
    }

    pub fn expr_basis(&self) -> &BlendshapeBasis<T> {
        &self.expr_basis
    }

    pub fn jaw_basis(&self) -> Option<&BlendshapeBasis<T>> {
        self.jaw_basis.as_ref()
    }

    pub fn vertex_count(&self) -> usize {
        self.template.vertex_count()
    }

    pub fn expr_dim(&self) -> usize {
        self.expr_basis.dim()
    }

    pub fn jaw_dim(&self) -> usize {
        self.jaw_basis.as_ref().map_or(0, |j| j.dim())
    }

    pub fn keypoint_indices(&self) -> &[usize] {
        &self.keypoint_indices
    }

    pub fn eyelid_pairs(&self) -> &[Pair] {
        &self.eyelid_pairs
    }

    pub fn left_eye_pairs(&self) -> &[Pair] {
        &self.eyelid_pairs[..self.eyelid_pairs.len() / 2]
    }

    pub fn right_eye_pairs(&self) -> &[Pair] {
        &self.eyelid_pairs[self.eyelid_pairs.len() / 2..]
    }

    pub fn mouth_pairs(&self) -> &[Pair] {
        &self.mouth_pairs
    }

    /// Eyelid pairs followed by mouth pairs.
    pub fn closure_pairs(&self) -> Vec<Pair> {
        self.eyelid_pairs
            .iter()
            .chain(&self.mouth_pairs)
            .copied()
            .collect()
    }

    /// Mean neutral lid distance of the (left, right) eye.
    pub fn neutral_eye_distance(&self) -> [T; 2] {
        self.neutral_eye_distance
    }

    /// Landmarks of the template.
    pub fn neutral_keypoints(&self) -> Vec<Point3<T>> {
        gather(&self.template, &self.keypoint_indices)
    }

    /// Same topology and landmarks with a different template and bases.
    pub fn with_geometry(
        &self,
        template: Mesh<T>,
        expr_basis: BlendshapeBasis<T>,
        jaw_basis: Option<BlendshapeBasis<T>>,
    ) -> Result<Self> {
        Self::new(
            template,
            expr_basis,
            jaw_basis,
            self.keypoint_indices.clone(),
            self.eyelid_pairs.clone(),
            self.mouth_pairs.clone(),
        )
    }
}

fn validate_pairs(pairs: &[Pair]) -> Result<()> {
    for &(i, j) in pairs {
        for idx in [i, j] {
            if idx >= KEYPOINT_COUNT {
                return Err(Error::PairIndex {
                    index: idx,
                    limit: KEYPOINT_COUNT,
                });
            }
        }
    }
    Ok(())
}

/// Human-side input: 50 expression coefficients and 3 jaw coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpressionParams<T> {
    pub psi: [T; HUMAN_EXPR_DIM],
    pub jaw: [T; JAW_DIM],
}

impl<T: Scalar> ExpressionParams<T> {
    /// Builds parameters clamped to the default `[-3, 3]` range.
    pub fn new(psi: &[T], jaw: &[T]) -> Result<Self> {
        Self::with_range(psi, jaw, T::of(DEFAULT_PARAM_RANGE))
    }

    pub fn with_range(psi: &[T], jaw: &[T], range: T) -> Result<Self> {
        if psi.len() != HUMAN_EXPR_DIM {
            return Err(Error::Arity {
                what: "expression coefficients",
                expected: HUMAN_EXPR_DIM,
                got: psi.len(),
            });
        }
        if jaw.len() != JAW_DIM {
            return Err(Error::Arity {
                what: "jaw coefficients",
                expected: JAW_DIM,
                got: jaw.len(),
            });
        }
        if !(all_finite(psi) && all_finite(jaw)) {
            return Err(Error::NonFinite("expression parameters"));
        }
        if !(range > T::zero() && range.is_finite()) {
            return Err(Error::Config(format!("clamp range must be positive, got {range}")));
        }
        let clamp = |v: T| v.max(-range).min(range);
        let mut out = Self::zero();
        for (o, &v) in out.psi.iter_mut().zip(psi) {
            *o = clamp(v);
        }
        for (o, &v) in out.jaw.iter_mut().zip(jaw) {
            *o = clamp(v);
        }
        Ok(out)
    }

    /// Splits a concatenated `[psi; jaw]` vector.
    pub fn from_vector(p: &[T]) -> Result<Self> {
        if p.len() != PARAM_DIM {
            return Err(Error::Arity {
                what: "parameter vector",
                expected: PARAM_DIM,
                got: p.len(),
            });
        }
        Self::new(&p[..HUMAN_EXPR_DIM], &p[HUMAN_EXPR_DIM..])
    }

    pub fn zero() -> Self {
        Self {
            psi: [T::zero(); HUMAN_EXPR_DIM],
            jaw: [T::zero(); JAW_DIM],
        }
    }

    /// The concatenation `[psi; jaw]`.
    pub fn to_vector(&self) -> [T; PARAM_DIM] {
        let mut p = [T::zero(); PARAM_DIM];
        p[..HUMAN_EXPR_DIM].copy_from_slice(&self.psi);
        p[HUMAN_EXPR_DIM..].copy_from_slice(&self.jaw);
        p
    }
}

/// Anime-side pose: 17 coefficients in `[0, 1]` plus 3 head angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnimePose<T> {
    pub b: [T; ANIME_EXPR_DIM],
    pub h: [T; 3],
}

impl<T: Scalar> AnimePose<T> {
    pub fn new(b: &[T], h: [T; 3]) -> Result<Self> {
        if b.len() != ANIME_EXPR_DIM {
            return Err(Error::Arity {
                what: "anime coefficients",
                expected: ANIME_EXPR_DIM,
                got: b.len(),
            });
        }
        if !(all_finite(b) && all_finite(&h)) {
            return Err(Error::NonFinite("anime pose"));
        }
        if let Some(v) = b.iter().find(|&&v| v < T::zero() || v > T::one()) {
            return Err(Error::Invalid(format!("anime coefficient {v} outside [0, 1]")));
        }
        let pi = T::of(std::f64::consts::PI);
        if let Some(v) = h.iter().find(|&&v| v < -pi || v > pi) {
            return Err(Error::Invalid(format!("head angle {v} outside [-pi, pi]")));
        }
        let mut coeffs = [T::zero(); ANIME_EXPR_DIM];
        coeffs.copy_from_slice(b);
        Ok(Self { b: coeffs, h })
    }

    pub fn eyes(&self) -> &[T] {
        &self.b[0..6]
    }

    pub fn eyebrows(&self) -> &[T] {
        &self.b[6..12]
    }

    pub fn mouth(&self) -> &[T] {
        &self.b[12..17]
    }
}

/// `T + sum expr_i * E_i + sum jaw_j * J_j`.
///
/// `jaw` must be present exactly when the rig carries a jaw basis.
pub fn synthesize_mesh<T: Scalar>(
    rig: &RigSpec<T>,
    expr: &[T],
    jaw: Option<&[T]>,
) -> Result<Mesh<T>> {
    if expr.len() != rig.expr_dim() {
        return Err(Error::Arity {
            what: "expression coefficients",
            expected: rig.expr_dim(),
            got: expr.len(),
        });
    }
    if !all_finite(expr) {
        return Err(Error::NonFinite("expression coefficients"));
    }
    let mut flat = rig.template.flat();
    rig.expr_basis.accumulate(expr, &mut flat);
    match (rig.jaw_basis(), jaw) {
        (Some(basis), Some(j)) => {
            if j.len() != basis.dim() {
                return Err(Error::Arity {
                    what: "jaw coefficients",
                    expected: basis.dim(),
                    got: j.len(),
                });
            }
            if !all_finite(j) {
                return Err(Error::NonFinite("jaw coefficients"));
            }
            basis.accumulate(j, &mut flat);
        }
        (None, None) => {}
        (Some(basis), None) => {
            return Err(Error::Arity {
                what: "jaw coefficients",
                expected: basis.dim(),
                got: 0,
            })
        }
        (None, Some(j)) => {
            return Err(Error::Arity {
                what: "jaw coefficients",
                expected: 0,
                got: j.len(),
            })
        }
    }
    Mesh::from_flat(&flat)
}

/// Human mesh for a parameter set; the rig must carry a jaw basis.
pub fn synthesize_params<T: Scalar>(
    rig: &RigSpec<T>,
    params: &ExpressionParams<T>,
) -> Result<Mesh<T>> {
    synthesize_mesh(rig, &params.psi, Some(&params.jaw))
}

pub(crate) fn gather<T: Scalar>(mesh: &Mesh<T>, indices: &[usize]) -> Vec<Point3<T>> {
    indices.iter().map(|&i| mesh.vertices[i]).collect()
}

/// The 68 landmarks of `mesh`, in slot order.
pub fn extract_keypoints<T: Scalar>(rig: &RigSpec<T>, mesh: &Mesh<T>) -> Result<Vec<Point3<T>>> {
    if mesh.vertex_count() != rig.vertex_count() {
        return Err(Error::Topology(format!(
            "mesh has {} vertices, rig has {}",
            mesh.vertex_count(),
            rig.vertex_count()
        )));
    }
    Ok(gather(mesh, &rig.keypoint_indices))
}

/// Componentwise `|k_i - k_j|` for each pair.
pub fn closure_offsets<T: Scalar>(keypoints: &[Point3<T>], pairs: &[Pair]) -> Result<Vec<Point3<T>>> {
    pairs
        .iter()
        .map(|&(i, j)| {
            for idx in [i, j] {
                if idx >= keypoints.len() {
                    return Err(Error::PairIndex {
                        index: idx,
                        limit: keypoints.len(),
                    });
                }
            }
            let (a, b) = (keypoints[i], keypoints[j]);
            Ok([(a[0] - b[0]).abs(), (a[1] - b[1]).abs(), (a[2] - b[2]).abs()])
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleUnitChange {
    None,
    RadiansToDegrees,
    DegreesToRadians,
}

impl AngleUnitChange {
    fn factor<T: Scalar>(self) -> T {
        match self {
            AngleUnitChange::None => T::one(),
            AngleUnitChange::RadiansToDegrees => T::of(180.0 / std::f64::consts::PI),
            AngleUnitChange::DegreesToRadians => T::of(std::f64::consts::PI / 180.0),
        }
    }

    fn inverse(self) -> Self {
        match self {
            AngleUnitChange::None => AngleUnitChange::None,
            AngleUnitChange::RadiansToDegrees => AngleUnitChange::DegreesToRadians,
            AngleUnitChange::DegreesToRadians => AngleUnitChange::RadiansToDegrees,
        }
    }
}

/// Axis order, sign and unit relation between two head-angle conventions.
///
/// Output component `i` is `sign[i] * unit * input[order[i]]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadAngleConvention {
    order: [usize; 3],
    flip: [bool; 3],
    unit: AngleUnitChange,
}

impl HeadAngleConvention {
    pub fn new(order: [usize; 3], flip: [bool; 3], unit: AngleUnitChange) -> Result<Self> {
        let mut seen = [false; 3];
        for &o in &order {
            if o >= 3 || seen[o] {
                return Err(Error::Config(format!("axis order {order:?} is not a permutation")));
            }
            seen[o] = true;
        }
        Ok(Self { order, flip, unit })
    }

    pub fn identity() -> Self {
        Self {
            order: [0, 1, 2],
            flip: [false; 3],
            unit: AngleUnitChange::None,
        }
    }

    pub fn inverse(&self) -> Self {
        let mut order = [0; 3];
        let mut flip = [false; 3];
        for i in 0..3 {
            order[self.order[i]] = i;
            flip[self.order[i]] = self.flip[i];
        }
        Self {
            order,
            flip,
            unit: self.unit.inverse(),
        }
    }
}

/// Remaps head angles between conventions; bijective.
pub fn map_head_angles<T: Scalar>(angles: [T; 3], convention: &HeadAngleConvention) -> Result<[T; 3]> {
    if !all_finite(&angles) {
        return Err(Error::NonFinite("head angles"));
    }
    let k: T = convention.unit.factor();
    let mut out = [T::zero(); 3];
    for (i, o) in out.iter_mut().enumerate() {
        let v = angles[convention.order[i]] * k;
        *o = if convention.flip[i] { -v } else { v };
    }
    Ok(out)
}

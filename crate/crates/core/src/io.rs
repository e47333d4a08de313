//! Serializable forms of rigs, adapters and models.
//!
//! Every value is stored as `f64` regardless of the in-memory scalar.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::adapter::AdapterMatrix;
use crate::error::{Error, Result};
use crate::rig::{BlendshapeBasis, Mesh, Pair, RigSpec, ANIME_EXPR_DIM, PARAM_DIM};
use crate::scalar::Scalar;
use crate::synth::SynthSpec;
use crate::translator::TranslatorModel;

/// Hidden activations are written as `leaky_relu_<slope>`.
pub const HIDDEN_ACTIVATION_PREFIX: &str = "leaky_relu_";
pub const OUTPUT_ACTIVATION: &str = "sigmoid";

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn from_f64<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}

fn pairs_out(p: &[Pair]) -> Vec<[usize; 2]> {
    p.iter().map(|&(i, j)| [i, j]).collect()
}

fn pairs_in(p: &[[usize; 2]]) -> Vec<Pair> {
    p.iter().map(|&[i, j]| (i, j)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigFile {
    pub vertex_count: usize,
    /// `V*3` flat coordinates.
    pub template: Vec<f64>,
    /// One flat `V*3` field per expression coefficient.
    pub expr_deltas: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jaw_deltas: Option<Vec<Vec<f64>>>,
    pub keypoint_indices: Vec<usize>,
    pub eyelid_pairs: Vec<[usize; 2]>,
    pub mouth_pairs: Vec<[usize; 2]>,
}

impl RigFile {
    pub fn from_rig<T: Scalar>(rig: &RigSpec<T>) -> Self {
        let fields = |b: &BlendshapeBasis<T>| (0..b.dim()).map(|i| to_f64(b.field(i))).collect();
        Self {
            vertex_count: rig.vertex_count(),
            template: to_f64(&rig.template().flat()),
            expr_deltas: fields(rig.expr_basis()),
            jaw_deltas: rig.jaw_basis().map(fields),
            keypoint_indices: rig.keypoint_indices().to_vec(),
            eyelid_pairs: pairs_out(rig.eyelid_pairs()),
            mouth_pairs: pairs_out(rig.mouth_pairs()),
        }
    }

    pub fn to_rig<T: Scalar>(&self) -> Result<RigSpec<T>> {
        let v = self.vertex_count;
        if self.template.len() != 3 * v {
            return Err(Error::Arity {
                what: "template coordinates",
                expected: 3 * v,
                got: self.template.len(),
            });
        }
        let basis = |f: &[Vec<f64>]| {
            let fields: Vec<Vec<T>> = f.iter().map(|x| from_f64(x)).collect();
            BlendshapeBasis::from_fields(v, &fields)
        };
        RigSpec::new(
            Mesh::from_flat(&from_f64(&self.template))?,
            basis(&self.expr_deltas)?,
            self.jaw_deltas.as_deref().map(basis).transpose()?,
            self.keypoint_indices.clone(),
            pairs_in(&self.eyelid_pairs),
            pairs_in(&self.mouth_pairs),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterFile {
    pub lambda_reg: f64,
    /// 17 columns of 50 entries.
    pub columns: Vec<Vec<f64>>,
}

impl AdapterFile {
    pub fn from_adapter<T: Scalar>(a: &AdapterMatrix<T>) -> Self {
        Self {
            lambda_reg: a.lambda_reg().to_f64_lossy(),
            columns: a.columns().iter().map(|c| to_f64(c)).collect(),
        }
    }

    pub fn to_adapter<T: Scalar>(&self) -> Result<AdapterMatrix<T>> {
        AdapterMatrix::new(self.columns.iter().map(|c| from_f64(c)).collect(), T::of(self.lambda_reg))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: String,
    pub output_activation: String,
    /// Row-major `outputs x inputs` weights per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl ModelFile {
    pub fn from_model<T: Scalar>(m: &TranslatorModel<T>) -> Self {
        let n = m.layers().len();
        Self {
            layer_sizes: m.layer_sizes(),
            hidden_activation: format!("{HIDDEN_ACTIVATION_PREFIX}{}", m.leak().to_f64_lossy()),
            output_activation: OUTPUT_ACTIVATION.into(),
            weights: (0..n).map(|l| to_f64(m.layer_weights(l))).collect(),
            biases: (0..n).map(|l| to_f64(m.layer_biases(l))).collect(),
        }
    }

    pub fn to_model<T: Scalar>(&self) -> Result<TranslatorModel<T>> {
        if self.output_activation != OUTPUT_ACTIVATION {
            return Err(Error::Format(format!(
                "unsupported output activation {:?}; expected {OUTPUT_ACTIVATION:?}",
                self.output_activation
            )));
        }
        let leak = self
            .hidden_activation
            .strip_prefix(HIDDEN_ACTIVATION_PREFIX)
            .and_then(|s| s.parse::<f64>().ok())
            .filter(|l| (0.0..1.0).contains(l))
            .ok_or_else(|| {
                Error::Format(format!(
                    "unsupported hidden activation {:?}; expected {HIDDEN_ACTIVATION_PREFIX}<slope in [0, 1)>",
                    self.hidden_activation
                ))
            })?;
        let w: Vec<Vec<T>> = self.weights.iter().map(|x| from_f64(x)).collect();
        let b: Vec<Vec<T>> = self.biases.iter().map(|x| from_f64(x)).collect();
        TranslatorModel::from_parts(&self.layer_sizes, &w, &b, T::of(leak))
    }
}

/// Generator settings plus the ground-truth map of a synthetic rig pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthFile {
    pub vertex_count: usize,
    pub rng_seed: u64,
    pub delta_scale: f64,
    /// 17 rows of 53.
    pub ground_truth: Vec<Vec<f64>>,
}

impl SynthFile {
    pub fn from_spec<T: Scalar>(s: &SynthSpec<T>) -> Self {
        Self {
            vertex_count: s.vertex_count,
            rng_seed: s.rng_seed,
            delta_scale: s.delta_scale.to_f64_lossy(),
            ground_truth: s.ground_truth().iter().map(|r| to_f64(r)).collect(),
        }
    }

    pub fn to_spec<T: Scalar>(&self) -> Result<SynthSpec<T>> {
        if self.ground_truth.len() != ANIME_EXPR_DIM {
            return Err(Error::Arity {
                what: "ground-truth rows",
                expected: ANIME_EXPR_DIM,
                got: self.ground_truth.len(),
            });
        }
        let rows = self
            .ground_truth
            .iter()
            .map(|r| {
                let r: [f64; PARAM_DIM] = r.as_slice().try_into().map_err(|_| Error::Arity {
                    what: "ground-truth row",
                    expected: PARAM_DIM,
                    got: r.len(),
                })?;
                Ok(r.map(T::of))
            })
            .collect::<Result<Vec<_>>>()?;
        SynthSpec::with_sizes(self.vertex_count, self.rng_seed, T::of(self.delta_scale))?.with_ground_truth(rows)
    }
}

/// Wavefront OBJ vertex list (`v x y z`, 9 significant digits).
pub fn mesh_to_obj<T: Scalar>(mesh: &Mesh<T>) -> String {
    let mut s = String::with_capacity(mesh.vertex_count() * 40);
    for p in mesh.vertices() {
        let _ = writeln!(
            s,
            "v {:.8e} {:.8e} {:.8e}",
            p[0].to_f64_lossy(),
            p[1].to_f64_lossy(),
            p[2].to_f64_lossy()
        );
    }
    s
}

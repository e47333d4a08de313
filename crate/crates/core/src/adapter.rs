//! Pose adapter: a linear lift from anime coefficients into the human
//! expression space, fit column by column with ridge regression on landmark
//! displacements.

use crate::error::{Error, Result};
use crate::lstsq::{ridge_solve, ColMatrix};
use crate::rig::{BlendshapeBasis, RigSpec, ANIME_EXPR_DIM, HUMAN_EXPR_DIM};
use crate::scalar::{all_finite, Scalar};

/// Default ridge weight.
pub const DEFAULT_LAMBDA_REG: f64 = 1e-4;

/// What the per-column regression matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitTarget {
    /// 68 landmark displacements (204 equations per column).
    #[default]
    Keypoints,
    /// Every vertex displacement.
    Vertices,
}

/// Column `j` is the human expression vector that reproduces full activation
/// of anime dimension `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterMatrix<T> {
    columns: Vec<Vec<T>>,
    lambda_reg: T,
}

impl<T: Scalar> AdapterMatrix<T> {
    pub fn new(columns: Vec<Vec<T>>, lambda_reg: T) -> Result<Self> {
        if columns.len() != ANIME_EXPR_DIM {
            return Err(Error::Arity {
                what: "adapter columns",
                expected: ANIME_EXPR_DIM,
                got: columns.len(),
            });
        }
        for c in &columns {
            if c.len() != HUMAN_EXPR_DIM {
                return Err(Error::Arity {
                    what: "adapter column length",
                    expected: HUMAN_EXPR_DIM,
                    got: c.len(),
                });
            }
            if !all_finite(c) {
                return Err(Error::NonFinite("adapter column"));
            }
        }
        if !(lambda_reg >= T::zero()) {
            return Err(Error::Config(format!("lambda_reg must be >= 0, got {lambda_reg}")));
        }
        Ok(Self {
            columns,
            lambda_reg,
        })
    }

    pub fn columns(&self) -> &[Vec<T>] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &[T] {
        &self.columns[j]
    }

    pub fn lambda_reg(&self) -> T {
        self.lambda_reg
    }

    pub fn frobenius_norm(&self) -> T {
        self.columns
            .iter()
            .flatten()
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }
}

fn displacement_rows<T: Scalar>(rig: &RigSpec<T>, basis: &BlendshapeBasis<T>, i: usize, target: FitTarget) -> Vec<T> {
    let field = basis.field(i);
    match target {
        FitTarget::Vertices => field.to_vec(),
        FitTarget::Keypoints => rig
            .keypoint_indices()
            .iter()
            .flat_map(|&v| [field[3 * v], field[3 * v + 1], field[3 * v + 2]])
            .collect(),
    }
}

/// Fits the adapter on landmark displacements (the default target).
pub fn fit_pose_adapter<T: Scalar>(
    human: &RigSpec<T>,
    anime: &RigSpec<T>,
    lambda_reg: T,
) -> Result<AdapterMatrix<T>> {
    fit_pose_adapter_with(human, anime, lambda_reg, FitTarget::Keypoints)
}

pub fn fit_pose_adapter_with<T: Scalar>(
    human: &RigSpec<T>,
    anime: &RigSpec<T>,
    lambda_reg: T,
    target: FitTarget,
) -> Result<AdapterMatrix<T>> {
    if human.expr_dim() != HUMAN_EXPR_DIM {
        return Err(Error::Arity {
            what: "human expression basis",
            expected: HUMAN_EXPR_DIM,
            got: human.expr_dim(),
        });
    }
    if anime.expr_dim() != ANIME_EXPR_DIM {
        return Err(Error::Arity {
            what: "anime expression basis",
            expected: ANIME_EXPR_DIM,
            got: anime.expr_dim(),
        });
    }
    if target == FitTarget::Vertices && human.vertex_count() != anime.vertex_count() {
        return Err(Error::Topology(format!(
            "vertex fitting needs shared topology: {} vs {} vertices",
            human.vertex_count(),
            anime.vertex_count()
        )));
    }
    let design: Vec<Vec<T>> = (0..HUMAN_EXPR_DIM)
        .map(|i| displacement_rows(human, human.expr_basis(), i, target))
        .collect();
    let rows = design[0].len();
    let k = ColMatrix::from_columns(rows, design)?;
    let targets: Vec<Vec<T>> = (0..ANIME_EXPR_DIM)
        .map(|j| displacement_rows(anime, anime.expr_basis(), j, target))
        .collect();
    let columns = ridge_solve(&k, &targets, lambda_reg)?;
    AdapterMatrix::new(columns, lambda_reg)
}

/// `psi = A b`.
pub fn apply_adapter<T: Scalar>(adapter: &AdapterMatrix<T>, b: &[T]) -> Result<Vec<T>> {
    if b.len() != ANIME_EXPR_DIM {
        return Err(Error::Arity {
            what: "anime coefficients",
            expected: ANIME_EXPR_DIM,
            got: b.len(),
        });
    }
    if !all_finite(b) {
        return Err(Error::NonFinite("anime coefficients"));
    }
    let mut psi = vec![T::zero(); HUMAN_EXPR_DIM];
    for (&bj, col) in b.iter().zip(&adapter.columns) {
        for (p, &c) in psi.iter_mut().zip(col) {
            *p += bj * c;
        }
    }
    Ok(psi)
}

/// The anime neutral expressed in the human vertex space.
///
/// Template from the anime rig, expression basis from the human rig, no jaw:
/// this is the rig the adapter output `psi` is synthesized on when comparing
/// a predicted pose against a human target.
pub fn anime_proxy_rig<T: Scalar>(human: &RigSpec<T>, anime: &RigSpec<T>) -> Result<RigSpec<T>> {
    if human.vertex_count() != anime.vertex_count() {
        return Err(Error::Topology(format!(
            "proxy rig needs shared topology: {} vs {} vertices",
            human.vertex_count(),
            anime.vertex_count()
        )));
    }
    if human.keypoint_indices() != anime.keypoint_indices() {
        return Err(Error::Topology("rigs use different keypoint tables".into()));
    }
    human.with_geometry(anime.template().clone(), human.expr_basis().clone(), None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::{JAW_DIM, KEYPOINT_COUNT};
    use crate::synth::{make_rig_pair, SynthSpec};

    fn human() -> RigSpec<f64> {
        make_rig_pair(&SynthSpec::with_sizes(120, 3, 0.05).unwrap()).unwrap().0
    }

    fn anime_from(human: &RigSpec<f64>, fields: Vec<Vec<f64>>) -> RigSpec<f64> {
        human
            .with_geometry(
                human.template().clone(),
                BlendshapeBasis::from_fields(human.vertex_count(), &fields).unwrap(),
                None,
            )
            .unwrap()
    }

    #[test]
    fn unit_vector_extracts_column() {
        let cols: Vec<Vec<f64>> = (0..ANIME_EXPR_DIM)
            .map(|j| (0..HUMAN_EXPR_DIM).map(|i| (i * 7 + j) as f64 * 0.01).collect())
            .collect();
        let a = AdapterMatrix::new(cols, 0.0).unwrap();
        for j in 0..ANIME_EXPR_DIM {
            let mut e = [0.0; ANIME_EXPR_DIM];
            e[j] = 1.0;
            assert_eq!(apply_adapter(&a, &e).unwrap(), a.column(j));
        }
        assert_eq!(apply_adapter(&a, &[0.0; ANIME_EXPR_DIM]).unwrap(), vec![0.0; HUMAN_EXPR_DIM]);
        assert!(apply_adapter(&a, &[0.0; 16]).is_err());
        assert!(apply_adapter(&a, &[f64::NAN; ANIME_EXPR_DIM]).is_err());
    }

    #[test]
    fn zero_anime_deltas_give_zero_adapter() {
        let h = human();
        let n = h.vertex_count() * 3;
        let a = anime_from(&h, vec![vec![0.0; n]; ANIME_EXPR_DIM]);
        let fit = fit_pose_adapter(&h, &a, 1e-4).unwrap();
        assert!(fit.columns().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn copied_deltas_recover_selection() {
        let h = human();
        let picks: Vec<usize> = (0..ANIME_EXPR_DIM).map(|j| (j * 3 + 1) % HUMAN_EXPR_DIM).collect();
        // synthetic human fields span only 17 directions, so build independent ones
        let n = h.vertex_count() * 3;
        let fields: Vec<Vec<f64>> = (0..HUMAN_EXPR_DIM)
            .map(|i| (0..n).map(|k| (((k + 1) * (i + 3) * 2654435761usize) % 1000) as f64 * 1e-4 - 0.05).collect())
            .collect();
        let h = h
            .with_geometry(
                h.template().clone(),
                BlendshapeBasis::from_fields(h.vertex_count(), &fields).unwrap(),
                Some(BlendshapeBasis::zeros(JAW_DIM, h.vertex_count())),
            )
            .unwrap();
        let a = anime_from(&h, picks.iter().map(|&i| fields[i].clone()).collect());
        let fit = fit_pose_adapter(&h, &a, 0.0).unwrap();
        for (j, &pick) in picks.iter().enumerate() {
            for i in 0..HUMAN_EXPR_DIM {
                let expect = if i == pick { 1.0 } else { 0.0 };
                assert!((fit.column(j)[i] - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn synthetic_human_basis_needs_ridge() {
        let (h, a) = make_rig_pair(&SynthSpec::with_sizes(120, 3, 0.05).unwrap()).unwrap();
        assert!(matches!(fit_pose_adapter(&h, &a, 0.0), Err(Error::IllPosed(_))));
        assert!(fit_pose_adapter(&h, &a, 1e-4).is_ok());
        assert!(fit_pose_adapter_with(&h, &a, 1e-4, FitTarget::Vertices).is_ok());
        assert!(fit_pose_adapter(&h, &a, -1.0).is_err());
    }

    #[test]
    fn proxy_rig_shape() {
        let (h, a) = make_rig_pair(&SynthSpec::with_sizes(120, 3, 0.05).unwrap()).unwrap();
        let p = anime_proxy_rig(&h, &a).unwrap();
        assert_eq!(p.template(), a.template());
        assert_eq!(p.expr_basis(), h.expr_basis());
        assert!(p.jaw_basis().is_none());
        let other = make_rig_pair(&SynthSpec::with_sizes(KEYPOINT_COUNT + 1, 3, 0.05).unwrap()).unwrap().1;
        assert!(matches!(anime_proxy_rig(&h, &other), Err(Error::Topology(_))));
    }
}

//! Example systems with exact parameters plus switched-linear and generic
//! linear builders.

mod block;
mod blowup;
mod scalar;
mod switched;

pub use block::BlockOperatorModel;
pub use blowup::{blowup_psi2, build_blowup_example, BlowupParams};
pub use scalar::{build_linear, build_scalar_example, build_ugatt_example};
pub use switched::{build_switched_linear, common_lyapunov_pair, unstable_switching_pair, SwitchedLinearModel};

use crate::comparison::ComparisonError;
use crate::linalg::LinalgError;
use crate::lyapunov::LyapunovCandidate;
use crate::systems::SystemModel;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Comparison(#[from] ComparisonError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarVariant {
    I,
    Ii,
    Iii,
    Iv,
}

impl ScalarVariant {
    pub const ALL: [ScalarVariant; 4] = [ScalarVariant::I, ScalarVariant::Ii, ScalarVariant::Iii, ScalarVariant::Iv];

    pub fn label(self) -> &'static str {
        match self {
            ScalarVariant::I => "i",
            ScalarVariant::Ii => "ii",
            ScalarVariant::Iii => "iii",
            ScalarVariant::Iv => "iv",
        }
    }
}

/// Serializable model recipe; configs reference models only through this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelDescriptor {
    Scalar { variant: ScalarVariant },
    Ugatt,
    Blowup { c: f64 },
    L2Block { n: usize, epsilon: f64 },
    Switched { modes: Vec<Vec<Vec<f64>>> },
    Linear { matrix: Vec<Vec<f64>> },
}

/// A built model with whatever structured data its builder provides.
#[derive(Clone)]
pub struct BuiltModel {
    pub model: SystemModel,
    pub candidate: Option<LyapunovCandidate>,
    pub block: Option<Arc<BlockOperatorModel>>,
    pub switched: Option<Arc<SwitchedLinearModel>>,
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ModelError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(ModelError::InvalidParameter("matrix must be square and non-empty".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl ModelDescriptor {
    pub fn build(&self) -> Result<BuiltModel, ModelError> {
        let plain = |model| BuiltModel {
            model,
            candidate: None,
            block: None,
            switched: None,
        };
        Ok(match self {
            ModelDescriptor::Scalar { variant } => plain(build_scalar_example(*variant)),
            ModelDescriptor::Ugatt => plain(build_ugatt_example()),
            ModelDescriptor::Blowup { c } => {
                let (model, cand) = build_blowup_example(*c)?;
                BuiltModel {
                    candidate: Some(cand),
                    ..plain(model)
                }
            }
            ModelDescriptor::L2Block { n, epsilon } => {
                let b = Arc::new(BlockOperatorModel::new(*n, *epsilon)?);
                BuiltModel {
                    model: b.to_system(),
                    candidate: Some(b.candidate()),
                    block: Some(b),
                    switched: None,
                }
            }
            ModelDescriptor::Switched { modes } => {
                let mats = modes.iter().map(|m| matrix_from_rows(m)).collect::<Result<Vec<_>, _>>()?;
                let s = Arc::new(build_switched_linear(mats)?);
                BuiltModel {
                    model: s.to_system(),
                    candidate: None,
                    block: None,
                    switched: Some(s),
                }
            }
            ModelDescriptor::Linear { matrix } => {
                let a = matrix_from_rows(matrix)?;
                BuiltModel {
                    candidate: Some(LyapunovCandidate::squared_norm()),
                    ..plain(build_linear(&a))
                }
            }
        })
    }

    pub fn switched(modes: &[DMatrix<f64>]) -> Self {
        ModelDescriptor::Switched {
            modes: modes
                .iter()
                .map(|m| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
                .collect(),
        }
    }

    pub fn linear(a: &DMatrix<f64>) -> Self {
        ModelDescriptor::Linear {
            matrix: (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect(),
        }
    }
}

/// The model zoo exercised by axiom and hierarchy checks.
pub fn zoo(block_n: usize) -> Vec<ModelDescriptor> {
    let mut z: Vec<ModelDescriptor> = ScalarVariant::ALL
        .iter()
        .map(|v| ModelDescriptor::Scalar { variant: *v })
        .collect();
    z.push(ModelDescriptor::Ugatt);
    z.push(ModelDescriptor::Blowup { c: 3.0 });
    z.push(ModelDescriptor::L2Block { n: block_n, epsilon: 0.0 });
    z.push(ModelDescriptor::L2Block { n: block_n, epsilon: 0.25 });
    z.push(ModelDescriptor::switched(&common_lyapunov_pair()));
    z.push(ModelDescriptor::switched(&unstable_switching_pair()));
    z.push(ModelDescriptor::linear(&DMatrix::from_element(1, 1, -1.0)));
    z.push(ModelDescriptor::linear(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5])));
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptors_round_trip_through_json() {
        for d in zoo(3) {
            let js = serde_json::to_string(&d).unwrap();
            let back: ModelDescriptor = serde_json::from_str(&js).unwrap();
            assert_eq!(back, d);
            let built = d.build().unwrap();
            assert_eq!(built.model.descriptor.as_ref(), Some(&d));
        }
    }

    #[test]
    fn equilibrium_declarations_hold() {
        for d in zoo(3) {
            let b = d.build().unwrap();
            assert!(b.model.check_equilibrium(10.0), "{d:?}");
        }
    }
}

//! Perturbation designs and the probe matrix Δ (one probe per row).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{norm, row_orthonormality_error, singular_values, Matrix, RngStream};

/// Default probe count.
pub const DEFAULT_PROBES: usize = 32;
/// Default perturbation scale in standardized input units.
pub const DEFAULT_SIGMA: f64 = 1e-2;
/// Tolerance on orthonormality of a subspace basis.
pub const BASIS_ORTHONORMALITY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeDesign {
    /// Rows i.i.d. `N(0, σ² I_d)`.
    Isotropic {
        sigma: f64,
        #[serde(rename = "J")]
        count: usize,
    },
    /// Rows `σ · cᵀ B` with `c ~ N(0, I_k)` and `B` a `k × d` basis with
    /// orthonormal rows.
    SubspaceAligned {
        basis: Matrix,
        sigma: f64,
        #[serde(rename = "J")]
        count: usize,
    },
    /// Rows taken verbatim.
    ExplicitBasis { deltas: Matrix },
}

impl ProbeDesign {
    pub fn isotropic(sigma: f64, count: usize) -> Self {
        ProbeDesign::Isotropic { sigma, count }
    }

    pub fn aligned(basis: Matrix, sigma: f64, count: usize) -> Self {
        ProbeDesign::SubspaceAligned {
            basis,
            sigma,
            count,
        }
    }

    pub fn explicit(deltas: Matrix) -> Self {
        ProbeDesign::ExplicitBasis { deltas }
    }

    pub fn count(&self) -> usize {
        match self {
            ProbeDesign::Isotropic { count, .. } | ProbeDesign::SubspaceAligned { count, .. } => {
                *count
            }
            ProbeDesign::ExplicitBasis { deltas } => deltas.rows(),
        }
    }

    pub fn sigma(&self) -> Option<f64> {
        match self {
            ProbeDesign::Isotropic { sigma, .. } | ProbeDesign::SubspaceAligned { sigma, .. } => {
                Some(*sigma)
            }
            ProbeDesign::ExplicitBasis { .. } => None,
        }
    }

    /// Same design with a different scale; explicit designs are unchanged.
    pub fn with_sigma(&self, sigma: f64) -> Self {
        let mut d = self.clone();
        match &mut d {
            ProbeDesign::Isotropic { sigma: s, .. }
            | ProbeDesign::SubspaceAligned { sigma: s, .. } => *s = sigma,
            ProbeDesign::ExplicitBasis { .. } => {}
        }
        d
    }

    pub fn with_count(&self, count: usize) -> Self {
        let mut d = self.clone();
        match &mut d {
            ProbeDesign::Isotropic { count: c, .. }
            | ProbeDesign::SubspaceAligned { count: c, .. } => *c = count,
            ProbeDesign::ExplicitBasis { .. } => {}
        }
        d
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if let Some(sigma) = self.sigma() {
            if !(sigma > 0.0) || !sigma.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "probe sigma must be positive, got {sigma}"
                )));
            }
        }
        if self.count() == 0 {
            return Err(Error::InvalidParameter(
                "probe count J must be at least 1".into(),
            ));
        }
        match self {
            ProbeDesign::Isotropic { .. } => {}
            ProbeDesign::SubspaceAligned { basis, .. } => {
                if basis.cols() != d {
                    return Err(Error::Shape(format!(
                        "probe basis spans R^{}, input is R^{d}",
                        basis.cols()
                    )));
                }
                if basis.rows() == 0 {
                    return Err(Error::InvalidParameter("empty probe basis".into()));
                }
                let err = row_orthonormality_error(basis);
                if err > BASIS_ORTHONORMALITY_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "probe basis rows not orthonormal (error {err:e})"
                    )));
                }
            }
            ProbeDesign::ExplicitBasis { deltas } => {
                if deltas.cols() != d {
                    return Err(Error::Shape(format!(
                        "explicit probes have dimension {}, input is {d}",
                        deltas.cols()
                    )));
                }
                if !deltas.is_finite() {
                    return Err(Error::NonFinite("explicit probes".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeBatch {
    delta: Matrix,
    design: ProbeDesign,
}

impl ProbeBatch {
    pub fn new(delta: Matrix, design: ProbeDesign) -> Result<Self> {
        for (j, r) in delta.row_iter().enumerate() {
            if !(norm(r) > 0.0) {
                return Err(Error::InvalidParameter(format!("probe {j} has zero norm")));
            }
        }
        Ok(ProbeBatch { delta, design })
    }

    /// Δ, `J × d`.
    pub fn delta(&self) -> &Matrix {
        &self.delta
    }

    pub fn design(&self) -> &ProbeDesign {
        &self.design
    }

    pub fn count(&self) -> usize {
        self.delta.rows()
    }

    pub fn dim(&self) -> usize {
        self.delta.cols()
    }
}

pub fn sample_probes(design: &ProbeDesign, d: usize, rng: &mut RngStream) -> Result<ProbeBatch> {
    design.validate(d)?;
    let delta = match design {
        ProbeDesign::Isotropic { sigma, count } => {
            let mut m = Matrix::zeros(*count, d);
            for j in 0..*count {
                for (x, g) in m.row_mut(j).iter_mut().zip(rng.gaussian(d)) {
                    *x = sigma * g;
                }
            }
            m
        }
        ProbeDesign::SubspaceAligned {
            basis,
            sigma,
            count,
        } => {
            let coeffs = Matrix::new(*count, basis.rows(), rng.gaussian(count * basis.rows()))?;
            coeffs.matmul(basis).scale(*sigma)
        }
        ProbeDesign::ExplicitBasis { deltas } => deltas.clone(),
    };
    ProbeBatch::new(delta, design.clone())
}

/// True iff the smallest singular value of Δ exceeds `tol_rel` times the largest.
pub fn check_full_column_rank(batch: &ProbeBatch, tol_rel: f64) -> bool {
    let delta = batch.delta();
    if delta.rows() < delta.cols() {
        return false;
    }
    match singular_values(delta) {
        Ok(s) => s.last().copied().unwrap_or(0.0) > tol_rel * s[0],
        Err(_) => false,
    }
}

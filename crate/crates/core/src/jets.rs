//! Empirical jets: base tap value plus a ridge least-squares Jacobian fitted
//! from probe responses.
//!
//! With probes Δ (`J × d`, one per row) and tap differences Y (`J × d_m`),
//! the Jacobian is `A = ((ΔᵀΔ + λI)⁻¹ ΔᵀY)ᵀ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cholesky, singular_values, Matrix, RngStream, Vector};
use crate::pipeline::Pipeline;
use crate::probes::{sample_probes, ProbeBatch, ProbeDesign};

/// Default α for the scale-aware ridge.
pub const DEFAULT_RIDGE_ALPHA: f64 = 1e-3;
/// Relative singular-value cut below which Δ is treated as rank deficient
/// when no ridge is applied.
pub const PROBE_RANK_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RidgePolicy {
    Zero,
    Fixed {
        lambda: f64,
    },
    /// `λ = α · s_max(ΔᵀΔ / J)`.
    ScaleAware {
        alpha: f64,
    },
}

impl Default for RidgePolicy {
    fn default() -> Self {
        RidgePolicy::ScaleAware {
            alpha: DEFAULT_RIDGE_ALPHA,
        }
    }
}

pub fn resolve_ridge(policy: RidgePolicy, batch: &ProbeBatch) -> Result<f64> {
    if batch.count() == 0 {
        return Err(Error::InvalidParameter("empty probe batch".into()));
    }
    match policy {
        RidgePolicy::Zero => Ok(0.0),
        RidgePolicy::Fixed { lambda } => {
            if !(lambda >= 0.0) || !lambda.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "ridge lambda must be non-negative, got {lambda}"
                )));
            }
            Ok(lambda)
        }
        RidgePolicy::ScaleAware { alpha } => {
            if !(alpha >= 0.0) || !alpha.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "ridge alpha must be non-negative, got {alpha}"
                )));
            }
            let s = singular_values(batch.delta())?;
            Ok(alpha * s[0] * s[0] / batch.count() as f64)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jet {
    pub tap: String,
    pub base_point: Vector,
    pub base_value: Vector,
    /// `d_m × d`.
    pub jacobian: Matrix,
    pub lambda_used: f64,
}

/// Factored normal equations for one probe batch, reusable across taps,
/// models and (with shared probes) base points.
#[derive(Clone, Debug)]
pub struct JetSolver {
    batch: ProbeBatch,
    lambda: f64,
    chol: Matrix,
}

impl JetSolver {
    pub fn new(batch: ProbeBatch, ridge: RidgePolicy) -> Result<Self> {
        let lambda = resolve_ridge(ridge, &batch)?;
        let d = batch.dim();
        if lambda == 0.0 {
            let s = singular_values(batch.delta())?;
            let rank = s.iter().filter(|&&v| v > PROBE_RANK_TOL * s[0]).count();
            if batch.count() < d || rank < d {
                return Err(Error::RankDeficient { rank, dim: d });
            }
        }
        let g = batch.delta().gram().add_diag(lambda);
        let chol = cholesky(&g).map_err(|e| match e {
            Error::SingularSystem(_) => Error::RankDeficient {
                rank: d - 1,
                dim: d,
            },
            other => other,
        })?;
        Ok(JetSolver {
            batch,
            lambda,
            chol,
        })
    }

    pub fn batch(&self) -> &ProbeBatch {
        &self.batch
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Jacobian `d_m × d` from tap differences `y` (`J × d_m`).
    pub fn jacobian(&self, y: &Matrix) -> Result<Matrix> {
        if y.rows() != self.batch.count() {
            return Err(Error::Shape(format!(
                "{} response rows for {} probes",
                y.rows(),
                self.batch.count()
            )));
        }
        let rhs = self.batch.delta().transpose().matmul(y);
        let at = chol_solve(&self.chol, &rhs);
        Ok(at.transpose())
    }

    /// Evaluate `p` at `x0` and every `x0 + δ_j`, returning one jet per tap.
    /// Costs exactly `J + 1` forward passes.
    pub fn estimate(&self, p: &Pipeline, taps: &[&str], x0: &[f64]) -> Result<Vec<Jet>> {
        if x0.len() != self.batch.dim() {
            return Err(Error::Shape(format!(
                "base point has dimension {}, probes have {}",
                x0.len(),
                self.batch.dim()
            )));
        }
        for t in taps {
            p.tap(t)?;
        }
        let base = p.evaluate(x0)?;
        let base_values: Vec<&[f64]> = taps
            .iter()
            .map(|t| base.tap(t).expect("tap checked above"))
            .collect();
        let mut ys: Vec<Matrix> = base_values
            .iter()
            .map(|v| Matrix::zeros(self.batch.count(), v.len()))
            .collect();
        let mut x = x0.to_vec();
        for (j, delta) in self.batch.delta().row_iter().enumerate() {
            for ((xi, &b), &dj) in x.iter_mut().zip(x0).zip(delta) {
                *xi = b + dj;
            }
            let ev = p.evaluate(&x)?;
            for ((y, t), b) in ys.iter_mut().zip(taps).zip(&base_values) {
                let z = ev.tap(t).expect("tap checked above");
                for ((out, &zi), &bi) in y.row_mut(j).iter_mut().zip(z).zip(b.iter()) {
                    *out = zi - bi;
                }
            }
        }
        taps.iter()
            .zip(base_values)
            .zip(ys)
            .map(|((t, b), y)| {
                let jacobian = self.jacobian(&y)?;
                if !jacobian.is_finite() {
                    return Err(Error::NonFinite(format!("jacobian at tap `{t}`")));
                }
                Ok(Jet {
                    tap: t.to_string(),
                    base_point: x0.to_vec(),
                    base_value: b.to_vec(),
                    jacobian,
                    lambda_used: self.lambda,
                })
            })
            .collect()
    }
}

fn chol_solve(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x.row_mut(i)[c] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x.row_mut(i)[c] = s / l[(i, i)];
        }
    }
    x
}

pub fn estimate_jet(
    p: &Pipeline,
    tap: &str,
    x0: &[f64],
    batch: &ProbeBatch,
    ridge: RidgePolicy,
) -> Result<Jet> {
    let solver = JetSolver::new(batch.clone(), ridge)?;
    Ok(solver.estimate(p, &[tap], x0)?.remove(0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSharing {
    /// One probe batch reused at every base point.
    #[default]
    Shared,
    /// A fresh batch per base point from `rng.derive(s)`.
    PerBase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JetPlan {
    pub design: ProbeDesign,
    pub ridge: RidgePolicy,
    #[serde(default)]
    pub sharing: ProbeSharing,
    #[serde(default)]
    pub parallel: bool,
}

impl JetPlan {
    pub fn new(design: ProbeDesign, ridge: RidgePolicy) -> Self {
        JetPlan {
            design,
            ridge,
            sharing: ProbeSharing::Shared,
            parallel: false,
        }
    }

    pub fn sharing(mut self, sharing: ProbeSharing) -> Self {
        self.sharing = sharing;
        self
    }

    pub fn parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    /// Probe batch used at base `s`. Depends only on `rng`'s identity, so
    /// every model run with the same stream sees the same probes.
    pub fn batch_for(&self, s: usize, d: usize, rng: &RngStream) -> Result<ProbeBatch> {
        let mut r = match self.sharing {
            ProbeSharing::Shared => rng.clone(),
            ProbeSharing::PerBase => rng.derive(s as u64),
        };
        sample_probes(&self.design, d, &mut r)
    }

    /// Jets at every base for every listed tap: `result[s][t]`.
    pub fn run(
        &self,
        p: &Pipeline,
        taps: &[&str],
        bases: &[Vector],
        rng: &RngStream,
    ) -> Result<Vec<Vec<Jet>>> {
        if bases.is_empty() {
            return Err(Error::InvalidParameter("no base points".into()));
        }
        let d = bases[0].len();
        let shared = match self.sharing {
            ProbeSharing::Shared => Some(JetSolver::new(self.batch_for(0, d, rng)?, self.ridge)?),
            ProbeSharing::PerBase => None,
        };
        let one = |(s, x0): (usize, &Vector)| -> Result<Vec<Jet>> {
            let run = || match &shared {
                Some(solver) => solver.estimate(p, taps, x0),
                None => {
                    JetSolver::new(self.batch_for(s, d, rng)?, self.ridge)?.estimate(p, taps, x0)
                }
            };
            run().map_err(|e| Error::at_base(s, e))
        };
        if self.parallel {
            bases.par_iter().enumerate().map(one).collect()
        } else {
            bases.iter().enumerate().map(one).collect()
        }
    }
}

/// One jet per base point at `tap`, with shared probes and serial execution.
pub fn estimate_jets_over_bases(
    p: &Pipeline,
    tap: &str,
    bases: &[Vector],
    design: &ProbeDesign,
    ridge: RidgePolicy,
    rng: &RngStream,
) -> Result<Vec<Jet>> {
    let plan = JetPlan::new(design.clone(), ridge);
    Ok(plan
        .run(p, &[tap], bases, rng)?
        .into_iter()
        .map(|mut v| v.remove(0))
        .collect())
}

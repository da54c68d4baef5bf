//! Linear two-module factorizations `f(x) = wᵀHx`: the reparameterization
//! family that leaves `f` unchanged, and recovery of `(H, w)` from jets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jets::{estimate_jet, Jet, RidgePolicy};
use crate::numerics::{dot, singular_values, solve, solve_spd, svd, Matrix, RngStream, Vector};
use crate::pipeline::{compose_two_module_linear, Pipeline, BOTTLENECK_TAP};
use crate::probes::ProbeBatch;

pub const FULL_RANK_TOL: f64 = 1e-8;
pub const LINEARITY_TOL: f64 = 1e-6;
pub const DEFAULT_COND_MAX: f64 = 1e3;
const ATTEMPTS_PER_MEMBER: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFactorization {
    pub h: Matrix,
    pub w: Vector,
    pub full_row_rank: bool,
}

fn full_row_rank(h: &Matrix) -> Result<bool> {
    let s = singular_values(h)?;
    Ok(h.rows() <= h.cols() && s.len() == h.rows() && s[s.len() - 1] > FULL_RANK_TOL * s[0])
}

impl LinearFactorization {
    pub fn new(h: Matrix, w: Vector) -> Result<Self> {
        if w.len() != h.rows() {
            return Err(Error::Shape(format!(
                "w has length {}, H has {} rows",
                w.len(),
                h.rows()
            )));
        }
        if h.rows() > h.cols() {
            return Err(Error::Shape(format!(
                "bottleneck width {} exceeds input dimension {}",
                h.rows(),
                h.cols()
            )));
        }
        if !h.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("factorization".into()));
        }
        let full_row_rank = full_row_rank(&h)?;
        Ok(LinearFactorization {
            h,
            w,
            full_row_rank,
        })
    }

    pub fn rank(&self) -> usize {
        self.h.rows()
    }

    pub fn dim(&self) -> usize {
        self.h.cols()
    }

    /// The end-to-end coefficient vector `Hᵀw`.
    pub fn composite(&self) -> Vector {
        self.h.tr_matvec(&self.w)
    }

    pub fn pipeline(&self) -> Result<Pipeline> {
        compose_two_module_linear(&self.h, &self.w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MirageMember {
    pub q: Matrix,
    pub h_q: Matrix,
    pub w_q: Vector,
}

impl MirageMember {
    /// `(QH, Q⁻ᵀw)`.
    pub fn from_q(f: &LinearFactorization, q: Matrix) -> Result<Self> {
        if q.shape() != (f.rank(), f.rank()) {
            return Err(Error::Shape(format!(
                "Q is {}x{}, bottleneck width is {}",
                q.rows(),
                q.cols(),
                f.rank()
            )));
        }
        let w_q = solve(&q.transpose(), &Matrix::col_vector(&f.w))?.col(0);
        let h_q = q.matmul(&f.h);
        Ok(MirageMember { q, h_q, w_q })
    }

    pub fn factorization(&self) -> Result<LinearFactorization> {
        LinearFactorization::new(self.h_q.clone(), self.w_q.clone())
    }

    /// `‖w_Qᵀ H_Q − wᵀH‖ / ‖wᵀH‖`.
    pub fn composition_error(&self, f: &LinearFactorization) -> f64 {
        let a = self.h_q.tr_matvec(&self.w_q);
        let b = f.composite();
        let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }
}

/// `n` members with `Q = I + G/√r`, `G` standard Gaussian, keeping only
/// draws with `cond(Q) ≤ cond_max`.
pub fn mirage_family(
    f: &LinearFactorization,
    n: usize,
    rng: &mut RngStream,
    cond_max: f64,
) -> Result<Vec<MirageMember>> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "family size must be at least 1".into(),
        ));
    }
    if !(cond_max >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "cond_max must be >= 1, got {cond_max}"
        )));
    }
    let r = f.rank();
    let scale = 1.0 / (r as f64).sqrt();
    let budget = ATTEMPTS_PER_MEMBER * n;
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        if attempts == budget {
            return Err(Error::RejectionExhausted { attempts });
        }
        attempts += 1;
        let g = rng.gaussian(r * r);
        let q = Matrix::from_fn(r, r, |i, j| (i == j) as u8 as f64 + scale * g[i * r + j]);
        if svd(&q)?.condition_number() > cond_max {
            continue;
        }
        out.push(MirageMember::from_q(f, q)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberCheck {
    /// `max |f_Q(x) − f(x)| / max |f(x)|` over the probed inputs.
    pub output_deviation: f64,
    pub composition_error: f64,
    pub q_distance: f64,
    pub h_distance: f64,
    pub condition_number: f64,
}

/// Evaluate both pipelines at every row of `xs` and compare.
pub fn check_member(f: &LinearFactorization, m: &MirageMember, xs: &Matrix) -> Result<MemberCheck> {
    let base = f.pipeline()?.predict_batch(xs)?;
    let alt = compose_two_module_linear(&m.h_q, &m.w_q)?.predict_batch(xs)?;
    let scale = base.max_abs();
    let dev = base.sub(&alt).max_abs();
    Ok(MemberCheck {
        output_deviation: if scale > 0.0 { dev / scale } else { dev },
        composition_error: m.composition_error(f),
        q_distance: m.q.sub(&Matrix::identity(f.rank())).frobenius_norm(),
        h_distance: m.h_q.rel_distance(&f.h),
        condition_number: svd(&m.q)?.condition_number(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub factorization: LinearFactorization,
    /// Largest `‖A_s − A_0‖_F / ‖A_0‖_F` over bases.
    pub jacobian_spread: f64,
    /// `‖Zw − f‖ / ‖f‖` for the least-squares fit of `w`.
    pub output_residual: f64,
}

/// `H` is the common bottleneck jacobian, `w` the least-squares solution of
/// `wᵀ(Hx_i) = f(x_i)`.
pub fn recover_factorization(jets: &[Jet], outputs: &[(Vector, f64)]) -> Result<Recovery> {
    let first = jets
        .first()
        .ok_or_else(|| Error::InvalidParameter("no jets".into()))?;
    let h = first.jacobian.clone();
    let norm0 = h.frobenius_norm();
    if !(norm0 > 0.0) {
        return Err(Error::Unidentifiable("bottleneck jacobian is zero".into()));
    }
    let mut spread: f64 = 0.0;
    for j in &jets[1..] {
        if j.jacobian.shape() != h.shape() {
            return Err(Error::Shape("jets have different shapes".into()));
        }
        spread = spread.max(j.jacobian.sub(&h).frobenius_norm() / norm0);
    }
    if spread > LINEARITY_TOL {
        return Err(Error::NotLinear { spread });
    }
    let (r, d) = h.shape();
    if !full_row_rank(&h)? {
        return Err(Error::Unidentifiable(format!(
            "bottleneck jacobian ({r}x{d}) lacks full row rank"
        )));
    }

    if outputs.len() < d + 1 {
        return Err(Error::DegenerateSupport);
    }
    let aug = Matrix::from_fn(outputs.len(), d + 1, |i, j| {
        if j < d {
            outputs[i].0[j]
        } else {
            1.0
        }
    });
    if outputs.iter().any(|(x, _)| x.len() != d) {
        return Err(Error::Shape(
            "base point dimension differs from jets".into(),
        ));
    }
    let s = singular_values(&aug)?;
    if s[d] <= FULL_RANK_TOL * s[0] {
        return Err(Error::DegenerateSupport);
    }

    let xs = aug.top_cols(d);
    let z = xs.matmul_t(&h);
    let y: Vec<f64> = outputs.iter().map(|(_, v)| *v).collect();
    let w = solve_spd(&z.gram(), &Matrix::col_vector(&z.tr_matvec(&y)))?.col(0);
    let fit = z.matvec(&w);
    let res: f64 = fit
        .iter()
        .zip(&y)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let ynorm = dot(&y, &y).sqrt();
    Ok(Recovery {
        factorization: LinearFactorization::new(h, w)?,
        jacobian_spread: spread,
        output_residual: if ynorm > 0.0 { res / ynorm } else { res },
    })
}

/// Estimate the bottleneck jet of the noiseless pipeline `x ↦ Hx` with no
/// ridge and return `‖A − H‖_F / ‖H‖_F`.
pub fn corollary_check(h: &Matrix, batch: &ProbeBatch) -> Result<f64> {
    let p = compose_two_module_linear(h, &vec![1.0; h.rows()])?;
    let x0 = vec![0.0; h.cols()];
    let jet = estimate_jet(&p, BOTTLENECK_TAP, &x0, batch, RidgePolicy::Zero)?;
    Ok(jet.jacobian.rel_distance(h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jets::estimate_jets_over_bases;
    use crate::probes::{sample_probes, ProbeDesign};

    fn factorization() -> LinearFactorization {
        let h = Matrix::from_rows(&[[1.0, 0.5, 0.0, -1.0], [0.0, 2.0, 1.0, 0.3]]).unwrap();
        LinearFactorization::new(h, vec![0.7, -1.2]).unwrap()
    }

    fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vector> {
        let mut rng = RngStream::new(seed, 1);
        (0..n).map(|_| rng.gaussian(d)).collect()
    }

    fn jets_and_outputs(f: &LinearFactorization, seed: u64) -> (Vec<Jet>, Vec<(Vector, f64)>) {
        let p = f.pipeline().unwrap();
        let xs = random_points(f.dim() + 3, f.dim(), seed);
        let jets = estimate_jets_over_bases(
            &p,
            BOTTLENECK_TAP,
            &xs,
            &ProbeDesign::isotropic(0.1, 2 * f.dim()),
            RidgePolicy::Zero,
            &RngStream::new(seed, 2),
        )
        .unwrap();
        let outs = xs
            .iter()
            .map(|x| (x.clone(), p.evaluate(x).unwrap().output[0]))
            .collect();
        (jets, outs)
    }

    #[test]
    fn identity_and_scalar_members() {
        let f = factorization();
        let id = MirageMember::from_q(&f, Matrix::identity(2)).unwrap();
        assert_eq!(id.h_q, f.h);
        assert_eq!(id.w_q, f.w);
        let two = MirageMember::from_q(&f, Matrix::identity(2).scale(2.0)).unwrap();
        assert_eq!(two.h_q, f.h.scale(2.0));
        assert!(two
            .w_q
            .iter()
            .zip(&f.w)
            .all(|(a, b)| (a - b / 2.0).abs() < 1e-15));
        assert!(two.composition_error(&f) < 1e-15);
    }

    #[test]
    fn family_preserves_outputs() {
        let f = factorization();
        let fam = mirage_family(&f, 20, &mut RngStream::new(1, 6), DEFAULT_COND_MAX).unwrap();
        let xs = Matrix::from_rows(&random_points(1000, 4, 2)).unwrap();
        for m in &fam {
            let c = check_member(&f, m, &xs).unwrap();
            assert!(c.output_deviation <= 1e-9, "{c:?}");
            assert!(c.composition_error <= 1e-10);
            assert!(c.condition_number <= DEFAULT_COND_MAX);
        }
    }

    #[test]
    fn family_rejection_exhausts() {
        let f = factorization();
        assert!(matches!(
            mirage_family(&f, 3, &mut RngStream::new(1, 6), 1.0),
            Err(Error::RejectionExhausted { .. })
        ));
    }

    #[test]
    fn recovers_exact_factorization() {
        let f = factorization();
        let (jets, outs) = jets_and_outputs(&f, 3);
        let rec = recover_factorization(&jets, &outs).unwrap();
        assert!(rec.factorization.h.rel_distance(&f.h) < 1e-10);
        let w_err: f64 = rec
            .factorization
            .w
            .iter()
            .zip(&f.w)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(w_err < 1e-10);
        assert!(rec.output_residual < 1e-12);
    }

    #[test]
    fn recovery_returns_the_member_exposed() {
        let f = factorization();
        let q = Matrix::from_rows(&[[1.5, 0.2], [-0.4, 0.9]]).unwrap();
        let m = MirageMember::from_q(&f, q).unwrap();
        let g = m.factorization().unwrap();
        let (jets, outs) = jets_and_outputs(&g, 4);
        let rec = recover_factorization(&jets, &outs).unwrap();
        assert!(rec.factorization.h.rel_distance(&m.h_q) < 1e-10);
        assert!(rec.factorization.h.rel_distance(&f.h) > 0.1);
    }

    #[test]
    fn recovery_errors() {
        let h = Matrix::from_rows(&[[1.0, 2.0, 0.0], [1.0, 2.0, 0.0]]).unwrap();
        let f = LinearFactorization::new(h, vec![1.0, 1.0]).unwrap();
        assert!(!f.full_row_rank);
        let (jets, outs) = jets_and_outputs(&f, 5);
        assert!(matches!(
            recover_factorization(&jets, &outs),
            Err(Error::Unidentifiable(_))
        ));

        let f = factorization();
        let (mut jets, outs) = jets_and_outputs(&f, 6);
        jets[1].jacobian = jets[1].jacobian.scale(1.01);
        assert!(matches!(
            recover_factorization(&jets, &outs),
            Err(Error::NotLinear { .. })
        ));

        let (jets, _) = jets_and_outputs(&f, 7);
        let flat: Vec<(Vector, f64)> = (0..8)
            .map(|i| {
                let x = vec![i as f64, 1.0, 0.0, 2.0];
                let y = dot(&f.composite(), &x);
                (x, y)
            })
            .collect();
        assert!(matches!(
            recover_factorization(&jets, &flat),
            Err(Error::DegenerateSupport)
        ));
    }

    #[test]
    fn corollary_examples() {
        let h = Matrix::from_fn(3, 8, |i, j| ((i * 8 + j) as f64 * 0.37).sin());
        let eye = ProbeBatch::new(
            Matrix::identity(8),
            ProbeDesign::explicit(Matrix::identity(8)),
        )
        .unwrap();
        assert!(corollary_check(&h, &eye).unwrap() <= 1e-12);
        let batch = sample_probes(
            &ProbeDesign::isotropic(1.0, 16),
            8,
            &mut RngStream::new(2, 2),
        )
        .unwrap();
        assert!(corollary_check(&h, &batch).unwrap() <= 1e-10);
        let few = sample_probes(
            &ProbeDesign::isotropic(1.0, 5),
            8,
            &mut RngStream::new(2, 2),
        )
        .unwrap();
        assert!(matches!(
            corollary_check(&h, &few),
            Err(Error::RankDeficient { .. })
        ));
    }
}

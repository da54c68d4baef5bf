use mojet::diagnostics::{
    jet_sim, numerical_rank, principal_cosines, select_k_variance_matrices, RetainRule,
};
use mojet::identifiability::{
    check_member, mirage_family, recover_factorization, LinearFactorization, DEFAULT_COND_MAX,
};
use mojet::jets::{estimate_jets_over_bases, JetSolver, RidgePolicy};
use mojet::numerics::{singular_values, solve_spd, svd, Matrix, RngStream, Vector};
use mojet::pipeline::BOTTLENECK_TAP;
use mojet::probes::{sample_probes, ProbeBatch, ProbeDesign};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = RngStream::new(seed, 100);
    Matrix::from_fn(rows, cols, |_, _| rng.standard_normal())
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..9, 1usize..9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_matches_nalgebra((r, c) in dims(), seed in any::<u64>()) {
        let m = gaussian(r, c, seed);
        let ours = svd(&m).unwrap();
        let mut theirs: Vec<f64> = to_na(&m).singular_values().iter().copied().collect();
        theirs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        prop_assert_eq!(ours.s.len(), theirs.len());
        for (a, b) in ours.s.iter().zip(&theirs) {
            prop_assert!((a - b).abs() <= 1e-12 * theirs[0].max(1.0));
        }
        prop_assert!(rel_err(&ours.reconstruct(), &m) < 1e-12);
        let vvt = ours.vt.matmul_t(&ours.vt);
        prop_assert!(vvt.sub(&Matrix::identity(vvt.rows())).max_abs() < 1e-12);
    }

    #[test]
    fn solve_spd_matches_cholesky_oracle(n in 1usize..10, k in 1usize..4, seed in any::<u64>()) {
        let g = gaussian(n + 3, n, seed);
        let a = g.gram().add_diag(0.1);
        let b = gaussian(n, k, seed ^ 1);
        let ours = solve_spd(&a, &b).unwrap();
        let chol = to_na(&a).cholesky().unwrap();
        let theirs = from_na(&chol.solve(&to_na(&b)));
        prop_assert!(rel_err(&ours, &theirs) < 1e-10);
    }

    /// Ridge jacobian from the cached normal equations against QR on the
    /// augmented least-squares system `[Δ; √λ I] Aᵀ = [Y; 0]`.
    #[test]
    fn ridge_jacobian_matches_qr(
        d in 1usize..8,
        extra in 0usize..8,
        out in 1usize..5,
        lam in prop::sample::select(vec![0.0, 1e-4, 1.0]),
        seed in any::<u64>(),
    ) {
        let j = d + extra;
        let delta = gaussian(j, d, seed);
        let y = gaussian(j, out, seed ^ 7);
        let batch = ProbeBatch::new(delta.clone(), ProbeDesign::explicit(delta.clone())).unwrap();
        let policy = if lam == 0.0 { RidgePolicy::Zero } else { RidgePolicy::Fixed { lambda: lam } };
        let ours = JetSolver::new(batch, policy).unwrap().jacobian(&y).unwrap();

        let mut aug = DMatrix::<f64>::zeros(j + d, d);
        aug.view_mut((0, 0), (j, d)).copy_from(&to_na(&delta));
        let mut rhs = DMatrix::<f64>::zeros(j + d, out);
        rhs.view_mut((0, 0), (j, out)).copy_from(&to_na(&y));
        for i in 0..d {
            aug[(j + i, i)] = lam.sqrt();
        }
        let qr = aug.qr();
        let qtb = qr.q().transpose() * rhs;
        let at = qr.r().solve_upper_triangular(&qtb).unwrap();
        let theirs = from_na(&at.transpose());
        prop_assert!(rel_err(&ours, &theirs) < 1e-8, "err {}", rel_err(&ours, &theirs));
    }

    #[test]
    fn jetsim_algebra(m in 1usize..5, n in 1usize..5, d in 2usize..9, seed in any::<u64>()) {
        let a = gaussian(m, d, seed);
        let b = gaussian(n, d, seed ^ 3);
        let r = RetainRule::default();
        let ab = jet_sim(&a, &b, r).unwrap().score;
        let ba = jet_sim(&b, &a, r).unwrap().score;
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((jet_sim(&a, &a, r).unwrap().score - 1.0).abs() < 1e-12);

        // Left multiplication by an invertible matrix keeps the row space.
        let l = gaussian(m, m, seed ^ 5).add_diag(3.0);
        let la = l.matmul(&a);
        prop_assert!((jet_sim(&la, &b, r).unwrap().score - ab).abs() < 1e-10);
    }

    #[test]
    fn rank_monotone_in_tolerance(r in 1usize..8, c in 1usize..8, seed in any::<u64>(), t1 in 1e-12f64..1e-1, t2 in 1e-12f64..1e-1) {
        // Geometrically spread spectrum so that tolerances actually bite.
        let k = r.min(c);
        let dec = svd(&gaussian(r, c, seed)).unwrap();
        let s: Vec<f64> = (0..k).map(|i| 10f64.powi(-(i as i32) * 2)).collect();
        let m = Matrix::from_fn(r, k, |i, j| dec.u[(i, j)] * s[j]).matmul(&dec.vt);
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(numerical_rank(&m, lo).rank >= numerical_rank(&m, hi).rank);
        prop_assert!(numerical_rank(&m, lo).rank <= k);
        let scaled = numerical_rank(&m.scale(1e3), hi).rank;
        prop_assert_eq!(scaled, numerical_rank(&m, hi).rank);
    }

    #[test]
    fn mirage_members_are_closed_under_composition(r in 1usize..4, extra in 0usize..4, seed in any::<u64>()) {
        let d = r + extra;
        let f = LinearFactorization::new(gaussian(r, d, seed), gaussian(1, r, seed ^ 9).row(0).to_vec()).unwrap();
        let fam = mirage_family(&f, 5, &mut RngStream::new(seed, 6), DEFAULT_COND_MAX).unwrap();
        let xs = gaussian(50, d, seed ^ 11);
        for m in &fam {
            let c = check_member(&f, m, &xs).unwrap();
            prop_assert!(c.output_deviation <= 1e-9);
            prop_assert!(c.condition_number <= DEFAULT_COND_MAX);
            // A member of a member's family is still a member of the original.
            let g = m.factorization().unwrap();
            let inner = mirage_family(&g, 1, &mut RngStream::new(seed ^ 13, 6), DEFAULT_COND_MAX).unwrap();
            prop_assert!(inner[0].composition_error(&f) < 1e-8);
        }
    }

    #[test]
    fn recovery_is_idempotent(r in 1usize..4, extra in 0usize..4, seed in any::<u64>()) {
        let d = r + extra;
        let f = LinearFactorization::new(gaussian(r, d, seed), vec![1.0; r]).unwrap();
        prop_assume!(f.full_row_rank);
        let recover = |f: &LinearFactorization| {
            let p = f.pipeline().unwrap();
            let xs: Vec<Vector> = gaussian(d + 3, d, seed ^ 17).to_rows();
            let jets = estimate_jets_over_bases(
                &p, BOTTLENECK_TAP, &xs, &ProbeDesign::isotropic(0.5, 2 * d),
                RidgePolicy::Zero, &RngStream::new(seed, 2),
            ).unwrap();
            let outs: Vec<(Vector, f64)> = xs.iter().map(|x| (x.clone(), p.evaluate(x).unwrap().output[0])).collect();
            recover_factorization(&jets, &outs).unwrap().factorization
        };
        let once = recover(&f);
        let twice = recover(&once);
        prop_assert!(rel_err(&once.h, &f.h) < 1e-9);
        prop_assert!(rel_err(&twice.h, &once.h) < 1e-9);
        let dw: f64 = twice.w.iter().zip(&once.w).map(|(a, b)| (a - b).abs()).sum();
        prop_assert!(dw < 1e-8);
    }

    #[test]
    fn variance_rule_within_bounds(n in 1usize..4, d in 1usize..8, seed in any::<u64>(), rho in 0.05f64..0.99) {
        let mats: Vec<Matrix> = (0..n).map(|i| gaussian(2, d, seed ^ i as u64)).collect();
        let refs: Vec<&Matrix> = mats.iter().collect();
        let k = select_k_variance_matrices(&refs, rho).unwrap();
        prop_assert!(k >= 1 && k <= d.min(2 * n));
    }
}

#[test]
fn single_principal_angle_by_hand() {
    for deg in [0.0f64, 30.0, 60.0, 89.0] {
        let t = deg.to_radians();
        let a = Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[[t.cos(), t.sin(), 0.0]]).unwrap();
        let s = jet_sim(&a, &b, RetainRule::default()).unwrap().score;
        assert!((s - t.cos()).abs() < 1e-12, "{deg}: {s}");
    }
}

#[test]
fn principal_cosines_of_orthogonal_planes() {
    let va = Matrix::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]).unwrap();
    let vb = Matrix::from_rows(&[[0.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 0.0]]).unwrap();
    let c = principal_cosines(&va, &vb).unwrap();
    assert!((c[0] - 1.0).abs() < 1e-15 && c[1].abs() < 1e-15);
}

#[test]
fn shared_probes_are_full_rank_when_j_exceeds_d() {
    let b = sample_probes(
        &ProbeDesign::isotropic(1e-2, 16),
        8,
        &mut RngStream::new(0, 2),
    )
    .unwrap();
    let s = singular_values(b.delta()).unwrap();
    assert!(s[7] > 1e-10 * s[0]);
}

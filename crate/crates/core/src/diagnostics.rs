//! Rank, subspace similarity and aggregation of jets into a report.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jets::Jet;
use crate::numerics::{singular_values, svd, Matrix};

pub const DEFAULT_RANK_TOL: f64 = 1e-6;
pub const DEFAULT_RHO: f64 = 0.95;
const VARIANCE_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub tol_rel: f64,
}

impl RankResult {
    pub fn s1(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    /// Smallest retained singular value, 0 at rank 0.
    pub fn s_k(&self) -> f64 {
        if self.rank == 0 {
            0.0
        } else {
            self.singular_values[self.rank - 1]
        }
    }
}

/// Count of singular values above `tol_rel · s_1`. Panics on non-finite input.
pub fn numerical_rank(a: &Matrix, tol_rel: f64) -> RankResult {
    assert!(a.is_finite(), "numerical_rank needs a finite matrix");
    let singular_values = if a.rows() == 0 || a.cols() == 0 {
        Vec::new()
    } else {
        singular_values(a).expect("finite non-empty matrix")
    };
    let rank = rank_of(&singular_values, tol_rel);
    RankResult {
        rank,
        singular_values,
        tol_rel,
    }
}

fn rank_of(s: &[f64], tol_rel: f64) -> usize {
    match s.first() {
        Some(&s1) if s1 > 0.0 => s.iter().filter(|&&v| v > tol_rel * s1).count(),
        _ => 0,
    }
}

/// How many leading right singular vectors of a jet span its subspace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RetainRule {
    /// Singular values above `tol_rel · s_1`.
    Relative { tol_rel: f64 },
    /// The leading `k`, capped at the numerical rank (default tolerance).
    Count { k: usize },
}

impl Default for RetainRule {
    fn default() -> Self {
        RetainRule::Relative {
            tol_rel: DEFAULT_RANK_TOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JetSimResult {
    pub score: f64,
    pub k_a: usize,
    pub k_b: usize,
    /// Principal-angle cosines, nonincreasing, `min(k_a, k_b)` of them.
    pub cosines: Vec<f64>,
    /// A `Count` rule asked for more directions than a jet has.
    pub capped: bool,
}

fn row_space(a: &Matrix, retain: RetainRule, which: &str) -> Result<(Matrix, bool)> {
    if !a.is_finite() {
        return Err(Error::NonFinite(format!("jacobian {which}")));
    }
    let dec = svd(a)?;
    let available = rank_of(&dec.s, DEFAULT_RANK_TOL);
    if available == 0 {
        return Err(Error::UndefinedSimilarity(format!(
            "jacobian {which} is zero"
        )));
    }
    let (k, capped) = match retain {
        RetainRule::Relative { tol_rel } => (rank_of(&dec.s, tol_rel), false),
        RetainRule::Count { k } => (k.min(available), k > available),
    };
    if k == 0 {
        return Err(Error::InvalidParameter(
            "retain at least one direction".into(),
        ));
    }
    Ok((dec.vt.top_rows(k), capped))
}

/// Cosines of the principal angles between two subspaces given by
/// orthonormal row bases.
pub fn principal_cosines(va: &Matrix, vb: &Matrix) -> Result<Vec<f64>> {
    let m = va.matmul_t(vb);
    let mut c = singular_values(&m)?;
    c.truncate(va.rows().min(vb.rows()));
    Ok(c.into_iter().map(|x| x.clamp(0.0, 1.0)).collect())
}

/// Similarity of the input-space row subspaces of two jacobians.
///
/// Score is `Σ cos θ_i / √(k_a k_b)`: the mean cosine when both subspaces
/// have the same dimension, and discounted when one is a proper subspace of
/// the other so that nesting alone does not read as agreement.
pub fn jet_sim(a: &Matrix, b: &Matrix, retain: RetainRule) -> Result<JetSimResult> {
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "jacobians act on R^{} and R^{}",
            a.cols(),
            b.cols()
        )));
    }
    let (va, cap_a) = row_space(a, retain, "a")?;
    let (vb, cap_b) = row_space(b, retain, "b")?;
    let cosines = principal_cosines(&va, &vb)?;
    let (k_a, k_b) = (va.rows(), vb.rows());
    let score = (cosines.iter().sum::<f64>() / ((k_a * k_b) as f64).sqrt()).clamp(0.0, 1.0);
    Ok(JetSimResult {
        score,
        k_a,
        k_b,
        cosines,
        capped: cap_a || cap_b,
    })
}

/// Smallest `k` whose leading eigenvalues of `C = AᵀA / N` (all jets
/// stacked row-wise, `N` rows in total) carry a fraction `rho` of the trace.
pub fn select_k_variance(jets: &[Jet], rho: f64) -> Result<usize> {
    let mats: Vec<&Matrix> = jets.iter().map(|j| &j.jacobian).collect();
    select_k_variance_matrices(&mats, rho)
}

pub fn select_k_variance_matrices(mats: &[&Matrix], rho: f64) -> Result<usize> {
    if mats.is_empty() {
        return Err(Error::InvalidParameter("no jets".into()));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rho must lie in (0,1), got {rho}"
        )));
    }
    let d = mats[0].cols();
    let mut c = Matrix::zeros(d, d);
    let mut n = 0;
    for m in mats {
        if m.cols() != d {
            return Err(Error::Shape("jets act on different input spaces".into()));
        }
        c = c.add(&m.gram());
        n += m.rows();
    }
    let c = c.scale(1.0 / n as f64);
    // C is symmetric PSD, so its singular values are its eigenvalues
    let eig = singular_values(&c)?;
    let total: f64 = eig.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateSpectrum("all jets are zero".into()));
    }
    let mut cum = 0.0;
    for (i, e) in eig.iter().enumerate() {
        cum += e;
        if cum >= rho * total * (1.0 - VARIANCE_SLACK) {
            return Ok(i + 1);
        }
    }
    Ok(eig.len())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub p05: f64,
    pub p25: f64,
    pub p75: f64,
    pub p95: f64,
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 100]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary::default();
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Summary {
            count: s.len(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            median: percentile(&s, 50.0),
            min: s[0],
            max: s[s.len() - 1],
            p05: percentile(&s, 5.0),
            p25: percentile(&s, 25.0),
            p75: percentile(&s, 75.0),
            p95: percentile(&s, 95.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub base_id: usize,
    pub rank: usize,
    pub s1: f64,
    pub s_k: f64,
}

/// Per-base ranks for one tap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TapDiagnostics {
    pub label: String,
    pub tol_rel: f64,
    pub entries: Vec<RankEntry>,
}

pub fn tap_diagnostics(label: &str, jets: &[Jet], tol_rel: f64) -> TapDiagnostics {
    let entries = jets
        .iter()
        .enumerate()
        .map(|(base_id, j)| {
            let r = numerical_rank(&j.jacobian, tol_rel);
            RankEntry {
                base_id,
                rank: r.rank,
                s1: r.s1(),
                s_k: r.s_k(),
            }
        })
        .collect();
    TapDiagnostics {
        label: label.to_string(),
        tol_rel,
        entries,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimEntry {
    pub base_id: usize,
    pub score: f64,
    pub k_a: usize,
    pub k_b: usize,
}

/// Per-base JetSim between two taps. Bases where either jet is zero are
/// listed in `undefined`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDiagnostics {
    pub label: String,
    pub a: String,
    pub b: String,
    pub retain: RetainRule,
    pub entries: Vec<SimEntry>,
    pub undefined: Vec<usize>,
    pub capped: usize,
}

pub fn pair_diagnostics(
    label: &str,
    (a, jets_a): (&str, &[Jet]),
    (b, jets_b): (&str, &[Jet]),
    retain: RetainRule,
) -> Result<PairDiagnostics> {
    if jets_a.len() != jets_b.len() {
        return Err(Error::Shape(format!(
            "pair `{label}`: {} vs {} base points",
            jets_a.len(),
            jets_b.len()
        )));
    }
    let mut out = PairDiagnostics {
        label: label.to_string(),
        a: a.to_string(),
        b: b.to_string(),
        retain,
        entries: Vec::new(),
        undefined: Vec::new(),
        capped: 0,
    };
    for (base_id, (ja, jb)) in jets_a.iter().zip(jets_b).enumerate() {
        match jet_sim(&ja.jacobian, &jb.jacobian, retain) {
            Ok(r) => {
                out.capped += r.capped as usize;
                out.entries.push(SimEntry {
                    base_id,
                    score: r.score,
                    k_a: r.k_a,
                    k_b: r.k_b,
                });
            }
            Err(Error::UndefinedSimilarity(_)) => out.undefined.push(base_id),
            Err(e) => return Err(Error::at_base(base_id, e)),
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MirageFlag {
    MirageLike,
    Separated,
    Mixed,
}

/// Decision thresholds for [`MirageFlag`]. These are reporting policy, not
/// derived quantities; raw scores are always reported next to the flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MirageThresholds {
    pub hi: f64,
    pub lo: f64,
}

impl Default for MirageThresholds {
    fn default() -> Self {
        MirageThresholds { hi: 0.95, lo: 0.7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TapSummary {
    pub label: String,
    pub tol_rel: f64,
    pub rank: Summary,
    pub entries: Vec<RankEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub label: String,
    pub a: String,
    pub b: String,
    pub retain: RetainRule,
    pub jetsim: Summary,
    pub median_rank_a: f64,
    pub median_rank_b: f64,
    pub flag: MirageFlag,
    pub undefined_bases: Vec<usize>,
    pub capped_bases: usize,
    pub entries: Vec<SimEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cost {
    pub probe_passes: u64,
    pub base_passes: u64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub taps: Vec<TapSummary>,
    pub pairs: Vec<PairSummary>,
    pub thresholds: MirageThresholds,
    pub cost: Cost,
}

pub fn mirage_flag(
    scores: &[f64],
    ranks_a: &[usize],
    ranks_b: &[usize],
    t: MirageThresholds,
) -> MirageFlag {
    let mean = Summary::of(scores).mean;
    let mut sa = ranks_a.to_vec();
    let mut sb = ranks_b.to_vec();
    sa.sort_unstable();
    sb.sort_unstable();
    let med = |v: &[usize]| Summary::of(&v.iter().map(|&r| r as f64).collect::<Vec<_>>()).median;
    if !scores.is_empty() && mean >= t.hi && sa == sb {
        MirageFlag::MirageLike
    } else if scores.is_empty() || mean <= t.lo || med(&sa) != med(&sb) {
        MirageFlag::Separated
    } else {
        MirageFlag::Mixed
    }
}

pub fn aggregate(
    taps: Vec<TapDiagnostics>,
    pairs: Vec<PairDiagnostics>,
    thresholds: MirageThresholds,
    cost: Cost,
) -> Result<DiagnosticsReport> {
    if taps.is_empty() {
        return Err(Error::InvalidParameter("nothing to aggregate".into()));
    }
    let find = |label: &str| {
        taps.iter()
            .find(|t| t.label == label)
            .ok_or_else(|| Error::UnknownTap(label.to_string()))
    };
    let mut pair_out = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (ta, tb) = (find(&p.a)?, find(&p.b)?);
        let n = p.entries.len() + p.undefined.len();
        if ta.entries.len() != n || tb.entries.len() != n {
            return Err(Error::Shape(format!(
                "pair `{}` covers {n} bases, taps have {} and {}",
                p.label,
                ta.entries.len(),
                tb.entries.len()
            )));
        }
        let scores: Vec<f64> = p.entries.iter().map(|e| e.score).collect();
        let ra: Vec<usize> = ta.entries.iter().map(|e| e.rank).collect();
        let rb: Vec<usize> = tb.entries.iter().map(|e| e.rank).collect();
        let med =
            |v: &[usize]| Summary::of(&v.iter().map(|&r| r as f64).collect::<Vec<_>>()).median;
        pair_out.push(PairSummary {
            flag: mirage_flag(&scores, &ra, &rb, thresholds),
            jetsim: Summary::of(&scores),
            median_rank_a: med(&ra),
            median_rank_b: med(&rb),
            label: p.label,
            a: p.a,
            b: p.b,
            retain: p.retain,
            undefined_bases: p.undefined,
            capped_bases: p.capped,
            entries: p.entries,
        });
    }
    let tap_out = taps
        .into_iter()
        .map(|t| TapSummary {
            rank: Summary::of(&t.entries.iter().map(|e| e.rank as f64).collect::<Vec<_>>()),
            label: t.label,
            tol_rel: t.tol_rel,
            entries: t.entries,
        })
        .collect();
    Ok(DiagnosticsReport {
        taps: tap_out,
        pairs: pair_out,
        thresholds,
        cost,
    })
}

/// Float text used in every CSV: 17 significant digits.
pub fn csv_float(x: f64) -> String {
    format!("{x:.16e}")
}

impl DiagnosticsReport {
    pub fn tap(&self, label: &str) -> Option<&TapSummary> {
        self.taps.iter().find(|t| t.label == label)
    }

    pub fn pair(&self, label: &str) -> Option<&PairSummary> {
        self.pairs.iter().find(|p| p.label == label)
    }

    pub fn write_ranks_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["base_id", "tap", "rank", "s1", "s_k"])?;
        for t in &self.taps {
            for e in &t.entries {
                out.write_record([
                    e.base_id.to_string(),
                    t.label.clone(),
                    e.rank.to_string(),
                    csv_float(e.s1),
                    csv_float(e.s_k),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_jetsim_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["base_id", "pair", "score"])?;
        for p in &self.pairs {
            for e in &p.entries {
                out.write_record([e.base_id.to_string(), p.label.clone(), csv_float(e.score)])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        self.write_ranks_csv(std::fs::File::create(dir.join("ranks.csv"))?)?;
        self.write_jetsim_csv(std::fs::File::create(dir.join("jetsim.csv"))?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m<const N: usize>(rows: &[[f64; N]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn jet(jacobian: Matrix) -> Jet {
        Jet {
            tap: "t".into(),
            base_point: vec![0.0; jacobian.cols()],
            base_value: vec![0.0; jacobian.rows()],
            jacobian,
            lambda_used: 0.0,
        }
    }

    #[test]
    fn rank_examples() {
        assert_eq!(
            numerical_rank(&Matrix::from_diag(&[1.0, 1e-12]), 1e-6).rank,
            1
        );
        let z = numerical_rank(&Matrix::zeros(3, 4), 1e-6);
        assert_eq!((z.rank, z.s1(), z.s_k()), (0, 0.0, 0.0));
        let r = numerical_rank(&Matrix::from_diag(&[2.0, 0.5, 0.0]), 1e-6);
        assert_eq!((r.rank, r.s1(), r.s_k()), (2, 2.0, 0.5));
    }

    #[test]
    fn jetsim_examples() {
        let a = m(&[[1.0, 2.0, 0.0], [0.0, 1.0, 3.0]]);
        assert!((jet_sim(&a, &a, RetainRule::default()).unwrap().score - 1.0).abs() < 1e-12);

        let e1 = m(&[[1.0, 0.0]]);
        let e2 = m(&[[0.0, 1.0]]);
        assert!(
            jet_sim(&e1, &e2, RetainRule::default())
                .unwrap()
                .score
                .abs()
                < 1e-15
        );

        let t = 60f64.to_radians();
        let r = jet_sim(
            &m(&[[1.0, 0.0, 0.0]]),
            &m(&[[t.cos(), t.sin(), 0.0]]),
            RetainRule::default(),
        )
        .unwrap();
        assert!((r.score - 0.5).abs() < 1e-12);
        assert_eq!(r.cosines.len(), 1);
    }

    #[test]
    fn nested_subspaces_discounted() {
        // e1 inside span(e1, e2, e3, e4): one unit cosine over sqrt(1·4)
        let r = jet_sim(
            &m(&[[2.0, 0.0, 0.0, 0.0]]),
            &Matrix::identity(4),
            RetainRule::default(),
        )
        .unwrap();
        assert_eq!((r.k_a, r.k_b, r.cosines.len()), (1, 4, 1));
        assert!((r.score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn count_rule_caps_at_rank() {
        let a = Matrix::from_diag(&[3.0, 2.0, 0.0]);
        let r = jet_sim(&a, &Matrix::identity(3), RetainRule::Count { k: 3 }).unwrap();
        assert!(r.capped);
        assert_eq!((r.k_a, r.k_b), (2, 3));
        let r = jet_sim(&a, &Matrix::identity(3), RetainRule::Count { k: 1 }).unwrap();
        assert!(!r.capped);
        assert!((r.score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jetsim_errors() {
        assert!(matches!(
            jet_sim(
                &Matrix::zeros(2, 2),
                &Matrix::identity(2),
                RetainRule::default()
            ),
            Err(Error::UndefinedSimilarity(_))
        ));
        assert!(matches!(
            jet_sim(
                &Matrix::identity(2),
                &Matrix::identity(3),
                RetainRule::default()
            ),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn variance_rule_examples() {
        let one = jet(Matrix::from_diag(&[1.0, 0.0, 0.0]));
        for rho in [0.1, 0.5, 0.99] {
            assert_eq!(
                select_k_variance(std::slice::from_ref(&one), rho).unwrap(),
                1
            );
        }
        let j = jet(Matrix::from_diag(&[3.0, 1.0]));
        assert_eq!(select_k_variance(std::slice::from_ref(&j), 0.9).unwrap(), 1);
        assert_eq!(select_k_variance(&[j], 0.95).unwrap(), 2);
        assert!(matches!(
            select_k_variance(&[jet(Matrix::zeros(2, 2))], 0.9),
            Err(Error::DegenerateSpectrum(_))
        ));
    }

    #[test]
    fn percentile_matches_linear_interpolation() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&s, 50.0), 2.5);
        assert_eq!(percentile(&s, 0.0), 1.0);
        assert_eq!(percentile(&s, 100.0), 4.0);
        assert!((percentile(&s, 25.0) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn flags() {
        let t = MirageThresholds::default();
        assert_eq!(
            mirage_flag(&[1.0; 4], &[3; 4], &[3; 4], t),
            MirageFlag::MirageLike
        );
        assert_eq!(
            mirage_flag(&[0.65; 4], &[10; 4], &[18; 4], t),
            MirageFlag::Separated
        );
        assert_eq!(
            mirage_flag(&[0.999986; 4], &[10; 4], &[10; 4], t),
            MirageFlag::MirageLike
        );
        assert_eq!(
            mirage_flag(&[0.8; 4], &[3; 4], &[3; 4], t),
            MirageFlag::Mixed
        );
        assert_eq!(
            mirage_flag(&[0.99; 3], &[3, 3, 3], &[3, 3, 2], t),
            MirageFlag::Mixed
        );
    }

    #[test]
    fn aggregate_and_csv() {
        let ja = vec![jet(Matrix::identity(2)), jet(m(&[[1.0, 0.0]]))];
        let jb = vec![jet(m(&[[1.0, 0.0]])), jet(Matrix::zeros(1, 2))];
        let taps = vec![
            tap_diagnostics("a", &ja, 1e-6),
            tap_diagnostics("b", &jb, 1e-6),
        ];
        let pair = pair_diagnostics("a~b", ("a", &ja), ("b", &jb), RetainRule::default()).unwrap();
        assert_eq!(pair.undefined, vec![1]);
        let rep = aggregate(
            taps,
            vec![pair],
            MirageThresholds::default(),
            Cost::default(),
        )
        .unwrap();
        assert_eq!(rep.tap("a").unwrap().rank.mean, 1.5);
        let p = rep.pair("a~b").unwrap();
        assert_eq!(p.jetsim.count, 1);
        assert!((p.jetsim.mean - 1.0 / 2f64.sqrt()).abs() < 1e-12);

        let mut buf = Vec::new();
        rep.write_ranks_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("base_id,tap,rank,s1,s_k\n0,a,2,"));
        let mut buf = Vec::new();
        rep.write_jetsim_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    }

    #[test]
    fn aggregate_rejects_inconsistent_bases() {
        let ja = vec![jet(Matrix::identity(2))];
        let jb = vec![jet(Matrix::identity(2)); 2];
        let taps = vec![
            tap_diagnostics("a", &ja, 1e-6),
            tap_diagnostics("b", &jb, 1e-6),
        ];
        let pair = pair_diagnostics("a~a", ("a", &ja), ("a", &ja), RetainRule::default()).unwrap();
        let bad = PairDiagnostics {
            b: "b".into(),
            ..pair
        };
        assert!(aggregate(
            taps,
            vec![bad],
            MirageThresholds::default(),
            Cost::default()
        )
        .is_err());
        assert!(aggregate(vec![], vec![], MirageThresholds::default(), Cost::default()).is_err());
    }

    #[test]
    fn csv_float_round_trips() {
        for x in [0.1, 1.0 / 3.0, 12800.0, 1e-300, -2.5e17] {
            assert_eq!(csv_float(x).parse::<f64>().unwrap(), x);
        }
    }
}

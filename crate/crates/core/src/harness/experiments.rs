use std::collections::BTreeMap;
use std::time::Instant;

use serde_json::{json, Value};

use super::config::{Experiment, ExperimentConfig};
use super::data::{
    gen_latent_regression, gen_linreg, gen_mixture_classification, read_digits_csv, split_digits,
    synthetic_digits, MixtureSpec, LATENT_A, LATENT_B, LATENT_X_NOISE,
};
use super::{CostRow, ExperimentReport, Provenance, SweepRow};
use crate::diagnostics::{
    aggregate, pair_diagnostics, select_k_variance, tap_diagnostics, Cost, DiagnosticsReport,
    RetainRule,
};
use crate::error::{Error, Result};
use crate::jets::{Jet, JetPlan};
use crate::numerics::{streams, Matrix, RngStream, Vector};
use crate::pipeline::{ModuleSpec, Pipeline, Tap};
use crate::probes::ProbeDesign;
use crate::training::{
    classification_error, fit_logistic, fit_ols, fit_pca, fit_standardize, regression_mse,
    train_mlp, Dataset,
};

/// Number of rows in the digits data set, also used for the synthetic stand-in.
const DIGITS_ROWS: usize = 1797;

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::in_stage(name, e))
}

#[derive(Clone, Debug)]
pub struct Model {
    pub name: String,
    pub pipeline: Pipeline,
    pub tap: String,
}

/// A named probe family; `stream` selects the probe random stream so that
/// the same family draws the same directions across runs and sweeps.
#[derive(Clone, Debug)]
pub struct Family {
    pub name: String,
    pub stream: u64,
    pub design: ProbeDesign,
}

impl Family {
    pub fn coarse(sigma: f64, j: usize) -> Self {
        Family {
            name: "coarse".into(),
            stream: 0,
            design: ProbeDesign::isotropic(sigma, j),
        }
    }
}

/// Trained models of a two-model experiment, ready for probing.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub models: Vec<Model>,
    /// Held-out inputs, in the models' input space.
    pub test_inputs: Matrix,
    /// Basis for the aligned (or structured) probe family.
    pub aligned: Family,
    pub metrics: BTreeMap<String, f64>,
    pub details: BTreeMap<String, Value>,
    pub choices: BTreeMap<String, String>,
    pub data_source: String,
    pub logs: BTreeMap<String, LossLog>,
}

impl Prepared {
    pub fn bases(&self, s: usize) -> Result<Vec<Vector>> {
        if s > self.test_inputs.rows() {
            return Err(Error::Config(format!(
                "{s} base inputs requested, only {} test rows",
                self.test_inputs.rows()
            )));
        }
        Ok(self.test_inputs.top_rows(s).to_rows())
    }
}

pub struct Comparison {
    pub report: DiagnosticsReport,
    /// `jets[(family, model)]`, one per base.
    pub jets: BTreeMap<(String, String), Vec<Jet>>,
}

fn tap_label(family: &str, m: &Model) -> String {
    format!("{family}/{}.{}", m.name, m.tap)
}

/// Jets of every model at every base under every family, with probes shared
/// across models, then ranks, pairwise JetSim and forward-pass cost.
pub fn compare(
    cfg: &ExperimentConfig,
    models: &[Model],
    families: &[Family],
    bases: &[Vector],
    retain: RetainRule,
) -> Result<Comparison> {
    let start = Instant::now();
    models.iter().for_each(|m| m.pipeline.reset_counter());
    let mut taps = Vec::new();
    let mut pairs = Vec::new();
    let mut jets = BTreeMap::new();
    for fam in families {
        let plan = JetPlan {
            design: fam.design.clone(),
            ridge: cfg.ridge,
            sharing: cfg.sharing,
            parallel: cfg.parallel,
        };
        let rng = RngStream::new(cfg.seed, streams::PROBES).derive(fam.stream);
        for m in models {
            let js: Vec<Jet> = stage(
                &format!("jets {}/{}", fam.name, m.name),
                plan.run(&m.pipeline, &[&m.tap], bases, &rng),
            )?
            .into_iter()
            .map(|mut v| v.remove(0))
            .collect();
            taps.push(tap_diagnostics(&tap_label(&fam.name, m), &js, cfg.rank_tol));
            jets.insert((fam.name.clone(), m.name.clone()), js);
        }
        for (i, a) in models.iter().enumerate() {
            for b in &models[i + 1..] {
                let ja = &jets[&(fam.name.clone(), a.name.clone())];
                let jb = &jets[&(fam.name.clone(), b.name.clone())];
                pairs.push(stage(
                    "jetsim",
                    pair_diagnostics(
                        &format!("{}/{}~{}", fam.name, a.name, b.name),
                        (&tap_label(&fam.name, a), ja),
                        (&tap_label(&fam.name, b), jb),
                        retain,
                    ),
                )?);
            }
        }
    }
    let total: u64 = models.iter().map(|m| m.pipeline.forward_passes()).sum();
    let base_passes = (families.len() * models.len() * bases.len()) as u64;
    let cost = Cost {
        probe_passes: total - base_passes,
        base_passes,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let report = aggregate(taps, pairs, cfg.thresholds, cost)?;
    Ok(Comparison { report, jets })
}

fn provenance(
    cfg: &ExperimentConfig,
    data_source: String,
    choices: BTreeMap<String, String>,
) -> Provenance {
    Provenance {
        artifact: "mojet".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        data_source,
        artifact_choices: choices,
    }
}

fn empty_report(cfg: &ExperimentConfig, prov: Provenance) -> ExperimentReport {
    ExperimentReport {
        experiment: cfg.experiment,
        config: cfg.clone(),
        provenance: prov,
        metrics: BTreeMap::new(),
        details: BTreeMap::new(),
        diagnostics: None,
        forward_passes: BTreeMap::new(),
        sweep: None,
        cost_table: None,
        wall_time_s: 0.0,
        training_logs: BTreeMap::new(),
    }
}

fn forward_counts(models: &[Model]) -> BTreeMap<String, u64> {
    models
        .iter()
        .map(|m| (m.name.clone(), m.pipeline.forward_passes()))
        .collect()
}

/// OLS on Gaussian data, then jets of the fitted linear predictor.
pub fn run_linreg(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let (train, test, beta_star) =
        gen_linreg(cfg.seed, cfg.n_train, cfg.n_test, cfg.d, cfg.noise_sigma)?;
    let beta_hat = stage("fit ols", fit_ols(&train))?;
    let pipeline = Pipeline::with_tap(
        vec![ModuleSpec::Linear {
            weights: Matrix::row_vector(&beta_hat),
            bias: None,
        }],
        "output",
        0,
    )?;
    let model = Model {
        name: "ols".into(),
        pipeline,
        tap: "output".into(),
    };
    if cfg.s > test.n() {
        return Err(Error::Config(format!("S = {} exceeds the test set", cfg.s)));
    }
    let bases = test.x.top_rows(cfg.s).to_rows();
    let cmp = compare(
        cfg,
        std::slice::from_ref(&model),
        &[Family::coarse(cfg.sigma, cfg.j)],
        &bases,
        cfg.retain,
    )?;
    let jets = &cmp.jets[&("coarse".to_string(), "ols".to_string())];

    let d = cfg.d;
    let mut mean_grad = vec![0.0; d];
    let mut max_dev: f64 = 0.0;
    for j in jets {
        for (i, g) in j.jacobian.row(0).iter().enumerate() {
            mean_grad[i] += g / jets.len() as f64;
            max_dev = max_dev.max((g - beta_hat[i]).abs());
        }
    }
    let rmse = |a: &[f64], b: &[f64]| {
        (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
    };
    let test_mse = regression_mse(&model.pipeline, &test)?;
    let noise_var = cfg.noise_sigma * cfg.noise_sigma;

    let mut choices = BTreeMap::new();
    choices.insert(
        "noise_sigma".into(),
        format!("{} (label noise of the generated data)", cfg.noise_sigma),
    );
    let mut report = empty_report(cfg, provenance(cfg, "gen_linreg".into(), choices));
    report.metrics = BTreeMap::from([
        ("test_mse/ols".into(), test_mse),
        (
            "train_mse/ols".into(),
            regression_mse(&model.pipeline, &train)?,
        ),
        ("noise_variance".into(), noise_var),
        (
            "test_mse_over_noise_variance/ols".into(),
            test_mse / noise_var,
        ),
        ("jet_vs_beta_hat_max_abs".into(), max_dev),
        ("jet_vs_beta_hat_rmse".into(), rmse(&mean_grad, &beta_hat)),
        (
            "beta_hat_vs_beta_star_rmse".into(),
            rmse(&beta_hat, &beta_star),
        ),
        ("jet_vs_beta_star_rmse".into(), rmse(&mean_grad, &beta_star)),
    ]);
    report.details = BTreeMap::from([
        ("beta_hat".into(), json!(beta_hat)),
        ("beta_star".into(), json!(beta_star)),
        ("mean_jet_gradient".into(), json!(mean_grad)),
    ]);
    report.forward_passes = forward_counts(std::slice::from_ref(&model));
    report.diagnostics = Some(cmp.report);
    Ok(report)
}

fn module1_pipeline(first: ModuleSpec, head: ModuleSpec) -> Result<Pipeline> {
    Pipeline::new(
        vec![first, head],
        vec![Tap {
            id: "module1".into(),
            module: 0,
        }],
    )
}

/// Per-epoch `(epoch, loss)` pairs.
type LossLog = Vec<(usize, f64)>;

fn pca_logistic(cfg: &ExperimentConfig, train: &Dataset) -> Result<(Model, Matrix, LossLog)> {
    let pca = stage("fit pca", fit_pca(train, cfg.k))?;
    let scores = pca.module.apply_batch(&train.x);
    let fit = stage(
        "fit logistic on pca scores",
        fit_logistic(&train.with_x(scores)?, &cfg.model("logistic")?),
    )?;
    let basis = pca.components().clone();
    let model = Model {
        name: "pca_logistic".into(),
        pipeline: module1_pipeline(pca.module, fit.head)?,
        tap: "module1".into(),
    };
    Ok((model, basis, fit.losses))
}

fn aligned_family(name: &str, basis: Matrix, cfg: &ExperimentConfig) -> Family {
    Family {
        name: name.into(),
        stream: 1,
        design: ProbeDesign::aligned(basis, cfg.sigma, cfg.j),
    }
}

fn prepare_classification(cfg: &ExperimentConfig) -> Result<Prepared> {
    let spec = MixtureSpec {
        d: cfg.d,
        k: cfg.k,
        classes: cfg.classes,
        separation: cfg.separation,
        latent_noise: cfg.latent_noise,
        ambient_noise: cfg.noise_sigma,
    };
    let (train, test) = gen_mixture_classification(cfg.seed, spec, cfg.n_train, cfg.n_test)?;
    let (m1, basis, log1) = pca_logistic(cfg, &train)?;
    let dense_fit = stage(
        "fit dense logistic",
        fit_logistic(&train, &cfg.model("logistic")?),
    )?;
    let m2 = Model {
        name: "dense_logistic".into(),
        pipeline: module1_pipeline(ModuleSpec::Identity, dense_fit.head)?,
        tap: "module1".into(),
    };
    let mut metrics = BTreeMap::new();
    for m in [&m1, &m2] {
        metrics.insert(
            format!("test_error/{}", m.name),
            classification_error(&m.pipeline, &test)?,
        );
        metrics.insert(
            format!("train_error/{}", m.name),
            classification_error(&m.pipeline, &train)?,
        );
    }
    let choices = BTreeMap::from([
        (
            "separation".into(),
            format!(
                "{} (edge of the class-mean polygon in latent space)",
                cfg.separation
            ),
        ),
        ("latent_noise".into(), cfg.latent_noise.to_string()),
        ("ambient_noise".into(), cfg.noise_sigma.to_string()),
    ]);
    Ok(Prepared {
        models: vec![m1, m2],
        test_inputs: test.x,
        aligned: aligned_family("aligned", basis, cfg),
        metrics,
        details: BTreeMap::new(),
        choices,
        data_source: "gen_mixture_classification".into(),
        logs: BTreeMap::from([
            ("pca_logistic".into(), log1),
            ("dense_logistic".into(), dense_fit.losses),
        ]),
    })
}

fn prepare_digits(cfg: &ExperimentConfig) -> Result<Prepared> {
    let ((x, labels), source) = match &cfg.data_path {
        Some(p) => (read_digits_csv(p)?, p.display().to_string()),
        None => (
            synthetic_digits(cfg.seed, DIGITS_ROWS),
            "synthetic_digits".to_string(),
        ),
    };
    if x.cols() != cfg.d {
        return Err(Error::Config(format!(
            "digits have {} features, config says d = {}",
            x.cols(),
            cfg.d
        )));
    }
    let (train, test) = split_digits(x, labels, cfg.seed)?;
    let standardize = fit_standardize(&train.x)?;
    let train = train.with_x(standardize.apply_batch(&train.x))?;
    let test = test.with_x(standardize.apply_batch(&test.x))?;

    let (m1, basis, log1) = pca_logistic(cfg, &train)?;
    let mlp = stage("train mlp", train_mlp(&train, &cfg.model("mlp")?))?;
    let tap = mlp
        .pipeline
        .taps()
        .first()
        .map(|t| t.id.clone())
        .ok_or_else(|| Error::Config("the mlp architecture must declare a tap".into()))?;
    let m2 = Model {
        name: "mlp".into(),
        pipeline: mlp.pipeline,
        tap,
    };
    let mut metrics = BTreeMap::new();
    for m in [&m1, &m2] {
        metrics.insert(
            format!("test_error/{}", m.name),
            classification_error(&m.pipeline, &test)?,
        );
        metrics.insert(
            format!("train_error/{}", m.name),
            classification_error(&m.pipeline, &train)?,
        );
    }
    let details = BTreeMap::from([
        ("n_train".into(), json!(train.n())),
        ("n_test".into(), json!(test.n())),
    ]);
    let choices = BTreeMap::from([(
        "split".into(),
        "test size ceil(N/5), per-class floor(n_c/5) plus largest remainders".into(),
    )]);
    Ok(Prepared {
        models: vec![m1, m2],
        test_inputs: test.x,
        aligned: aligned_family("aligned", basis, cfg),
        metrics,
        details,
        choices,
        data_source: source,
        logs: BTreeMap::from([("pca_logistic".into(), log1), ("mlp".into(), mlp.losses)]),
    })
}

fn prepare_deep(cfg: &ExperimentConfig) -> Result<Prepared> {
    let data = gen_latent_regression(
        cfg.seed,
        cfg.d,
        cfg.k,
        cfg.n_train,
        cfg.n_test,
        cfg.noise_sigma,
    )?;
    let mut models = Vec::new();
    let mut metrics = BTreeMap::new();
    let mut logs = BTreeMap::new();
    for name in ["model_a", "model_b"] {
        let fit = stage(
            &format!("train {name}"),
            train_mlp(&data.train, &cfg.model(name)?),
        )?;
        metrics.insert(
            format!("test_mse/{name}"),
            regression_mse(&fit.pipeline, &data.test)?,
        );
        metrics.insert(
            format!("train_mse/{name}"),
            regression_mse(&fit.pipeline, &data.train)?,
        );
        let tap = fit
            .pipeline
            .taps()
            .first()
            .map(|t| t.id.clone())
            .ok_or_else(|| Error::Config(format!("{name} must declare a bottleneck tap")))?;
        logs.insert(name.to_string(), fit.losses);
        models.push(Model {
            name: name.into(),
            pipeline: fit.pipeline,
            tap,
        });
    }
    let pcs = stage("fit pca", fit_pca(&data.train, cfg.k))?;
    let choices = BTreeMap::from([
        (
            "target".into(),
            format!("tanh(a.z) + 0.5 (b.z)^2, a = {LATENT_A:?}, b = {LATENT_B:?}"),
        ),
        ("x_noise".into(), LATENT_X_NOISE.to_string()),
        ("y_noise".into(), cfg.noise_sigma.to_string()),
        (
            "model_b".into(),
            "linear 8->8, linear 8->3 + relu (tap), linear 3->3, tanh head".into(),
        ),
    ]);
    Ok(Prepared {
        models,
        test_inputs: data.test.x,
        aligned: aligned_family("structured", pcs.components().clone(), cfg),
        metrics,
        details: BTreeMap::new(),
        choices,
        data_source: "gen_latent_regression".into(),
        logs,
    })
}

/// Train the two models of a comparison experiment.
pub fn prepare(cfg: &ExperimentConfig, target: Experiment) -> Result<Prepared> {
    match target {
        Experiment::DeepRegressor => prepare_deep(cfg),
        Experiment::PipelineClassification => prepare_classification(cfg),
        Experiment::Digits => prepare_digits(cfg),
        other => Err(Error::Config(format!("`{other}` has no two-model setup"))),
    }
}

fn report_from(cfg: &ExperimentConfig, prep: &Prepared) -> ExperimentReport {
    let mut r = empty_report(
        cfg,
        provenance(cfg, prep.data_source.clone(), prep.choices.clone()),
    );
    r.metrics = prep.metrics.clone();
    r.details = prep.details.clone();
    r.training_logs = prep.logs.clone();
    r
}

pub(super) fn run_comparison(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let prep = prepare(cfg, cfg.experiment)?;
    let bases = prep.bases(cfg.s)?;
    let families = [Family::coarse(cfg.sigma, cfg.j), prep.aligned.clone()];
    let cmp = compare(cfg, &prep.models, &families, &bases, cfg.retain)?;
    let mut report = report_from(cfg, &prep);
    report.forward_passes = forward_counts(&prep.models);
    report.diagnostics = Some(cmp.report);
    Ok(report)
}

fn sweep_row(parameter: &str, value: f64, d: &DiagnosticsReport) -> Result<SweepRow> {
    let p = d
        .pairs
        .first()
        .ok_or_else(|| Error::InvalidParameter("sweep needs a model pair".into()))?;
    let rank = |label: &str| d.tap(label).map(|t| t.rank.mean).unwrap_or(f64::NAN);
    Ok(SweepRow {
        parameter: parameter.into(),
        value,
        mean_jetsim: p.jetsim.mean,
        mean_rank_a: rank(&p.a),
        mean_rank_b: rank(&p.b),
        capped_bases: p.capped_bases,
    })
}

fn sweep_over(
    cfg: &ExperimentConfig,
    parameter: &str,
    values: Vec<f64>,
    family: impl Fn(f64) -> Family,
) -> Result<ExperimentReport> {
    let prep = prepare(cfg, cfg.sweep.target)?;
    let bases = prep.bases(cfg.s)?;
    let mut rows = Vec::new();
    for v in values {
        let cmp = compare(cfg, &prep.models, &[family(v)], &bases, cfg.retain)?;
        rows.push(sweep_row(parameter, v, &cmp.report)?);
    }
    let mut report = report_from(cfg, &prep);
    report.sweep = Some(rows);
    Ok(report)
}

/// JetSim and ranks as the probe scale varies, coarse probes.
pub fn sweep_epsilon(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    sweep_over(cfg, "sigma", cfg.sweep.eps_grid.clone(), |e| {
        Family::coarse(e, cfg.j)
    })
}

/// JetSim and ranks as the probe count varies, coarse probes.
pub fn sweep_probes(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let grid = cfg.sweep.probe_grid.iter().map(|&j| j as f64).collect();
    sweep_over(cfg, "J", grid, |j| Family::coarse(cfg.sigma, j as usize))
}

/// JetSim under a fixed retained dimension `k`, coarse probes, plus the
/// dimension picked by the variance rule on the first model's jets.
pub fn sweep_k(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let prep = prepare(cfg, cfg.sweep.target)?;
    let bases = prep.bases(cfg.s)?;
    let fam = Family::coarse(cfg.sigma, cfg.j);
    let cmp = compare(
        cfg,
        &prep.models,
        std::slice::from_ref(&fam),
        &bases,
        cfg.retain,
    )?;
    let (a, b) = (&prep.models[0], &prep.models[1]);
    let ja = &cmp.jets[&(fam.name.clone(), a.name.clone())];
    let jb = &cmp.jets[&(fam.name.clone(), b.name.clone())];
    let mut rows = Vec::new();
    for &k in &cfg.sweep.k_grid {
        let pair = pair_diagnostics(
            &format!("{}/{}~{}", fam.name, a.name, b.name),
            (&tap_label(&fam.name, a), ja),
            (&tap_label(&fam.name, b), jb),
            RetainRule::Count { k },
        )?;
        let d = aggregate(
            cmp.report
                .taps
                .iter()
                .map(|t| crate::diagnostics::TapDiagnostics {
                    label: t.label.clone(),
                    tol_rel: t.tol_rel,
                    entries: t.entries.clone(),
                })
                .collect(),
            vec![pair],
            cfg.thresholds,
            Cost::default(),
        )?;
        rows.push(sweep_row("k", k as f64, &d)?);
    }
    let mut report = report_from(cfg, &prep);
    report.metrics.insert(
        format!("k_variance/{}", a.name),
        select_k_variance(ja, cfg.rho)? as f64,
    );
    let both: Vec<Jet> = ja.iter().chain(jb).cloned().collect();
    report.metrics.insert(
        "k_variance/both".into(),
        select_k_variance(&both, cfg.rho)? as f64,
    );
    report.sweep = Some(rows);
    report.diagnostics = Some(cmp.report);
    Ok(report)
}

/// Forward-pass counts and wall time for `n_jet` bases at each probe count.
pub fn cost_report(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let prep = prepare(cfg, cfg.cost.target)?;
    let bases = prep.bases(cfg.cost.n_jet)?;
    let m = prep.models.len();
    let mut rows = Vec::new();
    for &j in &cfg.cost.probe_grid {
        let cmp = compare(
            cfg,
            &prep.models,
            &[Family::coarse(cfg.sigma, j)],
            &bases,
            cfg.retain,
        )?;
        let c = &cmp.report.cost;
        rows.push(CostRow {
            j,
            n_jet: bases.len(),
            models: m,
            probe_passes: c.probe_passes,
            expected_probe_passes: (bases.len() * j * m) as u64,
            base_passes: c.base_passes,
            mean_jetsim: cmp.report.pairs.first().map_or(f64::NAN, |p| p.jetsim.mean),
            wall_time_s: c.wall_time_s,
        });
    }
    let mut report = report_from(cfg, &prep);
    report.cost_table = Some(rows);
    Ok(report)
}

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diagnostics::{MirageThresholds, RetainRule, DEFAULT_RANK_TOL, DEFAULT_RHO};
use crate::error::{Error, Result};
use crate::jets::{ProbeSharing, RidgePolicy};
use crate::pipeline::ActivationFn;
use crate::training::{LayerSpec, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Linreg,
    DeepRegressor,
    PipelineClassification,
    Digits,
    SweepEps,
    SweepProbes,
    SweepK,
    Cost,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Linreg,
        Experiment::DeepRegressor,
        Experiment::PipelineClassification,
        Experiment::Digits,
        Experiment::SweepEps,
        Experiment::SweepProbes,
        Experiment::SweepK,
        Experiment::Cost,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Linreg => "linreg",
            Experiment::DeepRegressor => "deep_regressor",
            Experiment::PipelineClassification => "pipeline_classification",
            Experiment::Digits => "digits",
            Experiment::SweepEps => "sweep_eps",
            Experiment::SweepProbes => "sweep_probes",
            Experiment::SweepK => "sweep_k",
            Experiment::Cost => "cost",
        }
    }

    /// Experiments that train two models and compare their module-1 jets.
    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            Experiment::DeepRegressor | Experiment::PipelineClassification | Experiment::Digits
        )
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

/// Settings shared by the three sweeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Comparison experiment whose trained models are probed.
    pub target: Experiment,
    pub eps_grid: Vec<f64>,
    pub probe_grid: Vec<usize>,
    pub k_grid: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub target: Experiment,
    /// Number of base inputs jets are estimated at.
    pub n_jet: usize,
    pub probe_grid: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub d: usize,
    /// Latent dimension, or number of PCA components.
    pub k: usize,
    pub classes: usize,
    /// Number of base inputs.
    #[serde(rename = "S")]
    pub s: usize,
    /// Probes per base input.
    #[serde(rename = "J")]
    pub j: usize,
    /// Probe scale.
    pub sigma: f64,
    /// Label noise (regression) or ambient noise (mixture classification).
    pub noise_sigma: f64,
    pub latent_noise: f64,
    /// Distance between neighbouring class means in latent space.
    pub separation: f64,
    pub ridge: RidgePolicy,
    pub rank_tol: f64,
    pub retain: RetainRule,
    pub rho: f64,
    pub sharing: ProbeSharing,
    pub thresholds: MirageThresholds,
    pub parallel: bool,
    /// Digits CSV; when absent a synthetic stroke dataset stands in.
    pub data_path: Option<PathBuf>,
    pub models: BTreeMap<String, TrainConfig>,
    pub sweep: SweepConfig,
    pub cost: CostConfig,
}

fn eps_grid() -> Vec<f64> {
    [-3.5, -3.0, -2.0, -1.5, -1.0]
        .iter()
        .map(|e| 10f64.powf(*e))
        .collect()
}

fn logistic(epochs: usize, step_size: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        step_size,
        batch_size: 0,
        ..TrainConfig::default()
    }
}

fn mlp(epochs: usize, step_size: f64, architecture: Vec<LayerSpec>) -> TrainConfig {
    TrainConfig {
        epochs,
        step_size,
        batch_size: 32,
        architecture,
        ..TrainConfig::default()
    }
}

impl ExperimentConfig {
    /// Built-in configuration for `experiment`. Sweeps and the cost report
    /// probe the digits models unless another target is configured.
    pub fn defaults(experiment: Experiment) -> Self {
        ExperimentConfig::with_target(experiment, Experiment::Digits)
    }

    fn with_target(experiment: Experiment, target: Experiment) -> Self {
        let mut c = ExperimentConfig {
            experiment,
            seed: 0,
            n_train: 1000,
            n_test: 200,
            d: 10,
            k: 3,
            classes: 2,
            s: 20,
            j: 32,
            sigma: 1e-2,
            noise_sigma: 0.1,
            latent_noise: 1.0,
            separation: 3.0,
            ridge: RidgePolicy::default(),
            rank_tol: DEFAULT_RANK_TOL,
            retain: RetainRule::default(),
            rho: DEFAULT_RHO,
            sharing: ProbeSharing::Shared,
            thresholds: MirageThresholds::default(),
            parallel: false,
            data_path: None,
            models: BTreeMap::new(),
            sweep: SweepConfig {
                target,
                eps_grid: eps_grid(),
                probe_grid: vec![8, 16, 32, 64],
                k_grid: vec![1, 2, 3, 5, 10, 15, 20, 25, 30, 32],
            },
            cost: CostConfig {
                target,
                n_jet: 200,
                probe_grid: vec![32, 64],
            },
        };
        let base = match experiment {
            Experiment::SweepEps
            | Experiment::SweepProbes
            | Experiment::SweepK
            | Experiment::Cost => target,
            e => e,
        };
        c.apply_target_defaults(base);
        c
    }

    fn apply_target_defaults(&mut self, base: Experiment) {
        let tanh = Some(ActivationFn::Tanh);
        let relu = Some(ActivationFn::Relu);
        match base {
            Experiment::Linreg => {
                self.sigma = 1e-3;
                // an exact linear map needs no shrinkage
                self.ridge = RidgePolicy::Zero;
            }
            Experiment::DeepRegressor => {
                (self.n_train, self.n_test, self.d, self.k, self.s) = (2000, 500, 8, 3, 50);
                self.models.insert(
                    "model_a".into(),
                    mlp(
                        150,
                        0.05,
                        vec![
                            LayerSpec::new(3, tanh).tapped("bottleneck"),
                            LayerSpec::new(16, tanh),
                            LayerSpec::new(1, None),
                        ],
                    ),
                );
                self.models.insert(
                    "model_b".into(),
                    mlp(
                        150,
                        0.05,
                        vec![
                            LayerSpec::new(8, None),
                            LayerSpec::new(3, relu).tapped("bottleneck"),
                            LayerSpec::new(3, None),
                            LayerSpec::new(16, tanh),
                            LayerSpec::new(1, None),
                        ],
                    ),
                );
            }
            Experiment::PipelineClassification => {
                (
                    self.n_train,
                    self.n_test,
                    self.d,
                    self.k,
                    self.classes,
                    self.s,
                ) = (600, 300, 20, 3, 3, 50);
                self.noise_sigma = 0.5;
                self.models.insert("logistic".into(), logistic(2000, 0.5));
            }
            Experiment::Digits => {
                (self.d, self.k, self.classes, self.s) = (64, 10, 10, 200);
                self.models.insert("logistic".into(), logistic(3000, 0.5));
                self.models.insert(
                    "mlp".into(),
                    mlp(
                        60,
                        0.05,
                        vec![
                            LayerSpec::new(32, relu).tapped("module1"),
                            LayerSpec::new(10, None),
                        ],
                    ),
                );
            }
            _ => {}
        }
    }

    /// Defaults for `experiment` overlaid with `overlay` (objects merge
    /// recursively, everything else replaces).
    pub fn from_overlay(experiment: Experiment, overlay: &Value) -> Result<Self> {
        if let Some(v) = overlay.get("experiment") {
            if v != &Value::String(experiment.name().into()) {
                return Err(Error::Config(format!(
                    "config is for experiment {v}, but `{experiment}` was requested"
                )));
            }
        }
        let pointer = match experiment {
            Experiment::Cost => Some("/cost/target"),
            Experiment::SweepEps | Experiment::SweepProbes | Experiment::SweepK => {
                Some("/sweep/target")
            }
            _ => None,
        };
        let target = match pointer.and_then(|p| overlay.pointer(p)) {
            Some(v) => {
                serde_json::from_value(v.clone()).map_err(|e| Error::Config(e.to_string()))?
            }
            None => Experiment::Digits,
        };
        let mut base = serde_json::to_value(ExperimentConfig::with_target(experiment, target))?;
        merge(&mut base, overlay);
        let cfg: ExperimentConfig =
            serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(experiment: Experiment, text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if !v.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        ExperimentConfig::from_overlay(experiment, &v)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_train", self.n_train),
            ("n_test", self.n_test),
            ("d", self.d),
            ("k", self.k),
            ("S", self.s),
            ("J", self.j),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{name}` must be positive")));
        }
        if !(self.sigma > 0.0) || !(self.noise_sigma >= 0.0) || !(self.latent_noise >= 0.0) {
            return Err(Error::Config(
                "sigma must be positive, noise levels non-negative".into(),
            ));
        }
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) || !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config("rank_tol and rho must lie in (0, 1)".into()));
        }
        if self.thresholds.lo > self.thresholds.hi {
            return Err(Error::Config("mirage thresholds need lo <= hi".into()));
        }
        for t in [self.sweep.target, self.cost.target] {
            if !t.is_comparison() {
                return Err(Error::Config(format!(
                    "`{t}` is not a two-model experiment and cannot be swept"
                )));
            }
        }
        if self.sweep.eps_grid.iter().any(|e| !(*e > 0.0))
            || self.sweep.probe_grid.contains(&0)
            || self.sweep.k_grid.contains(&0)
            || self.cost.probe_grid.contains(&0)
            || self.cost.n_jet == 0
        {
            return Err(Error::Config(
                "sweep and cost grids must be positive".into(),
            ));
        }
        for (name, m) in &self.models {
            if m.epochs == 0 || !(m.step_size > 0.0) {
                return Err(Error::Config(format!(
                    "model `{name}`: epochs and step_size must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn model(&self, name: &str) -> Result<TrainConfig> {
        let mut m =
            self.models.get(name).cloned().ok_or_else(|| {
                Error::Config(format!("missing training config for model `{name}`"))
            })?;
        // one seed drives the whole run
        m.seed = self.seed;
        Ok(m)
    }
}

fn merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn every_default_validates_and_round_trips() {
        for e in Experiment::ALL {
            let c = ExperimentConfig::defaults(e);
            c.validate().unwrap();
            let back = ExperimentConfig::from_overlay(e, &json!({})).unwrap();
            assert_eq!(back, c);
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
    }

    #[test]
    fn overlay_merges_nested() {
        let c = ExperimentConfig::from_overlay(
            Experiment::Digits,
            &json!({"seed": 7, "J": 64, "models": {"mlp": {"epochs": 5}}}),
        )
        .unwrap();
        assert_eq!((c.seed, c.j), (7, 64));
        assert_eq!(c.models["mlp"].epochs, 5);
        assert_eq!(c.models["mlp"].architecture.len(), 2);
        assert!(c.models.contains_key("logistic"));
        assert_eq!(c.model("mlp").unwrap().seed, 7);
    }

    #[test]
    fn sweep_target_switches_model_defaults() {
        let c = ExperimentConfig::from_overlay(
            Experiment::SweepEps,
            &json!({"sweep": {"target": "pipeline_classification"}}),
        )
        .unwrap();
        assert_eq!(c.d, 20);
        assert!(c.models.contains_key("logistic") && !c.models.contains_key("mlp"));
    }

    #[test]
    fn bad_configs_rejected() {
        for bad in [
            json!({"J": 0}),
            json!({"sigma": -1.0}),
            json!({"unknown_field": 1}),
            json!({"experiment": "linreg"}),
            json!({"sweep": {"target": "linreg"}}),
            json!({"ridge": {"kind": "bogus"}}),
        ] {
            let err = ExperimentConfig::from_overlay(Experiment::Digits, &bad).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}: {err}");
        }
        assert!(ExperimentConfig::from_json(Experiment::Digits, "[1]").is_err());
        assert!("nope".parse::<Experiment>().is_err());
    }

    #[test]
    fn eps_grid_sorted() {
        let g = ExperimentConfig::defaults(Experiment::SweepEps)
            .sweep
            .eps_grid;
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(g.len(), 5);
    }
}

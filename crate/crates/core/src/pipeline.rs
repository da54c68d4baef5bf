//! Modular pipelines with named taps.
//!
//! A [`Pipeline`] is an ordered list of [`ModuleSpec`]s. Evaluating it on an
//! input returns the final output together with the outputs of every tapped
//! module, and bumps a forward-pass counter used for cost accounting.

use std::collections::HashSet;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{row_orthonormality_error, Matrix, Vector};

/// Tolerance on `components · componentsᵀ = I` for [`ModuleSpec::PcaProject`].
pub const PCA_ORTHONORMALITY_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationFn {
    Relu,
    Tanh,
}

impl ActivationFn {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationFn::Relu => x.max(0.0),
            ActivationFn::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y = f(x)`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            ActivationFn::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationFn::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModuleSpec {
    /// `W x + b`, `W` is `d_out × d_in`.
    Linear {
        weights: Matrix,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<Vector>,
    },
    /// `(x − mean) / scale`, elementwise.
    Standardize {
        mean: Vector,
        scale: Vector,
    },
    /// `components · (x − mean)`; components has orthonormal rows.
    PcaProject {
        components: Matrix,
        mean: Vector,
    },
    Activation {
        function: ActivationFn,
    },
    /// Multinomial logistic head; emits logits `W x + b`.
    LogisticHead {
        weights: Matrix,
        bias: Vector,
    },
    Identity,
}

impl ModuleSpec {
    /// Input dimension, or `None` for dimension-preserving modules.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            ModuleSpec::Linear { weights, .. } | ModuleSpec::LogisticHead { weights, .. } => {
                Some(weights.cols())
            }
            ModuleSpec::Standardize { mean, .. } => Some(mean.len()),
            ModuleSpec::PcaProject { components, .. } => Some(components.cols()),
            ModuleSpec::Activation { .. } | ModuleSpec::Identity => None,
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            ModuleSpec::Linear { weights, .. } | ModuleSpec::LogisticHead { weights, .. } => {
                weights.rows()
            }
            ModuleSpec::PcaProject { components, .. } => components.rows(),
            ModuleSpec::Standardize { mean, .. } => mean.len(),
            ModuleSpec::Activation { .. } | ModuleSpec::Identity => input_dim,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModuleSpec::Linear { .. } => "linear",
            ModuleSpec::Standardize { .. } => "standardize",
            ModuleSpec::PcaProject { .. } => "pca_project",
            ModuleSpec::Activation { .. } => "activation",
            ModuleSpec::LogisticHead { .. } => "logistic_head",
            ModuleSpec::Identity => "identity",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            ModuleSpec::Linear { weights, bias } => {
                if !weights.is_finite() || !bias.as_deref().is_none_or(finite) {
                    return Err(Error::NonFinite("linear module parameters".into()));
                }
                if let Some(b) = bias {
                    if b.len() != weights.rows() {
                        return Err(Error::Shape(format!(
                            "linear bias has {} entries for {} outputs",
                            b.len(),
                            weights.rows()
                        )));
                    }
                }
            }
            ModuleSpec::LogisticHead { weights, bias } => {
                if !weights.is_finite() || !finite(bias) {
                    return Err(Error::NonFinite("logistic head parameters".into()));
                }
                if bias.len() != weights.rows() {
                    return Err(Error::Shape(format!(
                        "logistic bias has {} entries for {} classes",
                        bias.len(),
                        weights.rows()
                    )));
                }
            }
            ModuleSpec::Standardize { mean, scale } => {
                if mean.len() != scale.len() {
                    return Err(Error::Shape("standardize mean/scale lengths differ".into()));
                }
                if !finite(mean) || !finite(scale) {
                    return Err(Error::NonFinite("standardize parameters".into()));
                }
                if scale.iter().any(|&s| s <= 0.0) {
                    return Err(Error::InvalidParameter(
                        "standardize scale entries must be positive".into(),
                    ));
                }
            }
            ModuleSpec::PcaProject { components, mean } => {
                if mean.len() != components.cols() {
                    return Err(Error::Shape(
                        "pca mean length differs from input dim".into(),
                    ));
                }
                if !components.is_finite() || !finite(mean) {
                    return Err(Error::NonFinite("pca parameters".into()));
                }
                let err = row_orthonormality_error(components);
                if err > PCA_ORTHONORMALITY_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "pca components not orthonormal (error {err:e})"
                    )));
                }
            }
            ModuleSpec::Activation { .. } | ModuleSpec::Identity => {}
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Vector {
        match self {
            ModuleSpec::Linear { weights, bias } => {
                let mut y = weights.matvec(x);
                if let Some(b) = bias {
                    y.iter_mut().zip(b).for_each(|(yi, bi)| *yi += bi);
                }
                y
            }
            ModuleSpec::LogisticHead { weights, bias } => {
                let mut y = weights.matvec(x);
                y.iter_mut().zip(bias).for_each(|(yi, bi)| *yi += bi);
                y
            }
            ModuleSpec::Standardize { mean, scale } => x
                .iter()
                .zip(mean)
                .zip(scale)
                .map(|((xi, m), s)| (xi - m) / s)
                .collect(),
            ModuleSpec::PcaProject { components, mean } => {
                let centered: Vector = x.iter().zip(mean).map(|(a, b)| a - b).collect();
                components.matvec(&centered)
            }
            ModuleSpec::Activation { function } => x.iter().map(|&v| function.apply(v)).collect(),
            ModuleSpec::Identity => x.to_vec(),
        }
    }

    /// Apply to every row of `x`.
    pub fn apply_batch(&self, x: &Matrix) -> Matrix {
        match self {
            ModuleSpec::Linear { weights, bias } => {
                let mut y = x.matmul_t(weights);
                if let Some(b) = bias {
                    add_row_bias(&mut y, b);
                }
                y
            }
            ModuleSpec::LogisticHead { weights, bias } => {
                let mut y = x.matmul_t(weights);
                add_row_bias(&mut y, bias);
                y
            }
            ModuleSpec::Activation { function } => x.map(|v| function.apply(v)),
            ModuleSpec::Identity => x.clone(),
            _ => {
                let rows: Vec<Vector> = x.row_iter().map(|r| self.apply(r)).collect();
                Matrix::from_rows(&rows).expect("uniform output width")
            }
        }
    }

    /// Linear part of an affine module; `None` for activations.
    pub fn linear_part(&self, input_dim: usize) -> Option<Matrix> {
        match self {
            ModuleSpec::Linear { weights, .. } | ModuleSpec::LogisticHead { weights, .. } => {
                Some(weights.clone())
            }
            ModuleSpec::PcaProject { components, .. } => Some(components.clone()),
            ModuleSpec::Standardize { scale, .. } => Some(Matrix::from_diag(
                &scale.iter().map(|s| 1.0 / s).collect::<Vec<_>>(),
            )),
            ModuleSpec::Identity => Some(Matrix::identity(input_dim)),
            ModuleSpec::Activation { .. } => None,
        }
    }
}

fn add_row_bias(y: &mut Matrix, b: &[f64]) {
    for i in 0..y.rows() {
        y.row_mut(i).iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tap {
    pub id: String,
    /// 0-based index of the module whose output is observed.
    pub module: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TapRecord {
    pub id: String,
    pub value: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub output: Vector,
    pub taps: Vec<TapRecord>,
}

impl Evaluation {
    pub fn tap(&self, id: &str) -> Option<&[f64]> {
        self.taps
            .iter()
            .find(|t| t.id == id)
            .map(|t| t.value.as_slice())
    }
}

#[derive(Serialize, Deserialize)]
struct PipelineDoc {
    modules: Vec<ModuleSpec>,
    #[serde(default)]
    taps: Vec<Tap>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(try_from = "PipelineDoc", into = "PipelineDoc")]
pub struct Pipeline {
    modules: Vec<ModuleSpec>,
    taps: Vec<Tap>,
    input_dim: Option<usize>,
    forward_passes: AtomicU64,
}

impl Clone for Pipeline {
    fn clone(&self) -> Self {
        Pipeline {
            modules: self.modules.clone(),
            taps: self.taps.clone(),
            input_dim: self.input_dim,
            forward_passes: AtomicU64::new(self.forward_passes()),
        }
    }
}

impl TryFrom<PipelineDoc> for Pipeline {
    type Error = Error;

    fn try_from(doc: PipelineDoc) -> Result<Self> {
        Pipeline::new(doc.modules, doc.taps)
    }
}

impl From<Pipeline> for PipelineDoc {
    fn from(p: Pipeline) -> Self {
        PipelineDoc {
            modules: p.modules,
            taps: p.taps,
        }
    }
}

impl Pipeline {
    pub fn new(modules: Vec<ModuleSpec>, taps: Vec<Tap>) -> Result<Self> {
        if modules.is_empty() {
            return Err(Error::Shape("pipeline needs at least one module".into()));
        }
        let mut current: Option<usize> = None;
        let mut input_dim = None;
        for (i, m) in modules.iter().enumerate() {
            m.validate()
                .map_err(|e| Error::in_stage(format!("module {i} ({})", m.name()), e))?;
            if let Some(d_in) = m.input_dim() {
                match current {
                    Some(d) if d != d_in => {
                        return Err(Error::Shape(format!(
                            "module {i} ({}) expects input dim {d_in}, previous output is {d}",
                            m.name()
                        )))
                    }
                    None if input_dim.is_none() => input_dim = Some(d_in),
                    _ => {}
                }
                current = Some(m.output_dim(d_in));
            }
        }
        let mut seen = HashSet::new();
        for t in &taps {
            if t.module >= modules.len() {
                return Err(Error::Shape(format!(
                    "tap `{}` at module {} but pipeline has {} modules",
                    t.id,
                    t.module,
                    modules.len()
                )));
            }
            if !seen.insert(t.id.as_str()) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate tap id `{}`",
                    t.id
                )));
            }
        }
        Ok(Pipeline {
            modules,
            taps,
            input_dim,
            forward_passes: AtomicU64::new(0),
        })
    }

    /// Convenience: a single tap.
    pub fn with_tap(modules: Vec<ModuleSpec>, id: &str, module: usize) -> Result<Self> {
        Pipeline::new(
            modules,
            vec![Tap {
                id: id.to_string(),
                module,
            }],
        )
    }

    pub fn modules(&self) -> &[ModuleSpec] {
        &self.modules
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.input_dim
    }

    pub fn tap(&self, id: &str) -> Result<&Tap> {
        self.taps
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| Error::UnknownTap(id.to_string()))
    }

    /// Output dimension of module `index` for an input of dimension `d`.
    pub fn module_output_dim(&self, index: usize, d: usize) -> usize {
        self.modules[..=index]
            .iter()
            .fold(d, |dim, m| m.output_dim(dim))
    }

    /// Run every module on `x`, recording tapped outputs in declaration order.
    pub fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        if let Some(d) = self.input_dim {
            if x.len() != d {
                return Err(Error::Shape(format!(
                    "input has dimension {}, pipeline expects {d}",
                    x.len()
                )));
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pipeline input".into()));
        }
        self.forward_passes.fetch_add(1, Ordering::Relaxed);

        let mut tapped: Vec<Option<Vector>> = vec![None; self.taps.len()];
        let mut z = x.to_vec();
        for (i, m) in self.modules.iter().enumerate() {
            z = m.apply(&z);
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericModule { module_index: i });
            }
            for (slot, t) in tapped.iter_mut().zip(&self.taps) {
                if t.module == i {
                    *slot = Some(z.clone());
                }
            }
        }
        let taps = self
            .taps
            .iter()
            .zip(tapped)
            .map(|(t, v)| TapRecord {
                id: t.id.clone(),
                value: v.expect("every tap index is in range"),
            })
            .collect();
        Ok(Evaluation { output: z, taps })
    }

    /// Outputs for every row of `x`; does not touch the forward-pass counter.
    pub fn predict_batch(&self, x: &Matrix) -> Result<Matrix> {
        if let Some(d) = self.input_dim {
            if x.cols() != d {
                return Err(Error::Shape(format!(
                    "input has dimension {}, pipeline expects {d}",
                    x.cols()
                )));
            }
        }
        let mut z = x.clone();
        for (i, m) in self.modules.iter().enumerate() {
            z = m.apply_batch(&z);
            if !z.is_finite() {
                return Err(Error::NumericModule { module_index: i });
            }
        }
        Ok(z)
    }

    /// Number of full evaluations since construction or the last reset.
    pub fn forward_passes(&self) -> u64 {
        self.forward_passes.load(Ordering::Relaxed)
    }

    pub fn reset_counter(&self) {
        self.forward_passes.store(0, Ordering::Relaxed);
    }

    /// Modules `0..=last` with no taps.
    pub fn truncated(&self, last: usize) -> Result<Pipeline> {
        Pipeline::new(self.modules[..=last].to_vec(), Vec::new())
    }

    /// Composite linear map when every module is affine.
    pub fn linear_map(&self, input_dim: usize) -> Option<Matrix> {
        let mut acc = Matrix::identity(input_dim);
        let mut d = input_dim;
        for m in &self.modules {
            let l = m.linear_part(d)?;
            acc = l.matmul(&acc);
            d = m.output_dim(d);
        }
        Some(acc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Pipeline> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Pipeline> {
        Pipeline::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Bias-free `x ↦ wᵀ H x` with a tap named `bottleneck` on `H x`.
pub fn compose_two_module_linear(h: &Matrix, w: &[f64]) -> Result<Pipeline> {
    if w.len() != h.rows() {
        return Err(Error::Shape(format!(
            "head has {} weights for a {}-dimensional bottleneck",
            w.len(),
            h.rows()
        )));
    }
    Pipeline::with_tap(
        vec![
            ModuleSpec::Linear {
                weights: h.clone(),
                bias: None,
            },
            ModuleSpec::Linear {
                weights: Matrix::row_vector(w),
                bias: None,
            },
        ],
        BOTTLENECK_TAP,
        0,
    )
}

pub const BOTTLENECK_TAP: &str = "bottleneck";

#[cfg(test)]
mod tests {
    use super::*;

    fn h32() -> Matrix {
        Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap()
    }

    #[test]
    fn identity_pipeline() {
        let p = Pipeline::with_tap(vec![ModuleSpec::Identity], "id", 0).unwrap();
        let e = p.evaluate(&[1.0, 2.0]).unwrap();
        assert_eq!(e.output, vec![1.0, 2.0]);
        assert_eq!(e.tap("id").unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn two_linear_modules_by_hand() {
        let p = compose_two_module_linear(&h32(), &[1.0, 1.0, 1.0]).unwrap();
        let e = p.evaluate(&[1.0, 0.0]).unwrap();
        assert_eq!(e.tap(BOTTLENECK_TAP).unwrap(), &[1.0, 3.0, 5.0]);
        assert_eq!(e.output, vec![9.0]);
    }

    #[test]
    fn standardize_centers() {
        let mean = vec![0.5, -2.0, 3.0];
        let p = Pipeline::with_tap(
            vec![ModuleSpec::Standardize {
                mean: mean.clone(),
                scale: vec![2.0, 0.1, 7.0],
            }],
            "z",
            0,
        )
        .unwrap();
        assert_eq!(
            p.evaluate(&mean).unwrap().tap("z").unwrap(),
            &[0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn compose_examples() {
        let p = compose_two_module_linear(&Matrix::identity(2), &[1.0, 0.0]).unwrap();
        assert_eq!(p.evaluate(&[4.0, -7.0]).unwrap().output, vec![4.0]);

        let p = compose_two_module_linear(&Matrix::row_vector(&[1.0, 1.0]), &[2.0]).unwrap();
        assert_eq!(p.evaluate(&[3.0, 4.0]).unwrap().output, vec![14.0]);

        // x in null(H)
        let h = Matrix::from_rows(&[[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let p = compose_two_module_linear(&h, &[1.0, 2.0]).unwrap();
        assert_eq!(
            p.evaluate(&[1.0, -1.0, 0.0])
                .unwrap()
                .tap(BOTTLENECK_TAP)
                .unwrap(),
            &[0.0, 0.0]
        );
        assert!(compose_two_module_linear(&h, &[1.0]).is_err());
    }

    #[test]
    fn counter_semantics() {
        let p = compose_two_module_linear(&h32(), &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(p.forward_passes(), 0);
        for _ in 0..5 {
            p.evaluate(&[0.1, 0.2]).unwrap();
        }
        assert_eq!(p.forward_passes(), 5);
        assert_eq!(p.forward_passes(), 5);
        p.reset_counter();
        assert_eq!(p.forward_passes(), 0);
        // shape errors do not count
        assert!(p.evaluate(&[0.1]).is_err());
        assert_eq!(p.forward_passes(), 0);
    }

    #[test]
    fn shape_chain_is_checked() {
        let bad = Pipeline::new(
            vec![
                ModuleSpec::Linear {
                    weights: h32(),
                    bias: None,
                },
                ModuleSpec::Linear {
                    weights: Matrix::identity(2),
                    bias: None,
                },
            ],
            vec![],
        );
        assert!(matches!(bad, Err(Error::Shape(_))));
        let dup = Pipeline::new(
            vec![ModuleSpec::Identity],
            vec![
                Tap {
                    id: "a".into(),
                    module: 0,
                },
                Tap {
                    id: "a".into(),
                    module: 0,
                },
            ],
        );
        assert!(dup.is_err());
        let oob = Pipeline::with_tap(vec![ModuleSpec::Identity], "a", 1);
        assert!(oob.is_err());
    }

    #[test]
    fn invalid_module_parameters() {
        let s = ModuleSpec::Standardize {
            mean: vec![0.0],
            scale: vec![0.0],
        };
        assert!(Pipeline::new(vec![s], vec![]).is_err());
        let pca = ModuleSpec::PcaProject {
            components: Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap(),
            mean: vec![0.0, 0.0],
        };
        assert!(Pipeline::new(vec![pca], vec![]).is_err());
    }

    #[test]
    fn nonfinite_intermediate_names_module() {
        let p = Pipeline::new(
            vec![
                ModuleSpec::Identity,
                ModuleSpec::Linear {
                    weights: Matrix::from_rows(&[[1e308, 1e308]]).unwrap(),
                    bias: None,
                },
            ],
            vec![],
        )
        .unwrap();
        match p.evaluate(&[10.0, 10.0]) {
            Err(Error::NumericModule { module_index }) => assert_eq!(module_index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn json_roundtrip_preserves_bits() {
        let p = Pipeline::new(
            vec![
                ModuleSpec::Standardize {
                    mean: vec![0.1, 1.0 / 3.0],
                    scale: vec![std::f64::consts::PI, 1e-8],
                },
                ModuleSpec::Linear {
                    weights: Matrix::from_rows(&[[0.1, -0.7], [2.0 / 3.0, 1e-17]]).unwrap(),
                    bias: Some(vec![0.5, -0.25]),
                },
                ModuleSpec::Activation {
                    function: ActivationFn::Relu,
                },
                ModuleSpec::LogisticHead {
                    weights: Matrix::from_rows(&[[1.0, 2.0]]).unwrap(),
                    bias: vec![0.0],
                },
            ],
            vec![Tap {
                id: "hidden".into(),
                module: 2,
            }],
        )
        .unwrap();
        let s = p.to_json().unwrap();
        let q = Pipeline::from_json(&s).unwrap();
        assert_eq!(p.modules(), q.modules());
        assert_eq!(p.taps(), q.taps());
        assert_eq!(s, q.to_json().unwrap());
    }
}

//! Model fitting for the experiments: OLS, PCA, multinomial logistic
//! regression and small fully connected networks trained by gradient descent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{solve_spd, streams, svd, Matrix, RngStream, Vector};
use crate::pipeline::{ActivationFn, ModuleSpec, Pipeline, Tap};

/// Scale floor for constant features in [`fit_standardize`].
pub const SCALE_FLOOR: f64 = 1e-8;
/// Loss above which training is abandoned.
pub const DIVERGENCE_LOSS: f64 = 1e6;
const PCA_RANK_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    Regression(Vector),
    Classes {
        labels: Vec<usize>,
        n_classes: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Targets,
    pub split: Split,
}

impl Dataset {
    pub fn regression(x: Matrix, y: Vector, split: Split) -> Result<Self> {
        if y.len() != x.rows() {
            return Err(Error::Shape(format!(
                "{} targets for {} rows",
                y.len(),
                x.rows()
            )));
        }
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset".into()));
        }
        Ok(Dataset {
            x,
            y: Targets::Regression(y),
            split,
        })
    }

    pub fn classification(
        x: Matrix,
        labels: Vec<usize>,
        n_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if labels.len() != x.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                x.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidParameter(format!(
                "label {bad} outside 0..{n_classes}"
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("dataset".into()));
        }
        Ok(Dataset {
            x,
            y: Targets::Classes { labels, n_classes },
            split,
        })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn targets(&self) -> Option<&[f64]> {
        match &self.y {
            Targets::Regression(y) => Some(y),
            Targets::Classes { .. } => None,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.y {
            Targets::Classes { labels, .. } => Some(labels),
            Targets::Regression(_) => None,
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match &self.y {
            Targets::Classes { n_classes, .. } => Some(*n_classes),
            Targets::Regression(_) => None,
        }
    }

    /// Same targets, new features.
    pub fn with_x(&self, x: Matrix) -> Result<Self> {
        if x.rows() != self.n() {
            return Err(Error::Shape("feature rows differ from targets".into()));
        }
        Ok(Dataset {
            x,
            y: self.y.clone(),
            split: self.split,
        })
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let y = match &self.y {
            Targets::Regression(y) => Targets::Regression(idx.iter().map(|&i| y[i]).collect()),
            Targets::Classes { labels, n_classes } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                n_classes: *n_classes,
            },
        };
        Dataset {
            x: self.x.select_rows(idx),
            y,
            split: self.split,
        }
    }

    fn require_targets(&self) -> Result<&[f64]> {
        self.targets()
            .ok_or_else(|| Error::InvalidParameter("regression targets required".into()))
    }

    fn require_labels(&self) -> Result<(&[usize], usize)> {
        match &self.y {
            Targets::Classes { labels, n_classes } => Ok((labels, *n_classes)),
            Targets::Regression(_) => Err(Error::InvalidParameter("class labels required".into())),
        }
    }
}

/// One dense layer of an MLP: `Linear(width)` then an optional activation.
/// A tap, if named, observes the layer output (after the activation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    #[serde(default)]
    pub activation: Option<ActivationFn>,
    #[serde(default)]
    pub tap: Option<String>,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Option<ActivationFn>) -> Self {
        LayerSpec {
            width,
            activation,
            tap: None,
        }
    }

    pub fn tapped(mut self, id: &str) -> Self {
        self.tap = Some(id.to_string());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub step_size: f64,
    /// Minibatch size; 0 means full batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Stop once the gradient ∞-norm is at most this (full-batch fits only).
    pub grad_tol: f64,
    pub architecture: Vec<LayerSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            step_size: 0.05,
            batch_size: 32,
            seed: 0,
            grad_tol: 1e-4,
            architecture: Vec::new(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || !(self.step_size > 0.0) || !(self.grad_tol >= 0.0) {
            return Err(Error::InvalidParameter(
                "epochs and step size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Ordinary least squares without intercept.
pub fn fit_ols(data: &Dataset) -> Result<Vector> {
    let y = data.require_targets()?;
    if data.n() < data.d() {
        return Err(Error::DegenerateData(format!(
            "{} rows for {} coefficients",
            data.n(),
            data.d()
        )));
    }
    let g = data.x.gram();
    let rhs = Matrix::col_vector(&data.x.tr_matvec(y));
    Ok(solve_spd(&g, &rhs)?.col(0))
}

/// Per-feature mean and population standard deviation, floored.
pub fn fit_standardize(x: &Matrix) -> Result<ModuleSpec> {
    if x.rows() == 0 {
        return Err(Error::DegenerateData("no rows".into()));
    }
    let n = x.rows() as f64;
    let mut mean = vec![0.0; x.cols()];
    for r in x.row_iter() {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
    }
    let mut var = vec![0.0; x.cols()];
    for r in x.row_iter() {
        var.iter_mut()
            .zip(r)
            .zip(&mean)
            .for_each(|((s, v), m)| *s += (v - m).powi(2) / n);
    }
    let scale = var.into_iter().map(|v| v.sqrt().max(SCALE_FLOOR)).collect();
    Ok(ModuleSpec::Standardize { mean, scale })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaFit {
    pub module: ModuleSpec,
    /// Variance along each retained component.
    pub explained_variance: Vec<f64>,
    /// Variance along every direction, nonincreasing.
    pub all_variance: Vec<f64>,
}

impl PcaFit {
    pub fn components(&self) -> &Matrix {
        match &self.module {
            ModuleSpec::PcaProject { components, .. } => components,
            _ => unreachable!("PcaFit always holds a projection"),
        }
    }
}

/// Top-`k` principal components, each signed so that its largest-magnitude
/// entry is positive.
pub fn fit_pca(data: &Dataset, k: usize) -> Result<PcaFit> {
    let (n, d) = data.x.shape();
    if n < 2 {
        return Err(Error::DegenerateData("PCA needs at least two rows".into()));
    }
    if k == 0 || k > d {
        return Err(Error::InvalidParameter(format!(
            "PCA dimension {k} for {d} features"
        )));
    }
    let mut mean = vec![0.0; d];
    for r in data.x.row_iter() {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n as f64);
    }
    let centered = Matrix::from_fn(n, d, |i, j| data.x[(i, j)] - mean[j]);
    let dec = svd(&centered)?;
    let rank = dec
        .s
        .iter()
        .filter(|&&s| s > PCA_RANK_TOL * dec.s[0])
        .count();
    if k > rank {
        return Err(Error::DegenerateData(format!(
            "PCA dimension {k} exceeds the numerical rank {rank} of the centered data"
        )));
    }
    let mut components = dec.vt.top_rows(k);
    for i in 0..k {
        let row = components.row_mut(i);
        let lead = row.iter().copied().fold(
            0.0f64,
            |best, v| if v.abs() > best.abs() { v } else { best },
        );
        if lead < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let all_variance: Vec<f64> = dec.s.iter().map(|s| s * s / (n - 1) as f64).collect();
    Ok(PcaFit {
        module: ModuleSpec::PcaProject { components, mean },
        explained_variance: all_variance[..k].to_vec(),
        all_variance,
    })
}

fn softmax_rows(logits: &mut Matrix) {
    for i in 0..logits.rows() {
        let row = logits.row_mut(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
}

/// Mean cross-entropy of softmax(logits) and the gradient w.r.t. the logits.
fn cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let n = logits.rows() as f64;
    let mut p = logits.clone();
    softmax_rows(&mut p);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        loss -= p[(i, y)].max(f64::MIN_POSITIVE).ln();
        p.row_mut(i)[y] -= 1.0;
    }
    (loss / n, p.scale(1.0 / n))
}

fn add_bias(m: &mut Matrix, b: &[f64]) {
    for i in 0..m.rows() {
        m.row_mut(i).iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
    }
}

fn col_sums(m: &Matrix) -> Vector {
    let mut s = vec![0.0; m.cols()];
    for r in m.row_iter() {
        s.iter_mut().zip(r).for_each(|(a, v)| *a += v);
    }
    s
}

/// Mean cross-entropy of a logistic head `(W, b)` and its gradient.
pub fn logistic_loss_and_grad(
    w: &Matrix,
    b: &[f64],
    x: &Matrix,
    labels: &[usize],
) -> (f64, Matrix, Vector) {
    let mut logits = x.matmul_t(w);
    add_bias(&mut logits, b);
    let (loss, dlogits) = cross_entropy(&logits, labels);
    (loss, dlogits.transpose().matmul(x), col_sums(&dlogits))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub head: ModuleSpec,
    pub losses: Vec<(usize, f64)>,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Full-batch gradient descent from zero; a step that raises the loss is
/// rejected and the step size halved.
pub fn fit_logistic(data: &Dataset, config: &TrainConfig) -> Result<LogisticFit> {
    config.validate()?;
    let (labels, c) = data.require_labels()?;
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::DegenerateData("all samples share one class".into()));
    }
    let d = data.d();
    let mut w = Matrix::zeros(c, d);
    let mut b = vec![0.0; c];
    let mut step = config.step_size;
    let (mut loss, mut gw, mut gb) = logistic_loss_and_grad(&w, &b, &data.x, labels);
    let mut losses = vec![(0, loss)];
    let inf_norm = |gw: &Matrix, gb: &[f64]| gb.iter().fold(gw.max_abs(), |m, v| m.max(v.abs()));
    let mut iterations = 0;
    while iterations < config.epochs && inf_norm(&gw, &gb) > config.grad_tol {
        iterations += 1;
        let tw = w.sub(&gw.scale(step));
        let tb: Vector = b.iter().zip(&gb).map(|(v, g)| v - step * g).collect();
        let (tl, tgw, tgb) = logistic_loss_and_grad(&tw, &tb, &data.x, labels);
        if tl > loss || !tl.is_finite() {
            step /= 2.0;
            continue;
        }
        (w, b, loss, gw, gb) = (tw, tb, tl, tgw, tgb);
        losses.push((iterations, loss));
    }
    let g = inf_norm(&gw, &gb);
    Ok(LogisticFit {
        head: ModuleSpec::LogisticHead {
            weights: w,
            bias: b,
        },
        losses,
        grad_inf_norm: g,
        iterations,
        converged: g <= config.grad_tol,
    })
}

/// Trainable parameters of one dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub w: Matrix,
    pub b: Vector,
    pub activation: Option<ActivationFn>,
}

/// Loss kind for [`mlp_loss_and_grad`].
#[derive(Clone, Copy, Debug)]
pub enum Objective<'a> {
    /// Mean squared error against scalar targets.
    Mse(&'a [f64]),
    /// Mean softmax cross-entropy over the final layer's outputs.
    CrossEntropy(&'a [usize]),
}

fn forward(layers: &[DenseLayer], x: &Matrix) -> Vec<Matrix> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(x.clone());
    for l in layers {
        let mut z = acts.last().expect("input pushed").matmul_t(&l.w);
        add_bias(&mut z, &l.b);
        if let Some(f) = l.activation {
            z = z.map(|v| f.apply(v));
        }
        acts.push(z);
    }
    acts
}

fn objective_value(out: &Matrix, obj: Objective) -> (f64, Matrix) {
    match obj {
        Objective::Mse(y) => {
            let n = y.len() as f64;
            let mut g = Matrix::zeros(out.rows(), 1);
            let mut loss = 0.0;
            for (i, &yi) in y.iter().enumerate() {
                let r = out[(i, 0)] - yi;
                loss += r * r / n;
                g.row_mut(i)[0] = 2.0 * r / n;
            }
            (loss, g)
        }
        Objective::CrossEntropy(labels) => cross_entropy(out, labels),
    }
}

pub fn mlp_loss(layers: &[DenseLayer], x: &Matrix, obj: Objective) -> f64 {
    let acts = forward(layers, x);
    objective_value(acts.last().expect("output"), obj).0
}

/// Loss and per-layer `(∂W, ∂b)` by backpropagation.
pub fn mlp_loss_and_grad(
    layers: &[DenseLayer],
    x: &Matrix,
    obj: Objective,
) -> (f64, Vec<(Matrix, Vector)>) {
    let acts = forward(layers, x);
    let (loss, mut delta) = objective_value(acts.last().expect("output"), obj);
    let mut grads = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate().rev() {
        if let Some(f) = layer.activation {
            let a = &acts[l + 1];
            for i in 0..delta.rows() {
                for (dv, &av) in delta.row_mut(i).iter_mut().zip(a.row(i)) {
                    *dv *= f.derivative_from_output(av);
                }
            }
        }
        grads.push((delta.transpose().matmul(&acts[l]), col_sums(&delta)));
        if l > 0 {
            delta = delta.matmul(&layer.w);
        }
    }
    grads.reverse();
    (loss, grads)
}

/// `N(0, 1/fan_in)` weights and zero biases.
pub fn init_layers(d: usize, arch: &[LayerSpec], rng: &mut RngStream) -> Vec<DenseLayer> {
    let mut fan_in = d;
    arch.iter()
        .map(|spec| {
            let s = 1.0 / (fan_in as f64).sqrt();
            let w = Matrix::from_fn(spec.width, fan_in, |_, _| s * rng.standard_normal());
            fan_in = spec.width;
            DenseLayer {
                w,
                b: vec![0.0; spec.width],
                activation: spec.activation,
            }
        })
        .collect()
}

/// Pipeline with one `Linear` (or, for a classifier's final layer,
/// `LogisticHead`) module per layer plus an `Activation` module where set.
pub fn layers_to_pipeline(
    layers: &[DenseLayer],
    arch: &[LayerSpec],
    classifier: bool,
) -> Result<Pipeline> {
    let mut modules = Vec::new();
    let mut taps = Vec::new();
    for (i, (l, spec)) in layers.iter().zip(arch).enumerate() {
        let last = i + 1 == layers.len();
        modules.push(if last && classifier {
            ModuleSpec::LogisticHead {
                weights: l.w.clone(),
                bias: l.b.clone(),
            }
        } else {
            ModuleSpec::Linear {
                weights: l.w.clone(),
                bias: Some(l.b.clone()),
            }
        });
        if let Some(function) = l.activation {
            modules.push(ModuleSpec::Activation { function });
        }
        if let Some(id) = &spec.tap {
            taps.push(Tap {
                id: id.clone(),
                module: modules.len() - 1,
            });
        }
    }
    Pipeline::new(modules, taps)
}

#[derive(Clone, Debug)]
pub struct MlpFit {
    pub pipeline: Pipeline,
    /// `(epoch, full training loss)`, epoch 0 at initialization.
    pub losses: Vec<(usize, f64)>,
    pub final_step: f64,
}

/// Minibatch gradient descent with seeded shuffles. After each epoch the
/// full training loss is computed; an increase reverts the epoch and halves
/// the step.
pub fn train_mlp(data: &Dataset, config: &TrainConfig) -> Result<MlpFit> {
    config.validate()?;
    let arch = &config.architecture;
    if arch.is_empty() || arch.iter().any(|l| l.width == 0) {
        return Err(Error::InvalidParameter(
            "architecture needs non-empty layers".into(),
        ));
    }
    let out_width = arch[arch.len() - 1].width;
    let classifier = match &data.y {
        Targets::Regression(_) if out_width == 1 => false,
        Targets::Classes { n_classes, .. } if out_width == *n_classes => true,
        _ => {
            return Err(Error::Shape(format!(
                "output width {out_width} does not match the targets"
            )))
        }
    };
    if arch[arch.len() - 1].activation.is_some() {
        return Err(Error::InvalidParameter(
            "output layer must be linear".into(),
        ));
    }

    let mut layers = init_layers(
        data.d(),
        arch,
        &mut RngStream::new(config.seed, streams::INIT),
    );
    let mut shuffle = RngStream::new(config.seed, streams::SHUFFLE);
    let full = |layers: &[DenseLayer]| match &data.y {
        Targets::Regression(y) => mlp_loss(layers, &data.x, Objective::Mse(y)),
        Targets::Classes { labels, .. } => {
            mlp_loss(layers, &data.x, Objective::CrossEntropy(labels))
        }
    };
    let n = data.n();
    let bs = if config.batch_size == 0 {
        n
    } else {
        config.batch_size.min(n)
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = config.step_size;
    let mut loss = full(&layers);
    let mut losses = vec![(0, loss)];

    for epoch in 1..=config.epochs {
        let snapshot = layers.clone();
        shuffle.shuffle(&mut order);
        for chunk in order.chunks(bs) {
            let xb = data.x.select_rows(chunk);
            let (_, grads) = match &data.y {
                Targets::Regression(y) => {
                    let yb: Vec<f64> = chunk.iter().map(|&i| y[i]).collect();
                    mlp_loss_and_grad(&layers, &xb, Objective::Mse(&yb))
                }
                Targets::Classes { labels, .. } => {
                    let lb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                    mlp_loss_and_grad(&layers, &xb, Objective::CrossEntropy(&lb))
                }
            };
            for (l, (gw, gb)) in layers.iter_mut().zip(grads) {
                l.w = l.w.sub(&gw.scale(step));
                l.b.iter_mut().zip(&gb).for_each(|(v, g)| *v -= step * g);
            }
        }
        let new = full(&layers);
        if !new.is_finite() || new > DIVERGENCE_LOSS {
            return Err(Error::Diverged { epoch, loss: new });
        }
        if new > loss {
            layers = snapshot;
            step /= 2.0;
        } else {
            loss = new;
        }
        losses.push((epoch, loss));
    }
    Ok(MlpFit {
        pipeline: layers_to_pipeline(&layers, arch, classifier)?,
        losses,
        final_step: step,
    })
}

/// Index of the largest entry of each row.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.row_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

/// Misclassification rate of `p` (argmax of its outputs).
pub fn classification_error(p: &Pipeline, data: &Dataset) -> Result<f64> {
    let (labels, _) = data.require_labels()?;
    let pred = argmax_rows(&p.predict_batch(&data.x)?);
    let wrong = pred.iter().zip(labels).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / labels.len() as f64)
}

pub fn regression_mse(p: &Pipeline, data: &Dataset) -> Result<f64> {
    let y = data.require_targets()?;
    let out = p.predict_batch(&data.x)?;
    Ok(y.iter()
        .enumerate()
        .map(|(i, yi)| (out[(i, 0)] - yi).powi(2))
        .sum::<f64>()
        / y.len() as f64)
}

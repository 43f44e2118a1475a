//! The predictor contract and closed-form baselines.
//!
//! Every model is fitted in one non-iterative pass over tabular training
//! samples. `knn` stands in for context-conditioned predictors: it keeps
//! the training pool and predicts from a context built per query.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::SplitAssignment;
use crate::partition::{select_context, ContextSpec};
use crate::windowing::TabularSample;

/// Ridge jitter added to the Gram diagonal of the least-squares fit.
pub const RIDGE_JITTER: f64 = 1e-10;
/// Offset added to targets before the log when any target is non-positive.
pub const EXP_OFFSET: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "regression" => Some(Task::Regression),
            "classification" => Some(Task::Classification),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mean,
    Majority,
    LinearLs,
    Exponential,
    Knn { k: usize, context: ContextSpec },
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Mean => "mean",
            ModelKind::Majority => "majority",
            ModelKind::LinearLs => "linear_ls",
            ModelKind::Exponential => "exponential",
            ModelKind::Knn { .. } => "knn",
        }
    }

    fn supports(&self, task: Task) -> bool {
        match self {
            ModelKind::Mean | ModelKind::LinearLs | ModelKind::Exponential => task == Task::Regression,
            ModelKind::Majority => task == Task::Classification,
            ModelKind::Knn { .. } => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Constant(f64),
    /// Intercept followed by one weight per tabular feature.
    Linear(Vec<f64>),
    /// y = a exp(b s) - offset, with s the mean of the tabular vector.
    Exponential {
        a: f64,
        b: f64,
        offset: f64,
    },
    Knn {
        k: usize,
        context: ContextSpec,
        pool: Vec<TabularSample>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub kind: &'static str,
    pub task: Task,
    pub dim: usize,
    pub params: ModelParams,
}

fn scalar_label(s: &TabularSample) -> Result<f64> {
    s.y.scalar().ok_or_else(|| {
        Error::Shape(format!(
            "sample ({}, {}) has a segment label; baselines predict scalar labels",
            s.unit_id, s.k
        ))
    })
}

fn class_code(y: f64) -> Result<i64> {
    if y.is_finite() && y.fract() == 0.0 {
        Ok(y as i64)
    } else {
        Err(Error::Range(format!("class label {y} is not an integer code")))
    }
}

/// Most frequent code; ties go to the smallest code.
fn majority(codes: impl IntoIterator<Item = i64>) -> Option<i64> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for c in codes {
        *counts.entry(c).or_default() += 1;
    }
    let mut best: Option<(i64, usize)> = None;
    for (c, n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((c, n));
        }
    }
    best.map(|(c, _)| c)
}

fn least_squares(rows: &[&[f64]], y: &[f64]) -> Result<Vec<f64>> {
    let n = rows.len();
    let p = rows[0].len() + 1;
    let a = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    let b = DVector::from_column_slice(y);
    let mut gram = a.transpose() * &a;
    for j in 0..p {
        gram[(j, j)] += RIDGE_JITTER;
    }
    let rhs = a.transpose() * b;
    let beta = match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => gram
            .svd(true, true)
            .solve(&rhs, 0.0)
            .map_err(|e| Error::Fit(format!("least squares: {e}")))?,
    };
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("least squares produced non-finite coefficients".into()));
    }
    Ok(beta.iter().copied().collect())
}

fn summary(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Fits a baseline on the training samples in one pass.
pub fn fit_baseline(kind: ModelKind, train: &[TabularSample], task: Task) -> Result<FittedModel> {
    let first = train.first().ok_or_else(|| Error::Fit("no training samples".into()))?;
    if !kind.supports(task) {
        return Err(Error::Spec(format!(
            "model `{}` does not support {} tasks",
            kind.name(),
            task.as_str()
        )));
    }
    let dim = first.x.len();
    if let Some(bad) = train.iter().find(|s| s.x.len() != dim) {
        return Err(Error::Shape(format!(
            "sample ({}, {}) has {} features, expected {dim}",
            bad.unit_id,
            bad.k,
            bad.x.len()
        )));
    }
    let y: Vec<f64> = train.iter().map(scalar_label).collect::<Result<_>>()?;
    if task == Task::Classification {
        for v in &y {
            class_code(*v)?;
        }
    }
    let params = match kind {
        ModelKind::Mean => ModelParams::Constant(summary(&y)),
        ModelKind::Majority => {
            let codes = y.iter().map(|v| *v as i64);
            ModelParams::Constant(majority(codes).expect("non-empty") as f64)
        }
        ModelKind::LinearLs => {
            let rows: Vec<&[f64]> = train.iter().map(|s| s.x.as_slice()).collect();
            ModelParams::Linear(least_squares(&rows, &y)?)
        }
        ModelKind::Exponential => {
            let offset = if y.iter().any(|v| *v <= 0.0) { EXP_OFFSET } else { 0.0 };
            let (mut s, mut ly) = (Vec::new(), Vec::new());
            for (sample, v) in train.iter().zip(&y) {
                if v + offset > 0.0 {
                    s.push(summary(&sample.x));
                    ly.push((v + offset).ln());
                }
            }
            if s.is_empty() {
                return Err(Error::Fit("exponential fit needs a positive target".into()));
            }
            let rows: Vec<&[f64]> = s.iter().map(std::slice::from_ref).collect();
            let beta = least_squares(&rows, &ly)?;
            ModelParams::Exponential {
                a: beta[0].exp(),
                b: beta[1],
                offset,
            }
        }
        ModelKind::Knn { k, context } => {
            if k == 0 {
                return Err(Error::Spec("knn needs k >= 1".into()));
            }
            ModelParams::Knn {
                k,
                context,
                pool: train.to_vec(),
            }
        }
    };
    Ok(FittedModel {
        kind: kind.name(),
        task,
        dim,
        params,
    })
}

impl FittedModel {
    pub fn needs_context(&self) -> bool {
        matches!(self.params, ModelParams::Knn { .. })
    }

    /// Builds the context for `sample` from the stored pool.
    pub fn context_for<'a>(
        &'a self,
        sample: &TabularSample,
        assignment: &SplitAssignment,
    ) -> Result<Option<Vec<&'a TabularSample>>> {
        match &self.params {
            ModelParams::Knn { context, pool, .. } => select_context(sample, pool, context, assignment).map(Some),
            _ => Ok(None),
        }
    }

    /// Predicts for one sample; context models need the context built for it.
    pub fn predict(&self, sample: &TabularSample, context: Option<&[&TabularSample]>) -> Result<f64> {
        if sample.x.len() != self.dim {
            return Err(Error::Shape(format!(
                "sample has {} features, model was fitted on {}",
                sample.x.len(),
                self.dim
            )));
        }
        match &self.params {
            ModelParams::Constant(c) => Ok(*c),
            ModelParams::Linear(beta) => Ok(beta[0] + beta[1..].iter().zip(&sample.x).map(|(w, x)| w * x).sum::<f64>()),
            ModelParams::Exponential { a, b, offset } => Ok(a * (b * summary(&sample.x)).exp() - offset),
            ModelParams::Knn { .. } => {
                let nearest = self.neighbor_labels(sample, context)?;
                match self.task {
                    Task::Regression => Ok(summary(&nearest)),
                    Task::Classification => {
                        let codes = nearest.iter().map(|v| class_code(*v)).collect::<Result<Vec<_>>>()?;
                        Ok(majority(codes).expect("non-empty") as f64)
                    }
                }
            }
        }
    }

    /// Labels of the k nearest context members, closest first.
    fn neighbor_labels(&self, sample: &TabularSample, context: Option<&[&TabularSample]>) -> Result<Vec<f64>> {
        let ModelParams::Knn { k, .. } = &self.params else {
            return Err(Error::Spec(format!("model `{}` has no neighbors", self.kind)));
        };
        let context = context.filter(|c| !c.is_empty()).ok_or(Error::Context {
            requested: 1,
            available: 0,
        })?;
        let mut ranked: Vec<(f64, &TabularSample)> = context
            .iter()
            .map(|m| {
                let d: f64 = m.x.iter().zip(&sample.x).map(|(a, b)| (a - b) * (a - b)).sum();
                (d.sqrt(), *m)
            })
            .collect();
        ranked.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| a.1.unit_id.as_bytes().cmp(b.1.unit_id.as_bytes()))
                .then(a.1.k.cmp(&b.1.k))
        });
        ranked.iter().take(*k).map(|(_, m)| scalar_label(m)).collect()
    }

    /// Per-class scores in `class_set` order for classification models:
    /// one-hot for constant predictors, neighbor vote shares for knn.
    pub fn predict_scores(
        &self,
        sample: &TabularSample,
        context: Option<&[&TabularSample]>,
        class_set: &[i64],
    ) -> Result<Option<Vec<f64>>> {
        if self.task != Task::Classification {
            return Ok(None);
        }
        let codes = match &self.params {
            ModelParams::Knn { .. } => self
                .neighbor_labels(sample, context)?
                .into_iter()
                .map(class_code)
                .collect::<Result<Vec<_>>>()?,
            _ => vec![class_code(self.predict(sample, context)?)?],
        };
        let n = codes.len() as f64;
        Ok(Some(
            class_set
                .iter()
                .map(|c| codes.iter().filter(|x| *x == c).count() as f64 / n)
                .collect(),
        ))
    }

    /// Predicts every sample, building contexts from the stored pool.
    pub fn predict_all(&self, samples: &[TabularSample], assignment: &SplitAssignment) -> Result<Vec<f64>> {
        samples
            .iter()
            .map(|s| {
                let ctx = self.context_for(s, assignment)?;
                self.predict(s, ctx.as_deref())
            })
            .collect()
    }
}

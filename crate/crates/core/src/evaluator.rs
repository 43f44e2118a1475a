//! Metrics on (prediction, target) pairs with window-level or per-unit
//! aggregation, optional descaling and the prognostics scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PHM_EPSILON: f64 = 1e-8;
pub const DEFAULT_NASA_EARLY: f64 = 13.0;
pub const DEFAULT_NASA_LATE: f64 = 10.0;

/// One scored sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub unit_id: String,
    pub k: i64,
    pub y_hat: f64,
    pub y: f64,
    /// Per-class scores in class-set order, for ranking metrics.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scores: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Mae,
    Mse,
    Rmse,
    Phm,
    Nasa,
    Accuracy,
    MacroF1,
    Auroc,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Mse => "mse",
            Metric::Rmse => "rmse",
            Metric::Phm => "phm_score",
            Metric::Nasa => "nasa_score",
            Metric::Accuracy => "accuracy",
            Metric::MacroF1 => "macro_f1",
            Metric::Auroc => "auroc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "mae" => Metric::Mae,
            "mse" => Metric::Mse,
            "rmse" => Metric::Rmse,
            "phm_score" => Metric::Phm,
            "nasa_score" => Metric::Nasa,
            "accuracy" => Metric::Accuracy,
            "macro_f1" => Metric::MacroF1,
            "auroc" => Metric::Auroc,
            _ => return None,
        })
    }

    pub fn is_regression(self) -> bool {
        matches!(
            self,
            Metric::Mae | Metric::Mse | Metric::Rmse | Metric::Phm | Metric::Nasa
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Pool every pair, then apply the metric.
    WindowLevel,
    /// Apply the metric per unit, then average units with equal weight.
    PerUnit,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::WindowLevel => "window",
            Aggregation::PerUnit => "per_unit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "window" => Some(Aggregation::WindowLevel),
            "per_unit" => Some(Aggregation::PerUnit),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub aggregation: Aggregation,
    pub metrics: Vec<Metric>,
    pub phm_epsilon: f64,
    pub nasa_early: f64,
    pub nasa_late: f64,
    /// Declared classes, for classification metrics.
    pub class_set: Vec<i64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            aggregation: Aggregation::WindowLevel,
            metrics: vec![Metric::Mae, Metric::Mse, Metric::Rmse],
            phm_epsilon: DEFAULT_PHM_EPSILON,
            nasa_early: DEFAULT_NASA_EARLY,
            nasa_late: DEFAULT_NASA_LATE,
            class_set: Vec::new(),
        }
    }
}

fn non_empty<T>(xs: &[T]) -> Result<()> {
    if xs.is_empty() {
        Err(Error::Metric("no pairs to evaluate".into()))
    } else {
        Ok(())
    }
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len() as f64;
    xs.sum::<f64>() / n
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
}

pub fn regression_metrics(pairs: &[(f64, f64)]) -> Result<RegressionMetrics> {
    non_empty(pairs)?;
    let mae = mean(pairs.iter().map(|(p, y)| (p - y).abs()));
    let mse = mean(pairs.iter().map(|(p, y)| (p - y) * (p - y)));
    Ok(RegressionMetrics {
        mae,
        mse,
        rmse: mse.sqrt(),
    })
}

/// Asymmetric accuracy of one percentage error.
pub fn phm_accuracy(e: f64) -> f64 {
    let ln_half = 0.5f64.ln();
    if e <= 0.0 {
        (-ln_half * e / 5.0).exp()
    } else {
        (ln_half * e / 20.0).exp()
    }
}

/// Mean of the asymmetric accuracy over e = 100 (y - y_hat) / (y + epsilon).
pub fn phm_score(pairs: &[(f64, f64)], epsilon: f64) -> Result<f64> {
    non_empty(pairs)?;
    if epsilon <= 0.0 {
        return Err(Error::Metric("phm epsilon must be positive".into()));
    }
    Ok(mean(
        pairs.iter().map(|(p, y)| phm_accuracy(100.0 * (y - p) / (y + epsilon))),
    ))
}

/// Mean of exp(-d / a_early) - 1 for early and exp(d / a_late) - 1 for late
/// predictions, with d = y_hat - y.
pub fn nasa_score(pairs: &[(f64, f64)], a_early: f64, a_late: f64) -> Result<f64> {
    non_empty(pairs)?;
    if a_early <= 0.0 || a_late <= 0.0 {
        return Err(Error::Metric("nasa score constants must be positive".into()));
    }
    Ok(mean(pairs.iter().map(|(p, y)| {
        let d = p - y;
        if d < 0.0 {
            (-d / a_early).exp() - 1.0
        } else {
            (d / a_late).exp() - 1.0
        }
    })))
}

pub fn accuracy(pairs: &[(i64, i64)]) -> Result<f64> {
    non_empty(pairs)?;
    Ok(pairs.iter().filter(|(p, y)| p == y).count() as f64 / pairs.len() as f64)
}

/// Unweighted mean of per-class F1 over the declared classes; a class with
/// no predictions and no occurrences contributes 0.
pub fn macro_f1(pairs: &[(i64, i64)], class_set: &[i64]) -> Result<f64> {
    non_empty(pairs)?;
    if class_set.is_empty() {
        return Err(Error::Metric("macro_f1 needs a declared class set".into()));
    }
    for (p, y) in pairs {
        if !class_set.contains(p) || !class_set.contains(y) {
            return Err(Error::Metric(format!("class pair ({p}, {y}) is outside the class set")));
        }
    }
    let f1 = |c: i64| {
        let tp = pairs.iter().filter(|(p, y)| *p == c && *y == c).count() as f64;
        let fp = pairs.iter().filter(|(p, y)| *p == c && *y != c).count() as f64;
        let fn_ = pairs.iter().filter(|(p, y)| *p != c && *y == c).count() as f64;
        if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        }
    };
    Ok(mean(class_set.iter().map(|c| f1(*c))))
}

/// Mann-Whitney statistic: the probability that a positive outranks a
/// negative, ties counting one half. Computed from midranks.
pub fn auroc_binary(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("auroc needs both positive and negative samples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for idx in &order[i..=j] {
            ranks[*idx] = midrank;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, p)| **p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Binary AUROC on the second class's score, or the macro one-vs-rest mean
/// for more classes. Classes without both positives and negatives are skipped.
pub fn auroc(scores: &[Vec<f64>], truth: &[i64], class_set: &[i64]) -> Result<f64> {
    non_empty(truth)?;
    if scores.len() != truth.len() {
        return Err(Error::Shape("score vectors and labels differ in length".into()));
    }
    if let Some(bad) = scores.iter().find(|s| s.len() != class_set.len()) {
        return Err(Error::Shape(format!(
            "score vector of length {} for {} classes",
            bad.len(),
            class_set.len()
        )));
    }
    let one_vs_rest = |ci: usize| {
        let s: Vec<f64> = scores.iter().map(|v| v[ci]).collect();
        let pos: Vec<bool> = truth.iter().map(|y| *y == class_set[ci]).collect();
        auroc_binary(&s, &pos)
    };
    if class_set.len() == 2 {
        return one_vs_rest(1);
    }
    let per_class: Vec<f64> = (0..class_set.len()).filter_map(|ci| one_vs_rest(ci).ok()).collect();
    if per_class.is_empty() {
        return Err(Error::Metric("no class has both positive and negative samples".into()));
    }
    Ok(mean(per_class.into_iter()))
}

fn class_pairs(preds: &[&Prediction]) -> Result<Vec<(i64, i64)>> {
    preds
        .iter()
        .map(|p| {
            let code = |v: f64| {
                if v.is_finite() && v.fract() == 0.0 {
                    Ok(v as i64)
                } else {
                    Err(Error::Metric(format!("{v} is not a class code")))
                }
            };
            Ok((code(p.y_hat)?, code(p.y)?))
        })
        .collect()
}

/// Applies one metric to a set of predictions.
pub fn metric_value(metric: Metric, preds: &[&Prediction], cfg: &EvalConfig) -> Result<f64> {
    non_empty(preds)?;
    let reg = || preds.iter().map(|p| (p.y_hat, p.y)).collect::<Vec<_>>();
    let value = match metric {
        Metric::Mae => regression_metrics(&reg())?.mae,
        Metric::Mse => regression_metrics(&reg())?.mse,
        Metric::Rmse => regression_metrics(&reg())?.rmse,
        Metric::Phm => phm_score(&reg(), cfg.phm_epsilon)?,
        Metric::Nasa => nasa_score(&reg(), cfg.nasa_early, cfg.nasa_late)?,
        Metric::Accuracy => accuracy(&class_pairs(preds)?)?,
        Metric::MacroF1 => macro_f1(&class_pairs(preds)?, &cfg.class_set)?,
        Metric::Auroc => {
            let scores = preds
                .iter()
                .map(|p| {
                    p.scores
                        .clone()
                        .ok_or_else(|| Error::Metric("auroc needs score vectors".into()))
                })
                .collect::<Result<Vec<_>>>()?;
            let truth: Vec<i64> = class_pairs(preds)?.into_iter().map(|(_, y)| y).collect();
            auroc(&scores, &truth, &cfg.class_set)?
        }
    };
    if !value.is_finite() {
        return Err(Error::Metric(format!("{} is not finite", metric.name())));
    }
    Ok(value)
}

/// Pools every pair across units before applying the metric.
pub fn aggregate_window_level(preds: &[Prediction], metric: Metric, cfg: &EvalConfig) -> Result<f64> {
    metric_value(metric, &preds.iter().collect::<Vec<_>>(), cfg)
}

fn by_unit(preds: &[Prediction]) -> BTreeMap<&str, Vec<&Prediction>> {
    let mut out: BTreeMap<&str, Vec<&Prediction>> = BTreeMap::new();
    for p in preds {
        out.entry(p.unit_id.as_str()).or_default().push(p);
    }
    out
}

/// The unweighted mean over units of the per-unit metric, and the breakdown.
pub fn aggregate_per_unit(
    preds: &[Prediction],
    metric: Metric,
    cfg: &EvalConfig,
) -> Result<(f64, BTreeMap<String, f64>)> {
    non_empty(preds)?;
    let mut per_unit = BTreeMap::new();
    for (unit, ps) in by_unit(preds) {
        per_unit.insert(unit.to_string(), metric_value(metric, &ps, cfg)?);
    }
    let value = mean(per_unit.values().copied());
    Ok((value, per_unit))
}

/// Maps predictions and targets back to physical units, one unit at a time.
pub fn descale_predictions(
    preds: &[Prediction],
    inverse: impl Fn(&str, &[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<Prediction>> {
    let mut out = preds.to_vec();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in preds.iter().enumerate() {
        groups.entry(p.unit_id.as_str()).or_default().push(i);
    }
    for (unit, idx) in groups {
        let y_hat: Vec<f64> = idx.iter().map(|i| preds[*i].y_hat).collect();
        let y: Vec<f64> = idx.iter().map(|i| preds[*i].y).collect();
        let (y_hat, y) = (inverse(unit, &y_hat)?, inverse(unit, &y)?);
        if y_hat.len() != idx.len() || y.len() != idx.len() {
            return Err(Error::Descale("inverse changed the number of values".into()));
        }
        for (n, i) in idx.iter().enumerate() {
            out[*i].y_hat = y_hat[n];
            out[*i].y = y[n];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics_denormalized: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_unit: Option<BTreeMap<String, BTreeMap<String, f64>>>,
    pub counts: BTreeMap<String, usize>,
}

impl MetricReport {
    /// Compact JSON with sorted keys.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&serde_json::to_value(self)?)?)
    }
}

type PerUnitBreakdown = BTreeMap<String, BTreeMap<String, f64>>;

fn aggregate_all(preds: &[Prediction], cfg: &EvalConfig) -> Result<(BTreeMap<String, f64>, Option<PerUnitBreakdown>)> {
    let mut metrics = BTreeMap::new();
    match cfg.aggregation {
        Aggregation::WindowLevel => {
            for m in &cfg.metrics {
                metrics.insert(m.name().to_string(), aggregate_window_level(preds, *m, cfg)?);
            }
            Ok((metrics, None))
        }
        Aggregation::PerUnit => {
            let mut breakdown: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
            for m in &cfg.metrics {
                let (v, units) = aggregate_per_unit(preds, *m, cfg)?;
                metrics.insert(m.name().to_string(), v);
                for (u, x) in units {
                    breakdown.entry(u).or_default().insert(m.name().to_string(), x);
                }
            }
            Ok((metrics, Some(breakdown)))
        }
    }
}

/// Builds the report in normalized space and, given descaled predictions,
/// in physical units too.
pub fn evaluate(preds: &[Prediction], cfg: &EvalConfig, descaled: Option<&[Prediction]>) -> Result<MetricReport> {
    non_empty(preds)?;
    if cfg.metrics.is_empty() {
        return Err(Error::Metric("no metrics requested".into()));
    }
    let (metrics, per_unit) = aggregate_all(preds, cfg)?;
    let metrics_denormalized = match descaled {
        Some(d) => Some(aggregate_all(d, cfg)?.0),
        None => None,
    };
    let counts = by_unit(preds)
        .into_iter()
        .map(|(u, ps)| (u.to_string(), ps.len()))
        .collect();
    Ok(MetricReport {
        metrics,
        metrics_denormalized,
        per_unit,
        counts,
    })
}

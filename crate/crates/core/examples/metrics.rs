//! Regression, classification and prognostics scores.
//!
//! Run with `cargo run --example metrics`.

use phm_protocol::evaluator::{
    aggregate_per_unit, aggregate_window_level, auroc_binary, macro_f1, nasa_score, phm_accuracy, EvalConfig, Metric,
    Prediction,
};
use phm_protocol::Result;

fn pred(unit: &str, y_hat: f64, y: f64) -> Prediction {
    Prediction {
        unit_id: unit.into(),
        k: 0,
        y_hat,
        y,
        scores: None,
    }
}

fn main() -> Result<()> {
    // Unit A contributes two windows, unit B one.
    let preds = [pred("A", 11.0, 10.0), pred("A", 11.0, 10.0), pred("B", 13.0, 10.0)];
    let cfg = EvalConfig::default();
    let pooled = aggregate_window_level(&preds, Metric::Mae, &cfg)?;
    let (per_unit, breakdown) = aggregate_per_unit(&preds, Metric::Mae, &cfg)?;
    println!("window-level MAE {pooled:.4}, per-unit MAE {per_unit:.4}, breakdown {breakdown:?}");

    for e in [-10.0, -5.0, 0.0, 20.0, 40.0] {
        println!("PHM accuracy at e = {e:>5}: {:.4}", phm_accuracy(e));
    }
    println!("NASA score, 10 late: {:.4}", nasa_score(&[(10.0, 0.0)], 13.0, 10.0)?);
    println!("NASA score, 10 early: {:.4}", nasa_score(&[(0.0, 10.0)], 13.0, 10.0)?);

    let auc = auroc_binary(&[0.9, 0.4, 0.5, 0.1], &[true, true, false, false])?;
    println!("AUROC {auc}");
    println!("macro F1 {:.4}", macro_f1(&[(0, 0), (1, 1), (1, 2)], &[0, 1, 2])?);
    Ok(())
}

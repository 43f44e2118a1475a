//! Building labelled contexts for a context-conditioned predictor.
//!
//! Run with `cargo run --example context_selection`.

use phm_protocol::model::SplitTag;
use phm_protocol::models::{fit_baseline, ModelKind, Task};
use phm_protocol::partition::{select_context, ContextSelection, ContextSpec};
use phm_protocol::runner::{execute_run, RunConfig};
use phm_protocol::windowing::{TabularSample, WindowLabel};
use phm_protocol::Result;

fn sample(unit: &str, k: i64, x: f64) -> TabularSample {
    TabularSample {
        unit_id: unit.into(),
        k,
        j_sup: k as usize,
        x: vec![x],
        y: WindowLabel::Scalar(10.0 * x),
        split: SplitTag::Train,
    }
}

fn main() -> Result<()> {
    let pool: Vec<TabularSample> = (0..8)
        .map(|k| sample(if k < 4 { "a" } else { "b" }, k, k as f64))
        .collect();
    let assignment = phm_protocol::model::SplitAssignment::inter(&["a", "b"], &[], &[])?;
    let query = sample("a", 3, 3.2);

    let nearest = ContextSpec {
        size: 3,
        selection: ContextSelection::Nearest,
        enforce_intra_boundary: true,
    };
    let ctx = select_context(&query, &pool, &nearest, &assignment)?;
    println!(
        "nearest context: {:?}",
        ctx.iter().map(|m| (&m.unit_id, m.k)).collect::<Vec<_>>()
    );

    let random = ContextSpec {
        selection: ContextSelection::Random { seed: 11 },
        ..nearest
    };
    let ctx_r = select_context(&query, &pool, &random, &assignment)?;
    println!(
        "random context:  {:?}",
        ctx_r.iter().map(|m| (&m.unit_id, m.k)).collect::<Vec<_>>()
    );

    let model = fit_baseline(ModelKind::Knn { k: 2, context: nearest }, &pool, Task::Regression)?;
    println!("knn(2) prediction: {}", model.predict(&query, Some(&ctx))?);

    // The same model family on a diagnostics task, through the runner.
    let config = RunConfig::parse(
        br#"{
            "datasource": {"kind": "synthetic", "task": "classification", "classes": 3, "n_units": 6},
            "transforms": [{"kind": "standard"}],
            "window": {"L_seq": 3},
            "split": {"mode": "inter", "unit_fractions": {"train_frac": 0.5, "val_frac": 0.0}},
            "model": {"kind": "knn", "k": 3, "context": {"size": 15}},
            "evaluator": {"metrics": ["accuracy", "macro_f1", "auroc"]}
        }"#,
        None,
        None,
    )?;
    println!(
        "diagnostics test metrics: {:?}",
        execute_run(&config, None)?.test.metrics
    );
    Ok(())
}

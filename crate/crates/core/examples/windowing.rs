//! Slicing one transformed trajectory into supervised windows.
//!
//! Run with `cargo run --example windowing`.

use phm_protocol::model::{AlignedSeries, Matrix, SplitTag, SupportMap};
use phm_protocol::windowing::{admissible_starts, n_slices, slice_unit, tabularize, WindowSpec};
use phm_protocol::Result;

fn main() -> Result<()> {
    let t_prime = 15;
    let spec = WindowSpec::new(4, 3);
    let starts = admissible_starts(t_prime, &spec)?;
    println!("T' = {t_prime}, L_seq = 4, stride = 3");
    println!("N = {}, starts = {starts:?}", n_slices(t_prime, &spec)?);

    // Feature value t at index t, target 100 + t, so labels are easy to read.
    let features = Matrix::column_vector((1..=t_prime).map(|t| t as f64).collect());
    let targets = (1..=t_prime).map(|t| 100.0 + t as f64).collect();
    let series = AlignedSeries::new("demo", features, targets, SupportMap::identity(t_prime))?;
    for w in slice_unit(&series, &spec, SplitTag::Train)? {
        println!(
            "k = {:>2}  x = {:?}  y = {:?}  j_sup = {}",
            w.k,
            tabularize(&w.window),
            w.y,
            w.j_sup
        );
    }

    // A warm start lets windows begin before the first index; the padding
    // repeats the first row.
    let warm = WindowSpec {
        warm_start: 2,
        ..WindowSpec::new(4, 1)
    };
    let first = &slice_unit(&series, &warm, SplitTag::Train)?[0];
    println!("warm start: k = {} x = {:?}", first.k, tabularize(&first.window));
    Ok(())
}

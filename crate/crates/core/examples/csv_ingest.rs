//! Long-format CSV in and out.
//!
//! Run with `cargo run --example csv_ingest`.

use phm_protocol::datasource::{generate_synthetic, read_csv, write_csv, CsvSchema, SyntheticSpec};
use phm_protocol::Result;

fn main() -> Result<()> {
    let units = generate_synthetic(&SyntheticSpec {
        n_units: 2,
        t_range: (4, 5),
        ..SyntheticSpec::default()
    })?;
    let mut buf = Vec::new();
    write_csv(&mut buf, &units)?;
    let text = String::from_utf8_lossy(&buf);
    println!("{text}");

    let back = read_csv(buf.as_slice(), &CsvSchema::default())?;
    for u in &back {
        println!(
            "{}: {} rows, channels {:?}, target {:?}",
            u.unit_id,
            u.len(),
            u.channel_names,
            u.target
        );
    }
    Ok(())
}

//! Raw trajectory sources: long-format CSV ingestion, a seeded synthetic
//! run-to-failure generator, and battery ah-RUL target construction.

mod ah_rul;
mod csv_source;
mod synthetic;

pub use ah_rul::{construct_ah_rul, construct_ah_rul_cycles, AhRulSpec, CycleProfile, EolRule, SignConvention};
pub use csv_source::{load_csv, read_csv, write_csv, CsvSchema};
pub use synthetic::{generate_synthetic, DegradationShape, SyntheticSpec, SyntheticTask};

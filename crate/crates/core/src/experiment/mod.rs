//! Dimension sweeps: ingest a dataset, lift it with a feature map, solve the
//! interpolator in every `(d, p)` cell, and tabulate the criterion next to test error.

pub mod dataset;
pub mod emit;
pub mod stats;
pub mod sweep;

pub use dataset::{ingest_csv, mse, split, synthetic_sine, Dataset, IngestOptions, Ingested, RowIssue};
pub use emit::{emit_records, emit_reports, read_column_pair, read_records_csv, write_records_csv, Format};
pub use stats::{bootstrap_ci, spearman, CorrelationReport};
pub use sweep::{run_sweep, run_sweep_with_threads, ExperimentRecord, FeatureKind, Status, SweepConfig};

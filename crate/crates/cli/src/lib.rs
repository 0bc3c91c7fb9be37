//! Batch pipeline over the detection core: scan, triage, retrain, report.

pub mod pipeline;
pub mod report;
pub mod stores;
pub mod verdict;

pub use pipeline::{label, record_scan, retrain, train_and_save, PipelineError, ScanItem, ScanRecord, Scanner};
pub use report::{read_report, render_table, write_report, ModelSummary, Summary};
pub use stores::{CorpusStore, ModelStore, StoreError};
pub use verdict::{derive_status, FinalStatus, Triage, Verdict};

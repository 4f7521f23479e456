//! Dataset ingestion, run configuration, experiment execution and exports.

pub mod config;
pub mod dataset;
pub mod presets;
pub mod run;
pub mod scan;

pub use config::{Problem, RunConfig};
pub use dataset::{appendix, load_csv, Dataset, BUILTIN_APPENDIX};
pub use run::{assess, export_profile, run, write_atomic, Assessment, RunReport};
pub use scan::{scan_csv, scan_feasible, ScanResult};

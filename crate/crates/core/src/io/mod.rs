//! On-disk formats: gradient records, models, summaries, nulls, reports.

pub mod csv_io;
pub mod idx;
pub mod model_file;
pub mod records;

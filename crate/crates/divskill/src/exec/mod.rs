//! SQL execution harness: result tables, canonical match policy,
//! fingerprints, and the embedded SQLite runner.

mod sqlite;
mod table;

pub use sqlite::{execute_sql, schema_identifiers, schema_overview, ExecError, ExecLimits};
pub use table::{
    canonicalize, fingerprint, result_preview, results_match, CanonicalTable, Cell, ColumnMatch,
    Fingerprint, MatchPolicy, ResultTable,
};

//! Read-only SQL execution against embedded SQLite databases.
//!
//! Failures are folded into a small taxonomy (`Syntax`, `Schema`, `Timeout`,
//! `RowLimit`, `Db`) that failure summaries and optimizer reflections consume.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::table::{hex_string, Cell, ResultTable};

/// Execution guard rails.
#[derive(Clone, Copy, Debug)]
pub struct ExecLimits {
    pub timeout: Duration,
    pub max_rows: usize,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits {
            timeout: Duration::from_secs(30),
            max_rows: 10_000,
        }
    }
}

/// Why a query produced no result table.
#[derive(Clone, Debug, Error, PartialEq)]
pub enum ExecError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("query exceeded the {}s timeout", .0.as_secs_f64())]
    Timeout(Duration),
    #[error("result exceeded the {0}-row limit")]
    RowLimit(usize),
    #[error("database error: {0}")]
    Db(String),
}

impl ExecError {
    /// Stable category token used in failure summaries.
    pub fn category(&self) -> &'static str {
        match self {
            ExecError::Syntax(_) => "syntax",
            ExecError::Schema(_) => "schema",
            ExecError::Timeout(_) => "timeout",
            ExecError::RowLimit(_) => "row_limit",
            ExecError::Db(_) => "db",
        }
    }
}

fn classify(err: rusqlite::Error, limits: &ExecLimits, timed_out: bool) -> ExecError {
    if timed_out {
        return ExecError::Timeout(limits.timeout);
    }
    let message = err.to_string();
    let lower = message.to_lowercase();
    if lower.contains("interrupted") {
        return ExecError::Timeout(limits.timeout);
    }
    if lower.contains("no such table")
        || lower.contains("no such column")
        || lower.contains("no such view")
        || lower.contains("no such function")
    {
        return ExecError::Schema(message);
    }
    if lower.contains("syntax error")
        || lower.contains("unrecognized token")
        || lower.contains("incomplete input")
    {
        return ExecError::Syntax(message);
    }
    ExecError::Db(message)
}

fn open_read_only(db_path: &Path) -> Result<Connection, ExecError> {
    Connection::open_with_flags(
        db_path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| ExecError::Db(format!("cannot open {}: {e}", db_path.display())))
}

fn cell_from_value(value: ValueRef<'_>) -> Cell {
    match value {
        ValueRef::Null => Cell::Null,
        ValueRef::Integer(i) => Cell::Integer(i),
        ValueRef::Real(x) => Cell::Decimal(x),
        ValueRef::Text(bytes) => Cell::Text(String::from_utf8_lossy(bytes).into_owned()),
        ValueRef::Blob(bytes) => {
            let mut hasher = Sha256::new();
            hasher.update(bytes);
            Cell::BlobDigest(hex_string(&hasher.finalize()))
        }
    }
}

/// Run one statement and materialize up to `max_rows` rows.
pub fn execute_sql(db_path: &Path, sql: &str, limits: &ExecLimits) -> Result<ResultTable, ExecError> {
    if sql.trim().is_empty() {
        return Err(ExecError::Syntax("empty statement".to_owned()));
    }
    let conn = open_read_only(db_path)?;
    let start = Instant::now();
    let deadline = limits.timeout;
    conn.progress_handler(1_000, Some(move || start.elapsed() > deadline));

    let timed_out = |_: &Instant| start.elapsed() > deadline;

    let mut stmt = match conn.prepare(sql) {
        Ok(s) => s,
        Err(e) => {
            let t = timed_out(&start);
            return Err(classify(e, limits, t));
        }
    };
    let columns: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
    let column_count = columns.len();

    let mut rows_out: Vec<Vec<Cell>> = Vec::new();
    let mut rows = match stmt.query([]) {
        Ok(r) => r,
        Err(e) => {
            let t = timed_out(&start);
            return Err(classify(e, limits, t));
        }
    };
    loop {
        match rows.next() {
            Ok(Some(row)) => {
                if rows_out.len() == limits.max_rows {
                    return Err(ExecError::RowLimit(limits.max_rows));
                }
                let mut cells = Vec::with_capacity(column_count);
                for idx in 0..column_count {
                    let value = row
                        .get_ref(idx)
                        .map_err(|e| ExecError::Db(e.to_string()))?;
                    cells.push(cell_from_value(value));
                }
                rows_out.push(cells);
            }
            Ok(None) => break,
            Err(e) => {
                let t = timed_out(&start);
                return Err(classify(e, limits, t));
            }
        }
    }
    Ok(ResultTable::new(columns, rows_out))
}

/// All table, view, and column names of a database, lowercased.
/// Feeds the optimizer's instance-agnosticity screen.
pub fn schema_identifiers(db_path: &Path) -> Result<BTreeSet<String>, ExecError> {
    let conn = open_read_only(db_path)?;
    let mut names = BTreeSet::new();
    let mut stmt = conn
        .prepare("SELECT name FROM sqlite_master WHERE type IN ('table','view')")
        .map_err(|e| ExecError::Db(e.to_string()))?;
    let tables: Vec<String> = stmt
        .query_map([], |row| row.get::<_, String>(0))
        .map_err(|e| ExecError::Db(e.to_string()))?
        .filter_map(|r| r.ok())
        .collect();
    for table in tables {
        names.insert(table.to_lowercase());
        let pragma = format!("PRAGMA table_info({})", quote_identifier(&table));
        let mut info = conn
            .prepare(&pragma)
            .map_err(|e| ExecError::Db(e.to_string()))?;
        let cols = info
            .query_map([], |row| row.get::<_, String>(1))
            .map_err(|e| ExecError::Db(e.to_string()))?;
        for col in cols.filter_map(|r| r.ok()) {
            names.insert(col.to_lowercase());
        }
    }
    Ok(names)
}

/// Compact schema text (one `table(col, col, …)` line per table) for agent
/// context and judge prompts.
pub fn schema_overview(db_path: &Path) -> Result<String, ExecError> {
    let conn = open_read_only(db_path)?;
    let mut stmt = conn
        .prepare("SELECT name FROM sqlite_master WHERE type IN ('table','view') ORDER BY name")
        .map_err(|e| ExecError::Db(e.to_string()))?;
    let tables: Vec<String> = stmt
        .query_map([], |row| row.get::<_, String>(0))
        .map_err(|e| ExecError::Db(e.to_string()))?
        .filter_map(|r| r.ok())
        .collect();
    let mut out = String::new();
    for table in tables {
        let pragma = format!("PRAGMA table_info({})", quote_identifier(&table));
        let mut info = conn
            .prepare(&pragma)
            .map_err(|e| ExecError::Db(e.to_string()))?;
        let cols: Vec<String> = info
            .query_map([], |row| row.get::<_, String>(1))
            .map_err(|e| ExecError::Db(e.to_string()))?
            .filter_map(|r| r.ok())
            .collect();
        out.push_str(&format!("{table}({})\n", cols.join(", ")));
    }
    Ok(out)
}

fn quote_identifier(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

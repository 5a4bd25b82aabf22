//! Result tables, canonical forms, and execution fingerprints.
//!
//! Two SQL candidates are equivalent when their result tables have equal
//! canonical forms under the active [`MatchPolicy`]. The canonical form is
//! order-insensitive over rows by default, rounds decimals to a fixed number
//! of significant digits, and types nulls so that `NULL` and the text
//! `"NULL"` stay distinct.

use std::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// One value in a result table.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Null,
    Integer(i64),
    Decimal(f64),
    Text(String),
    /// Content digest of a blob value; raw bytes are never stored.
    BlobDigest(String),
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Cell::Null => serializer.serialize_none(),
            Cell::Integer(i) => serializer.serialize_i64(*i),
            Cell::Decimal(x) => serializer.serialize_f64(*x),
            Cell::Text(s) => serializer.serialize_str(s),
            Cell::BlobDigest(d) => {
                use serde::ser::SerializeMap;
                let mut map = serializer.serialize_map(Some(1))?;
                map.serialize_entry("blob", d)?;
                map.end()
            }
        }
    }
}

struct CellVisitor;

impl<'de> Visitor<'de> for CellVisitor {
    type Value = Cell;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "null, number, string, or {{\"blob\": digest}}")
    }

    fn visit_unit<E: de::Error>(self) -> Result<Cell, E> {
        Ok(Cell::Null)
    }

    fn visit_none<E: de::Error>(self) -> Result<Cell, E> {
        Ok(Cell::Null)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Cell, E> {
        Ok(Cell::Integer(v))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Cell, E> {
        i64::try_from(v)
            .map(Cell::Integer)
            .map_err(|_| E::custom("integer cell out of range"))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Cell, E> {
        Ok(Cell::Decimal(v))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Cell, E> {
        Ok(Cell::Text(v.to_owned()))
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Cell, A::Error> {
        let key: String = map
            .next_key()?
            .ok_or_else(|| de::Error::custom("empty cell object"))?;
        if key != "blob" {
            return Err(de::Error::custom(format!("unknown cell key '{key}'")));
        }
        let digest: String = map.next_value()?;
        Ok(Cell::BlobDigest(digest))
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Cell, D::Error> {
        deserializer.deserialize_any(CellVisitor)
    }
}

/// A materialized query result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Cell>>) -> Self {
        debug_assert!(rows.iter().all(|r| r.len() == columns.len()));
        ResultTable { columns, rows }
    }

    /// Single text cell convenience constructor.
    pub fn single_text(column: &str, value: &str) -> Self {
        ResultTable {
            columns: vec![column.to_owned()],
            rows: vec![vec![Cell::Text(value.to_owned())]],
        }
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }
}

/// How candidate columns are matched against gold columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnMatch {
    Positional,
}

/// Execution-match convention.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchPolicy {
    pub row_order_sensitive: bool,
    pub float_sig_digits: u32,
    pub column_match: ColumnMatch,
    pub null_token: String,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        MatchPolicy {
            row_order_sensitive: false,
            float_sig_digits: 6,
            column_match: ColumnMatch::Positional,
            null_token: "<NULL>".to_owned(),
        }
    }
}

impl MatchPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.float_sig_digits == 0 {
            return Err("float_sig_digits must be at least 1".to_owned());
        }
        Ok(())
    }
}

/// Canonical decimal rendering: `sig` significant digits, integral values
/// collapse to plain integer strings so `1.0` and integer `1` compare equal.
fn canonical_decimal(x: f64, sig: u32) -> String {
    if x.is_nan() {
        return "NaN".to_owned();
    }
    if x.is_infinite() {
        return if x > 0.0 { "Inf" } else { "-Inf" }.to_owned();
    }
    if x == 0.0 {
        return "0".to_owned();
    }
    let sig = sig.max(1) as usize;
    let formatted = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = formatted
        .split_once('e')
        .expect("float sci formatting always contains e");
    let exp: i64 = exp.parse().expect("exponent is integral");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let digits = digits.trim_end_matches('0');
    let digits = if digits.is_empty() { "0" } else { digits };
    let sign = if negative { "-" } else { "" };
    let frac_len = digits.len() as i64 - 1;
    if exp >= frac_len && exp <= 15 {
        // Integral after rounding: expand without exponent.
        let zeros = (exp - frac_len) as usize;
        return format!("{sign}{digits}{}", "0".repeat(zeros));
    }
    if digits.len() == 1 {
        format!("{sign}{digits}e{exp}")
    } else {
        format!("{sign}{}.{}e{exp}", &digits[..1], &digits[1..])
    }
}

fn canonical_cell(cell: &Cell, policy: &MatchPolicy) -> String {
    match cell {
        Cell::Null => policy.null_token.clone(),
        Cell::Integer(i) => i.to_string(),
        Cell::Decimal(x) => canonical_decimal(*x, policy.float_sig_digits),
        Cell::Text(s) => format!("t:{}", s.trim_end()),
        Cell::BlobDigest(d) => format!("b:{d}"),
    }
}

/// Canonical form of a table: column count plus one encoded string per row,
/// sorted when the policy is row-order-insensitive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CanonicalTable {
    pub column_count: usize,
    pub rows: Vec<String>,
}

pub fn canonicalize(table: &ResultTable, policy: &MatchPolicy) -> CanonicalTable {
    let mut rows: Vec<String> = table
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .map(|cell| canonical_cell(cell, policy))
                .collect::<Vec<_>>()
                .join("\u{1f}")
        })
        .collect();
    if !policy.row_order_sensitive {
        rows.sort_unstable();
    }
    CanonicalTable {
        column_count: table.columns.len(),
        rows,
    }
}

/// Digest of a table's canonical form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(pub String);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn fingerprint(table: &ResultTable, policy: &MatchPolicy) -> Fingerprint {
    let canonical = canonicalize(table, policy);
    let mut hasher = Sha256::new();
    hasher.update(canonical.column_count.to_le_bytes());
    for row in &canonical.rows {
        hasher.update([0x1e]);
        hasher.update(row.as_bytes());
    }
    let digest = hasher.finalize();
    Fingerprint(hex_string(&digest))
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// True iff the tables are execution-equivalent under the policy:
/// equal column counts and equal canonical forms (positional columns).
pub fn results_match(pred: &ResultTable, gold: &ResultTable, policy: &MatchPolicy) -> bool {
    canonicalize(pred, policy) == canonicalize(gold, policy)
}

/// Human preview of a result for LLM judges: at most `max_rows` rows with
/// cells truncated to `max_cell_chars` characters.
pub fn result_preview(table: &ResultTable, max_rows: usize, max_cell_chars: usize) -> String {
    let mut out = String::new();
    out.push_str(&table.columns.join(" | "));
    out.push('\n');
    for row in table.rows.iter().take(max_rows) {
        let line: Vec<String> = row
            .iter()
            .map(|cell| {
                let text = match cell {
                    Cell::Null => "NULL".to_owned(),
                    Cell::Integer(i) => i.to_string(),
                    Cell::Decimal(x) => x.to_string(),
                    Cell::Text(s) => s.clone(),
                    Cell::BlobDigest(d) => format!("<blob {d}>"),
                };
                if text.chars().count() > max_cell_chars {
                    let truncated: String = text.chars().take(max_cell_chars).collect();
                    format!("{truncated}…")
                } else {
                    text
                }
            })
            .collect();
        out.push_str(&line.join(" | "));
        out.push('\n');
    }
    if table.rows.len() > max_rows {
        out.push_str(&format!("… ({} rows total)\n", table.rows.len()));
    }
    out
}

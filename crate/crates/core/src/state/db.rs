//! Embedded deterministic database model.
//!
//! Stands in for a real engine behind the recovery contract: tables map
//! primary keys to rows of JSON values. Only modification statements exist,
//! with a three-verb grammar:
//!
//! ```text
//! INS <table> <key> <json-object>
//! UPD <table> <key> <json-object>
//! DEL <table> <key>
//! ```
//!
//! INS inserts or replaces the whole row, UPD merges fields into an
//! existing row, DEL removes it. UPD/DEL of a missing key is a logged
//! no-op, not an error: replay after filtering malicious inserts must not
//! crash on dependent benign operations.

use crate::attribution::DbOperation;
use crate::canonical::{content_hash, to_canonical_json};
use crate::trace::Ns;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::BTreeMap;
use thiserror::Error;

pub type Row = Map<String, Value>;

/// Whole-database state. Equality is deep structural equality; canonical
/// serialization sorts all keys, so equal states serialize identically.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbState {
    pub tables: BTreeMap<String, BTreeMap<String, Row>>,
}

#[derive(Debug, Error)]
pub enum StateError {
    #[error("statement parse error: {0}")]
    StatementParse(String),
    #[error("corrupt snapshot: content hash mismatch (expected {expected}, got {actual})")]
    CorruptSnapshot { expected: String, actual: String },
    #[error("snapshot decode error: {0}")]
    SnapshotDecode(String),
}

/// A parsed modification statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Statement {
    Ins { table: String, key: String, row: Row },
    Upd { table: String, key: String, row: Row },
    Del { table: String, key: String },
}

impl Statement {
    pub fn render(&self) -> String {
        match self {
            Statement::Ins { table, key, row } => {
                format!("INS {table} {key} {}", Value::Object(row.clone()))
            }
            Statement::Upd { table, key, row } => {
                format!("UPD {table} {key} {}", Value::Object(row.clone()))
            }
            Statement::Del { table, key } => format!("DEL {table} {key}"),
        }
    }
}

/// Parse one statement of the modification grammar.
pub fn parse_statement(text: &str) -> Result<Statement, StateError> {
    let bad = |reason: &str| StateError::StatementParse(format!("{reason} in {text:?}"));
    let mut parts = text.splitn(4, ' ');
    let verb = parts.next().ok_or_else(|| bad("empty statement"))?;
    let table = parts
        .next()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| bad("missing table"))?
        .to_string();
    let key = parts
        .next()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| bad("missing key"))?
        .to_string();
    let rest = parts.next();
    match verb {
        "INS" | "UPD" => {
            let json = rest.ok_or_else(|| bad("missing row object"))?;
            let value: Value =
                serde_json::from_str(json).map_err(|e| bad(&format!("bad row json: {e}")))?;
            let Value::Object(row) = value else {
                return Err(bad("row is not a json object"));
            };
            if verb == "INS" {
                Ok(Statement::Ins { table, key, row })
            } else {
                Ok(Statement::Upd { table, key, row })
            }
        }
        "DEL" => {
            if rest.is_some_and(|r| !r.is_empty()) {
                return Err(bad("trailing tokens after DEL"));
            }
            Ok(Statement::Del { table, key })
        }
        other => Err(bad(&format!("unknown verb {other:?}"))),
    }
}

/// Note emitted when a statement was a no-op.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApplyNote {
    pub table: String,
    pub key: String,
    pub action: &'static str,
}

impl DbState {
    /// Apply one parsed statement in place. Returns a note when the
    /// statement was a no-op on a missing key.
    pub fn apply_statement(&mut self, stmt: &Statement) -> Option<ApplyNote> {
        match stmt {
            Statement::Ins { table, key, row } => {
                self.tables
                    .entry(table.clone())
                    .or_default()
                    .insert(key.clone(), row.clone());
                None
            }
            Statement::Upd { table, key, row } => {
                match self.tables.get_mut(table).and_then(|t| t.get_mut(key)) {
                    Some(existing) => {
                        for (k, v) in row {
                            existing.insert(k.clone(), v.clone());
                        }
                        None
                    }
                    None => Some(ApplyNote {
                        table: table.clone(),
                        key: key.clone(),
                        action: "upd_missing",
                    }),
                }
            }
            Statement::Del { table, key } => {
                let removed = self
                    .tables
                    .get_mut(table)
                    .and_then(|t| t.remove(key))
                    .is_some();
                if removed {
                    if self.tables.get(table).is_some_and(|t| t.is_empty()) {
                        self.tables.remove(table);
                    }
                    None
                } else {
                    Some(ApplyNote {
                        table: table.clone(),
                        key: key.clone(),
                        action: "del_missing",
                    })
                }
            }
        }
    }

    pub fn canonical_json(&self) -> String {
        to_canonical_json(self)
    }

    pub fn state_hash(&self) -> String {
        content_hash(self.canonical_json().as_bytes())
    }
}

/// Apply one textual database operation, returning the new state.
pub fn apply_db_op(
    mut state: DbState,
    op: &DbOperation,
) -> Result<(DbState, Option<ApplyNote>), StateError> {
    let stmt = parse_statement(&op.statement)?;
    let note = state.apply_statement(&stmt);
    Ok((state, note))
}

/// Point-in-time snapshot: canonical serialized state plus content hash.
/// Restoring and re-serializing reproduces identical bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbSnapshot {
    pub ts: Ns,
    pub state_json: String,
    pub id: String,
}

pub fn snapshot_db(state: &DbState, ts: Ns) -> DbSnapshot {
    let state_json = state.canonical_json();
    let id = content_hash(state_json.as_bytes());
    DbSnapshot { ts, state_json, id }
}

pub fn restore_db(snapshot: &DbSnapshot) -> Result<DbState, StateError> {
    let actual = content_hash(snapshot.state_json.as_bytes());
    if actual != snapshot.id {
        return Err(StateError::CorruptSnapshot {
            expected: snapshot.id.clone(),
            actual,
        });
    }
    serde_json::from_str(&snapshot.state_json).map_err(|e| StateError::SnapshotDecode(e.to_string()))
}

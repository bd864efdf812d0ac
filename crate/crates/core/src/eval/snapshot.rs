use std::collections::HashSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::affinity::Query;
use crate::analysis::QueryContext;
use crate::error::{Error, Result};
use crate::slicing::Slice;

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotSlice {
    pub name: String,
    pub image_ids: Vec<String>,
}

/// Exported record of one query session: its working set and the slices built on it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSnapshot {
    pub schema_version: u32,
    pub tool_version: String,
    pub created_at: DateTime<Utc>,
    pub query: Query,
    pub working_set_ids: Vec<String>,
    pub slices: Vec<SnapshotSlice>,
}

impl SessionSnapshot {
    pub fn capture<'a>(
        ctx: &QueryContext,
        slices: impl IntoIterator<Item = &'a Slice>,
        created_at: DateTime<Utc>,
    ) -> Self {
        Self {
            schema_version: SNAPSHOT_SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            created_at,
            query: ctx.query().clone(),
            working_set_ids: ctx.working_set().image_ids.clone(),
            slices: slices
                .into_iter()
                .map(|s| SnapshotSlice {
                    name: s.name.clone(),
                    image_ids: s.image_ids.clone(),
                })
                .collect(),
        }
    }

    /// Checks the schema version, id uniqueness, and that every slice id is
    /// in the working set.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SNAPSHOT_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        if self.working_set_ids.is_empty() {
            return Err(Error::Schema("working_set_ids is empty".into()));
        }
        let mut ws = HashSet::with_capacity(self.working_set_ids.len());
        for id in &self.working_set_ids {
            if !ws.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        for slice in &self.slices {
            let mut seen = HashSet::with_capacity(slice.image_ids.len());
            for id in &slice.image_ids {
                if !ws.contains(id.as_str()) {
                    return Err(Error::DanglingId {
                        slice: slice.name.clone(),
                        id: id.clone(),
                    });
                }
                if !seen.insert(id.as_str()) {
                    return Err(Error::DuplicateId(id.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Canonical JSON: fixed field order, two-space indent, trailing newline.
pub fn export_snapshot(snapshot: &SessionSnapshot) -> Result<String> {
    let mut out = serde_json::to_string_pretty(snapshot)?;
    out.push('\n');
    Ok(out)
}

pub fn import_snapshot(json: &str) -> Result<SessionSnapshot> {
    let snapshot: SessionSnapshot =
        serde_json::from_str(json).map_err(|e| Error::Schema(e.to_string()))?;
    snapshot.validate()?;
    Ok(snapshot)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SessionSnapshot {
        SessionSnapshot {
            schema_version: 1,
            tool_version: TOOL_VERSION.into(),
            created_at: DateTime::from_timestamp(1_700_000_000, 0).unwrap(),
            query: Query {
                baseline: "A photo of a person".into(),
                augmented: "A photo of a CEO".into(),
                k: 3,
            },
            working_set_ids: vec!["a".into(), "b".into(), "c".into()],
            slices: vec![SnapshotSlice {
                name: "suits".into(),
                image_ids: vec!["b".into(), "a".into()],
            }],
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let json = export_snapshot(&sample()).unwrap();
        let again = export_snapshot(&import_snapshot(&json).unwrap()).unwrap();
        assert_eq!(json, again);
    }

    #[test]
    fn dangling_id_reported() {
        let mut s = sample();
        s.slices[0].image_ids.push("zz".into());
        let json = serde_json::to_string(&s).unwrap();
        match import_snapshot(&json) {
            Err(Error::DanglingId { id, slice }) => {
                assert_eq!(id, "zz");
                assert_eq!(slice, "suits");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_violations() {
        assert!(matches!(import_snapshot("{}"), Err(Error::Schema(_))));
        let mut s = sample();
        s.schema_version = 9;
        let json = serde_json::to_string(&s).unwrap();
        assert!(matches!(import_snapshot(&json), Err(Error::Schema(_))));
        let json = export_snapshot(&sample())
            .unwrap()
            .replacen('{', "{\"extra\": 1,", 1);
        assert!(matches!(import_snapshot(&json), Err(Error::Schema(_))));
    }
}

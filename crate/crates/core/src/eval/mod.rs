//! Slice-quality measurement: snapshot export and annotation task generation.

mod snapshot;
mod tasks;

pub use snapshot::{
    export_snapshot, import_snapshot, SessionSnapshot, SnapshotSlice, SNAPSHOT_SCHEMA_VERSION,
    TOOL_VERSION,
};
pub use tasks::{
    make_coherency_task, make_representativeness_task, make_tasks, outlier_ceiling, outlier_pool,
    rank_non_members, score_coherency, AnswerSheet, CoherencyScore, CoherencyStatus, CoherencyTask,
    RepresentativenessTask, SkippedSlice, TaskBundle, MAX_OUTLIERS, REPRESENTATIVE_POOL,
    REPRESENTATIVE_SAMPLE, SHOWN_PER_TASK,
};

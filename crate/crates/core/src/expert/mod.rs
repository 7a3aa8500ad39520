//! Scripted-expert demonstration generation and the demo dataset.

pub mod collect;
pub mod dataset;
pub mod fsm;

pub use collect::{
    collect_demo, jitter_states, subtask_schedule, CollectConfig, DemoMeta, DemoRecord,
    Demonstration, ExpertError, DATASET_SCHEMA_VERSION, SCREW_STEP_CAP,
};
pub use dataset::{collect_dataset, read_dataset, read_manifest, write_dataset, Dataset, DatasetError, Manifest};
pub use fsm::{fsm_policy, FsmParams, FsmPhase, FsmSkillPolicy};

//! From stored demonstrations to training samples: observation clouds are
//! regenerated from recorded states and canonical part clouds; decoder
//! chunks come from per-skill sub-task segments.

use crate::encoder::{target_row, EncoderConfig, EncoderSample, SceneTruth};
use crate::features::{cloud_tensor, ee_vector, encode_action, observe_cloud, ACTION_DIM, EE_DIM};
use tabula_core::cloud::{CloudConfig, CloudError};
use tabula_core::expert::dataset::Dataset;
use tabula_core::scene::{SceneSpec, Skill};
use tabula_core::world::Query;
use tabula_core::derive_seed;

/// Deterministic per-record cloud seed.
pub fn record_cloud_seed(demo_seed: u64, step: u32) -> u64 {
    derive_seed(demo_seed, "obs-cloud", step as u64)
}

/// Build one encoder training sample from a dataset record.
pub fn encoder_sample(
    dataset: &Dataset,
    scene: &SceneSpec,
    cfg: &EncoderConfig,
    cloud_cfg: &CloudConfig,
    demo_idx: usize,
    record_idx: usize,
) -> Result<EncoderSample, CloudError> {
    let demo = &dataset.demos[demo_idx];
    let rec = &demo.records[record_idx];
    let pc = observe_cloud(
        &rec.state,
        &dataset.clouds,
        cloud_cfg,
        false,
        record_cloud_seed(demo.meta.seed, rec.step),
    )?;
    let (cloud, centroid) = cloud_tensor(&pc);
    let truth = SceneTruth::from_state(&rec.state, scene);
    Ok(EncoderSample {
        cloud,
        centroid,
        ee: ee_vector(&rec.state),
        query: rec.query,
        target: target_row(cfg, &truth, &rec.query, &rec.state),
    })
}

/// Condition vector in physical units: queried part pose (yaw stripped),
/// queried contact position, end-effector state.
pub fn condition_standard(
    part_pos: &[f64; 3],
    part_rot: &[f64; 2],
    contact_pos: &[f64; 3],
    ee: &[f64; EE_DIM],
) -> Vec<f64> {
    let mut v = part_pos.to_vec();
    v.extend_from_slice(part_rot);
    v.extend_from_slice(contact_pos);
    v.extend_from_slice(ee);
    v
}

/// Quaternion-rotation condition for the rotation-invariance ablation.
pub fn condition_quat(
    part_pos: &[f64; 3],
    part_quat: &[f64; 4],
    contact_pos: &[f64; 3],
    ee: &[f64; EE_DIM],
) -> Vec<f64> {
    let mut v = part_pos.to_vec();
    v.extend_from_slice(part_quat);
    v.extend_from_slice(contact_pos);
    v.extend_from_slice(ee);
    v
}

pub const COND_DIM_STANDARD: usize = 3 + 2 + 3 + EE_DIM;
pub const COND_DIM_QUAT: usize = 3 + 4 + 3 + EE_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionKind {
    Standard,
    Quat,
}

impl ConditionKind {
    pub fn dim(&self) -> usize {
        match self {
            ConditionKind::Standard => COND_DIM_STANDARD,
            ConditionKind::Quat => COND_DIM_QUAT,
        }
    }
}

/// Ground-truth condition for a recorded state (training uses true states).
pub fn condition_from_state(
    state: &tabula_core::world::WorldState,
    scene: &SceneSpec,
    query: &Query,
    kind: ConditionKind,
) -> Vec<f64> {
    let truth = SceneTruth::from_state(state, scene);
    let t = truth.queried(query);
    let ee = ee_vector(state);
    match kind {
        ConditionKind::Standard => {
            condition_standard(&t.part_pos, &t.part_rot, &t.contact_pos, &ee)
        }
        ConditionKind::Quat => {
            let q = state.part_poses[query.part].orientation.quaternion();
            let sign = if q.w < 0.0 { -1.0 } else { 1.0 };
            condition_quat(
                &t.part_pos,
                &[sign * q.w, sign * q.i, sign * q.j, sign * q.k],
                &t.contact_pos,
                &ee,
            )
        }
    }
}

/// All (condition, action-chunk) pairs for one skill: every in-segment start
/// index yields a window, padded with no-op actions past the segment end.
pub struct ChunkDataset {
    pub conds: Vec<Vec<f64>>,
    pub chunks: Vec<Vec<[f64; ACTION_DIM]>>,
    pub queries: Vec<Query>,
}

pub fn chunk_dataset(
    dataset: &Dataset,
    scene: &SceneSpec,
    skill: Skill,
    horizon: usize,
    kind: ConditionKind,
) -> ChunkDataset {
    let mut conds = vec![];
    let mut chunks = vec![];
    let mut queries = vec![];
    let noop = encode_action(&tabula_core::world::EEAction::hold());
    for demo in &dataset.demos {
        for (start, end) in demo.segments() {
            if demo.records[start].query.skill != skill {
                continue;
            }
            for t in start..end {
                let rec = &demo.records[t];
                conds.push(condition_from_state(&rec.state, scene, &rec.query, kind));
                queries.push(rec.query);
                let mut rows = Vec::with_capacity(horizon);
                for h in 0..horizon {
                    if t + h < end {
                        rows.push(encode_action(&demo.records[t + h].action));
                    } else {
                        rows.push(noop);
                    }
                }
                chunks.push(rows);
            }
        }
    }
    ChunkDataset { conds, chunks, queries }
}

/// Flat (cloud-sample-index) listing of the encoder dataset for sampling.
pub fn all_record_indices(dataset: &Dataset) -> Vec<(usize, usize)> {
    let mut out = vec![];
    for (d, demo) in dataset.demos.iter().enumerate() {
        for r in 0..demo.records.len() {
            out.push((d, r));
        }
    }
    out
}

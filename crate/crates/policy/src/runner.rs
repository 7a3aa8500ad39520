//! Skill-policy adapters: the query-conditioned diffusion policy (all
//! variants) and the BC baseline, executing receding-horizon chunks through
//! the simulator interface.

use crate::bc::{bc_predict, BcNet};
use crate::data::{condition_quat, condition_standard, ConditionKind};
use crate::diffuser::{sample_chunk_normalized, ChunkCodec, DiffusionSchedule, UNet};
use crate::encoder::{encode, EncoderNet, EncoderOutput, EncoderTarget, EncoderVariant, TerminalThresholds};
use crate::features::{cloud_tensor, ee_vector, observe_cloud, EE_DIM};
use std::collections::VecDeque;
use std::sync::Arc;
use tabula_core::cloud::{CanonicalClouds, CloudConfig};
use tabula_core::derive_seed;
use tabula_core::scene::{Skill, SKILL_COUNT};
use tabula_core::skill::{PolicyError, SkillPolicy};
use tabula_core::world::{EEAction, GripperMode, Query, Sim};

/// Frozen artifacts shared across parallel episodes.
pub struct QdpArtifacts {
    pub encoder: EncoderNet,
    pub decoders: [Option<(UNet, ChunkCodec)>; SKILL_COUNT],
    pub sched: DiffusionSchedule,
    pub clouds: CanonicalClouds,
    pub cloud_cfg: CloudConfig,
    pub exec_prefix: usize,
    pub thresholds: TerminalThresholds,
}

impl QdpArtifacts {
    pub fn condition_kind(&self) -> ConditionKind {
        match self.encoder.config.variant {
            EncoderVariant::NoRotInv => ConditionKind::Quat,
            _ => ConditionKind::Standard,
        }
    }
}

/// Receding-horizon diffusion policy. One instance per episode.
pub struct QdpPolicy {
    arts: Arc<QdpArtifacts>,
    seed: u64,
    counter: u64,
    buffer: VecDeque<EEAction>,
    last_pred: Option<EncoderTarget>,
    yaw_accrued: f64,
}

impl QdpPolicy {
    pub fn new(arts: Arc<QdpArtifacts>, seed: u64) -> QdpPolicy {
        QdpPolicy {
            arts,
            seed,
            counter: 0,
            buffer: VecDeque::new(),
            last_pred: None,
            yaw_accrued: 0.0,
        }
    }

    fn next_seed(&mut self, tag: &str) -> u64 {
        self.counter += 1;
        derive_seed(self.seed, tag, self.counter)
    }

    /// Resolve the effective (part, contact) estimates for conditioning.
    fn resolve(&self, out: &EncoderOutput, sim: &Sim, query: &Query) -> (EncoderTarget, Vec<f64>) {
        let ee = ee_vector(&sim.state);
        match out {
            EncoderOutput::Target(t) => {
                (*t, condition_standard(&t.part_pos, &t.part_rot, &t.contact_pos, &ee))
            }
            EncoderOutput::QuatTarget { part_pos, part_quat, contact_pos } => {
                let t = out.as_target().expect("quat target collapses");
                (t, condition_quat(part_pos, part_quat, contact_pos, &ee))
            }
            EncoderOutput::Joint(joint) => {
                // Query ablation: pick the part nearest the gripper and the
                // contact nearest that part.
                let scene = &sim.world.scene;
                let eep = sim.state.ee.position;
                let part = if query.skill == Skill::Stabilize {
                    scene.primary_id()
                } else {
                    scene
                        .secondary_ids()
                        .into_iter()
                        .min_by(|&a, &b| {
                            let da = dist2(&joint.part_pos[a], &eep);
                            let db = dist2(&joint.part_pos[b], &eep);
                            da.partial_cmp(&db).unwrap()
                        })
                        .expect("scene has secondary parts")
                };
                let anchor = joint.part_pos[part];
                let contact = (0..joint.contact_pos.len())
                    .min_by(|&a, &b| {
                        let da = dist2c(&joint.contact_pos[a], &anchor);
                        let db = dist2c(&joint.contact_pos[b], &anchor);
                        da.partial_cmp(&db).unwrap()
                    })
                    .expect("scene has contacts");
                let t = EncoderTarget {
                    part_pos: joint.part_pos[part],
                    part_rot: joint.part_rot[part],
                    contact_pos: joint.contact_pos[contact],
                };
                (t, condition_standard(&t.part_pos, &t.part_rot, &t.contact_pos, &ee))
            }
        }
    }

    fn replan(&mut self, sim: &Sim, query: &Query) -> Result<(), PolicyError> {
        let arts = self.arts.clone();
        let obs_seed = self.next_seed("obs");
        let pc = observe_cloud(&sim.state, &arts.clouds, &arts.cloud_cfg, false, obs_seed)
            .map_err(|e| PolicyError::Other(e.to_string()))?;
        let ee = ee_vector(&sim.state);
        let out = encode(&arts.encoder, &pc, query, &ee)
            .map_err(|e| PolicyError::Other(e.to_string()))?;
        let (target, cond) = self.resolve(&out, sim, query);
        self.last_pred = Some(target);
        let (den, codec) = arts.decoders[query.skill.index()]
            .as_ref()
            .ok_or_else(|| PolicyError::MissingSkillCheckpoint(query.skill.name().into()))?;
        let cond_n = codec.cond_norm.encode(&cond);
        let chunk_seed = self.next_seed("chunk");
        let flat = sample_chunk_normalized(&cond_n, den, &arts.sched, chunk_seed);
        let actions = codec.decode_chunk(&flat);
        self.buffer = actions.into_iter().take(arts.exec_prefix).collect();
        Ok(())
    }
}

fn dist2(a: &[f64; 3], b: &tabula_core::Vec3) -> f64 {
    (a[0] - b.x).powi(2) + (a[1] - b.y).powi(2) + (a[2] - b.z).powi(2)
}

fn dist2c(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl SkillPolicy for QdpPolicy {
    fn begin_skill(&mut self, _sim: &Sim, _query: &Query) -> Result<(), PolicyError> {
        self.buffer.clear();
        self.last_pred = None;
        self.yaw_accrued = 0.0;
        Ok(())
    }

    fn next_action(&mut self, sim: &Sim, query: &Query) -> Result<EEAction, PolicyError> {
        if self.buffer.is_empty() {
            self.replan(sim, query)?;
        }
        let action = self.buffer.pop_front().expect("replan fills the buffer");
        if sim.state.ee.mode == GripperMode::Close && action.d_yaw > 0.0 {
            self.yaw_accrued += action.d_yaw;
        }
        Ok(action)
    }

    fn believes_done(&mut self, sim: &Sim, query: &Query) -> bool {
        let Some(pred) = self.last_pred else { return false };
        let ee = ee_vector(&sim.state);
        crate::encoder::terminal_check(
            &pred,
            &ee,
            query.skill,
            &self.arts.thresholds,
            self.yaw_accrued,
        )
    }
}

/// BC artifacts: one network plus the chunk normalization.
pub struct BcArtifacts {
    pub net: BcNet,
    pub codec: ChunkCodec,
    pub clouds: CanonicalClouds,
    pub cloud_cfg: CloudConfig,
    pub exec_prefix: usize,
}

pub struct BcPolicy {
    arts: Arc<BcArtifacts>,
    seed: u64,
    counter: u64,
    buffer: VecDeque<EEAction>,
}

impl BcPolicy {
    pub fn new(arts: Arc<BcArtifacts>, seed: u64) -> BcPolicy {
        BcPolicy { arts, seed, counter: 0, buffer: VecDeque::new() }
    }
}

impl SkillPolicy for BcPolicy {
    fn begin_skill(&mut self, _sim: &Sim, _query: &Query) -> Result<(), PolicyError> {
        self.buffer.clear();
        Ok(())
    }

    fn next_action(&mut self, sim: &Sim, query: &Query) -> Result<EEAction, PolicyError> {
        if self.buffer.is_empty() {
            self.counter += 1;
            let obs_seed = derive_seed(self.seed, "bc-obs", self.counter);
            let pc = observe_cloud(&sim.state, &self.arts.clouds, &self.arts.cloud_cfg, false, obs_seed)
                .map_err(|e| PolicyError::Other(e.to_string()))?;
            let (cloud, centroid) = cloud_tensor(&pc);
            let ee = ee_vector(&sim.state);
            let flat = bc_predict(&self.arts.net, &cloud, &centroid, &ee, query);
            let actions = self.arts.codec.decode_chunk(&flat);
            self.buffer = actions.into_iter().take(self.arts.exec_prefix).collect();
        }
        Ok(self.buffer.pop_front().expect("prediction fills the buffer"))
    }

    fn believes_done(&mut self, _sim: &Sim, _query: &Query) -> bool {
        false
    }
}

/// Policy that emits only no-op actions; evaluation floor.
pub struct ZeroPolicy;

impl SkillPolicy for ZeroPolicy {
    fn begin_skill(&mut self, _sim: &Sim, _query: &Query) -> Result<(), PolicyError> {
        Ok(())
    }
    fn next_action(&mut self, _sim: &Sim, _query: &Query) -> Result<EEAction, PolicyError> {
        Ok(EEAction::hold())
    }
    fn believes_done(&mut self, _sim: &Sim, _query: &Query) -> bool {
        false
    }
}

/// EE vector dimension re-export for downstream wiring.
pub const POLICY_EE_DIM: usize = EE_DIM;

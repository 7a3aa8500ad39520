//! Full-task demonstration collection with query annotation, sub-task
//! boundaries, and per-step state jitter.

use crate::expert::fsm::{fsm_policy, FsmParams, FsmPhase};
use crate::math::{quat_from_euler_zyx, Pose};
use crate::scene::Skill;
use crate::skill::SkillLimits;
use crate::world::{EEAction, Query, Randomness, Sim, World, WorldState};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DATASET_SCHEMA_VERSION: u32 = 1;
/// Hard cap on recorded screw steps per leg.
pub const SCREW_STEP_CAP: usize = 50;

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error("expert failed during {skill:?} on part {part} (contact {contact}): {why}")]
    ExpertFailure {
        skill: Skill,
        part: usize,
        contact: usize,
        why: String,
    },
    #[error("world error: {0}")]
    World(#[from] crate::world::WorldError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoMeta {
    pub seed: u64,
    pub order: Vec<usize>,
    pub randomness: Randomness,
    pub jitter_pos: f64,
    pub jitter_rot: f64,
    pub schema_version: u32,
    pub record_count: usize,
}

/// One time step: the (jittered) pre-action state and the action taken.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoRecord {
    pub step: u32,
    pub subtask: u32,
    pub query: Query,
    pub state: WorldState,
    pub action: EEAction,
    pub boundary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub meta: DemoMeta,
    pub records: Vec<DemoRecord>,
}

impl Demonstration {
    /// Records per skill, indexed by `Skill::index`.
    pub fn records_per_skill(&self) -> [usize; crate::scene::SKILL_COUNT] {
        let mut out = [0usize; crate::scene::SKILL_COUNT];
        for r in &self.records {
            out[r.query.skill.index()] += 1;
        }
        out
    }

    /// Contiguous (start, end) ranges per sub-task segment.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut out = vec![];
        let mut start = 0usize;
        for (i, r) in self.records.iter().enumerate() {
            if r.boundary && i > 0 {
                out.push((start, i));
                start = i;
            }
        }
        if !self.records.is_empty() {
            out.push((start, self.records.len()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub randomness: Randomness,
    pub jitter_pos: f64,
    pub jitter_rot: f64,
    pub limits: SkillLimits,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            randomness: Randomness::Medium,
            jitter_pos: 0.005,
            jitter_rot: 2.0_f64.to_radians(),
            limits: SkillLimits::default(),
        }
    }
}

/// Perturb recorded part states in place; the end effector and the action
/// are left untouched. Uniform noise in [-sigma, +sigma] per axis.
pub fn jitter_states(
    state: &WorldState,
    sigma_pos: f64,
    sigma_rot: f64,
    seed: u64,
) -> WorldState {
    if sigma_pos == 0.0 && sigma_rot == 0.0 {
        return state.clone();
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = state.clone();
    for pose in out.part_poses.iter_mut() {
        let d = crate::math::Vec3::new(
            rng.gen_range(-sigma_pos..=sigma_pos),
            rng.gen_range(-sigma_pos..=sigma_pos),
            rng.gen_range(-sigma_pos..=sigma_pos),
        );
        let dr = quat_from_euler_zyx(
            rng.gen_range(-sigma_rot..=sigma_rot),
            rng.gen_range(-sigma_rot..=sigma_rot),
            rng.gen_range(-sigma_rot..=sigma_rot),
        );
        *pose = Pose::new(pose.position + d, dr * pose.orientation);
    }
    out
}

/// Sub-task schedule for a full square-table assembly: stabilize once, then
/// grasp/insert/screw per leg in the sampled contact order. Leg k pairs with
/// contact `order[k]`.
pub fn subtask_schedule(world: &World, order: &[usize]) -> Vec<Query> {
    let legs = world.scene.secondary_ids();
    let primary = world.scene.primary_id();
    let mut queries = vec![Query::new(Skill::Stabilize, primary, order[0])];
    for (k, &leg) in legs.iter().enumerate() {
        let j = order[k];
        queries.push(Query::new(Skill::Grasp, leg, j));
        queries.push(Query::new(Skill::Insert, leg, j));
        queries.push(Query::new(Skill::Screw, leg, j));
    }
    queries
}

/// Run the scripted expert through the whole assembly and record every step.
/// Failed episodes return an error and are discarded by callers.
pub fn collect_demo(
    world: &World,
    seed: u64,
    order: Vec<usize>,
    cfg: &CollectConfig,
) -> Result<Demonstration, ExpertError> {
    let mut sim = Sim::new(world.clone());
    sim.reset(seed, cfg.randomness, order.clone())?;
    let fsm = FsmParams::default();
    let jitter_base = seed ^ 0x6a09_e667_f3bc_c908;

    let mut records: Vec<DemoRecord> = vec![];
    let schedule = subtask_schedule(world, &order);
    for (subtask, query) in schedule.iter().enumerate() {
        let limit = if query.skill == Skill::Screw {
            cfg.limits.for_skill(Skill::Screw).min(SCREW_STEP_CAP)
        } else {
            cfg.limits.for_skill(query.skill)
        };
        let mut phase = FsmPhase::Start;
        let mut t = 0usize;
        loop {
            if sim.world.check_skill_success(&sim.state, query).is_success() {
                break;
            }
            if t >= limit {
                return Err(ExpertError::ExpertFailure {
                    skill: query.skill,
                    part: query.part,
                    contact: query.contact,
                    why: format!("sub-task exceeded {limit} steps"),
                });
            }
            let (action, next_phase) =
                fsm_policy(world, &sim.state, query, phase, &fsm).map_err(|e| {
                    ExpertError::ExpertFailure {
                        skill: query.skill,
                        part: query.part,
                        contact: query.contact,
                        why: e.to_string(),
                    }
                })?;
            phase = next_phase;
            let recorded_state = jitter_states(
                &sim.state,
                cfg.jitter_pos,
                cfg.jitter_rot,
                jitter_base.wrapping_add(records.len() as u64),
            );
            records.push(DemoRecord {
                step: records.len() as u32,
                subtask: subtask as u32,
                query: *query,
                state: recorded_state,
                action,
                boundary: t == 0,
            });
            sim.step(&action);
            t += 1;
        }
    }
    if !world.assembly_complete(&sim.state) {
        return Err(ExpertError::ExpertFailure {
            skill: Skill::Screw,
            part: 0,
            contact: 0,
            why: "assembly incomplete after schedule".into(),
        });
    }
    Ok(Demonstration {
        meta: DemoMeta {
            seed,
            order,
            randomness: cfg.randomness,
            jitter_pos: cfg.jitter_pos,
            jitter_rot: cfg.jitter_rot,
            schema_version: DATASET_SCHEMA_VERSION,
            record_count: records.len(),
        },
        records,
    })
}

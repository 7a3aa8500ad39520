//! Low-level skill execution: the policy abstraction and the loop that runs
//! one queried sub-task to success, failure, or timeout.

use crate::scene::Skill;
use crate::world::{EEAction, FailReason, Query, Sim, SkillOutcome};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("skill precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("no checkpoint loaded for skill {0}")]
    MissingSkillCheckpoint(String),
    #[error("{0}")]
    Other(String),
}

/// Anything that can drive the end effector for one queried sub-task.
pub trait SkillPolicy {
    /// Called once when a skill episode starts. Returning an error marks the
    /// sub-task failed with a precondition violation.
    fn begin_skill(&mut self, sim: &Sim, query: &Query) -> Result<(), PolicyError>;

    /// Produce the next end-effector action.
    fn next_action(&mut self, sim: &Sim, query: &Query) -> Result<EEAction, PolicyError>;

    /// Policy-side terminal check, evaluated after each step.
    fn believes_done(&mut self, sim: &Sim, query: &Query) -> bool;
}

/// Per-skill step limits; screw is capped at the demonstration limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkillLimits {
    pub stabilize: usize,
    pub grasp: usize,
    pub insert: usize,
    pub screw: usize,
}

impl Default for SkillLimits {
    fn default() -> Self {
        SkillLimits { stabilize: 100, grasp: 50, insert: 60, screw: 50 }
    }
}

impl SkillLimits {
    pub fn for_skill(&self, skill: Skill) -> usize {
        match skill {
            Skill::Stabilize => self.stabilize,
            Skill::Grasp => self.grasp,
            Skill::Insert => self.insert,
            Skill::Screw => self.screw,
        }
    }
}

/// Steps >= limit means timed out.
pub fn timeout_check(steps: usize, limit: usize) -> bool {
    steps >= limit
}

#[derive(Debug, Clone)]
pub struct SkillRun {
    pub outcome: SkillOutcome,
    pub steps: usize,
}

/// Drive one sub-task. Stops on ground-truth success, on a definitive
/// ground-truth failure, when the policy believes it is done (then scored
/// against ground truth), or on timeout. `hook` runs before each action and
/// may mutate the sim (perturbation injection).
pub fn run_skill(
    sim: &mut Sim,
    policy: &mut dyn SkillPolicy,
    query: &Query,
    limit: usize,
    mut hook: Option<&mut dyn FnMut(&mut Sim, usize)>,
) -> SkillRun {
    if let Err(e) = policy.begin_skill(sim, query) {
        let reason = match e {
            PolicyError::PreconditionViolated(_) => FailReason::Precondition,
            _ => FailReason::None,
        };
        return SkillRun { outcome: SkillOutcome::failure(reason), steps: 0 };
    }
    let mut steps = 0usize;
    loop {
        let check = sim.world.check_skill_success(&sim.state, query);
        if check.is_terminal() {
            return SkillRun { outcome: check, steps };
        }
        if timeout_check(steps, limit) {
            return SkillRun { outcome: SkillOutcome::failure(FailReason::Timeout), steps };
        }
        if let Some(h) = hook.as_deref_mut() {
            h(sim, steps);
        }
        let action = match policy.next_action(sim, query) {
            Ok(a) => a,
            Err(_) => {
                return SkillRun {
                    outcome: SkillOutcome::failure(FailReason::Precondition),
                    steps,
                }
            }
        };
        sim.step(&action);
        steps += 1;
        if policy.believes_done(sim, query) {
            let check = sim.world.check_skill_success(&sim.state, query);
            let outcome = if check.is_success() {
                check
            } else if check.is_terminal() {
                check
            } else {
                SkillOutcome::failure(FailReason::Timeout)
            };
            return SkillRun { outcome, steps };
        }
    }
}

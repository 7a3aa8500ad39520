//! Scripted expert: a waypoint-driven finite state machine per skill.
//!
//! Phase graphs are acyclic except for the screw regrasp cycle
//! (rotate -> open -> rewind -> close -> rotate), which triggers when the
//! wrist budget runs out.

use crate::math::Vec3;
use crate::scene::Skill;
use crate::skill::{PolicyError, SkillPolicy};
use crate::world::{
    Attachment, EEAction, GripCommand, GripperMode, Query, Sim, World, WorldState,
};
use serde::{Deserialize, Serialize};

/// Expert motion parameters. Waypoint geometry is derived from the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FsmParams {
    /// Waypoint arrival tolerance, meters.
    pub waypoint_tol: f64,
    /// Travel height for the leg tip while carrying, meters.
    pub tip_travel_z: f64,
    /// Travel height for the free gripper, meters.
    pub stage_z: f64,
    /// Low staging height used between push legs, meters.
    pub push_stage_z: f64,
    /// Extra lift margin above the grasp success threshold, meters.
    pub lift_margin: f64,
}

impl Default for FsmParams {
    fn default() -> Self {
        FsmParams {
            waypoint_tol: 0.003,
            tip_travel_z: 0.17,
            stage_z: 0.20,
            push_stage_z: 0.06,
            lift_margin: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FsmPhase {
    Start,
    // stabilize
    RiseClear,
    StageAbovePush,
    DescendToPush,
    Push,
    // grasp
    StageAboveGrip,
    DescendToGrip,
    CloseOnGrip,
    Lift,
    // insert
    Rise,
    Carry,
    Lower,
    // screw
    StageAboveShaft,
    DescendToShaft,
    CloseOnShaft,
    Rotate,
    ReleaseForRewind,
    Rewind { remaining: f64 },
    Reclose,
    Done,
}

/// Middle of the graspable segment: the canonical safe grip coordinate.
fn grip_axial(world: &World, part: usize) -> f64 {
    let seg = world.scene.parts[part]
        .graspable_segment
        .expect("grip target must be graspable");
    0.5 * (seg[0] + seg[1])
}

fn grip_point_world(world: &World, state: &WorldState, part: usize) -> Vec3 {
    let t = grip_axial(world, part);
    state.part_poses[part].transform_point(&Vec3::new(0.0, 0.0, t))
}

fn move_toward(from: &Vec3, to: &Vec3, max_step: f64, tol: f64) -> (Vec3, bool) {
    let delta = to - from;
    let dist = delta.norm();
    if dist <= tol {
        return (Vec3::zeros(), true);
    }
    if dist <= max_step {
        (delta, false)
    } else {
        (delta * (max_step / dist), false)
    }
}

fn hold_at(delta: Vec3) -> EEAction {
    EEAction::delta(delta, 0.0, GripCommand::Hold)
}

/// One expert control step: emit an action and the successor phase.
pub fn fsm_policy(
    world: &World,
    state: &WorldState,
    query: &Query,
    phase: FsmPhase,
    fsm: &FsmParams,
) -> Result<(EEAction, FsmPhase), PolicyError> {
    let p = &world.scene.params;
    let ee = state.ee.position;
    match query.skill {
        Skill::Stabilize => {
            // Push one world axis at a time; yaw-induced drift on the other
            // axis gets corrected by a later push leg.
            let primary = world.scene.primary_id();
            let slab_pose = state.part_poses[primary];
            let slab = slab_pose.position;
            let target = world.scene.stabilizer_center();
            let err = Vec3::new(target.x - slab.x, target.y - slab.y, 0.0);
            let done_tol = 0.02;
            if state.stabilized || (err.x.abs() <= done_tol && err.y.abs() <= done_tol) {
                return Ok((EEAction::hold(), FsmPhase::Done));
            }
            let dir = if err.x.abs() > done_tol {
                Vec3::new(err.x.signum(), 0.0, 0.0)
            } else {
                Vec3::new(0.0, err.y.signum(), 0.0)
            };
            let half_inf = 0.5 * crate::scene::TABLETOP_SIDE + p.ee_radius;
            let d_local = slab_pose.orientation.inverse() * dir;
            let k = (half_inf + 0.012) / d_local.x.abs().max(d_local.y.abs()).max(1e-6);
            let contact_local = -d_local * k;
            let contact = slab_pose.transform_point(&Vec3::new(
                contact_local.x,
                contact_local.y,
                0.5 * crate::scene::TABLETOP_THICKNESS,
            ));
            match phase {
                FsmPhase::Start | FsmPhase::RiseClear => {
                    // Straight up to clearance height before any lateral move.
                    if ee.z >= fsm.push_stage_z - fsm.waypoint_tol {
                        return Ok((EEAction::hold(), FsmPhase::StageAbovePush));
                    }
                    let wp = Vec3::new(ee.x, ee.y, fsm.push_stage_z);
                    let (d, _) = move_toward(&ee, &wp, p.max_step, fsm.waypoint_tol);
                    Ok((hold_at(d), FsmPhase::RiseClear))
                }
                FsmPhase::StageAbovePush => {
                    // Clearance height sits above the slab, so descending
                    // while traveling cannot clip it.
                    let wp = Vec3::new(contact.x, contact.y, fsm.push_stage_z);
                    let (d, reached) = move_toward(&ee, &wp, p.max_step, fsm.waypoint_tol);
                    let next = if reached { FsmPhase::DescendToPush } else { FsmPhase::StageAbovePush };
                    Ok((hold_at(d), next))
                }
                FsmPhase::DescendToPush => {
                    let (d, reached) = move_toward(&ee, &contact, p.max_step, fsm.waypoint_tol);
                    let next = if reached { FsmPhase::Push } else { FsmPhase::DescendToPush };
                    Ok((hold_at(d), next))
                }
                FsmPhase::Push => {
                    // Restage when the contact face changed or the slab got
                    // jolted away from the gripper.
                    let horiz =
                        ((ee.x - contact.x).powi(2) + (ee.y - contact.y).powi(2)).sqrt();
                    if horiz > 0.05 {
                        return Ok((EEAction::hold(), FsmPhase::RiseClear));
                    }
                    Ok((hold_at(dir * p.max_step), FsmPhase::Push))
                }
                FsmPhase::Done => Ok((EEAction::hold(), FsmPhase::Done)),
                _ => Err(PolicyError::Other("phase does not belong to stabilize".into())),
            }
        }
        Skill::Grasp => {
            let leg = query.part;
            if state.attachments.iter().any(|a| a.part() == Some(leg)) {
                return Err(PolicyError::PreconditionViolated(
                    "grasp target is already assembled".into(),
                ));
            }
            let grip = grip_point_world(world, state, leg);
            match phase {
                FsmPhase::Start | FsmPhase::StageAboveGrip => {
                    if state.ee.held == Some(leg) {
                        return Ok((EEAction::hold(), FsmPhase::Lift));
                    }
                    if state.ee.mode == GripperMode::Close {
                        // Left over from a previous skill; free the jaws.
                        return Ok((
                            EEAction::delta(Vec3::zeros(), 0.0, GripCommand::Open),
                            FsmPhase::StageAboveGrip,
                        ));
                    }
                    let wp = Vec3::new(grip.x, grip.y, fsm.stage_z);
                    let (d, reached) = move_toward(&ee, &wp, p.max_step, fsm.waypoint_tol);
                    let next = if reached { FsmPhase::DescendToGrip } else { FsmPhase::StageAboveGrip };
                    Ok((hold_at(d), next))
                }
                FsmPhase::DescendToGrip => {
                    let (d, reached) = move_toward(&ee, &grip, p.max_step, fsm.waypoint_tol);
                    let next = if reached { FsmPhase::CloseOnGrip } else { FsmPhase::DescendToGrip };
                    Ok((hold_at(d), next))
                }
                FsmPhase::CloseOnGrip => Ok((
                    EEAction::delta(Vec3::zeros(), 0.0, GripCommand::Close),
                    FsmPhase::Lift,
                )),
                FsmPhase::Lift => {
                    let axial = state.ee.grip_axial.unwrap_or(grip_axial(world, leg));
                    let wp = Vec3::new(ee.x, ee.y, axial + p.lift_threshold + fsm.lift_margin);
                    let (d, _) = move_toward(&ee, &wp, p.max_step, fsm.waypoint_tol);
                    Ok((hold_at(d), FsmPhase::Lift))
                }
                FsmPhase::Done => Ok((EEAction::hold(), FsmPhase::Done)),
                _ => Err(PolicyError::Other("phase does not belong to grasp".into())),
            }
        }
        Skill::Insert => {
            let leg = query.part;
            if state.attachments[query.contact] != Attachment::Empty
                && state.attachments[query.contact].part() == Some(leg)
            {
                return Ok((EEAction::hold(), FsmPhase::Done));
            }
            if state.ee.held != Some(leg) {
                return Err(PolicyError::PreconditionViolated(
                    "insert requires holding the queried leg".into(),
                ));
            }
            let axial = state.ee.grip_axial.unwrap_or(grip_axial(world, leg));
            let hole = world.contact_world(state, query.contact);
            match phase {
                FsmPhase::Start | FsmPhase::Rise => {
                    let wp = Vec3::new(ee.x, ee.y, fsm.tip_travel_z + axial);
                    let (d, reached) = move_toward(&ee, &wp, p.max_step, fsm.waypoint_tol);
                    let next = if reached { FsmPhase::Carry } else { FsmPhase::Rise };
                    Ok((hold_at(d), next))
                }
                FsmPhase::Carry => {
                    let wp = Vec3::new(hole.x, hole.y, fsm.tip_travel_z + axial);
                    let (d, reached) = move_toward(&ee, &wp, p.max_step, fsm.waypoint_tol);
                    let next = if reached { FsmPhase::Lower } else { FsmPhase::Carry };
                    Ok((hold_at(d), next))
                }
                FsmPhase::Lower => {
                    let wp = Vec3::new(hole.x, hole.y, hole.z + axial);
                    let (d, _) = move_toward(&ee, &wp, p.max_step, 1e-4);
                    Ok((hold_at(d), FsmPhase::Lower))
                }
                FsmPhase::Done => Ok((EEAction::hold(), FsmPhase::Done)),
                _ => Err(PolicyError::Other("phase does not belong to insert".into())),
            }
        }
        Skill::Screw => {
            let leg = query.part;
            match state.attachments[query.contact] {
                Attachment::Screwed(part) if part == leg => {
                    return Ok((EEAction::hold(), FsmPhase::Done));
                }
                Attachment::Inserted(part) if part == leg => {}
                _ => {
                    return Err(PolicyError::PreconditionViolated(
                        "screw requires the queried leg seated at the queried contact".into(),
                    ));
                }
            }
            let grip = grip_point_world(world, state, leg);
            let engaged = state.ee.mode == GripperMode::Close
                && state.ee.held.is_none()
                && (ee - grip).norm() <= p.grasp_tol;
            match phase {
                FsmPhase::Start => {
                    if engaged {
                        Ok((EEAction::hold(), FsmPhase::Rotate))
                    } else if state.ee.mode == GripperMode::Close {
                        // Free the jaws before re-approaching the shaft.
                        Ok((
                            EEAction::delta(Vec3::zeros(), 0.0, GripCommand::Open),
                            FsmPhase::StageAboveShaft,
                        ))
                    } else {
                        Ok((EEAction::hold(), FsmPhase::StageAboveShaft))
                    }
                }
                FsmPhase::StageAboveShaft => {
                    let wp = Vec3::new(grip.x, grip.y, fsm.stage_z);
                    let (d, reached) = move_toward(&ee, &wp, p.max_step, fsm.waypoint_tol);
                    let next = if reached { FsmPhase::DescendToShaft } else { FsmPhase::StageAboveShaft };
                    Ok((hold_at(d), next))
                }
                FsmPhase::DescendToShaft => {
                    let (d, reached) = move_toward(&ee, &grip, p.max_step, fsm.waypoint_tol);
                    let next = if reached { FsmPhase::CloseOnShaft } else { FsmPhase::DescendToShaft };
                    Ok((hold_at(d), next))
                }
                FsmPhase::CloseOnShaft | FsmPhase::Reclose => Ok((
                    EEAction::delta(Vec3::zeros(), 0.0, GripCommand::Close),
                    FsmPhase::Rotate,
                )),
                FsmPhase::Rotate => {
                    if state.screw_progress[query.contact] >= p.screw_target {
                        return Ok((EEAction::hold(), FsmPhase::Done));
                    }
                    if state.ee.wrist_travel + p.max_rot_step > p.wrist_limit {
                        return Ok((
                            EEAction::delta(Vec3::zeros(), 0.0, GripCommand::Open),
                            FsmPhase::Rewind { remaining: state.ee.wrist_travel },
                        ));
                    }
                    Ok((
                        EEAction::delta(Vec3::zeros(), p.max_rot_step, GripCommand::Hold),
                        FsmPhase::Rotate,
                    ))
                }
                FsmPhase::ReleaseForRewind => Ok((
                    EEAction::delta(Vec3::zeros(), 0.0, GripCommand::Open),
                    FsmPhase::Rewind { remaining: state.ee.wrist_travel },
                )),
                FsmPhase::Rewind { remaining } => {
                    if remaining <= 1e-9 {
                        Ok((EEAction::hold(), FsmPhase::Reclose))
                    } else {
                        let back = remaining.min(p.max_rot_step);
                        Ok((
                            EEAction::delta(Vec3::zeros(), -back, GripCommand::Hold),
                            FsmPhase::Rewind { remaining: remaining - back },
                        ))
                    }
                }
                FsmPhase::Done => Ok((EEAction::hold(), FsmPhase::Done)),
                _ => Err(PolicyError::Other("phase does not belong to screw".into())),
            }
        }
    }
}

/// `SkillPolicy` adapter around the FSM, with privileged state access.
#[derive(Debug, Clone)]
pub struct FsmSkillPolicy {
    pub fsm: FsmParams,
    phase: FsmPhase,
}

impl FsmSkillPolicy {
    pub fn new(fsm: FsmParams) -> FsmSkillPolicy {
        FsmSkillPolicy { fsm, phase: FsmPhase::Start }
    }

    pub fn phase(&self) -> FsmPhase {
        self.phase
    }
}

impl Default for FsmSkillPolicy {
    fn default() -> Self {
        FsmSkillPolicy::new(FsmParams::default())
    }
}

impl SkillPolicy for FsmSkillPolicy {
    fn begin_skill(&mut self, sim: &Sim, query: &Query) -> Result<(), PolicyError> {
        self.phase = FsmPhase::Start;
        // Surface precondition violations immediately.
        fsm_policy(&sim.world, &sim.state, query, FsmPhase::Start, &self.fsm).map(|_| ())
    }

    fn next_action(&mut self, sim: &Sim, query: &Query) -> Result<EEAction, PolicyError> {
        let (action, next) = fsm_policy(&sim.world, &sim.state, query, self.phase, &self.fsm)?;
        self.phase = next;
        Ok(action)
    }

    fn believes_done(&mut self, sim: &Sim, query: &Query) -> bool {
        let _ = query;
        let _ = sim;
        self.phase == FsmPhase::Done
    }
}

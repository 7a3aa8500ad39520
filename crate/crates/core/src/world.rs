//! Quasi-static kinematic simulator of the square-table assembly task.
//!
//! States are plain values; `step` is a pure transition. `Sim` wraps a state
//! with its episode RNG and hands out snapshot tokens for the retry protocol.

use crate::math::{quat_from_euler_zyx, wrap_angle, yaw_of, Pose, Quat, Vec3};
use crate::scene::{PartKind, SceneSpec, Skill};
use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorldError {
    #[error("query selects {0} entries, expected exactly one")]
    MultipleSelection(usize),
    #[error("query index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("could not place parts collision-free after {0} attempts")]
    PlacementFailure(u32),
    #[error("snapshot token does not belong to the current episode")]
    StaleToken,
}

/// One-hot selection of (skill, part, contact point).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub skill: Skill,
    pub part: usize,
    pub contact: usize,
}

impl Query {
    pub fn new(skill: Skill, part: usize, contact: usize) -> Query {
        Query { skill, part, contact }
    }

    /// Dense one-hot layout: [skill][part][contact], row-major.
    pub fn to_dense(&self, parts: usize, contacts: usize) -> Vec<f64> {
        let mut v = vec![0.0; crate::scene::SKILL_COUNT * parts * contacts];
        v[(self.skill.index() * parts + self.part) * contacts + self.contact] = 1.0;
        v
    }
}

/// Decode and check a query given scene dimensions.
pub fn validate_query(
    skill: usize,
    part: usize,
    contact: usize,
    parts: usize,
    contacts: usize,
) -> Result<Query, WorldError> {
    let s = Skill::from_index(skill)
        .ok_or_else(|| WorldError::IndexOutOfRange(format!("skill {skill}")))?;
    if part >= parts {
        return Err(WorldError::IndexOutOfRange(format!("part {part}")));
    }
    if contact >= contacts {
        return Err(WorldError::IndexOutOfRange(format!("contact {contact}")));
    }
    Ok(Query::new(s, part, contact))
}

/// Decode a dense tensor of shape [skills, parts, contacts]; exactly one
/// entry must be set.
pub fn validate_query_dense(
    dense: &[f64],
    parts: usize,
    contacts: usize,
) -> Result<Query, WorldError> {
    if dense.len() != crate::scene::SKILL_COUNT * parts * contacts {
        return Err(WorldError::IndexOutOfRange(format!(
            "dense length {} for {}x{parts}x{contacts}",
            dense.len(),
            crate::scene::SKILL_COUNT
        )));
    }
    let hot: Vec<usize> = dense
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, _)| i)
        .collect();
    if hot.len() != 1 || (dense[hot[0]] - 1.0).abs() > 1e-9 {
        return Err(WorldError::MultipleSelection(hot.len()));
    }
    let flat = hot[0];
    let contact = flat % contacts;
    let part = (flat / contacts) % parts;
    let skill = flat / (parts * contacts);
    validate_query(skill, part, contact, parts, contacts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperMode {
    Open,
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripCommand {
    Open,
    Close,
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attachment {
    Empty,
    Inserted(usize),
    Screwed(usize),
}

impl Attachment {
    pub fn part(&self) -> Option<usize> {
        match self {
            Attachment::Empty => None,
            Attachment::Inserted(p) | Attachment::Screwed(p) => Some(*p),
        }
    }
}

/// End-effector state. Orientation is yaw about world z; the gripper always
/// points down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndEffector {
    pub position: Vec3,
    pub yaw: f64,
    pub mode: GripperMode,
    pub held: Option<usize>,
    /// Transform from EE frame to held-part frame, captured at grip time.
    pub held_offset: Option<Pose>,
    /// Axial coordinate of the grip point on the held part.
    pub grip_axial: Option<f64>,
    /// Wrist rotation accumulated since the last close.
    pub wrist_travel: f64,
}

impl EndEffector {
    pub fn pose(&self) -> Pose {
        Pose::from_yaw(self.position, self.yaw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub part_poses: Vec<Pose>,
    pub ee: EndEffector,
    pub attachments: Vec<Attachment>,
    pub screw_progress: Vec<f64>,
    pub stabilized: bool,
    pub step_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Delta,
    Absolute,
}

/// End-effector command. In delta mode `translation`/`d_yaw` are increments;
/// in absolute mode they name a target the EE tracks under the step limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EEAction {
    pub mode: ActionMode,
    pub translation: Vec3,
    pub d_yaw: f64,
    pub gripper: GripCommand,
}

impl EEAction {
    pub fn delta(translation: Vec3, d_yaw: f64, gripper: GripCommand) -> EEAction {
        EEAction { mode: ActionMode::Delta, translation, d_yaw, gripper }
    }

    pub fn hold() -> EEAction {
        EEAction::delta(Vec3::zeros(), 0.0, GripCommand::Hold)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepFlags {
    pub clamped: bool,
    pub blocked: bool,
    pub pushed: bool,
    pub grasped: Option<usize>,
    pub released: Option<usize>,
    /// (part, contact) freshly seated this step.
    pub seated: Option<(usize, usize)>,
    pub screw_completed: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Randomness {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Running,
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    None,
    UnsafeGrip,
    WrongContact,
    Timeout,
    Precondition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillOutcome {
    pub status: OutcomeStatus,
    pub reason: FailReason,
}

impl SkillOutcome {
    pub fn running() -> Self {
        SkillOutcome { status: OutcomeStatus::Running, reason: FailReason::None }
    }
    pub fn success() -> Self {
        SkillOutcome { status: OutcomeStatus::Success, reason: FailReason::None }
    }
    pub fn failure(reason: FailReason) -> Self {
        SkillOutcome { status: OutcomeStatus::Failure, reason }
    }
    pub fn is_terminal(&self) -> bool {
        self.status != OutcomeStatus::Running
    }
    pub fn is_success(&self) -> bool {
        self.status == OutcomeStatus::Success
    }
}

/// Static world: scene plus transition rules.
#[derive(Debug, Clone)]
pub struct World {
    pub scene: SceneSpec,
}

impl World {
    pub fn new(scene: SceneSpec) -> World {
        World { scene }
    }

    pub fn square_table() -> World {
        World::new(crate::scene::square_table())
    }

    fn leg_axis_dir(&self, state: &WorldState, part: usize) -> Vec3 {
        state.part_poses[part].rotate_vector(&Vector3::z())
    }

    /// World position of the grip segment point at axial coordinate `t`.
    fn leg_axis_point(&self, state: &WorldState, part: usize, t: f64) -> Vec3 {
        state.part_poses[part].transform_point(&Vec3::new(0.0, 0.0, t))
    }

    /// Distance from a point to the graspable axis segment of a leg, along
    /// with the clamped axial coordinate of the closest point.
    fn segment_distance(&self, state: &WorldState, part: usize, p: &Vec3) -> Option<(f64, f64)> {
        let seg = self.scene.parts[part].graspable_segment?;
        let a = self.leg_axis_point(state, part, seg[0]);
        let b = self.leg_axis_point(state, part, seg[1]);
        let ab = b - a;
        let len2 = ab.norm_squared();
        let t = if len2 <= 0.0 {
            0.0
        } else {
            ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
        };
        let closest = a + ab * t;
        let axial = seg[0] + t * (seg[1] - seg[0]);
        Some(((p - closest).norm(), axial))
    }

    /// Unclamped axial coordinate of the closest axis point (for grip safety).
    fn axial_coordinate(&self, state: &WorldState, part: usize, p: &Vec3) -> f64 {
        let pose = &state.part_poses[part];
        let local = pose.inverse().transform_point(p);
        local.z
    }

    fn tip_world(&self, state: &WorldState, part: usize) -> Vec3 {
        state.part_poses[part].position
    }

    pub fn contact_world(&self, state: &WorldState, j: usize) -> Vec3 {
        self.scene
            .contact_world(&state.part_poses[self.scene.primary_id()], j)
    }

    pub fn contact_axis_world(&self, state: &WorldState, j: usize) -> Vec3 {
        self.scene
            .contact_axis_world(&state.part_poses[self.scene.primary_id()], j)
    }

    fn tabletop_in_region(&self, state: &WorldState) -> bool {
        let r = self.scene.params.stabilizer_region;
        let c = state.part_poses[self.scene.primary_id()].position;
        c.x >= r[0] && c.x <= r[1] && c.y >= r[2] && c.y <= r[3]
    }

    /// Horizontal overlap test between two vertical-ish parts using their
    /// enclosing cylinders; z spans must intersect.
    fn parts_overlap(&self, state: &WorldState, a: usize, b: usize) -> bool {
        let (alo, ahi) = self.scene.parts[a].axial_span();
        let (blo, bhi) = self.scene.parts[b].axial_span();
        let pa = &state.part_poses[a];
        let pb = &state.part_poses[b];
        // Approximate z span assuming near-vertical axes.
        let az = (pa.position.z + alo, pa.position.z + ahi);
        let bz = (pb.position.z + blo, pb.position.z + bhi);
        if az.1 < bz.0 || bz.1 < az.0 {
            return false;
        }
        // Compare axis center lines at mid height.
        let amid = self.leg_axis_point(state, a, 0.5 * (alo + ahi));
        let bmid = self.leg_axis_point(state, b, 0.5 * (blo + bhi));
        let d = ((amid.x - bmid.x).powi(2) + (amid.y - bmid.y).powi(2)).sqrt();
        d < self.scene.parts[a].enclosing_radius() + self.scene.parts[b].enclosing_radius()
    }

    /// Place all parts for a fresh episode.
    pub fn reset(
        &self,
        seed: u64,
        randomness: Randomness,
        order: &[usize],
    ) -> Result<WorldState, WorldError> {
        let n_contacts = self.scene.contact_count();
        assert_eq!(order.len(), n_contacts, "order must cover every contact");
        let mut seen = vec![false; n_contacts];
        for &j in order {
            assert!(j < n_contacts && !seen[j], "order must be a permutation");
            seen[j] = true;
        }

        let p = &self.scene.params;
        let (pos_noise, yaw_noise, tilt_noise) = match randomness {
            Randomness::Low => (0.0, 0.0, 0.0),
            Randomness::Medium => (p.reset_pos_noise, p.reset_yaw_noise, p.reset_tilt_noise),
            Randomness::High => (
                p.high_scale * p.reset_pos_noise,
                p.high_scale * p.reset_yaw_noise,
                p.high_scale * p.reset_tilt_noise,
            ),
        };

        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            if attempt > p.max_placement_attempts {
                return Err(WorldError::PlacementFailure(p.max_placement_attempts));
            }
            let mut poses = Vec::with_capacity(self.scene.part_count());
            for part in &self.scene.parts {
                let nominal = self.scene.nominal_positions[part.id];
                let (dx, dy, yaw, roll, pitch) = if pos_noise == 0.0 {
                    (0.0, 0.0, 0.0, 0.0, 0.0)
                } else {
                    (
                        rng.gen_range(-pos_noise..=pos_noise),
                        rng.gen_range(-pos_noise..=pos_noise),
                        rng.gen_range(-yaw_noise..=yaw_noise),
                        rng.gen_range(-tilt_noise..=tilt_noise),
                        rng.gen_range(-tilt_noise..=tilt_noise),
                    )
                };
                let position = Vec3::new(nominal[0] + dx, nominal[1] + dy, nominal[2]);
                let orientation = match part.kind {
                    // The tabletop stays flat; only yaw varies.
                    PartKind::PrimaryComponent => quat_from_euler_zyx(0.0, 0.0, yaw),
                    PartKind::SecondaryComponent => quat_from_euler_zyx(roll, pitch, yaw),
                };
                poses.push(Pose::new(position, orientation));
            }

            let state = WorldState {
                part_poses: poses,
                ee: EndEffector {
                    position: Vec3::from_column_slice(&self.scene.ee_home),
                    yaw: 0.0,
                    mode: GripperMode::Open,
                    held: None,
                    held_offset: None,
                    grip_axial: None,
                    wrist_travel: 0.0,
                },
                attachments: vec![Attachment::Empty; n_contacts],
                screw_progress: vec![0.0; n_contacts],
                stabilized: false,
                step_count: 0,
            };
            if self.placement_ok(&state) {
                return Ok(state);
            }
        }
    }

    fn placement_ok(&self, state: &WorldState) -> bool {
        let margin = self.scene.params.placement_margin;
        let half = self.scene.params.workspace_half;
        let ids = self.scene.secondary_ids();
        let primary = self.scene.primary_id();
        for &id in &ids {
            let pos = state.part_poses[id].position;
            if pos.x.abs() > half || pos.y.abs() > half {
                return false;
            }
            // Keep legs outside the tabletop footprint.
            let local = state.part_poses[primary].inverse().transform_point(&pos);
            let half_side = 0.5 * crate::scene::TABLETOP_SIDE
                + self.scene.parts[id].enclosing_radius()
                + margin;
            if local.x.abs() < half_side && local.y.abs() < half_side {
                return false;
            }
        }
        for (ai, &a) in ids.iter().enumerate() {
            for &b in ids.iter().skip(ai + 1) {
                let da = state.part_poses[a].position;
                let db = state.part_poses[b].position;
                let d = ((da.x - db.x).powi(2) + (da.y - db.y).powi(2)).sqrt();
                let need = self.scene.parts[a].enclosing_radius()
                    + self.scene.parts[b].enclosing_radius()
                    + margin;
                if d < need {
                    return false;
                }
            }
        }
        true
    }

    /// Pure transition: apply one end-effector action.
    pub fn step(&self, state: &WorldState, action: &EEAction) -> (WorldState, StepFlags) {
        let p = &self.scene.params;
        let mut next = state.clone();
        let mut flags = StepFlags::default();

        // Resolve the commanded motion into clamped deltas.
        let (mut dt, mut dyaw) = match action.mode {
            ActionMode::Delta => (action.translation, action.d_yaw),
            ActionMode::Absolute => (
                action.translation - state.ee.position,
                wrap_angle(action.d_yaw - state.ee.yaw),
            ),
        };
        let norm = dt.norm();
        if norm > p.max_step {
            dt *= p.max_step / norm;
            if action.mode == ActionMode::Delta {
                flags.clamped = true;
            }
        }
        if dyaw.abs() > p.max_rot_step {
            dyaw = dyaw.signum() * p.max_rot_step;
            if action.mode == ActionMode::Delta {
                flags.clamped = true;
            }
        }

        let mut target = state.ee.position + dt;
        let half = p.workspace_half;
        let clamped_target = Vec3::new(
            target.x.clamp(-half, half),
            target.y.clamp(-half, half),
            target.z.clamp(0.005, p.workspace_top),
        );
        if (clamped_target - target).norm() > 0.0 {
            flags.clamped = true;
            target = clamped_target;
        }
        let new_yaw = state.ee.yaw + dyaw;

        // Move the held part rigidly with the EE, unless that motion would
        // drive it through an assembled leg.
        let candidate_ee = Pose::from_yaw(target, new_yaw);
        let mut moved = true;
        if let (Some(held), Some(offset)) = (state.ee.held, state.ee.held_offset) {
            let candidate_pose = candidate_ee.compose(&offset);
            let mut probe = next.clone();
            probe.part_poses[held] = candidate_pose;
            let assembled: Vec<usize> = state
                .attachments
                .iter()
                .filter_map(|a| a.part())
                .collect();
            let collides = assembled.iter().any(|&b| self.parts_overlap(&probe, held, b));
            if collides {
                flags.blocked = true;
                moved = false;
            } else {
                next.part_poses[held] = candidate_pose;
            }
        }
        if moved {
            next.ee.position = target;
            next.ee.yaw = new_yaw;
            next.ee.wrist_travel += dyaw.abs();
        }

        // Push the tabletop when the EE body penetrates its slab.
        if state.ee.held != Some(self.scene.primary_id()) {
            let primary = self.scene.primary_id();
            let slab = &next.part_poses[primary];
            let local = slab.inverse().transform_point(&next.ee.position);
            let half_side = 0.5 * crate::scene::TABLETOP_SIDE + p.ee_radius;
            let z_hi = crate::scene::TABLETOP_THICKNESS + p.ee_radius;
            if local.x.abs() < half_side && local.y.abs() < half_side && local.z > -p.ee_radius && local.z < z_hi
            {
                // Horizontal minimum translation vector, in the slab frame.
                let px = half_side - local.x.abs();
                let py = half_side - local.y.abs();
                let mtv_local = if px < py {
                    Vec3::new(-px * local.x.signum(), 0.0, 0.0)
                } else {
                    Vec3::new(0.0, -py * local.y.signum(), 0.0)
                };
                let mtv = slab.rotate_vector(&mtv_local);
                self.translate_assembly(&mut next, &mtv);
                flags.pushed = true;
            }
        }

        // Screw accrual: rotating while closed around an inserted leg.
        if dyaw != 0.0 && state.ee.mode == GripperMode::Close && state.ee.held.is_none() {
            let mut best: Option<(usize, usize, f64)> = None;
            for (j, att) in state.attachments.iter().enumerate() {
                if let Attachment::Inserted(part) = att {
                    if let Some((d, _)) = self.segment_distance(state, *part, &state.ee.position) {
                        if d <= p.grasp_tol && best.map_or(true, |(_, _, bd)| d < bd) {
                            best = Some((j, *part, d));
                        }
                    }
                }
            }
            if let Some((j, part, _)) = best {
                // The engaged leg turns with the wrist; progress ratchets.
                let pose = &mut next.part_poses[part];
                pose.orientation =
                    Quat::from_axis_angle(&Vector3::z_axis(), dyaw) * pose.orientation;
                if dyaw > 0.0 {
                    next.screw_progress[j] =
                        (next.screw_progress[j] + dyaw).min(p.screw_target);
                    if next.screw_progress[j] >= p.screw_target {
                        next.attachments[j] = Attachment::Screwed(part);
                        flags.screw_completed = Some(j);
                    }
                }
            }
        }

        // Gripper command edges.
        match action.gripper {
            GripCommand::Open => {
                if next.ee.mode == GripperMode::Close {
                    next.ee.mode = GripperMode::Open;
                    if let Some(held) = next.ee.held.take() {
                        next.ee.held_offset = None;
                        next.ee.grip_axial = None;
                        flags.released = Some(held);
                        self.settle_released(&mut next, held);
                    }
                }
            }
            GripCommand::Close => {
                if next.ee.mode == GripperMode::Open {
                    next.ee.mode = GripperMode::Close;
                    next.ee.wrist_travel = 0.0;
                    // Attach the nearest free leg within tolerance.
                    let attached: Vec<usize> = next
                        .attachments
                        .iter()
                        .filter_map(|a| a.part())
                        .collect();
                    let mut best: Option<(usize, f64)> = None;
                    for &id in &self.scene.secondary_ids() {
                        if attached.contains(&id) {
                            continue;
                        }
                        if let Some((d, _)) = self.segment_distance(&next, id, &next.ee.position) {
                            if d <= p.grasp_tol && best.map_or(true, |(_, bd)| d < bd) {
                                best = Some((id, d));
                            }
                        }
                    }
                    if let Some((id, _)) = best {
                        let axial = self
                            .axial_coordinate(&next, id, &next.ee.position)
                            .clamp(0.0, self.scene.parts[id].axial_span().1);
                        // Closing the jaws squares the leg up: keep yaw, drop
                        // tilt, pivot about the grip point.
                        let pose = next.part_poses[id];
                        let grip_world = pose.transform_point(&Vec3::new(0.0, 0.0, axial));
                        let yaw = yaw_of(&pose.orientation);
                        let upright = Pose::from_yaw(
                            grip_world - Vec3::new(0.0, 0.0, axial),
                            yaw,
                        );
                        next.part_poses[id] = upright;
                        let ee_pose = next.ee.pose();
                        next.ee.held = Some(id);
                        next.ee.held_offset = Some(ee_pose.inverse().compose(&upright));
                        next.ee.grip_axial = Some(axial);
                        flags.grasped = Some(id);
                    }
                }
            }
            GripCommand::Hold => {}
        }

        // Insert transition: a held leg seats into a free contact point when
        // tip and axis line up.
        if let Some(held) = next.ee.held {
            let tip = self.tip_world(&next, held);
            let axis = self.leg_axis_dir(&next, held);
            for j in 0..self.scene.contact_count() {
                if next.attachments[j] != Attachment::Empty {
                    continue;
                }
                let cw = self.contact_world(&next, j);
                let ca = self.contact_axis_world(&next, j);
                let cosang = axis.dot(&ca).clamp(-1.0, 1.0);
                if (tip - cw).norm() <= p.eps_pos && cosang.acos() <= p.eps_ang {
                    // Seat exactly: tip at the contact, axis along the screw
                    // axis, yaw preserved.
                    let yaw = yaw_of(&next.part_poses[held].orientation);
                    next.part_poses[held] = Pose::from_yaw(cw, yaw);
                    next.attachments[j] = Attachment::Inserted(held);
                    next.ee.held = None;
                    next.ee.held_offset = None;
                    next.ee.grip_axial = None;
                    flags.seated = Some((held, j));
                    break;
                }
            }
        }

        next.stabilized = self.tabletop_in_region(&next);
        next.step_count += 1;
        (next, flags)
    }

    /// Drop a released leg onto its support (floor or slab top).
    fn settle_released(&self, state: &mut WorldState, part: usize) {
        let primary = self.scene.primary_id();
        let slab = state.part_poses[primary];
        let pose = &mut state.part_poses[part];
        let local = slab.inverse().transform_point(&pose.position);
        let over_slab = local.x.abs() < 0.5 * crate::scene::TABLETOP_SIDE
            && local.y.abs() < 0.5 * crate::scene::TABLETOP_SIDE;
        let rest_z = if over_slab {
            slab.position.z + crate::scene::TABLETOP_THICKNESS
        } else {
            0.0
        };
        pose.position.z = rest_z;
    }

    /// Move tabletop plus everything attached to it.
    fn translate_assembly(&self, state: &mut WorldState, delta: &Vec3) {
        let primary = self.scene.primary_id();
        state.part_poses[primary].position += delta;
        for att in state.attachments.clone() {
            if let Some(part) = att.part() {
                state.part_poses[part].position += delta;
            }
        }
    }

    /// Per-skill success semantics for a queried sub-task.
    pub fn check_skill_success(&self, state: &WorldState, query: &Query) -> SkillOutcome {
        let p = &self.scene.params;
        match query.skill {
            Skill::Stabilize => {
                if self.tabletop_in_region(state) {
                    SkillOutcome::success()
                } else {
                    SkillOutcome::running()
                }
            }
            Skill::Grasp => {
                if state.ee.held != Some(query.part) {
                    return SkillOutcome::running();
                }
                let seg = match self.scene.parts[query.part].graspable_segment {
                    Some(s) => s,
                    None => return SkillOutcome::failure(FailReason::UnsafeGrip),
                };
                let axial = state.ee.grip_axial.unwrap_or(f64::NAN);
                if !(seg[0]..=seg[1]).contains(&axial) {
                    return SkillOutcome::failure(FailReason::UnsafeGrip);
                }
                let tip_z = self.tip_world(state, query.part).z;
                if tip_z >= p.lift_threshold {
                    SkillOutcome::success()
                } else {
                    SkillOutcome::running()
                }
            }
            Skill::Insert => {
                match state.attachments[query.contact] {
                    Attachment::Inserted(part) | Attachment::Screwed(part) => {
                        return if part == query.part {
                            SkillOutcome::success()
                        } else {
                            SkillOutcome::failure(FailReason::WrongContact)
                        };
                    }
                    Attachment::Empty => {}
                }
                // Seated elsewhere is a definitive wrong-contact failure.
                for (j, att) in state.attachments.iter().enumerate() {
                    if j != query.contact && att.part() == Some(query.part) {
                        return SkillOutcome::failure(FailReason::WrongContact);
                    }
                }
                let tip = self.tip_world(state, query.part);
                let axis = self.leg_axis_dir(state, query.part);
                let cw = self.contact_world(state, query.contact);
                let ca = self.contact_axis_world(state, query.contact);
                let cosang = axis.dot(&ca).clamp(-1.0, 1.0);
                if (tip - cw).norm() <= p.eps_pos && cosang.acos() <= p.eps_ang {
                    SkillOutcome::success()
                } else {
                    SkillOutcome::running()
                }
            }
            Skill::Screw => match state.attachments[query.contact] {
                Attachment::Screwed(part) if part == query.part => SkillOutcome::success(),
                Attachment::Screwed(_) => SkillOutcome::failure(FailReason::WrongContact),
                Attachment::Inserted(part) if part != query.part => {
                    SkillOutcome::failure(FailReason::WrongContact)
                }
                _ => {
                    if state.screw_progress[query.contact] >= p.screw_target {
                        SkillOutcome::success()
                    } else {
                        SkillOutcome::running()
                    }
                }
            },
        }
    }

    /// Full-task success: every contact point screwed.
    pub fn assembly_complete(&self, state: &WorldState) -> bool {
        state
            .attachments
            .iter()
            .all(|a| matches!(a, Attachment::Screwed(_)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    /// Translate the tabletop (and attached legs) horizontally.
    TabletopJolt { magnitude: f64 },
    /// Translate a free leg horizontally.
    LegDisplace { part: usize, magnitude: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PerturbFlags {
    pub rejected: bool,
}

impl World {
    /// Deterministic state perturbation; attachments are preserved.
    pub fn apply_perturbation(
        &self,
        state: &WorldState,
        kind: Perturbation,
        seed: u64,
    ) -> (WorldState, PerturbFlags) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut next = state.clone();
        let mut flags = PerturbFlags::default();
        match kind {
            Perturbation::TabletopJolt { magnitude } => {
                let delta = Vec3::new(angle.cos(), angle.sin(), 0.0) * magnitude;
                self.translate_assembly(&mut next, &delta);
                next.stabilized = self.tabletop_in_region(&next);
            }
            Perturbation::LegDisplace { part, magnitude } => {
                let held = state.ee.held == Some(part);
                let attached = state.attachments.iter().any(|a| a.part() == Some(part));
                if held || attached {
                    flags.rejected = true;
                } else {
                    let delta = Vec3::new(angle.cos(), angle.sin(), 0.0) * magnitude;
                    next.part_poses[part].position += delta;
                }
            }
        }
        (next, flags)
    }
}

/// Episode wrapper: state + RNG + snapshot tokens.
#[derive(Debug, Clone)]
pub struct Sim {
    pub world: World,
    pub state: WorldState,
    pub order: Vec<usize>,
    pub randomness: Randomness,
    pub seed: u64,
    rng: ChaCha12Rng,
    episode: u64,
}

/// Opaque resume point; valid only for the episode that produced it.
#[derive(Debug, Clone)]
pub struct SnapshotToken {
    episode: u64,
    state: WorldState,
    rng: ChaCha12Rng,
}

impl Sim {
    pub fn new(world: World) -> Sim {
        let state = WorldState {
            part_poses: vec![Pose::identity(); world.scene.part_count()],
            ee: EndEffector {
                position: Vec3::from_column_slice(&world.scene.ee_home),
                yaw: 0.0,
                mode: GripperMode::Open,
                held: None,
                held_offset: None,
                grip_axial: None,
                wrist_travel: 0.0,
            },
            attachments: vec![Attachment::Empty; world.scene.contact_count()],
            screw_progress: vec![0.0; world.scene.contact_count()],
            stabilized: false,
            step_count: 0,
        };
        Sim {
            world,
            state,
            order: vec![],
            randomness: Randomness::Low,
            seed: 0,
            rng: ChaCha12Rng::seed_from_u64(0),
            episode: 0,
        }
    }

    pub fn reset(
        &mut self,
        seed: u64,
        randomness: Randomness,
        order: Vec<usize>,
    ) -> Result<&WorldState, WorldError> {
        self.state = self.world.reset(seed, randomness, &order)?;
        self.order = order;
        self.randomness = randomness;
        self.seed = seed;
        self.rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        self.episode += 1;
        Ok(&self.state)
    }

    pub fn step(&mut self, action: &EEAction) -> StepFlags {
        let (next, flags) = self.world.step(&self.state, action);
        self.state = next;
        flags
    }

    pub fn snapshot(&self) -> SnapshotToken {
        SnapshotToken {
            episode: self.episode,
            state: self.state.clone(),
            rng: self.rng.clone(),
        }
    }

    pub fn restore(&mut self, token: &SnapshotToken) -> Result<(), WorldError> {
        if token.episode != self.episode {
            return Err(WorldError::StaleToken);
        }
        self.state = token.state.clone();
        self.rng = token.rng.clone();
        Ok(())
    }

    pub fn rng(&mut self) -> &mut ChaCha12Rng {
        &mut self.rng
    }
}

/// Identity permutation over contacts, for callers that don't randomize.
pub fn identity_order(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Seeded random permutation of contact points.
pub fn random_order(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> World {
        World::square_table()
    }

    fn low_state(w: &World) -> WorldState {
        w.reset(0, Randomness::Low, &identity_order(4)).unwrap()
    }

    /// Place leg `part` seated at contact `j` with the EE closed on its shaft.
    fn engaged_state(w: &World, part: usize, j: usize) -> WorldState {
        let mut s = low_state(w);
        let hole = w.contact_world(&s, j);
        s.part_poses[part] = Pose::from_yaw(hole, 0.0);
        s.attachments[j] = Attachment::Inserted(part);
        let seg = w.scene.parts[part].graspable_segment.unwrap();
        let axial = 0.5 * (seg[0] + seg[1]);
        s.ee.position = hole + Vec3::new(0.0, 0.0, axial);
        s.ee.mode = GripperMode::Close;
        s.ee.held = None;
        s
    }

    #[test]
    fn dense_query_decodes_single_selection() {
        let mut dense = vec![0.0; 4 * 5 * 4];
        dense[(2 * 5 + 1) * 4 + 3] = 1.0;
        let q = validate_query_dense(&dense, 5, 4).unwrap();
        assert_eq!(q, Query::new(Skill::Insert, 1, 3));
    }

    #[test]
    fn dense_query_rejects_zero_and_double() {
        let zero = vec![0.0; 4 * 5 * 4];
        assert!(matches!(
            validate_query_dense(&zero, 5, 4),
            Err(WorldError::MultipleSelection(0))
        ));
        let mut two = vec![0.0; 4 * 5 * 4];
        two[3] = 1.0;
        two[17] = 1.0;
        assert!(matches!(
            validate_query_dense(&two, 5, 4),
            Err(WorldError::MultipleSelection(2))
        ));
    }

    #[test]
    fn query_index_bounds() {
        assert!(validate_query(1, 4, 3, 5, 4).is_ok());
        assert!(matches!(validate_query(4, 0, 0, 5, 4), Err(WorldError::IndexOutOfRange(_))));
        assert!(matches!(validate_query(0, 5, 0, 5, 4), Err(WorldError::IndexOutOfRange(_))));
        assert!(matches!(validate_query(0, 0, 4, 5, 4), Err(WorldError::IndexOutOfRange(_))));
    }

    #[test]
    fn reset_is_deterministic() {
        let w = world();
        let a = w.reset(42, Randomness::Medium, &identity_order(4)).unwrap();
        let b = w.reset(42, Randomness::Medium, &identity_order(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reset_low_is_nominal() {
        let w = world();
        let s = low_state(&w);
        for (i, pose) in s.part_poses.iter().enumerate() {
            let nominal = Vec3::from_column_slice(&w.scene.nominal_positions[i]);
            assert!((pose.position - nominal).norm() < 1e-12);
            assert!(pose.orientation.angle() < 1e-12);
        }
    }

    #[test]
    fn reset_medium_positions_within_bound() {
        let w = world();
        for seed in 0..1000u64 {
            let s = w.reset(seed, Randomness::Medium, &identity_order(4)).unwrap();
            for (i, pose) in s.part_poses.iter().enumerate() {
                let nominal = Vec3::from_column_slice(&w.scene.nominal_positions[i]);
                let d = pose.position - nominal;
                assert!(d.x.abs() <= 0.02 + 1e-12 && d.y.abs() <= 0.02 + 1e-12);
                assert!(d.z.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn step_integrates_ee_translation_exactly() {
        let w = world();
        let s = low_state(&w);
        let (next, flags) = w.step(&s, &EEAction::delta(Vec3::new(0.0, 0.0, 0.01), 0.0, GripCommand::Hold));
        assert!(!flags.clamped);
        assert!((next.ee.position.z - s.ee.position.z - 0.01).abs() < 1e-15);
        assert_eq!(next.step_count, s.step_count + 1);
    }

    #[test]
    fn close_near_graspable_segment_attaches() {
        let w = world();
        let mut s = low_state(&w);
        let seg = w.scene.parts[1].graspable_segment.unwrap();
        let mid = 0.5 * (seg[0] + seg[1]);
        let grip = s.part_poses[1].transform_point(&Vec3::new(0.0, 0.0, mid));
        s.ee.position = grip + Vec3::new(0.0, 0.0, 0.01);
        let (next, flags) = w.step(&s, &EEAction::delta(Vec3::zeros(), 0.0, GripCommand::Close));
        assert_eq!(flags.grasped, Some(1));
        assert_eq!(next.ee.held, Some(1));
        assert_eq!(next.ee.mode, GripperMode::Close);
    }

    #[test]
    fn close_out_of_tolerance_attaches_nothing() {
        let w = world();
        let mut s = low_state(&w);
        s.ee.position = Vec3::new(0.3, 0.3, 0.3);
        let (next, flags) = w.step(&s, &EEAction::delta(Vec3::zeros(), 0.0, GripCommand::Close));
        assert_eq!(flags.grasped, None);
        assert_eq!(next.ee.held, None);
        assert_eq!(next.ee.mode, GripperMode::Close);
    }

    #[test]
    fn yaw_while_engaged_accrues_screw_progress() {
        let w = world();
        let s = engaged_state(&w, 1, 0);
        let (next, _) = w.step(&s, &EEAction::delta(Vec3::zeros(), 0.1, GripCommand::Hold));
        assert!((next.screw_progress[0] - 0.1).abs() < 1e-12);
        // Negative rotation never unwinds recorded progress.
        let (next2, _) = w.step(&next, &EEAction::delta(Vec3::zeros(), -0.1, GripCommand::Hold));
        assert!((next2.screw_progress[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn screw_completion_marks_attachment() {
        let w = world();
        let mut s = engaged_state(&w, 1, 0);
        s.screw_progress[0] = w.scene.params.screw_target - 0.05;
        let (next, flags) = w.step(&s, &EEAction::delta(Vec3::zeros(), 0.1, GripCommand::Hold));
        assert_eq!(flags.screw_completed, Some(0));
        assert_eq!(next.attachments[0], Attachment::Screwed(1));
        assert!((next.screw_progress[0] - w.scene.params.screw_target).abs() < 1e-12);
    }

    #[test]
    fn insert_success_at_exact_alignment() {
        let w = world();
        let mut s = low_state(&w);
        let hole = w.contact_world(&s, 2);
        s.part_poses[1] = Pose::from_yaw(hole, 0.3);
        let q = Query::new(Skill::Insert, 1, 2);
        assert!(w.check_skill_success(&s, &q).is_success());
    }

    #[test]
    fn insert_never_succeeds_at_double_tolerance() {
        let w = world();
        let mut s = low_state(&w);
        let hole = w.contact_world(&s, 2);
        let off = 2.0 * w.scene.params.eps_pos;
        s.part_poses[1] = Pose::from_yaw(hole + Vec3::new(off, 0.0, 0.0), 0.0);
        let q = Query::new(Skill::Insert, 1, 2);
        let out = w.check_skill_success(&s, &q);
        assert!(!out.is_success());
    }

    #[test]
    fn unsafe_grip_fails_grasp() {
        let w = world();
        let mut s = low_state(&w);
        s.ee.held = Some(1);
        s.ee.held_offset = Some(Pose::identity());
        s.ee.grip_axial = Some(0.02); // below the graspable segment
        s.ee.mode = GripperMode::Close;
        s.part_poses[1].position.z = 0.06;
        let out = w.check_skill_success(&s, &Query::new(Skill::Grasp, 1, 0));
        assert_eq!(out, SkillOutcome::failure(FailReason::UnsafeGrip));
    }

    #[test]
    fn grasp_success_needs_lift() {
        let w = world();
        let mut s = low_state(&w);
        s.ee.held = Some(1);
        s.ee.held_offset = Some(Pose::identity());
        s.ee.grip_axial = Some(0.075);
        s.ee.mode = GripperMode::Close;
        let q = Query::new(Skill::Grasp, 1, 0);
        assert_eq!(w.check_skill_success(&s, &q).status, OutcomeStatus::Running);
        s.part_poses[1].position.z = 0.031;
        assert!(w.check_skill_success(&s, &q).is_success());
    }

    #[test]
    fn perturbation_zero_magnitude_is_identity() {
        let w = world();
        let s = low_state(&w);
        let (next, _) = w.apply_perturbation(&s, Perturbation::TabletopJolt { magnitude: 0.0 }, 9);
        assert_eq!(next, s);
    }

    #[test]
    fn jolt_translates_assembly_together() {
        let w = world();
        let mut s = low_state(&w);
        let hole = w.contact_world(&s, 0);
        s.part_poses[1] = Pose::from_yaw(hole, 0.0);
        s.attachments[0] = Attachment::Screwed(1);
        let slab_before = s.part_poses[0].position;
        let leg_before = s.part_poses[1].position;
        let free_before = s.part_poses[2].position;
        let (next, _) = w.apply_perturbation(&s, Perturbation::TabletopJolt { magnitude: 0.03 }, 5);
        let d_slab = next.part_poses[0].position - slab_before;
        let d_leg = next.part_poses[1].position - leg_before;
        assert!((d_slab.norm() - 0.03).abs() < 1e-12);
        assert!((d_slab - d_leg).norm() < 1e-12);
        assert_eq!(next.part_poses[2].position, free_before);
    }

    #[test]
    fn leg_displace_on_held_leg_is_rejected() {
        let w = world();
        let mut s = low_state(&w);
        s.ee.held = Some(2);
        s.ee.held_offset = Some(Pose::identity());
        let (next, flags) =
            w.apply_perturbation(&s, Perturbation::LegDisplace { part: 2, magnitude: 0.05 }, 3);
        assert!(flags.rejected);
        assert_eq!(next, s);
    }

    #[test]
    fn snapshot_round_trip_and_determinism() {
        let w = world();
        let mut sim = Sim::new(w);
        sim.reset(7, Randomness::Medium, identity_order(4)).unwrap();
        let token = sim.snapshot();
        let start = sim.state.clone();
        let actions: Vec<EEAction> = (0..10)
            .map(|i| EEAction::delta(Vec3::new(0.01, -0.005, 0.002 * i as f64), 0.02, GripCommand::Hold))
            .collect();
        for a in &actions {
            sim.step(a);
        }
        let end_first = sim.state.clone();
        sim.restore(&token).unwrap();
        assert_eq!(sim.state, start);
        for a in &actions {
            sim.step(a);
        }
        assert_eq!(sim.state, end_first);
    }

    #[test]
    fn stale_token_after_new_reset() {
        let w = world();
        let mut sim = Sim::new(w);
        sim.reset(1, Randomness::Low, identity_order(4)).unwrap();
        let token = sim.snapshot();
        sim.reset(2, Randomness::Low, identity_order(4)).unwrap();
        assert!(matches!(sim.restore(&token), Err(WorldError::StaleToken)));
    }

    #[test]
    fn clamping_bounds_ee_displacement() {
        let w = world();
        let mut s = low_state(&w);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..500 {
            let a = EEAction::delta(
                Vec3::new(
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                ),
                rng.gen_range(-1.0..1.0),
                GripCommand::Hold,
            );
            let before = s.ee.position;
            let (next, _) = w.step(&s, &a);
            assert!((next.ee.position - before).norm() <= w.scene.params.max_step + 1e-9);
            s = next;
        }
    }

    #[test]
    fn insert_success_is_stable_under_zero_perturbation() {
        let w = world();
        let mut s = low_state(&w);
        let hole = w.contact_world(&s, 1);
        s.part_poses[3] = Pose::from_yaw(hole, 0.0);
        s.attachments[1] = Attachment::Inserted(3);
        let q = Query::new(Skill::Insert, 3, 1);
        assert!(w.check_skill_success(&s, &q).is_success());
        let (p, _) = w.apply_perturbation(&s, Perturbation::TabletopJolt { magnitude: 0.0 }, 77);
        assert!(w.check_skill_success(&p, &q).is_success());
    }
}

//! Scene description: part geometry, contact points, thresholds.
//!
//! Everything here is plain data loadable from the structured config, with
//! the square-table task as the built-in default.

use crate::math::{Pose, Vec3};
use serde::{Deserialize, Serialize};

pub const SKILL_COUNT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skill {
    Stabilize,
    Grasp,
    Insert,
    Screw,
}

impl Skill {
    pub const ALL: [Skill; SKILL_COUNT] = [Skill::Stabilize, Skill::Grasp, Skill::Insert, Skill::Screw];

    pub fn index(&self) -> usize {
        match self {
            Skill::Stabilize => 0,
            Skill::Grasp => 1,
            Skill::Insert => 2,
            Skill::Screw => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Skill> {
        Skill::ALL.get(i).copied()
    }

    pub fn name(&self) -> &'static str {
        match self {
            Skill::Stabilize => "stabilize",
            Skill::Grasp => "grasp",
            Skill::Insert => "insert",
            Skill::Screw => "screw",
        }
    }

    pub fn from_name(s: &str) -> Option<Skill> {
        Skill::ALL.iter().copied().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveShape {
    /// Axis-aligned box in the part frame, given by full extents.
    Box { extents: [f64; 3] },
    /// Cylinder along local +z.
    Cylinder { radius: f64, height: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: PrimitiveShape,
    /// Offset of the primitive center from the part origin.
    pub center: [f64; 3],
}

impl Primitive {
    pub fn center_v(&self) -> Vec3 {
        Vec3::new(self.center[0], self.center[1], self.center[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartKind {
    PrimaryComponent,
    SecondaryComponent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint {
    /// Position in the owning part's frame.
    pub local_position: [f64; 3],
    /// Screw axis in the owning part's frame; unit length.
    pub screw_axis: [f64; 3],
}

impl ContactPoint {
    pub fn local_position_v(&self) -> Vec3 {
        Vec3::from_column_slice(&self.local_position)
    }
    pub fn screw_axis_v(&self) -> Vec3 {
        Vec3::from_column_slice(&self.screw_axis)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub id: usize,
    pub kind: PartKind,
    pub primitives: Vec<Primitive>,
    /// Contact points live on the primary component only.
    #[serde(default)]
    pub contact_points: Vec<ContactPoint>,
    /// Interval along the local +z axis where a grip is considered safe.
    #[serde(default)]
    pub graspable_segment: Option<[f64; 2]>,
    /// Surface twist about local +z in rad per meter of axial coordinate.
    #[serde(default)]
    pub twist_rate: f64,
}

impl PartSpec {
    pub fn is_secondary(&self) -> bool {
        self.kind == PartKind::SecondaryComponent
    }

    /// Radius of the smallest vertical cylinder enclosing all primitives,
    /// measured from the local z axis. Used by the overlap test.
    pub fn enclosing_radius(&self) -> f64 {
        let mut r: f64 = 0.0;
        for prim in &self.primitives {
            let c = prim.center_v();
            let horiz = (c.x * c.x + c.y * c.y).sqrt();
            let extent = match prim.shape {
                PrimitiveShape::Box { extents } => {
                    0.5 * (extents[0] * extents[0] + extents[1] * extents[1]).sqrt()
                }
                PrimitiveShape::Cylinder { radius, .. } => radius,
            };
            r = r.max(horiz + extent);
        }
        r
    }

    /// Axial extent [z_min, z_max] of the part in its own frame.
    pub fn axial_span(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for prim in &self.primitives {
            let half = match prim.shape {
                PrimitiveShape::Box { extents } => 0.5 * extents[2],
                PrimitiveShape::Cylinder { height, .. } => 0.5 * height,
            };
            lo = lo.min(prim.center[2] - half);
            hi = hi.max(prim.center[2] + half);
        }
        (lo, hi)
    }
}

/// Simulator thresholds and motion limits. Defaults are the declared task
/// configuration; every field can be overridden from the config file or CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Max translation per step, meters.
    pub max_step: f64,
    /// Max rotation per step, radians.
    pub max_rot_step: f64,
    /// Insert position tolerance, meters.
    pub eps_pos: f64,
    /// Insert axis tolerance, radians.
    pub eps_ang: f64,
    /// Full screw travel, radians.
    pub screw_target: f64,
    /// Gripper attach tolerance to a graspable segment, meters.
    pub grasp_tol: f64,
    /// Height the part tip must reach for a grasp to count as lifted, meters.
    pub lift_threshold: f64,
    /// Effective radius of the end effector body for pushing, meters.
    pub ee_radius: f64,
    /// Wrist rotation available in a single grip before a regrasp, radians.
    pub wrist_limit: f64,
    /// Workspace half-extent in x and y, meters.
    pub workspace_half: f64,
    /// Workspace ceiling, meters.
    pub workspace_top: f64,
    /// Stabilizer corner region, [x_min, x_max, y_min, y_max].
    pub stabilizer_region: [f64; 4],
    /// Margin demanded between parts at reset, meters.
    pub placement_margin: f64,
    /// Reset attempts before PlacementFailure.
    pub max_placement_attempts: u32,
    /// Medium-randomness reset noise: position half-range, meters.
    pub reset_pos_noise: f64,
    /// Medium-randomness reset noise: yaw half-range, radians.
    pub reset_yaw_noise: f64,
    /// Medium-randomness reset noise: leg tilt half-range per axis, radians.
    pub reset_tilt_noise: f64,
    /// Scale applied to all reset noise at the high level.
    pub high_scale: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            max_step: 0.025,
            max_rot_step: 0.15,
            eps_pos: 0.005,
            eps_ang: 5.0_f64.to_radians(),
            screw_target: std::f64::consts::TAU,
            grasp_tol: 0.015,
            lift_threshold: 0.03,
            ee_radius: 0.01,
            wrist_limit: 2.5 * std::f64::consts::TAU,
            workspace_half: 0.40,
            workspace_top: 0.40,
            stabilizer_region: [0.08, 0.30, 0.08, 0.30],
            placement_margin: 0.02,
            max_placement_attempts: 1000,
            reset_pos_noise: 0.02,
            reset_yaw_noise: 15.0_f64.to_radians(),
            reset_tilt_noise: 15.0_f64.to_radians(),
            high_scale: 2.0,
        }
    }
}

/// Complete static description of the task scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub parts: Vec<PartSpec>,
    /// Nominal reset pose per part, same indexing as `parts`.
    pub nominal_positions: Vec<[f64; 3]>,
    /// Gripper geometry in the end-effector frame, per mode.
    pub gripper_open: Vec<Primitive>,
    pub gripper_close: Vec<Primitive>,
    /// End-effector home position.
    pub ee_home: [f64; 3],
    pub params: SimParams,
}

impl SceneSpec {
    pub fn primary_id(&self) -> usize {
        self.parts
            .iter()
            .find(|p| p.kind == PartKind::PrimaryComponent)
            .map(|p| p.id)
            .expect("scene must contain a primary component")
    }

    pub fn contact_count(&self) -> usize {
        self.parts[self.primary_id()].contact_points.len()
    }

    pub fn part_count(&self) -> usize {
        self.parts.len()
    }

    pub fn secondary_ids(&self) -> Vec<usize> {
        self.parts
            .iter()
            .filter(|p| p.is_secondary())
            .map(|p| p.id)
            .collect()
    }

    /// World position of contact `j` for a given primary pose.
    pub fn contact_world(&self, primary_pose: &Pose, j: usize) -> Vec3 {
        let cp = &self.parts[self.primary_id()].contact_points[j];
        primary_pose.transform_point(&cp.local_position_v())
    }

    /// World screw axis of contact `j`.
    pub fn contact_axis_world(&self, primary_pose: &Pose, j: usize) -> Vec3 {
        let cp = &self.parts[self.primary_id()].contact_points[j];
        primary_pose.rotate_vector(&cp.screw_axis_v())
    }

    pub fn stabilizer_center(&self) -> Vec3 {
        let r = self.params.stabilizer_region;
        Vec3::new(0.5 * (r[0] + r[1]), 0.5 * (r[2] + r[3]), 0.0)
    }
}

pub const TABLETOP_SIDE: f64 = 0.24;
pub const TABLETOP_THICKNESS: f64 = 0.02;
pub const LEG_SIDE: f64 = 0.03;
pub const LEG_LENGTH: f64 = 0.12;
pub const CONTACT_OFFSET: f64 = 0.08;

/// The square-table scene: one tabletop with four corner contact points and
/// four square-prism legs. Leg frames sit at the tip with +z along the shaft.
pub fn square_table() -> SceneSpec {
    let tabletop = PartSpec {
        id: 0,
        kind: PartKind::PrimaryComponent,
        primitives: vec![Primitive {
            shape: PrimitiveShape::Box {
                extents: [TABLETOP_SIDE, TABLETOP_SIDE, TABLETOP_THICKNESS],
            },
            center: [0.0, 0.0, 0.5 * TABLETOP_THICKNESS],
        }],
        contact_points: [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
            .iter()
            .map(|(sx, sy)| ContactPoint {
                local_position: [sx * CONTACT_OFFSET, sy * CONTACT_OFFSET, TABLETOP_THICKNESS],
                screw_axis: [0.0, 0.0, 1.0],
            })
            .collect(),
        graspable_segment: None,
        twist_rate: 0.0,
    };

    let leg = |id: usize| PartSpec {
        id,
        kind: PartKind::SecondaryComponent,
        primitives: vec![Primitive {
            shape: PrimitiveShape::Box {
                extents: [LEG_SIDE, LEG_SIDE, LEG_LENGTH],
            },
            center: [0.0, 0.0, 0.5 * LEG_LENGTH],
        }],
        contact_points: vec![],
        graspable_segment: Some([0.05, 0.10]),
        twist_rate: 0.0,
    };

    let finger = |x: f64| Primitive {
        shape: PrimitiveShape::Box {
            extents: [0.008, 0.02, 0.05],
        },
        center: [x, 0.0, -0.025],
    };
    let bridge = Primitive {
        shape: PrimitiveShape::Box {
            extents: [0.08, 0.03, 0.02],
        },
        center: [0.0, 0.0, 0.01],
    };

    SceneSpec {
        parts: vec![tabletop, leg(1), leg(2), leg(3), leg(4)],
        nominal_positions: vec![
            [0.0, 0.0, 0.0],
            [-0.28, 0.10, 0.0],
            [-0.28, -0.10, 0.0],
            [-0.10, -0.28, 0.0],
            [0.10, -0.28, 0.0],
        ],
        gripper_open: vec![finger(-0.03), finger(0.03), bridge.clone()],
        gripper_close: vec![finger(-0.012), finger(0.012), bridge],
        ee_home: [0.0, -0.30, 0.20],
        params: SimParams::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_table_shape() {
        let s = square_table();
        assert_eq!(s.part_count(), 5);
        assert_eq!(s.contact_count(), 4);
        assert_eq!(s.primary_id(), 0);
        assert_eq!(s.secondary_ids(), vec![1, 2, 3, 4]);
        for id in s.secondary_ids() {
            let seg = s.parts[id].graspable_segment.unwrap();
            assert!(seg[0] < seg[1]);
        }
    }

    #[test]
    fn leg_enclosing_radius_is_half_diagonal() {
        let s = square_table();
        let r = s.parts[1].enclosing_radius();
        let expect = 0.5 * (LEG_SIDE * LEG_SIDE * 2.0).sqrt();
        assert!((r - expect).abs() < 1e-12);
    }

    #[test]
    fn contact_points_on_top_face() {
        let s = square_table();
        for cp in &s.parts[0].contact_points {
            assert!((cp.local_position[2] - TABLETOP_THICKNESS).abs() < 1e-12);
            assert_eq!(cp.screw_axis, [0.0, 0.0, 1.0]);
        }
    }
}

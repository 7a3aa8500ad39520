//! Synthetic point-cloud generation and the observation preprocessing
//! pipeline: surface sampling, rigid scene assembly, voxel downsampling,
//! RANSAC plane segmentation, fixed-size resampling, and the leg twist.

use crate::math::{Pose, Vec3};
use crate::scene::{PartKind, PartSpec, Primitive, PrimitiveShape, SceneSpec};
use crate::world::{GripperMode, WorldState};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CloudError {
    #[error("shape has zero surface area")]
    DegenerateShape,
    #[error("missing canonical cloud for part {0}")]
    MissingCloud(usize),
    #[error("plane segmentation needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("cannot resample an empty cloud")]
    EmptyCloud,
    #[error("part {0} is not twistable")]
    NotTwistable(usize),
    #[error("cloud io: {0}")]
    Io(String),
}

/// N x 3 positions in meters. Labels are debug-only metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub labels: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> PointCloud {
        PointCloud { points, labels: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            labels: self.labels.clone(),
        }
    }
}

/// Preprocessing and sampling configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudConfig {
    /// Surface sampling density, points per square meter.
    pub surface_density: f64,
    /// Voxel edge for downsampling, meters.
    pub voxel_size: f64,
    /// Observation size after the final resample.
    pub target_points: usize,
    /// Plane inlier distance, meters.
    pub plane_tau: f64,
    /// RANSAC iterations.
    pub plane_iters: usize,
}

impl Default for CloudConfig {
    fn default() -> Self {
        CloudConfig {
            surface_density: 30_000.0,
            voxel_size: 0.005,
            target_points: 4096,
            plane_tau: 0.008,
            plane_iters: 200,
        }
    }
}

fn primitive_faces(prim: &Primitive) -> Vec<(f64, Face)> {
    match prim.shape {
        PrimitiveShape::Box { extents } => {
            let [ex, ey, ez] = extents;
            let c = prim.center_v();
            vec![
                (ey * ez, Face::BoxFace { c, axis: 0, sign: 1.0, e: extents }),
                (ey * ez, Face::BoxFace { c, axis: 0, sign: -1.0, e: extents }),
                (ex * ez, Face::BoxFace { c, axis: 1, sign: 1.0, e: extents }),
                (ex * ez, Face::BoxFace { c, axis: 1, sign: -1.0, e: extents }),
                (ex * ey, Face::BoxFace { c, axis: 2, sign: 1.0, e: extents }),
                (ex * ey, Face::BoxFace { c, axis: 2, sign: -1.0, e: extents }),
            ]
        }
        PrimitiveShape::Cylinder { radius, height } => {
            let c = prim.center_v();
            let lateral = std::f64::consts::TAU * radius * height;
            let cap = std::f64::consts::PI * radius * radius;
            vec![
                (lateral, Face::CylinderSide { c, radius, height }),
                (cap, Face::CylinderCap { c, radius, height, sign: 1.0 }),
                (cap, Face::CylinderCap { c, radius, height, sign: -1.0 }),
            ]
        }
    }
}

#[derive(Clone, Copy)]
enum Face {
    BoxFace { c: Vec3, axis: usize, sign: f64, e: [f64; 3] },
    CylinderSide { c: Vec3, radius: f64, height: f64 },
    CylinderCap { c: Vec3, radius: f64, height: f64, sign: f64 },
}

impl Face {
    fn sample(&self, rng: &mut impl Rng) -> Vec3 {
        match *self {
            Face::BoxFace { c, axis, sign, e } => {
                let mut p = Vec3::zeros();
                for k in 0..3 {
                    p[k] = if k == axis {
                        sign * 0.5 * e[k]
                    } else {
                        rng.gen_range(-0.5 * e[k]..=0.5 * e[k])
                    };
                }
                c + p
            }
            Face::CylinderSide { c, radius, height } => {
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                let z = rng.gen_range(-0.5 * height..=0.5 * height);
                c + Vec3::new(radius * theta.cos(), radius * theta.sin(), z)
            }
            Face::CylinderCap { c, radius, height, sign } => {
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                let r = radius * rng.gen_range(0.0f64..=1.0).sqrt();
                c + Vec3::new(r * theta.cos(), r * theta.sin(), sign * 0.5 * height)
            }
        }
    }
}

/// Sample the part surface uniformly, proportional to area, then apply the
/// part's twist about local +z if any.
pub fn sample_mesh(spec: &PartSpec, density: f64, seed: u64) -> Result<PointCloud, CloudError> {
    assert!(density > 0.0, "density must be positive");
    let mut faces: Vec<(f64, Face)> = vec![];
    for prim in &spec.primitives {
        faces.extend(primitive_faces(prim));
    }
    let total_area: f64 = faces.iter().map(|(a, _)| *a).sum();
    if total_area <= 0.0 {
        return Err(CloudError::DegenerateShape);
    }
    let n = (total_area * density).round() as usize;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pick = rng.gen_range(0.0..total_area);
        let mut face = faces[faces.len() - 1].1;
        for (area, f) in &faces {
            if pick < *area {
                face = *f;
                break;
            }
            pick -= *area;
        }
        let mut p = face.sample(&mut rng);
        if spec.twist_rate != 0.0 {
            p = twist_point(&p, spec.twist_rate);
        }
        points.push(p);
    }
    Ok(PointCloud::new(points))
}

/// Rotate a point about the local z axis by rate * z.
pub fn twist_point(p: &Vec3, rate: f64) -> Vec3 {
    let angle = rate * p.z;
    let (s, c) = angle.sin_cos();
    Vec3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z)
}

/// Return a copy of a secondary part spec with the surface twist applied at
/// sampling time. Contact geometry (the tip at the origin) is unchanged.
pub fn twist_shape(spec: &PartSpec, rate: f64) -> Result<PartSpec, CloudError> {
    if spec.kind != PartKind::SecondaryComponent {
        return Err(CloudError::NotTwistable(spec.id));
    }
    let mut out = spec.clone();
    out.twist_rate = rate;
    Ok(out)
}

/// Canonical per-part clouds plus the two gripper variants.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalClouds {
    pub parts: Vec<PointCloud>,
    pub gripper_open: PointCloud,
    pub gripper_close: PointCloud,
}

impl CanonicalClouds {
    /// Sample every canonical cloud for a scene.
    pub fn generate(scene: &SceneSpec, cfg: &CloudConfig, seed: u64) -> Result<CanonicalClouds, CloudError> {
        let mut parts = Vec::with_capacity(scene.parts.len());
        for (i, part) in scene.parts.iter().enumerate() {
            parts.push(sample_mesh(part, cfg.surface_density, seed.wrapping_add(i as u64))?);
        }
        let grip_spec = |prims: &[Primitive], id: usize| PartSpec {
            id,
            kind: PartKind::SecondaryComponent,
            primitives: prims.to_vec(),
            contact_points: vec![],
            graspable_segment: None,
            twist_rate: 0.0,
        };
        let gripper_open = sample_mesh(
            &grip_spec(&scene.gripper_open, usize::MAX),
            cfg.surface_density,
            seed.wrapping_add(1_000),
        )?;
        let gripper_close = sample_mesh(
            &grip_spec(&scene.gripper_close, usize::MAX),
            cfg.surface_density,
            seed.wrapping_add(1_001),
        )?;
        Ok(CanonicalClouds { parts, gripper_open, gripper_close })
    }
}

/// Transform each canonical part cloud by its pose, pick the gripper cloud by
/// mode, transform it by the EE pose, and concatenate.
pub fn assemble_scene_cloud(
    state: &WorldState,
    clouds: &CanonicalClouds,
    label: bool,
) -> Result<PointCloud, CloudError> {
    if clouds.parts.len() != state.part_poses.len() {
        return Err(CloudError::MissingCloud(clouds.parts.len()));
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (i, cloud) in clouds.parts.iter().enumerate() {
        let pose = &state.part_poses[i];
        for p in &cloud.points {
            points.push(pose.transform_point(p));
        }
        if label {
            labels.extend(std::iter::repeat(i as u32).take(cloud.len()));
        }
    }
    let grip = match state.ee.mode {
        GripperMode::Open => &clouds.gripper_open,
        GripperMode::Close => &clouds.gripper_close,
    };
    let ee_pose = state.ee.pose();
    for p in &grip.points {
        points.push(ee_pose.transform_point(p));
    }
    if label {
        labels.extend(std::iter::repeat(u32::MAX).take(grip.len()));
        return Ok(PointCloud { points, labels: Some(labels) });
    }
    Ok(PointCloud::new(points))
}

/// One point per occupied voxel: the centroid of that voxel's points, in
/// sorted voxel-index order.
pub fn voxel_downsample(pc: &PointCloud, voxel: f64) -> PointCloud {
    assert!(voxel > 0.0, "voxel must be positive");
    let mut cells: HashMap<(i64, i64, i64), (Vec3, usize)> = HashMap::new();
    for p in &pc.points {
        let key = (
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        );
        let entry = cells.entry(key).or_insert((Vec3::zeros(), 0));
        entry.0 += p;
        entry.1 += 1;
    }
    let mut keyed: Vec<((i64, i64, i64), Vec3)> = cells
        .into_iter()
        .map(|(k, (sum, n))| (k, sum / n as f64))
        .collect();
    keyed.sort_by_key(|(k, _)| *k);
    PointCloud::new(keyed.into_iter().map(|(_, c)| c).collect())
}

/// RANSAC plane fit; returns (inlier indices, outlier indices) of the best
/// plane, sorted ascending.
pub fn segment_plane(
    pc: &PointCloud,
    tau: f64,
    iters: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), CloudError> {
    let n = pc.len();
    if n < 3 {
        return Err(CloudError::TooFewPoints(n));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut best_count = 0usize;
    let mut best_plane: Option<(Vec3, f64)> = None;
    for _ in 0..iters {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        let k = rng.gen_range(0..n);
        if i == j || j == k || i == k {
            continue;
        }
        if let Some(plane) = plane_through(&pc.points[i], &pc.points[j], &pc.points[k]) {
            let count = pc
                .points
                .iter()
                .filter(|p| point_plane_distance(p, &plane) <= tau)
                .count();
            if count > best_count {
                best_count = count;
                best_plane = Some(plane);
            }
        }
    }
    let plane = best_plane.ok_or(CloudError::TooFewPoints(n))?;
    let mut inliers = Vec::new();
    let mut outliers = Vec::new();
    for (idx, p) in pc.points.iter().enumerate() {
        if point_plane_distance(p, &plane) <= tau {
            inliers.push(idx);
        } else {
            outliers.push(idx);
        }
    }
    Ok((inliers, outliers))
}

pub fn plane_through(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(Vec3, f64)> {
    let normal = (b - a).cross(&(c - a));
    let norm = normal.norm();
    if norm < 1e-12 {
        return None;
    }
    let n = normal / norm;
    Some((n, -n.dot(a)))
}

pub fn point_plane_distance(p: &Vec3, plane: &(Vec3, f64)) -> f64 {
    (plane.0.dot(p) + plane.1).abs()
}

/// Exactly n points: a uniform without-replacement subset when the cloud is
/// large enough, with replacement otherwise.
pub fn resample_fixed(pc: &PointCloud, n: usize, seed: u64) -> Result<PointCloud, CloudError> {
    assert!(n >= 1, "target size must be at least 1");
    let m = pc.len();
    if m == 0 {
        return Err(CloudError::EmptyCloud);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let points = if m >= n {
        let mut idx: Vec<usize> = (0..m).collect();
        for i in 0..n {
            let j = rng.gen_range(i..m);
            idx.swap(i, j);
        }
        idx[..n].iter().map(|&i| pc.points[i]).collect()
    } else {
        (0..n).map(|_| pc.points[rng.gen_range(0..m)]).collect()
    };
    Ok(PointCloud::new(points))
}

/// Binary dump: u64 little-endian count header, then f32 little-endian xyz
/// triples.
pub fn write_cloud(pc: &PointCloud, w: &mut impl Write) -> Result<(), CloudError> {
    let n = pc.len() as u64;
    w.write_all(&n.to_le_bytes()).map_err(|e| CloudError::Io(e.to_string()))?;
    for p in &pc.points {
        for v in [p.x as f32, p.y as f32, p.z as f32] {
            w.write_all(&v.to_le_bytes()).map_err(|e| CloudError::Io(e.to_string()))?;
        }
    }
    Ok(())
}

pub fn read_cloud(r: &mut impl Read) -> Result<PointCloud, CloudError> {
    let mut header = [0u8; 8];
    r.read_exact(&mut header).map_err(|e| CloudError::Io(e.to_string()))?;
    let n = u64::from_le_bytes(header) as usize;
    let mut buf = vec![0u8; n * 12];
    r.read_exact(&mut buf).map_err(|e| CloudError::Io(e.to_string()))?;
    let mut points = Vec::with_capacity(n);
    for c in buf.chunks_exact(12) {
        let x = f32::from_le_bytes(c[0..4].try_into().unwrap()) as f64;
        let y = f32::from_le_bytes(c[4..8].try_into().unwrap()) as f64;
        let z = f32::from_le_bytes(c[8..12].try_into().unwrap()) as f64;
        points.push(Vec3::new(x, y, z));
    }
    Ok(PointCloud::new(points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{quat_from_euler_zyx, Pose};
    use crate::scene::{square_table, PartKind, PartSpec, Primitive, PrimitiveShape};
    use crate::world::{identity_order, Randomness, World};
    use std::collections::BTreeMap;

    fn unit_cube() -> PartSpec {
        PartSpec {
            id: 0,
            kind: PartKind::SecondaryComponent,
            primitives: vec![Primitive {
                shape: PrimitiveShape::Box { extents: [1.0, 1.0, 1.0] },
                center: [0.0, 0.0, 0.0],
            }],
            contact_points: vec![],
            graspable_segment: None,
            twist_rate: 0.0,
        }
    }

    #[test]
    fn cube_sampling_count_and_membership() {
        let pc = sample_mesh(&unit_cube(), 600.0, 3).unwrap();
        // 6 faces x 1 m^2 x 600 points/m^2.
        assert!((pc.len() as i64 - 3600).abs() <= 120, "got {}", pc.len());
        for p in &pc.points {
            let on_face = p.x.abs() == 0.5 || p.y.abs() == 0.5 || p.z.abs() == 0.5;
            assert!(on_face, "point {p:?} not on a cube face");
            assert!(p.x.abs() <= 0.5 + 1e-12 && p.y.abs() <= 0.5 + 1e-12 && p.z.abs() <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn cylinder_points_satisfy_surface_equation() {
        let spec = PartSpec {
            id: 0,
            kind: PartKind::SecondaryComponent,
            primitives: vec![Primitive {
                shape: PrimitiveShape::Cylinder { radius: 0.02, height: 0.1 },
                center: [0.0, 0.0, 0.0],
            }],
            contact_points: vec![],
            graspable_segment: None,
            twist_rate: 0.0,
        };
        let pc = sample_mesh(&spec, 200_000.0, 5).unwrap();
        for p in &pc.points {
            let r = (p.x * p.x + p.y * p.y).sqrt();
            let on_side = (r - 0.02).abs() < 1e-9 && p.z.abs() <= 0.05 + 1e-12;
            let on_cap = (p.z.abs() - 0.05).abs() < 1e-9 && r <= 0.02 + 1e-12;
            assert!(on_side || on_cap);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_mesh(&unit_cube(), 500.0, 9).unwrap();
        let b = sample_mesh(&unit_cube(), 500.0, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_shape_rejected() {
        let spec = PartSpec {
            id: 0,
            kind: PartKind::SecondaryComponent,
            primitives: vec![],
            contact_points: vec![],
            graspable_segment: None,
            twist_rate: 0.0,
        };
        assert!(matches!(sample_mesh(&spec, 100.0, 0), Err(CloudError::DegenerateShape)));
    }

    fn scene_fixture() -> (World, crate::world::WorldState, CanonicalClouds) {
        let world = World::square_table();
        let state = world.reset(4, Randomness::Low, &identity_order(4)).unwrap();
        let cfg = CloudConfig { surface_density: 5_000.0, ..CloudConfig::default() };
        let clouds = CanonicalClouds::generate(&world.scene, &cfg, 10).unwrap();
        (world, state, clouds)
    }

    #[test]
    fn assemble_identity_is_concatenation() {
        let (_, mut state, clouds) = scene_fixture();
        for pose in state.part_poses.iter_mut() {
            *pose = Pose::identity();
        }
        state.ee.position = crate::math::Vec3::zeros();
        state.ee.yaw = 0.0;
        let scene = assemble_scene_cloud(&state, &clouds, false).unwrap();
        let mut expect: Vec<crate::math::Vec3> = vec![];
        for c in &clouds.parts {
            expect.extend_from_slice(&c.points);
        }
        expect.extend_from_slice(&clouds.gripper_open.points);
        assert_eq!(scene.points, expect);
    }

    #[test]
    fn assemble_translates_part_points_exactly() {
        let (_, state, clouds) = scene_fixture();
        let mut moved = state.clone();
        moved.part_poses[2].position += crate::math::Vec3::new(1.0, 0.0, 0.0);
        let a = assemble_scene_cloud(&state, &clouds, true).unwrap();
        let b = assemble_scene_cloud(&moved, &clouds, true).unwrap();
        let labels = a.labels.as_ref().unwrap();
        for (i, (pa, pb)) in a.points.iter().zip(&b.points).enumerate() {
            let d = pb - pa;
            if labels[i] == 2 {
                assert!((d - crate::math::Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
            } else {
                assert!(d.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn gripper_mode_switches_cloud_segment() {
        let (_, state, clouds) = scene_fixture();
        let mut closed = state.clone();
        closed.ee.mode = crate::world::GripperMode::Close;
        let a = assemble_scene_cloud(&state, &clouds, false).unwrap();
        let b = assemble_scene_cloud(&closed, &clouds, false).unwrap();
        let part_total: usize = clouds.parts.iter().map(|c| c.len()).sum();
        assert_eq!(a.points[..part_total], b.points[..part_total]);
        assert_ne!(a.points[part_total..], b.points[part_total..]);
    }

    #[test]
    fn assemble_commutes_with_rigid_motion() {
        let (_, state, clouds) = scene_fixture();
        let motion = Pose::new(
            crate::math::Vec3::new(0.3, -0.2, 0.1),
            quat_from_euler_zyx(0.0, 0.0, 0.7),
        );
        let mut moved = state.clone();
        for pose in moved.part_poses.iter_mut() {
            *pose = motion.compose(pose);
        }
        let ee_pose = motion.compose(&state.ee.pose());
        moved.ee.position = ee_pose.position;
        moved.ee.yaw = crate::math::yaw_of(&ee_pose.orientation);
        let a = assemble_scene_cloud(&state, &clouds, false).unwrap();
        let b = assemble_scene_cloud(&moved, &clouds, false).unwrap();
        for (pa, pb) in a.points.iter().zip(&b.points) {
            assert!((motion.transform_point(pa) - pb).norm() < 1e-9);
        }
    }

    #[test]
    fn voxel_empty_cloud() {
        let out = voxel_downsample(&PointCloud::default(), 0.01);
        assert!(out.is_empty());
    }

    #[test]
    fn voxel_centroid_of_two_points() {
        let pc = PointCloud::new(vec![
            crate::math::Vec3::new(0.0, 0.0, 0.0),
            crate::math::Vec3::new(0.001, 0.0, 0.0),
        ]);
        let out = voxel_downsample(&pc, 0.01);
        assert_eq!(out.len(), 1);
        assert!((out.points[0] - crate::math::Vec3::new(0.0005, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn voxel_grid_count_matches_cell_arithmetic() {
        // 10x10x10 unit lattice with voxels spanning 2x2x2 cells.
        let mut pts = vec![];
        for x in 0..10 {
            for y in 0..10 {
                for z in 0..10 {
                    pts.push(crate::math::Vec3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let out = voxel_downsample(&PointCloud::new(pts), 2.0);
        assert_eq!(out.len(), 125);
    }

    /// Independent grouping oracle for voxel downsampling.
    fn voxel_oracle(pc: &PointCloud, voxel: f64) -> Vec<crate::math::Vec3> {
        let mut groups: BTreeMap<(i64, i64, i64), Vec<crate::math::Vec3>> = BTreeMap::new();
        for p in &pc.points {
            let key = (
                (p.x / voxel).floor() as i64,
                (p.y / voxel).floor() as i64,
                (p.z / voxel).floor() as i64,
            );
            groups.entry(key).or_default().push(*p);
        }
        groups
            .values()
            .map(|v| v.iter().sum::<crate::math::Vec3>() / v.len() as f64)
            .collect()
    }

    #[test]
    fn voxel_matches_brute_force_oracle() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = rng.gen_range(1..400);
            let pts: Vec<crate::math::Vec3> = (0..n)
                .map(|_| {
                    crate::math::Vec3::new(
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                    )
                })
                .collect();
            let pc = PointCloud::new(pts);
            let ours = voxel_downsample(&pc, 0.07);
            let oracle = voxel_oracle(&pc, 0.07);
            assert_eq!(ours.len(), oracle.len());
            for (a, b) in ours.points.iter().zip(&oracle) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn plane_segmentation_finds_planted_outliers() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(8);
        let mut pts: Vec<crate::math::Vec3> = (0..500)
            .map(|_| crate::math::Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0))
            .collect();
        for _ in 0..10 {
            pts.push(crate::math::Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                0.1,
            ));
        }
        let pc = PointCloud::new(pts);
        let (inliers, outliers) = segment_plane(&pc, 0.01, 200, 31).unwrap();
        assert_eq!(inliers.len(), 500);
        assert_eq!(outliers, (500..510).collect::<Vec<_>>());
    }

    #[test]
    fn coplanar_cloud_has_no_outliers() {
        let pts: Vec<crate::math::Vec3> = (0..50)
            .map(|i| crate::math::Vec3::new(i as f64 * 0.01, (i % 7) as f64 * 0.02, 0.3))
            .collect();
        let (inliers, outliers) = segment_plane(&PointCloud::new(pts), 0.005, 100, 1).unwrap();
        assert_eq!(inliers.len(), 50);
        assert!(outliers.is_empty());
    }

    #[test]
    fn plane_needs_three_points() {
        let pc = PointCloud::new(vec![
            crate::math::Vec3::zeros(),
            crate::math::Vec3::new(1.0, 0.0, 0.0),
        ]);
        assert!(matches!(segment_plane(&pc, 0.01, 10, 0), Err(CloudError::TooFewPoints(2))));
    }

    #[test]
    fn huge_tau_classifies_everything_inlier() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(12);
        let pts: Vec<crate::math::Vec3> = (0..100)
            .map(|_| {
                crate::math::Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let (inliers, outliers) = segment_plane(&PointCloud::new(pts), 1e9, 50, 3).unwrap();
        assert_eq!(inliers.len(), 100);
        assert!(outliers.is_empty());
    }

    #[test]
    fn resample_same_size_is_permutation() {
        let pts: Vec<crate::math::Vec3> =
            (0..64).map(|i| crate::math::Vec3::new(i as f64, 0.0, 0.0)).collect();
        let out = resample_fixed(&PointCloud::new(pts.clone()), 64, 4).unwrap();
        let mut a: Vec<i64> = out.points.iter().map(|p| p.x as i64).collect();
        a.sort_unstable();
        assert_eq!(a, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn resample_downsamples_to_distinct_points() {
        let pts: Vec<crate::math::Vec3> =
            (0..10_000).map(|i| crate::math::Vec3::new(i as f64, 0.0, 0.0)).collect();
        let out = resample_fixed(&PointCloud::new(pts), 4096, 6).unwrap();
        assert_eq!(out.len(), 4096);
        let mut seen: Vec<i64> = out.points.iter().map(|p| p.x as i64).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 4096);
    }

    #[test]
    fn resample_upsamples_with_replacement() {
        let pts: Vec<crate::math::Vec3> =
            (0..100).map(|i| crate::math::Vec3::new(i as f64, 1.0, 2.0)).collect();
        let out = resample_fixed(&PointCloud::new(pts.clone()), 4096, 6).unwrap();
        assert_eq!(out.len(), 4096);
        for p in &out.points {
            assert!(pts.contains(p));
        }
    }

    #[test]
    fn resample_empty_errors() {
        assert!(matches!(
            resample_fixed(&PointCloud::default(), 8, 0),
            Err(CloudError::EmptyCloud)
        ));
    }

    #[test]
    fn twist_zero_rate_is_identity() {
        let leg = square_table().parts[1].clone();
        let a = sample_mesh(&leg, 20_000.0, 7).unwrap();
        let b = sample_mesh(&twist_shape(&leg, 0.0).unwrap(), 20_000.0, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn twist_fixes_axis_points() {
        let p = crate::math::Vec3::new(0.0, 0.0, 0.4);
        assert!((twist_point(&p, 3.3) - p).norm() < 1e-15);
    }

    #[test]
    fn twist_rotation_arithmetic() {
        // Axial coordinate 0.1 m at pi rad/m rotates by 0.314159 rad.
        let p = crate::math::Vec3::new(0.02, 0.0, 0.1);
        let q = twist_point(&p, std::f64::consts::PI);
        let angle = q.y.atan2(q.x);
        assert!((angle - 0.1 * std::f64::consts::PI).abs() < 1e-12);
        assert!((angle - 0.3141592653589793).abs() < 1e-12);
        assert!(((q.x * q.x + q.y * q.y).sqrt() - 0.02).abs() < 1e-12);
        assert!((q.z - 0.1).abs() < 1e-15);
    }

    #[test]
    fn twist_rejects_primary() {
        let slab = square_table().parts[0].clone();
        assert!(matches!(twist_shape(&slab, 1.0), Err(CloudError::NotTwistable(0))));
    }

    #[test]
    fn cloud_io_round_trip() {
        let pts: Vec<crate::math::Vec3> =
            (0..33).map(|i| crate::math::Vec3::new(i as f64 * 0.125, -1.5, 2.25)).collect();
        let pc = PointCloud::new(pts);
        let mut buf = Vec::new();
        write_cloud(&pc, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 33 * 12);
        let back = read_cloud(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), 33);
        for (a, b) in pc.points.iter().zip(&back.points) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
        #[test]
        fn voxel_output_bounded_and_contained(
            raw in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..200)
        ) {
            let pts: Vec<crate::math::Vec3> =
                raw.iter().map(|(x, y, z)| crate::math::Vec3::new(*x, *y, *z)).collect();
            let pc = PointCloud::new(pts);
            let voxel = 0.13;
            let out = voxel_downsample(&pc, voxel);
            prop_assert!(out.len() <= pc.len());
            for p in &out.points {
                // A centroid stays inside its own voxel cell.
                let key = (
                    (p.x / voxel).floor() as i64,
                    (p.y / voxel).floor() as i64,
                    (p.z / voxel).floor() as i64,
                );
                let contained = pc.points.iter().any(|q| {
                    ((q.x / voxel).floor() as i64, (q.y / voxel).floor() as i64, (q.z / voxel).floor() as i64) == key
                });
                prop_assert!(contained);
            }
        }

        #[test]
        fn resample_always_exact_count(n in 1usize..300, m in 1usize..300) {
            let pts: Vec<crate::math::Vec3> =
                (0..m).map(|i| crate::math::Vec3::new(i as f64, 0.0, 0.0)).collect();
            let out = resample_fixed(&PointCloud::new(pts), n, 1).unwrap();
            prop_assert_eq!(out.len(), n);
        }
        }
    }
}

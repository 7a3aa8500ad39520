//! Feature construction shared by the encoder, the decoders, and BC:
//! observation clouds, end-effector vectors, action-chunk encoding, and
//! normalization statistics.

use serde::{Deserialize, Serialize};
use tabula_core::cloud::{assemble_scene_cloud, resample_fixed, CanonicalClouds, CloudConfig, CloudError, PointCloud};
use tabula_core::math::{wrap_angle, Vec3};
use tabula_core::world::{ActionMode, EEAction, GripCommand, GripperMode, WorldState};
use tabula_ndiff::Tensor;

pub const EE_DIM: usize = 7;
pub const ACTION_DIM: usize = 6;

/// End-effector proprioception: position, yaw as (cos, sin), gripper bit,
/// holding bit.
pub fn ee_vector(state: &WorldState) -> [f64; EE_DIM] {
    let e = &state.ee;
    [
        e.position.x,
        e.position.y,
        e.position.z,
        e.yaw.cos(),
        e.yaw.sin(),
        if e.mode == GripperMode::Close { 1.0 } else { 0.0 },
        if e.held.is_some() { 1.0 } else { 0.0 },
    ]
}

/// Per-step action encoding: translation, yaw delta as (cos, sin), gripper
/// command in {-1, 0, +1}.
pub fn encode_action(action: &EEAction) -> [f64; ACTION_DIM] {
    let g = match action.gripper {
        GripCommand::Open => -1.0,
        GripCommand::Hold => 0.0,
        GripCommand::Close => 1.0,
    };
    [
        action.translation.x,
        action.translation.y,
        action.translation.z,
        action.d_yaw.cos(),
        action.d_yaw.sin(),
        g,
    ]
}

pub fn decode_action(v: &[f64]) -> EEAction {
    let d_yaw = wrap_angle(v[4].atan2(v[3]));
    let gripper = if v[5] > 0.5 {
        GripCommand::Close
    } else if v[5] < -0.5 {
        GripCommand::Open
    } else {
        GripCommand::Hold
    };
    EEAction {
        mode: ActionMode::Delta,
        translation: Vec3::new(v[0], v[1], v[2]),
        d_yaw,
        gripper,
    }
}

/// Render the policy observation for a state: assembled scene cloud,
/// optionally voxel-filtered, resampled to the fixed point budget.
pub fn observe_cloud(
    state: &WorldState,
    clouds: &CanonicalClouds,
    cfg: &CloudConfig,
    use_voxel: bool,
    seed: u64,
) -> Result<PointCloud, CloudError> {
    let scene = assemble_scene_cloud(state, clouds, false)?;
    let scene = if use_voxel {
        tabula_core::cloud::voxel_downsample(&scene, cfg.voxel_size)
    } else {
        scene
    };
    resample_fixed(&scene, cfg.target_points, seed)
}

/// Cloud as a centered [n, 3] f32 tensor plus its centroid.
pub fn cloud_tensor(pc: &PointCloud) -> (Tensor, [f64; 3]) {
    let n = pc.len();
    let mut cx = 0.0;
    let mut cy = 0.0;
    let mut cz = 0.0;
    for p in &pc.points {
        cx += p.x;
        cy += p.y;
        cz += p.z;
    }
    let inv = 1.0 / n.max(1) as f64;
    let c = [cx * inv, cy * inv, cz * inv];
    let mut data = Vec::with_capacity(n * 3);
    for p in &pc.points {
        data.push((p.x - c[0]) as f32);
        data.push((p.y - c[1]) as f32);
        data.push((p.z - c[2]) as f32);
    }
    (Tensor::from_vec(&[n, 3], data), c)
}

/// Per-dimension affine map onto [-1, 1]. Dimensions with no spread map to
/// zero and decode back to their constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeNorm {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl RangeNorm {
    pub fn fit(rows: impl Iterator<Item = Vec<f64>>, dim: usize) -> RangeNorm {
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        let mut any = false;
        for row in rows {
            assert_eq!(row.len(), dim);
            any = true;
            for (i, v) in row.iter().enumerate() {
                min[i] = min[i].min(*v);
                max[i] = max[i].max(*v);
            }
        }
        assert!(any, "cannot fit normalization on an empty set");
        RangeNorm { min, max }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    fn span(&self, i: usize) -> f64 {
        self.max[i] - self.min[i]
    }

    pub fn encode(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(i, v)| {
                let s = self.span(i);
                if s < 1e-9 {
                    0.0
                } else {
                    2.0 * (v - self.min[i]) / s - 1.0
                }
            })
            .collect()
    }

    pub fn decode(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(i, v)| {
                let s = self.span(i);
                if s < 1e-9 {
                    self.min[i]
                } else {
                    (v + 1.0) * 0.5 * s + self.min[i]
                }
            })
            .collect()
    }
}

/// Mean/std standardization for condition vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StdNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StdNorm {
    pub fn fit(rows: &[Vec<f64>], dim: usize) -> StdNorm {
        assert!(!rows.is_empty(), "cannot fit normalization on an empty set");
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= rows.len() as f64;
        }
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .map(|v| (v / rows.len() as f64).sqrt().max(1e-6))
            .collect();
        StdNorm { mean, std }
    }

    pub fn encode(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

pub fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_codec_round_trip() {
        let a = EEAction::delta(Vec3::new(0.01, -0.02, 0.005), 0.12, GripCommand::Close);
        let v = encode_action(&a);
        let b = decode_action(&v);
        assert!((a.translation - b.translation).norm() < 1e-12);
        assert!((a.d_yaw - b.d_yaw).abs() < 1e-12);
        assert_eq!(a.gripper, b.gripper);
    }

    #[test]
    fn range_norm_round_trip_and_constant_dims() {
        let rows = vec![vec![0.0, 5.0, -1.0], vec![2.0, 5.0, 1.0], vec![1.0, 5.0, 0.0]];
        let norm = RangeNorm::fit(rows.iter().cloned(), 3);
        for row in &rows {
            let enc = norm.encode(row);
            assert!(enc.iter().all(|v| (-1.0..=1.0).contains(v)));
            let dec = norm.decode(&enc);
            for (a, b) in row.iter().zip(&dec) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
        // Constant dimension encodes to 0 and decodes to the constant.
        assert_eq!(norm.encode(&[1.0, 5.0, 0.5])[1], 0.0);
        assert_eq!(norm.decode(&[0.3, 0.9, 0.0])[1], 5.0);
    }

    #[test]
    fn cloud_tensor_centers_points() {
        let pc = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(3.0, 2.0, 1.0)]);
        let (t, c) = cloud_tensor(&pc);
        assert_eq!(c, [2.0, 2.0, 2.0]);
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.data()[0], -1.0);
        assert_eq!(t.data()[3], 1.0);
    }
}

//! Query-centric perception: embeds (skill, part, contact) queries, fuses
//! point-cloud and end-effector features, and predicts the queried part pose
//! (yaw stripped) plus the queried contact position.

use crate::features::{cloud_tensor, to_f32, EE_DIM};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use tabula_core::cloud::PointCloud;
use tabula_core::math::{euler_zyx, wrap_angle, Quat, Vec3};
use tabula_core::scene::{SceneSpec, Skill, SKILL_COUNT};
use tabula_core::world::{Query, WorldState};
use tabula_ndiff::{
    add_bias, backward, concat_cols, dropout, embedding, init_linear, linear, matmul,
    maxpool_rows, relu, AdamConfig, Binder, ParamSet, Tensor, Var,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("cloud has {found} points, encoder expects {expected}")]
    WrongCloudSize { found: usize, expected: usize },
    #[error("training diverged at step {0} (non-finite loss)")]
    Divergence(u64),
    #[error("dataset is empty")]
    EmptyDataset,
}

/// Pose targets for the queried part and contact. Rotation is (roll, pitch);
/// yaw is never represented.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderTarget {
    pub part_pos: [f64; 3],
    pub part_rot: [f64; 2],
    pub contact_pos: [f64; 3],
}

/// Ground truth for every part and contact in a scene; `est_loss` masks it
/// down to the queried entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTruth {
    pub part_pos: Vec<[f64; 3]>,
    pub part_rot: Vec<[f64; 2]>,
    pub contact_pos: Vec<[f64; 3]>,
}

impl SceneTruth {
    pub fn from_state(state: &WorldState, scene: &SceneSpec) -> SceneTruth {
        let primary = &state.part_poses[scene.primary_id()];
        SceneTruth {
            part_pos: state.part_poses.iter().map(|p| p.position.into()).collect(),
            part_rot: state
                .part_poses
                .iter()
                .map(|p| {
                    let (roll, pitch) = rot_repr(&p.orientation).angles;
                    [roll, pitch]
                })
                .collect(),
            contact_pos: (0..scene.contact_count())
                .map(|j| scene.contact_world(primary, j).into())
                .collect(),
        }
    }

    pub fn queried(&self, query: &Query) -> EncoderTarget {
        EncoderTarget {
            part_pos: self.part_pos[query.part],
            part_rot: self.part_rot[query.part],
            contact_pos: self.contact_pos[query.contact],
        }
    }
}

/// Roll/pitch under the Z-Y-X convention, with a gimbal flag near
/// |pitch| = pi/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotRepr {
    pub angles: (f64, f64),
    pub gimbal_degenerate: bool,
}

/// Strip yaw: decompose R = Rz(yaw) Ry(pitch) Rx(roll) and keep (roll, pitch).
pub fn rot_repr(orientation: &Quat) -> RotRepr {
    let (roll, pitch, _yaw) = euler_zyx(orientation);
    RotRepr {
        angles: (roll, pitch),
        gimbal_degenerate: pitch.abs() > std::f64::consts::FRAC_PI_2 - 1e-3,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstLossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for EstLossWeights {
    fn default() -> Self {
        // Position in m^2, rotation in rad^2.
        EstLossWeights { alpha: 1.0, beta: 0.5, gamma: 1.0 }
    }
}

/// Weighted squared error on the queried part and contact only. Rotation
/// residuals wrap at +-pi.
pub fn est_loss(
    pred: &EncoderTarget,
    truth: &SceneTruth,
    query: &Query,
    w: &EstLossWeights,
) -> f64 {
    let t = truth.queried(query);
    let dp: f64 = pred
        .part_pos
        .iter()
        .zip(&t.part_pos)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let dr = {
        let d0 = wrap_angle(pred.part_rot[0] - t.part_rot[0]);
        let d1 = wrap_angle(pred.part_rot[1] - t.part_rot[1]);
        d0 * d0 + d1 * d1
    };
    let dj: f64 = pred
        .contact_pos
        .iter()
        .zip(&t.contact_pos)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    w.alpha * dp + w.beta * dr + w.gamma * dj
}

/// Encoder variants: the standard query-centric head, the joint all-parts
/// head (query ablation), and the quaternion head (rotation-invariance
/// ablation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    Standard,
    NoQuery,
    NoRotInv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    /// Per-point MLP widths.
    pub point_widths: Vec<usize>,
    /// Embedding dimension per query field.
    pub embed_dim: usize,
    /// Fusion MLP widths.
    pub fusion_widths: Vec<usize>,
    pub dropout: f64,
    /// Expected observation size.
    pub target_points: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            variant: EncoderVariant::Standard,
            point_widths: vec![64, 96],
            embed_dim: 16,
            fusion_widths: vec![256, 256],
            dropout: 0.1,
            target_points: 4096,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) {
        assert!(!self.point_widths.is_empty() && self.point_widths.iter().all(|&w| w > 0));
        assert!(self.embed_dim > 0 && self.fusion_widths.iter().all(|&w| w > 0));
        assert!(self.target_points >= 1);
        assert!((0.0..1.0).contains(&self.dropout));
    }

    /// Output width per variant.
    pub fn out_dim(&self, scene: &SceneSpec) -> usize {
        match self.variant {
            EncoderVariant::Standard => 8,
            EncoderVariant::NoRotInv => 10,
            EncoderVariant::NoQuery => 5 * scene.part_count() + 3 * scene.contact_count(),
        }
    }

    fn fused_in(&self) -> usize {
        let pooled = *self.point_widths.last().unwrap();
        let query = if self.variant == EncoderVariant::NoQuery {
            0
        } else {
            3 * self.embed_dim
        };
        pooled + 3 + EE_DIM + query
    }
}

pub struct EncoderNet {
    pub params: ParamSet,
    pub config: EncoderConfig,
    pub scene_parts: usize,
    pub scene_contacts: usize,
}

impl EncoderNet {
    pub fn init(config: &EncoderConfig, scene: &SceneSpec, seed: u64) -> EncoderNet {
        config.validate();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut in_w = 3;
        for (i, &w) in config.point_widths.iter().enumerate() {
            params.insert(&format!("point.{i}.w"), init_linear(&[in_w, w], &mut rng));
            params.insert(&format!("point.{i}.b"), Tensor::zeros(&[w]));
            in_w = w;
        }
        if config.variant != EncoderVariant::NoQuery {
            params.insert(
                "embed.skill",
                Tensor::uniform(&[SKILL_COUNT, config.embed_dim], 0.1, &mut rng),
            );
            params.insert(
                "embed.part",
                Tensor::uniform(&[scene.part_count(), config.embed_dim], 0.1, &mut rng),
            );
            params.insert(
                "embed.contact",
                Tensor::uniform(&[scene.contact_count(), config.embed_dim], 0.1, &mut rng),
            );
        }
        let mut in_w = config.fused_in();
        for (i, &w) in config.fusion_widths.iter().enumerate() {
            params.insert(&format!("fusion.{i}.w"), init_linear(&[in_w, w], &mut rng));
            params.insert(&format!("fusion.{i}.b"), Tensor::zeros(&[w]));
            in_w = w;
        }
        let out = config.out_dim(scene);
        params.insert("head.w", init_linear(&[in_w, out], &mut rng));
        params.insert("head.b", Tensor::zeros(&[out]));
        EncoderNet {
            params,
            config: config.clone(),
            scene_parts: scene.part_count(),
            scene_contacts: scene.contact_count(),
        }
    }

    /// Batched forward pass. `clouds` is the stacked centered cloud tensor
    /// [batch * n, 3]; per-sample centroids, EE vectors, and queries ride
    /// alongside. Returns the raw output rows [batch, out].
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        binder: &mut Binder,
        clouds: &Tensor,
        centroids: &[[f64; 3]],
        ees: &[[f64; EE_DIM]],
        queries: &[Query],
        train: bool,
        rng: &mut ChaCha12Rng,
    ) -> Var {
        let cfg = &self.config;
        let batch = centroids.len();
        let n = cfg.target_points;
        assert_eq!(clouds.rows(), batch * n);
        let mut x = Var::leaf(clouds.clone());
        for i in 0..cfg.point_widths.len() {
            let w = binder.leaf(&format!("point.{i}.w"));
            let b = binder.leaf(&format!("point.{i}.b"));
            x = relu(&add_bias(&matmul(&x, &w), &b));
        }
        let pooled = maxpool_rows(&x, n);

        let mut centroid_rows = Vec::with_capacity(batch * 3);
        let mut ee_rows = Vec::with_capacity(batch * EE_DIM);
        for i in 0..batch {
            centroid_rows.extend(centroids[i].iter().map(|&v| v as f32));
            ee_rows.extend(ees[i].iter().map(|&v| v as f32));
        }
        let centroid_v = Var::leaf(Tensor::from_vec(&[batch, 3], centroid_rows));
        let ee_v = Var::leaf(Tensor::from_vec(&[batch, EE_DIM], ee_rows));

        let mut pieces = vec![pooled, centroid_v, ee_v];
        if cfg.variant != EncoderVariant::NoQuery {
            let skills: Vec<usize> = queries.iter().map(|q| q.skill.index()).collect();
            let parts: Vec<usize> = queries.iter().map(|q| q.part).collect();
            let contacts: Vec<usize> = queries.iter().map(|q| q.contact).collect();
            pieces.push(embedding(&binder.leaf("embed.skill"), &skills));
            pieces.push(embedding(&binder.leaf("embed.part"), &parts));
            pieces.push(embedding(&binder.leaf("embed.contact"), &contacts));
        }
        let mut h = concat_cols(&pieces);
        for i in 0..cfg.fusion_widths.len() {
            let w = binder.leaf(&format!("fusion.{i}.w"));
            let b = binder.leaf(&format!("fusion.{i}.b"));
            h = relu(&add_bias(&matmul(&h, &w), &b));
            h = dropout(&h, cfg.dropout as f32, train, rng);
        }
        let w = binder.leaf("head.w");
        let b = binder.leaf("head.b");
        linear(&h, &w, Some(&b))
    }
}

/// Joint estimates from the no-query head.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEstimate {
    pub part_pos: Vec<[f64; 3]>,
    pub part_rot: Vec<[f64; 2]>,
    pub contact_pos: Vec<[f64; 3]>,
}

/// Output of one encoder evaluation, by variant.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderOutput {
    Target(EncoderTarget),
    /// Quaternion-rotation variant: position, quat (w, x, y, z), contact.
    QuatTarget {
        part_pos: [f64; 3],
        part_quat: [f64; 4],
        contact_pos: [f64; 3],
    },
    Joint(JointEstimate),
}

impl EncoderOutput {
    /// Collapse to the standard target form; the quaternion head converts
    /// through rot_repr.
    pub fn as_target(&self) -> Option<EncoderTarget> {
        match self {
            EncoderOutput::Target(t) => Some(*t),
            EncoderOutput::QuatTarget { part_pos, part_quat, contact_pos } => {
                let q = tabula_core::math::quat_from_wxyz(
                    part_quat[0], part_quat[1], part_quat[2], part_quat[3],
                );
                let (roll, pitch) = rot_repr(&q).angles;
                Some(EncoderTarget {
                    part_pos: *part_pos,
                    part_rot: [roll, pitch],
                    contact_pos: *contact_pos,
                })
            }
            EncoderOutput::Joint(_) => None,
        }
    }
}

fn decode_output(cfg: &EncoderConfig, parts: usize, contacts: usize, row: &[f32]) -> EncoderOutput {
    let f = |i: usize| row[i] as f64;
    match cfg.variant {
        EncoderVariant::Standard => EncoderOutput::Target(EncoderTarget {
            part_pos: [f(0), f(1), f(2)],
            part_rot: [f(3), f(4)],
            contact_pos: [f(5), f(6), f(7)],
        }),
        EncoderVariant::NoRotInv => {
            let norm = (f(3) * f(3) + f(4) * f(4) + f(5) * f(5) + f(6) * f(6)).sqrt().max(1e-9);
            EncoderOutput::QuatTarget {
                part_pos: [f(0), f(1), f(2)],
                part_quat: [f(3) / norm, f(4) / norm, f(5) / norm, f(6) / norm],
                contact_pos: [f(7), f(8), f(9)],
            }
        }
        EncoderVariant::NoQuery => {
            let mut part_pos = vec![];
            let mut part_rot = vec![];
            for p in 0..parts {
                let o = 5 * p;
                part_pos.push([f(o), f(o + 1), f(o + 2)]);
                part_rot.push([f(o + 3), f(o + 4)]);
            }
            let base = 5 * parts;
            let contact_pos = (0..contacts)
                .map(|j| [f(base + 3 * j), f(base + 3 * j + 1), f(base + 3 * j + 2)])
                .collect();
            EncoderOutput::Joint(JointEstimate { part_pos, part_rot, contact_pos })
        }
    }
}

/// Deterministic eval-mode prediction for one observation.
pub fn encode(
    net: &EncoderNet,
    cloud: &PointCloud,
    query: &Query,
    state_ee: &[f64; EE_DIM],
) -> Result<EncoderOutput, EncoderError> {
    if cloud.len() != net.config.target_points {
        return Err(EncoderError::WrongCloudSize {
            found: cloud.len(),
            expected: net.config.target_points,
        });
    }
    let (tensor, centroid) = cloud_tensor(cloud);
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let mut binder = Binder::new(&net.params);
    let out = net.forward(
        &mut binder,
        &tensor,
        &[centroid],
        &[*state_ee],
        &[*query],
        false,
        &mut rng,
    );
    Ok(decode_output(&net.config, net.scene_parts, net.scene_contacts, out.value().data()))
}

/// Ground-truth training row for one record, by variant.
pub fn target_row(cfg: &EncoderConfig, truth: &SceneTruth, query: &Query, state: &WorldState) -> Vec<f64> {
    match cfg.variant {
        EncoderVariant::Standard => {
            let t = truth.queried(query);
            let mut row = t.part_pos.to_vec();
            row.extend_from_slice(&t.part_rot);
            row.extend_from_slice(&t.contact_pos);
            row
        }
        EncoderVariant::NoRotInv => {
            let t = truth.queried(query);
            let q = state.part_poses[query.part].orientation;
            // Canonical sign: w >= 0.
            let qq = q.quaternion();
            let sign = if qq.w < 0.0 { -1.0 } else { 1.0 };
            let mut row = t.part_pos.to_vec();
            row.extend_from_slice(&[sign * qq.w, sign * qq.i, sign * qq.j, sign * qq.k]);
            row.extend_from_slice(&t.contact_pos);
            row
        }
        EncoderVariant::NoQuery => {
            let mut row = vec![];
            for (p, r) in truth.part_pos.iter().zip(&truth.part_rot) {
                row.extend_from_slice(p);
                row.extend_from_slice(r);
            }
            for c in &truth.contact_pos {
                row.extend_from_slice(c);
            }
            row
        }
    }
}

/// Per-output-dimension loss weights implementing the weighted objective in
/// physical units.
pub fn loss_weights_row(cfg: &EncoderConfig, parts: usize, contacts: usize, w: &EstLossWeights) -> Vec<f32> {
    match cfg.variant {
        EncoderVariant::Standard => {
            let mut v = vec![w.alpha as f32; 3];
            v.extend(vec![w.beta as f32; 2]);
            v.extend(vec![w.gamma as f32; 3]);
            v
        }
        EncoderVariant::NoRotInv => {
            let mut v = vec![w.alpha as f32; 3];
            v.extend(vec![w.beta as f32; 4]);
            v.extend(vec![w.gamma as f32; 3]);
            v
        }
        EncoderVariant::NoQuery => {
            let mut v = vec![];
            for _ in 0..parts {
                v.extend(vec![w.alpha as f32; 3]);
                v.extend(vec![w.beta as f32; 2]);
            }
            for _ in 0..contacts {
                v.extend(vec![w.gamma as f32; 3]);
            }
            v
        }
    }
}

/// Weighted squared-error training loss on raw output rows.
pub fn encoder_loss(pred: &Var, target: &Tensor, dim_weights: &[f32]) -> Var {
    let diff = tabula_ndiff::sub(pred, &Var::leaf(target.clone()));
    let sq = tabula_ndiff::square(&diff);
    // Scale columns by the per-dimension weights via a constant row matrix.
    let b = sq.value().rows();
    let w = Tensor::from_vec(
        &[b, dim_weights.len()],
        (0..b).flat_map(|_| dim_weights.iter().copied()).collect(),
    );
    let weighted = tabula_ndiff::mul(&sq, &Var::leaf(w));
    tabula_ndiff::scale(&tabula_ndiff::sum_all(&weighted), 1.0 / b as f32)
}

/// Per-skill terminal checks evaluated on predictions, mirroring the
/// simulator's success thresholds.
pub struct TerminalThresholds {
    pub eps_pos: f64,
    pub eps_ang: f64,
    pub lift_threshold: f64,
    pub stabilizer_region: [f64; 4],
    pub leg_tip_offset: f64,
    pub screw_target: f64,
}

impl TerminalThresholds {
    pub fn from_scene(scene: &SceneSpec) -> TerminalThresholds {
        TerminalThresholds {
            eps_pos: scene.params.eps_pos,
            eps_ang: scene.params.eps_ang,
            lift_threshold: scene.params.lift_threshold,
            stabilizer_region: scene.params.stabilizer_region,
            leg_tip_offset: 0.0,
            screw_target: scene.params.screw_target,
        }
    }
}

/// Decide from predicted states whether the current skill looks finished.
/// `yaw_accrued` is the proprioceptive screw-rotation integral.
pub fn terminal_check(
    pred: &EncoderTarget,
    ee: &[f64; EE_DIM],
    skill: Skill,
    th: &TerminalThresholds,
    yaw_accrued: f64,
) -> bool {
    match skill {
        Skill::Stabilize => {
            let r = th.stabilizer_region;
            pred.part_pos[0] >= r[0]
                && pred.part_pos[0] <= r[1]
                && pred.part_pos[1] >= r[2]
                && pred.part_pos[1] <= r[3]
        }
        Skill::Grasp => {
            let holding = ee[6] > 0.5;
            holding && pred.part_pos[2] + th.leg_tip_offset >= th.lift_threshold
        }
        Skill::Insert => {
            // Predicted tip sits at the part origin; the held leg is upright
            // so roll/pitch must be small and the tip near the contact.
            let tip = Vec3::new(pred.part_pos[0], pred.part_pos[1], pred.part_pos[2]);
            let contact = Vec3::new(pred.contact_pos[0], pred.contact_pos[1], pred.contact_pos[2]);
            let tilt = (pred.part_rot[0].powi(2) + pred.part_rot[1].powi(2)).sqrt();
            (tip - contact).norm() <= th.eps_pos && tilt <= th.eps_ang
        }
        Skill::Screw => yaw_accrued >= th.screw_target,
    }
}

/// One training sample: borrowed from the dataset at batch time.
pub struct EncoderSample {
    pub cloud: Tensor,
    pub centroid: [f64; 3],
    pub ee: [f64; EE_DIM],
    pub query: Query,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderTrainConfig {
    pub iters: u64,
    pub batch: usize,
    pub lr: f64,
    pub weights: EstLossWeights,
    /// Validation cadence in steps.
    pub eval_every: u64,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        EncoderTrainConfig {
            iters: 6000,
            batch: 16,
            lr: 1e-3,
            weights: EstLossWeights::default(),
            eval_every: 500,
        }
    }
}

/// One optimization step over a prepared batch; returns the loss.
pub fn encoder_train_step(
    net: &mut EncoderNet,
    samples: &[EncoderSample],
    weights_row: &[f32],
    adam: &AdamConfig,
    rng: &mut ChaCha12Rng,
) -> Result<f32, EncoderError> {
    let batch = samples.len();
    let n = net.config.target_points;
    let mut stacked = Tensor::zeros(&[batch * n, 3]);
    let mut centroids = Vec::with_capacity(batch);
    let mut ees = Vec::with_capacity(batch);
    let mut queries = Vec::with_capacity(batch);
    let mut targets = Vec::with_capacity(batch * weights_row.len());
    for (i, s) in samples.iter().enumerate() {
        stacked.data_mut()[i * n * 3..(i + 1) * n * 3].copy_from_slice(s.cloud.data());
        centroids.push(s.centroid);
        ees.push(s.ee);
        queries.push(s.query);
        targets.extend(to_f32(&s.target));
    }
    let target = Tensor::from_vec(&[batch, weights_row.len()], targets);
    let mut binder = Binder::new(&net.params);
    let pred = net.forward(&mut binder, &stacked, &centroids, &ees, &queries, true, rng);
    let loss = encoder_loss(&pred, &target, weights_row);
    let loss_val = loss.scalar_value();
    if !loss_val.is_finite() {
        return Err(EncoderError::Divergence(net.params.step_count()));
    }
    let grads = backward(&loss);
    net.params
        .adam_step(&binder.collect(&grads), adam)
        .map_err(|_| EncoderError::Divergence(net.params.step_count()))?;
    Ok(loss_val)
}

//! Behavior-cloning baseline: the same point-cloud backbone regressing the
//! next action chunk directly with a mean-square loss.

use crate::features::{EE_DIM};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use tabula_core::scene::{SceneSpec, SKILL_COUNT};
use tabula_core::world::Query;
use tabula_ndiff::{
    add_bias, backward, concat_cols, dropout, embedding, init_linear, linear, matmul,
    maxpool_rows, relu, AdamConfig, Binder, ParamSet, Tensor, Var,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BcError {
    #[error("training diverged at step {0}")]
    Divergence(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcConfig {
    pub point_widths: Vec<usize>,
    pub embed_dim: usize,
    pub fusion_widths: Vec<usize>,
    pub dropout: f64,
    pub target_points: usize,
    pub horizon: usize,
    pub action_dim: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            point_widths: vec![64, 96],
            embed_dim: 16,
            fusion_widths: vec![256, 256],
            dropout: 0.1,
            target_points: 4096,
            horizon: 16,
            action_dim: crate::features::ACTION_DIM,
        }
    }
}

pub struct BcNet {
    pub params: ParamSet,
    pub config: BcConfig,
}

impl BcNet {
    pub fn init(config: &BcConfig, scene: &SceneSpec, seed: u64) -> BcNet {
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let mut in_w = 3;
        for (i, &w) in config.point_widths.iter().enumerate() {
            p.insert(&format!("point.{i}.w"), init_linear(&[in_w, w], &mut rng));
            p.insert(&format!("point.{i}.b"), Tensor::zeros(&[w]));
            in_w = w;
        }
        p.insert("embed.skill", Tensor::uniform(&[SKILL_COUNT, config.embed_dim], 0.1, &mut rng));
        p.insert(
            "embed.part",
            Tensor::uniform(&[scene.part_count(), config.embed_dim], 0.1, &mut rng),
        );
        p.insert(
            "embed.contact",
            Tensor::uniform(&[scene.contact_count(), config.embed_dim], 0.1, &mut rng),
        );
        let mut in_w = config.point_widths.last().unwrap() + 3 + EE_DIM + 3 * config.embed_dim;
        for (i, &w) in config.fusion_widths.iter().enumerate() {
            p.insert(&format!("fusion.{i}.w"), init_linear(&[in_w, w], &mut rng));
            p.insert(&format!("fusion.{i}.b"), Tensor::zeros(&[w]));
            in_w = w;
        }
        let out = config.horizon * config.action_dim;
        p.insert("head.w", init_linear(&[in_w, out], &mut rng));
        p.insert("head.b", Tensor::zeros(&[out]));
        BcNet { params: p, config: config.clone() }
    }

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
        let skills: Vec<usize> = queries.iter().map(|q| q.skill.index()).collect();
        let parts: Vec<usize> = queries.iter().map(|q| q.part).collect();
        let contacts: Vec<usize> = queries.iter().map(|q| q.contact).collect();
        let mut h = concat_cols(&[
            pooled,
            Var::leaf(Tensor::from_vec(&[batch, 3], centroid_rows)),
            Var::leaf(Tensor::from_vec(&[batch, EE_DIM], ee_rows)),
            embedding(&binder.leaf("embed.skill"), &skills),
            embedding(&binder.leaf("embed.part"), &parts),
            embedding(&binder.leaf("embed.contact"), &contacts),
        ]);
        for i in 0..cfg.fusion_widths.len() {
            let w = binder.leaf(&format!("fusion.{i}.w"));
            let b = binder.leaf(&format!("fusion.{i}.b"));
            h = relu(&add_bias(&matmul(&h, &w), &b));
            h = dropout(&h, cfg.dropout as f32, train, rng);
        }
        linear(&h, &binder.leaf("head.w"), Some(&binder.leaf("head.b")))
    }
}

/// One regression step over stacked clouds and normalized target chunks.
#[allow(clippy::too_many_arguments)]
pub fn bc_train_step(
    net: &mut BcNet,
    clouds: &Tensor,
    centroids: &[[f64; 3]],
    ees: &[[f64; EE_DIM]],
    queries: &[Query],
    target: &Tensor,
    adam: &AdamConfig,
    rng: &mut ChaCha12Rng,
) -> Result<f32, BcError> {
    let mut binder = Binder::new(&net.params);
    let pred = net.forward(&mut binder, clouds, centroids, ees, queries, true, rng);
    let loss = tabula_ndiff::mse(&pred, &Var::leaf(target.clone()));
    let loss_val = loss.scalar_value();
    if !loss_val.is_finite() {
        return Err(BcError::Divergence(net.params.step_count()));
    }
    let grads = backward(&loss);
    net.params
        .adam_step(&binder.collect(&grads), adam)
        .map_err(|_| BcError::Divergence(net.params.step_count()))?;
    Ok(loss_val)
}

/// Deterministic chunk prediction (normalized space).
pub fn bc_predict(
    net: &BcNet,
    cloud: &Tensor,
    centroid: &[f64; 3],
    ee: &[f64; EE_DIM],
    query: &Query,
) -> Vec<f64> {
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let mut binder = Binder::new(&net.params);
    let out = net.forward(&mut binder, cloud, &[*centroid], &[*ee], &[*query], false, &mut rng);
    out.value().data().iter().map(|&v| v as f64).collect()
}

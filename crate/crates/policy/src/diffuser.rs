//! Per-skill diffusion action decoder: noise schedule, forward corruption,
//! the reverse denoising step, the combinatorial training loss, chunk
//! sampling, and receding-horizon execution.

use crate::features::{decode_action, RangeNorm, StdNorm, ACTION_DIM};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use tabula_core::scene::{Skill, SKILL_COUNT};
use tabula_core::world::{EEAction, Query, Sim, WorldState};
use tabula_ndiff::{
    add_bias, backward, concat_cols, conv1d_rows, embedding, film_rows, init_linear, linear,
    matmul, mish, normal_sample, reshape, slice_cols, upsample2_rows, AdamConfig, Binder,
    ParamSet, Tensor, Var,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffuserError {
    #[error("invalid beta range: need 0 < beta_min <= beta_max < 1, got [{0}, {1}]")]
    InvalidRange(f64, f64),
    #[error("no checkpoint loaded for skill {0}")]
    MissingSkillCheckpoint(String),
    #[error("training diverged at step {0}")]
    Divergence(u64),
    #[error("dataset has no segments for skill {0}")]
    EmptySkill(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Variance schedule and the derived reverse-step coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub steps: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// Scale coefficient for step k in 1..=K: 1 / sqrt(alpha_k).
    pub fn coeff_scale(&self, k: usize) -> f64 {
        1.0 / self.alphas[k - 1].sqrt()
    }

    /// Noise-removal coefficient: (1 - alpha_k) / sqrt(1 - alpha_bar_k).
    pub fn coeff_eps(&self, k: usize) -> f64 {
        (1.0 - self.alphas[k - 1]) / (1.0 - self.alpha_bar[k - 1]).sqrt()
    }

    /// Injected noise scale; the final step is deterministic.
    pub fn coeff_noise(&self, k: usize) -> f64 {
        if k == 1 {
            0.0
        } else {
            self.betas[k - 1].sqrt()
        }
    }

    pub fn sqrt_alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bar[k - 1].sqrt()
    }

    pub fn sqrt_one_minus_alpha_bar(&self, k: usize) -> f64 {
        (1.0 - self.alpha_bar[k - 1]).sqrt()
    }
}

pub fn make_schedule(
    steps: usize,
    beta_min: f64,
    beta_max: f64,
    kind: ScheduleKind,
) -> Result<DiffusionSchedule, DiffuserError> {
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) || steps == 0 {
        return Err(DiffuserError::InvalidRange(beta_min, beta_max));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
                }
            })
            .collect(),
        ScheduleKind::Cosine => {
            let s = 0.008;
            let f = |t: f64| ((t / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2)
                .cos()
                .powi(2);
            (0..steps)
                .map(|i| {
                    let b = 1.0 - f((i + 1) as f64) / f(i as f64);
                    b.clamp(beta_min, beta_max.max(0.999))
                })
                .collect()
        }
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bar.push(acc);
    }
    debug_assert!(alpha_bar.windows(2).all(|w| w[1] < w[0]));
    Ok(DiffusionSchedule { steps, betas, alphas, alpha_bar })
}

/// Variance-preserving forward corruption at step k.
pub fn forward_diffuse(a0: &[f64], k: usize, eps: &[f64], sched: &DiffusionSchedule) -> Vec<f64> {
    assert!((1..=sched.steps).contains(&k));
    assert_eq!(a0.len(), eps.len());
    let sa = sched.sqrt_alpha_bar(k);
    let sb = sched.sqrt_one_minus_alpha_bar(k);
    a0.iter().zip(eps).map(|(x, e)| sa * x + sb * e).collect()
}

/// Anything that predicts the injected noise from (a_k, k, condition).
pub trait DenoiserModel {
    /// a_k: [batch, dim]; k per sample; cond: [batch, cond_dim].
    fn predict(&self, a_k: &Tensor, k: &[usize], cond: &Tensor) -> Tensor;
    fn dim(&self) -> usize;
    fn cond_dim(&self) -> usize;
}

/// One reverse step: a_{k-1} = scale * (a_k - eps_coeff * eps_hat) + noise * z.
pub fn denoise_step(
    a_k: &[f64],
    k: usize,
    cond: &[f64],
    denoiser: &dyn DenoiserModel,
    sched: &DiffusionSchedule,
    noise: &[f64],
) -> Vec<f64> {
    assert!((1..=sched.steps).contains(&k));
    let dim = a_k.len();
    let a_t = Tensor::from_vec(&[1, dim], a_k.iter().map(|&v| v as f32).collect());
    let c_t = Tensor::from_vec(&[1, cond.len()], cond.iter().map(|&v| v as f32).collect());
    let eps_hat = denoiser.predict(&a_t, &[k], &c_t);
    let scale = sched.coeff_scale(k);
    let ec = sched.coeff_eps(k);
    let nc = sched.coeff_noise(k);
    (0..dim)
        .map(|i| scale * (a_k[i] - ec * eps_hat.data()[i] as f64) + nc * noise[i])
        .collect()
}

/// Run the full reverse chain from Gaussian noise; deterministic given seed.
/// Output stays in normalized chunk space.
pub fn sample_chunk_normalized(
    cond: &[f64],
    denoiser: &dyn DenoiserModel,
    sched: &DiffusionSchedule,
    seed: u64,
) -> Vec<f64> {
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dim = denoiser.dim();
    let mut a: Vec<f64> = (0..dim).map(|_| normal_sample(&mut rng) as f64).collect();
    for k in (1..=sched.steps).rev() {
        let noise: Vec<f64> = (0..dim).map(|_| normal_sample(&mut rng) as f64).collect();
        a = denoise_step(&a, k, cond, denoiser, sched, &noise);
    }
    a
}

/// Combinatorial noise-prediction loss over a mixed-skill batch: each sample
/// routes to exactly its own skill's denoiser. Per-sample loss is the squared
/// norm over chunk dimensions; the batch is averaged.
pub fn act_loss(
    batch: &[(Vec<f64>, Vec<f64>, Query)],
    denoisers: &[&dyn DenoiserModel; SKILL_COUNT],
    sched: &DiffusionSchedule,
    rng: &mut ChaCha12Rng,
) -> f64 {
    assert!(!batch.is_empty());
    let mut total = 0.0;
    for (a0, cond, query) in batch {
        let k = rng.gen_range(1..=sched.steps);
        let eps: Vec<f64> = (0..a0.len()).map(|_| normal_sample(rng) as f64).collect();
        let a_k = forward_diffuse(a0, k, &eps, sched);
        let den = denoisers[query.skill.index()];
        let a_t = Tensor::from_vec(&[1, a_k.len()], a_k.iter().map(|&v| v as f32).collect());
        let c_t = Tensor::from_vec(&[1, cond.len()], cond.iter().map(|&v| v as f32).collect());
        let pred = den.predict(&a_t, &[k], &c_t);
        total += eps
            .iter()
            .zip(pred.data())
            .map(|(e, p)| (e - *p as f64).powi(2))
            .sum::<f64>();
    }
    total / batch.len() as f64
}

// ---------------------------------------------------------------------------
// denoiser networks

/// Temporal U-Net over action chunks in channels-last layout, FiLM-modulated
/// by (step embedding, condition vector).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    pub horizon: usize,
    pub action_dim: usize,
    pub cond_dim: usize,
    pub k_embed: usize,
    pub cond_width: usize,
    pub widths: [usize; 2],
    pub steps: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            horizon: 16,
            action_dim: ACTION_DIM,
            cond_dim: 15,
            k_embed: 32,
            cond_width: 64,
            widths: [64, 128],
            steps: 100,
        }
    }
}

const UNET_BLOCKS: [(&str, usize); 10] = [
    ("d1a", 0),
    ("d1b", 0),
    ("d2a", 1),
    ("d2b", 1),
    ("mid1", 1),
    ("mid2", 1),
    ("u1a", 1),
    ("u1b", 1),
    ("u2a", 0),
    ("u2b", 0),
];

pub struct UNet {
    pub params: ParamSet,
    pub config: UNetConfig,
}

impl UNet {
    pub fn init(config: &UNetConfig, seed: u64) -> UNet {
        use rand_chacha::rand_core::SeedableRng;
        assert!(config.horizon % 4 == 0, "two downsamples need horizon divisible by 4");
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let [w1, w2] = config.widths;
        p.insert("k_embed", Tensor::uniform(&[config.steps + 1, config.k_embed], 0.1, &mut rng));
        p.insert(
            "cond.w",
            init_linear(&[config.k_embed + config.cond_dim, config.cond_width], &mut rng),
        );
        p.insert("cond.b", Tensor::zeros(&[config.cond_width]));

        let chans = |name: &str| -> (usize, usize) {
            match name {
                "d1a" => (config.action_dim, w1),
                "d1b" => (w1, w1),
                "d2a" => (w1, w2),
                "d2b" => (w2, w2),
                "mid1" | "mid2" => (w2, w2),
                "u1a" => (w2 + w2, w2),
                "u1b" => (w2, w2),
                "u2a" => (w2 + w1, w1),
                "u2b" => (w1, w1),
                _ => unreachable!(),
            }
        };
        for (name, _) in UNET_BLOCKS {
            let (cin, cout) = chans(name);
            p.insert(&format!("{name}.w"), init_linear(&[3 * cin, cout], &mut rng));
            p.insert(&format!("{name}.b"), Tensor::zeros(&[cout]));
            p.insert(&format!("{name}.film.w"), init_linear(&[config.cond_width, 2 * cout], &mut rng));
            p.insert(&format!("{name}.film.b"), Tensor::zeros(&[2 * cout]));
        }
        p.insert("down1.w", init_linear(&[3 * w1, w1], &mut rng));
        p.insert("down1.b", Tensor::zeros(&[w1]));
        p.insert("down2.w", init_linear(&[3 * w2, w2], &mut rng));
        p.insert("down2.b", Tensor::zeros(&[w2]));
        p.insert("out.w", init_linear(&[3 * w1, config.action_dim], &mut rng));
        p.insert("out.b", Tensor::zeros(&[config.action_dim]));
        UNet { params: p, config: config.clone() }
    }

    /// Forward pass. a_k: [batch, horizon * action_dim]; k per sample.
    pub fn forward(&self, binder: &mut Binder, a_k: &Tensor, k: &[usize], cond: &Tensor) -> Var {
        let cfg = &self.config;
        let b = a_k.rows();
        assert_eq!(k.len(), b);
        assert_eq!(cond.rows(), b);
        assert_eq!(cond.cols(), cfg.cond_dim, "condition width mismatch");
        let t = cfg.horizon;

        let k_emb = embedding(&binder.leaf("k_embed"), k);
        let cond_in = concat_cols(&[k_emb, Var::leaf(cond.clone())]);
        let cw = binder.leaf("cond.w");
        let cb = binder.leaf("cond.b");
        let cond_feat = mish(&add_bias(&matmul(&cond_in, &cw), &cb));

        let block = |binder: &mut Binder, x: &Var, name: &str, bt: usize, tt: usize| -> Var {
            let w = binder.leaf(&format!("{name}.w"));
            let bias = binder.leaf(&format!("{name}.b"));
            let y = conv1d_rows(x, &w, &bias, bt, tt, 3, 1, 1);
            let fw = binder.leaf(&format!("{name}.film.w"));
            let fb = binder.leaf(&format!("{name}.film.b"));
            let gb = add_bias(&matmul(&cond_feat, &fw), &fb);
            let cout = y.value().cols();
            let gamma = slice_cols(&gb, 0, cout);
            let beta = slice_cols(&gb, cout, 2 * cout);
            // Residual-style gain around 1.
            let gamma1 = tabula_ndiff::add_scalar(&gamma, 1.0);
            mish(&film_rows(&y, &gamma1, &beta, tt))
        };

        // [b, t*a] rows are t-major: reinterpret as [b*t, a].
        let x0 = reshape(&Var::leaf(a_k.clone()), &[b * t, cfg.action_dim]);
        let d1a = block(binder, &x0, "d1a", b, t);
        let d1 = block(binder, &d1a, "d1b", b, t);
        let down1 = {
            let w = binder.leaf("down1.w");
            let bias = binder.leaf("down1.b");
            conv1d_rows(&d1, &w, &bias, b, t, 3, 2, 1)
        };
        let t2 = t / 2;
        let d2a = block(binder, &down1, "d2a", b, t2);
        let d2 = block(binder, &d2a, "d2b", b, t2);
        let down2 = {
            let w = binder.leaf("down2.w");
            let bias = binder.leaf("down2.b");
            conv1d_rows(&d2, &w, &bias, b, t2, 3, 2, 1)
        };
        let t4 = t / 4;
        let mid1 = block(binder, &down2, "mid1", b, t4);
        let mid = block(binder, &mid1, "mid2", b, t4);

        let up1 = upsample2_rows(&mid, b, t4);
        let cat1 = concat_cols(&[up1, d2]);
        let u1a = block(binder, &cat1, "u1a", b, t2);
        let u1 = block(binder, &u1a, "u1b", b, t2);

        let up2 = upsample2_rows(&u1, b, t2);
        let cat2 = concat_cols(&[up2, d1]);
        let u2a = block(binder, &cat2, "u2a", b, t);
        let u2 = block(binder, &u2a, "u2b", b, t);

        let w = binder.leaf("out.w");
        let bias = binder.leaf("out.b");
        let y = conv1d_rows(&u2, &w, &bias, b, t, 3, 1, 1);
        reshape(&y, &[b, t * cfg.action_dim])
    }
}

impl DenoiserModel for UNet {
    fn predict(&self, a_k: &Tensor, k: &[usize], cond: &Tensor) -> Tensor {
        let mut binder = Binder::new(&self.params);
        self.forward(&mut binder, a_k, k, cond).value().clone()
    }

    fn dim(&self) -> usize {
        self.config.horizon * self.config.action_dim
    }

    fn cond_dim(&self) -> usize {
        self.config.cond_dim
    }
}

/// Small MLP denoiser for low-dimensional studies and tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpDenoiserConfig {
    pub dim: usize,
    pub cond_dim: usize,
    pub k_embed: usize,
    pub hidden: usize,
    pub steps: usize,
}

pub struct MlpDenoiser {
    pub params: ParamSet,
    pub config: MlpDenoiserConfig,
}

impl MlpDenoiser {
    pub fn init(config: &MlpDenoiserConfig, seed: u64) -> MlpDenoiser {
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let d_in = config.dim + config.k_embed + config.cond_dim;
        p.insert("k_embed", Tensor::uniform(&[config.steps + 1, config.k_embed], 0.1, &mut rng));
        p.insert("l1.w", init_linear(&[d_in, config.hidden], &mut rng));
        p.insert("l1.b", Tensor::zeros(&[config.hidden]));
        p.insert("l2.w", init_linear(&[config.hidden, config.hidden], &mut rng));
        p.insert("l2.b", Tensor::zeros(&[config.hidden]));
        p.insert("out.w", init_linear(&[config.hidden, config.dim], &mut rng));
        p.insert("out.b", Tensor::zeros(&[config.dim]));
        MlpDenoiser { params: p, config: config.clone() }
    }

    pub fn forward(&self, binder: &mut Binder, a_k: &Tensor, k: &[usize], cond: &Tensor) -> Var {
        let k_emb = embedding(&binder.leaf("k_embed"), k);
        let mut pieces = vec![Var::leaf(a_k.clone()), k_emb];
        if self.config.cond_dim > 0 {
            pieces.push(Var::leaf(cond.clone()));
        }
        let x = concat_cols(&pieces);
        let h1 = mish(&linear(&x, &binder.leaf("l1.w"), Some(&binder.leaf("l1.b"))));
        let h2 = mish(&linear(&h1, &binder.leaf("l2.w"), Some(&binder.leaf("l2.b"))));
        linear(&h2, &binder.leaf("out.w"), Some(&binder.leaf("out.b")))
    }
}

impl DenoiserModel for MlpDenoiser {
    fn predict(&self, a_k: &Tensor, k: &[usize], cond: &Tensor) -> Tensor {
        let mut binder = Binder::new(&self.params);
        self.forward(&mut binder, a_k, k, cond).value().clone()
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn cond_dim(&self) -> usize {
        self.config.cond_dim
    }
}

/// Denoiser that predicts exactly zero; test plumbing.
pub struct ZeroDenoiser {
    pub dim: usize,
    pub cond_dim: usize,
}

impl DenoiserModel for ZeroDenoiser {
    fn predict(&self, a_k: &Tensor, _k: &[usize], _cond: &Tensor) -> Tensor {
        Tensor::zeros(a_k.shape())
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn cond_dim(&self) -> usize {
        self.cond_dim
    }
}

/// Closed-form optimal noise predictor for 1-d Gaussian data; the analytic
/// oracle for reverse-chain statistics.
pub struct AnalyticGaussianDenoiser {
    pub mu: f64,
    pub var: f64,
    pub sched: DiffusionSchedule,
}

impl AnalyticGaussianDenoiser {
    fn coeff(&self, k: usize) -> (f64, f64) {
        let ab = self.sched.alpha_bar[k - 1];
        let c = (1.0 - ab).sqrt() / (ab * self.var + 1.0 - ab);
        (c, ab.sqrt() * self.mu)
    }

    /// Exact mean/variance of the chain output, by the affine recursion.
    pub fn chain_stats(&self) -> (f64, f64) {
        let mut m = 0.0;
        let mut v = 1.0;
        for k in (1..=self.sched.steps).rev() {
            let (c, sm) = self.coeff(k);
            let scale = self.sched.coeff_scale(k);
            let ec = self.sched.coeff_eps(k);
            let a = scale * (1.0 - ec * c);
            let b = scale * ec * c * sm;
            let s = self.sched.coeff_noise(k);
            m = a * m + b;
            v = a * a * v + s * s;
        }
        (m, v)
    }
}

impl DenoiserModel for AnalyticGaussianDenoiser {
    fn predict(&self, a_k: &Tensor, k: &[usize], _cond: &Tensor) -> Tensor {
        let mut out = a_k.clone();
        for (row, &kk) in k.iter().enumerate() {
            let (c, sm) = self.coeff(kk);
            let v = out.data()[row] as f64;
            out.data_mut()[row] = (c * (v - sm)) as f32;
        }
        out
    }
    fn dim(&self) -> usize {
        1
    }
    fn cond_dim(&self) -> usize {
        0
    }
}

// ---------------------------------------------------------------------------
// chunk codec and execution

/// Normalization stats stored with each decoder checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkCodec {
    pub horizon: usize,
    pub action_norm: RangeNorm,
    pub cond_norm: StdNorm,
    pub max_step: f64,
    pub max_rot_step: f64,
}

impl ChunkCodec {
    /// Flatten and normalize a horizon of action rows (t-major).
    pub fn encode_chunk(&self, rows: &[[f64; ACTION_DIM]]) -> Vec<f64> {
        assert_eq!(rows.len(), self.horizon);
        rows.iter().flat_map(|r| self.action_norm.encode(r)).collect()
    }

    /// Denormalize into executable actions, clamped to the step limits.
    pub fn decode_chunk(&self, flat: &[f64]) -> Vec<EEAction> {
        assert_eq!(flat.len(), self.horizon * ACTION_DIM);
        flat.chunks(ACTION_DIM)
            .map(|c| {
                let row = self.action_norm.decode(c);
                let mut a = decode_action(&row);
                let norm = a.translation.norm();
                if norm > self.max_step {
                    a.translation *= self.max_step / norm;
                }
                a.d_yaw = a.d_yaw.clamp(-self.max_rot_step, self.max_rot_step);
                a
            })
            .collect()
    }
}

/// Execute the first `n_exec` actions of a chunk through the simulator.
pub fn execute_chunk(sim: &mut Sim, chunk: &[EEAction], n_exec: usize) -> WorldState {
    assert!(n_exec <= chunk.len());
    for action in &chunk[..n_exec] {
        sim.step(action);
    }
    sim.state.clone()
}

/// Per-skill decoder training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderTrainConfig {
    pub iters: u64,
    pub batch: usize,
    pub lr: f64,
    pub horizon: usize,
    pub exec_prefix: usize,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub kind: ScheduleKind,
}

impl Default for DecoderTrainConfig {
    fn default() -> Self {
        DecoderTrainConfig {
            iters: 4000,
            batch: 24,
            lr: 1e-3,
            horizon: 16,
            exec_prefix: 8,
            steps: 100,
            beta_min: 1e-4,
            beta_max: 0.02,
            kind: ScheduleKind::Linear,
        }
    }
}

/// One noise-prediction training step over a prepared normalized batch.
/// `a0`: [batch, dim]; `cond`: [batch, cond_dim]. Returns mean-square loss.
pub fn decoder_train_step(
    net: &mut UNet,
    a0: &Tensor,
    cond: &Tensor,
    sched: &DiffusionSchedule,
    adam: &AdamConfig,
    rng: &mut ChaCha12Rng,
) -> Result<f32, DiffuserError> {
    let b = a0.rows();
    let dim = a0.cols();
    let mut a_k = Tensor::zeros(&[b, dim]);
    let mut eps = Tensor::zeros(&[b, dim]);
    let mut ks = Vec::with_capacity(b);
    for i in 0..b {
        let k = rng.gen_range(1..=sched.steps);
        ks.push(k);
        let sa = sched.sqrt_alpha_bar(k) as f32;
        let sb = sched.sqrt_one_minus_alpha_bar(k) as f32;
        for j in 0..dim {
            let e = normal_sample(rng);
            eps.data_mut()[i * dim + j] = e;
            a_k.data_mut()[i * dim + j] = sa * a0.data()[i * dim + j] + sb * e;
        }
    }
    let mut binder = Binder::new(&net.params);
    let pred = net.forward(&mut binder, &a_k, &ks, cond);
    let loss = tabula_ndiff::mse(&pred, &Var::leaf(eps));
    let loss_val = loss.scalar_value();
    if !loss_val.is_finite() {
        return Err(DiffuserError::Divergence(net.params.step_count()));
    }
    let grads = backward(&loss);
    net.params
        .adam_step(&binder.collect(&grads), adam)
        .map_err(|_| DiffuserError::Divergence(net.params.step_count()))?;
    Ok(loss_val)
}

/// Skill-routed sampling: pick the queried skill's denoiser, run the chain,
/// decode into executable actions.
pub fn sample_action_chunk(
    cond: &[f64],
    query: &Query,
    denoisers: &[Option<(&dyn DenoiserModel, &ChunkCodec)>; SKILL_COUNT],
    sched: &DiffusionSchedule,
    seed: u64,
) -> Result<Vec<EEAction>, DiffuserError> {
    let (den, codec) = denoisers[query.skill.index()]
        .ok_or_else(|| DiffuserError::MissingSkillCheckpoint(query.skill.name().into()))?;
    let cond_n = codec.cond_norm.encode(cond);
    let flat = sample_chunk_normalized(&cond_n, den, sched, seed);
    Ok(codec.decode_chunk(&flat))
}

pub fn skill_of_index(i: usize) -> Skill {
    Skill::from_index(i).expect("skill index in range")
}

//! Low-level learned policies: the query-centric pose encoder, per-skill
//! diffusion action decoders, and the behavior-cloning baseline.

pub mod bc;
pub mod data;
pub mod diffuser;
pub mod encoder;
pub mod features;
pub mod runner;

pub use diffuser::{
    act_loss, denoise_step, forward_diffuse, make_schedule, sample_chunk_normalized,
    DenoiserModel, DiffusionSchedule, ScheduleKind,
};
pub use encoder::{encode, est_loss, rot_repr, EncoderTarget, EncoderVariant, EstLossWeights};

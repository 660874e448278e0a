//! Losses, teacher training on partially lit captures, student distillation
//! from teacher pseudo-ground truth and KDE pose importance sampling.

mod kde;
mod losses;
mod stage;
mod student;
mod teacher;
mod train;
#[cfg(test)]
mod tests;

pub use kde::{kde_density, pose_importance_sample, pose_importance_weights, root_normalized_vertices, KDE_EPS};
pub use losses::{
    loss_neg, loss_total, mask_tensor, masked_mse, neg_schedule, perceptual_proxy, proxy_of_difference, LossValues, LossVars,
    LossWeights, PROXY_LEVELS,
};
pub use stage::{aggregate, loss_mask, render_image, render_map, teacher_olat, teacher_payload, LightInput, Stage, ViewInput};
pub use student::{
    build_distill_set, distill_student, env_hash, olat_linearity_error, student_mse, student_render, DistillConfig, DistillRecord,
    DistillSample, DistillSet, EnvSplit,
};
pub use teacher::{train_teacher, TeacherData, TeacherFrame, TeacherSample, TrainOutcome};
pub use train::{step_batch, LogRow, Output, TrainConfig, TrainState, LOG_HEADER};

//! Expression translator: a small MLP from human parameters to anime
//! coefficients, its geometric training objective and the optimizer.

pub mod check;
pub mod eval;
pub mod grad;
pub mod loss;
pub mod model;
pub mod train;

pub use check::{gradient_check, GradCheckReport};
pub use eval::{mean_absolute_error, translation_kdr};
pub use grad::{gradient, Objective, Sample};
pub use loss::{
    loss_between, loss_closure, loss_landmark, loss_total, loss_total_weighted, loss_vertex, LossBreakdown, LossWeights,
    DEFAULT_LAMBDA_VER,
};
pub use model::{forward, LayerSlot, TranslatorModel, DEFAULT_HIDDEN, DEFAULT_LEAK};
pub use train::{train, train_with_progress, Adam, EpochRecord, OutputInit, TrainConfig, TrainError, TrainOutcome};

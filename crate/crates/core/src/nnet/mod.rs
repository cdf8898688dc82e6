//! Encoder, classifier, reverse-mode gradients and the SGD optimizer.

mod checkpoint;
mod gradcheck;
mod model;
mod sgd;
pub mod tape;

pub use checkpoint::{checkpoint_to_string, load_checkpoint, parse_checkpoint, save_checkpoint};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use model::{
    model_params_mut, model_vars, Classifier, Dense, DenseVars, Gradients, Mlp, DEFAULT_P_MIN,
};
pub use sgd::{sgd_step, SgdState};
pub use tape::{cross_entropy_value, softmax_floor_rows, Tape, TapeGradients, Var};

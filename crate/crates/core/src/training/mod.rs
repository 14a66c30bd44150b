pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod pipeline;
pub mod trainer;

pub use loss::{spike_rate, sr_loss, total_loss, LossWeights};
pub use optim::Adam;
pub use pipeline::{Encoder, Example, Pipeline, Prediction};
pub use trainer::{evaluate, EvalSummary, TrainReport, Trainer};

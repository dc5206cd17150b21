//! Cross-modal logit distillation for spoken-language understanding.
//!
//! A recurrent student reads word-posterior frames and predicts three slots
//! (action, object, location). Two text encoders trained on clean scripts
//! supply target logits: a `[CLS]`-headed *teacher* and a max-pooled
//! *professor*. The student minimises
//! `alpha_t * CE + beta_t * KD`, where KD is a distance between logits,
//! optionally mixing both text models.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what training and the CLI use.

pub mod autodiff;
pub mod corpus;
mod error;
pub mod harness;
pub mod losses;
pub mod models;
pub mod params;
mod scalar;
pub mod schedule;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type SlotLogits = models::SlotLogits<f64>;
pub type StudentModel = models::StudentModel<f64>;
pub type TextModel = models::TextModel<f64>;

pub type Tensor32 = autodiff::Tensor<f32>;
pub type StudentModel32 = models::StudentModel<f32>;
pub type TextModel32 = models::TextModel<f32>;

//! Review Learning for all-in-one image restoration.
//!
//! A sequential multi-task training curriculum that replays archived hard
//! samples from earlier tasks, together with the SimpleIR restoration network
//! it trains. Everything runs on a small f64 tensor core with reverse-mode
//! differentiation so the whole pipeline is checkable against finite
//! differences at desk scale.

pub mod curriculum;
pub mod data;
pub mod error;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod pipeline;

pub use error::{Error, Result};

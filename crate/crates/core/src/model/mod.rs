//! The SimpleIR restoration network.

mod blocks;
mod config;
mod network;
mod params;

pub use blocks::{
    dsa_forward, fib_forward, ffn_forward, hab_forward, ldam_forward, ConvIdx, DsaIntermediates, DsaLayout,
    FfnLayout, FibLayout, LdamIntermediates, LdamLayout, NormIdx,
};
pub use config::{ModelConfig, IMAGE_CHANNELS};
pub use network::{ForwardVars, NetworkTrace, SimpleIr};
pub use params::{param_count, Init, ParamSpec, ParameterSet};

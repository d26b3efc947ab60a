//! Calibration-anchored simulator of a DWDM fiber link carrying a QKD quantum
//! channel, with key management, key-refresh encrypted channels and a
//! scenario engine.
//!
//! The physical model in [`phys`] is generic over the scalar type; the aliases
//! below fix it to `f64` (the precision the rest of the stack runs on) or
//! `f32`.

pub mod chain;
pub mod channel;
pub mod kms;
pub mod phys;
pub mod scenario;
pub mod scalar;
pub mod session;

pub use scalar::Real;

pub type FiberSpanF64 = phys::FiberSpan<f64>;
pub type FiberSpanF32 = phys::FiberSpan<f32>;
pub type ChannelPlanF64 = phys::ChannelPlan<f64>;
pub type ChannelPlanF32 = phys::ChannelPlan<f32>;
pub type ClassicalChannelF64 = phys::ClassicalChannel<f64>;
pub type ClassicalChannelF32 = phys::ClassicalChannel<f32>;
pub type ModelParamsF64 = phys::QkdModelParams<f64>;
pub type ModelParamsF32 = phys::QkdModelParams<f32>;
pub type SopStateF64 = phys::SopState<f64>;
pub type SopStateF32 = phys::SopState<f32>;

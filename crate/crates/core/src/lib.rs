//! Raw-waveform anti-spoofing: a revised 1-D ConvNeXt with Res2Net-style
//! blocks and channel attention, trained with focal loss and evaluated with
//! EER and min t-DCF.
//!
//! Everything differentiable is built on [`tensor::Tape`]; no external
//! deep-learning runtime is involved.

pub mod tensor;
pub mod data;
pub mod gradsuite;
pub mod kv;
pub mod layers;
pub mod model;
pub mod objective;
pub mod train;

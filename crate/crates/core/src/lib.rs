//! Spectral laboratory for lacunary Navier-Stokes initial data.
//!
//! Fields are finite sums of wave packets with exact integer center
//! frequencies; the heat semigroup, Leray projection and the Duhamel bilinear
//! operator act on them in closed form or by lattice convolution.

pub mod analysis;
pub mod construction;
pub(crate) mod conv;
pub mod duhamel;
pub mod numeric;
pub mod packets;
pub mod phase;
pub mod remainder;

pub use conv::tau_factor;
pub use numeric::NormBracket;
pub use packets::{FrequencyCenter, PacketField};

//! Link-level models and DSP for a full-duplex mmWave backscatter tag built
//! around a regenerative amplifier and a regenerative rectifier.
//!
//! The crate is `no_std` (with `alloc`). Every operation is pure given an
//! explicit [`RandomSource`], so sweeps can be evaluated in any order or in
//! parallel and still reproduce bit-identical results.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod calibrate;
pub mod channel;
pub mod error;
pub mod frontend;
pub mod link;
pub mod modem;
pub mod signal;

pub use error::{Error, Result};
pub use signal::{BasebandSignal, BitStream, Frequency, PowerLevel, RandomSource};

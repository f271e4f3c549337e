//! Algorithmic core of the affective mirror.
//!
//! Everything in this crate is pure computation over owned buffers: no
//! filesystem, clock or network access. Time enters only as millisecond
//! timestamps carried by frames and events, which keeps detection,
//! inference and the session state machine replayable bit for bit.
//!
//! The std companion crate (`mirror-runtime`) adds frame sources, file
//! formats, persistence, the HTTP/websocket gateway and the CLI.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod affect;
pub mod classifier;
pub mod container;
pub mod detect;
pub mod emotion;
pub mod engine;
pub mod fixtures;
pub mod frame;
pub mod lm;
pub mod poem;
pub mod sampling;
pub mod tensor;
pub mod tokenizer;

pub use emotion::{EmotionCategory, EmotionDistribution};
pub use frame::Frame;

//! Std runtime around `mirror-core`: frame sources, file formats,
//! persistence, the display gateway and the `mirror` command line.

pub mod pnm;
pub mod source;
pub mod assets;
pub mod cascade_xml;
pub mod persistence;
pub mod config;
pub mod pipeline;
pub mod gateway;
pub mod cli;
pub mod bundle;

//! Pointer-generator transformer semantic parser.

pub mod linearizer;
pub mod symtab;
pub mod model;
pub mod decode;
pub mod train;
pub mod dataio;
pub mod evalkit;
pub mod pipeline;
pub mod checkpoint;
pub mod cli;

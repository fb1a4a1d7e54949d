pub mod commands;
pub mod error;
pub mod experiment;
pub mod presets;
pub mod stats;
pub mod svg;

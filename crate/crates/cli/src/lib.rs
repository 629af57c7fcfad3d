//! Command-line front end: training, evaluation, pool tools, the recorder
//! service and a scripted demonstrator that records through it.

pub mod commands;
pub mod demonstrator;
pub mod protocol;
pub mod recorder;
pub mod transport;

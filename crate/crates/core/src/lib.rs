pub mod density;
pub mod diffcore;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod simulators;

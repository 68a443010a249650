//! Curriculum-trained multi-agent power allocation for underwater acoustic
//! sensor networks.

pub mod acoustics;
pub mod baselines;
pub mod curriculum;
pub mod env;
pub mod marl;
pub mod metrics;
pub mod neural;
pub mod world;

//! Fairness auditing of black-box classifiers through canonical sets: batches
//! of realistic synthetic inputs generated under a fixed prediction.

pub mod blackbox;
pub mod data;
pub mod fingerprint;
pub mod lucid_baseline;
pub mod lucidgan;
pub mod metrics;
pub mod transforms;

pub mod channel;
pub mod error;
pub mod random;
pub mod signal;
pub mod tensor;
pub mod estimators;
pub mod metrics;
pub mod harness;

pub mod dataset;
pub mod linalg;
pub mod rng;
pub mod trainer;
pub mod metrics;
pub mod bounds;
pub mod jobs;
pub mod rashomon;
pub mod experiment;
pub mod api;

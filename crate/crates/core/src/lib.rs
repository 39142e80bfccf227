pub mod geo;
pub mod imgproc;
pub mod matching;
pub mod metrics;
pub mod pipeline;
pub mod pose;
pub mod prior;
pub mod record;
pub mod refmap;
pub mod retrieval;
pub mod simulator;
pub mod strategies;

pub mod geometry;
pub mod scenegen;
pub mod seed;
pub mod model;
pub mod contrastive;
pub mod lowshot;
pub mod harness;

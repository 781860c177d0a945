pub mod annotation;
pub mod backend;
pub mod config;
pub mod corpus;
pub mod metrics;
pub mod simulator;
pub mod student;
pub mod teacher;
pub mod text;

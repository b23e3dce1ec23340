//! Problem files, generators and the rate comparison harness.

pub mod battery;
pub mod compare;
pub mod envelope;
pub mod experiment;
pub mod fit;
pub mod generate;
pub mod problem;

pub use compare::{compare, CompareOptions, CompareReport};
pub use fit::{empirical_f_rate, empirical_rate};
pub use generate::generate_problem;
pub use problem::{Problem, ProblemFile};

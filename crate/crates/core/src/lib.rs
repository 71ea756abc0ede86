//! A small sparse tensor compiler for SpMM on a simulated SIMT machine.
//!
//! The pipeline is: build or parse concrete index notation ([`cin`]),
//! transform it with schedule commands ([`schedule`]), pick points in the
//! atomic-parallelism design space ([`space`]), lower to an imperative IR
//! ([`lower`]), then either run the kernel on the lock-step interpreter
//! ([`sim`]) or print CUDA-flavoured source ([`codegen`]).

pub mod cin;
pub mod codegen;
pub mod lower;
pub mod pipeline;
pub mod schedule;
pub mod sim;
pub mod space;
pub mod sparse;

pub use sparse::{CsrMatrix, DenseMatrix};

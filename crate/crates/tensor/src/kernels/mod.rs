//! Raw numeric kernels over flat slices, independent of the tape.

pub mod conv;
pub mod norm;
pub mod pool;

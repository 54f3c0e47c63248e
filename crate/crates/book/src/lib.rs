//! Compiles and runs the code listings of the guide in `book/` as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/kernels.md")]
pub mod kernels {}
#[doc = include_str!("../../../book/src/tree.md")]
pub mod tree {}
#[doc = include_str!("../../../book/src/belief.md")]
pub mod belief {}
#[doc = include_str!("../../../book/src/merging.md")]
pub mod merging {}
#[doc = include_str!("../../../book/src/sensor.md")]
pub mod sensor {}
#[doc = include_str!("../../../book/src/planning.md")]
pub mod planning {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}

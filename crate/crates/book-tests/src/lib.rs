//! Guide chapters compiled as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/shrinkage.md")]
pub mod shrinkage {}
#[doc = include_str!("../../../book/src/lanczos.md")]
pub mod lanczos {}
#[doc = include_str!("../../../book/src/optimizers.md")]
pub mod optimizers {}
#[doc = include_str!("../../../book/src/spiked-noise.md")]
pub mod spiked_noise {}
#[doc = include_str!("../../../book/src/auto-damping.md")]
pub mod auto_damping {}
#[doc = include_str!("../../../book/src/stability.md")]
pub mod stability {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}

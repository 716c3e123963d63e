//! Book chapters compiled as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/tensors.md")]
pub mod tensors {}

#[doc = include_str!("../../../book/src/als.md")]
pub mod als {}

#[doc = include_str!("../../../book/src/compression.md")]
pub mod compression {}

#[doc = include_str!("../../../book/src/mixed-precision.md")]
pub mod mixed_precision {}

#[doc = include_str!("../../../book/src/recovery.md")]
pub mod recovery {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

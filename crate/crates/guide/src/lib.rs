//! The prefcurate book. Each chapter is compiled here so its Rust snippets
//! run as doctests against the current API.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/quickstart.md")]
pub mod quickstart {}

#[doc = include_str!("../../../book/src/ingest.md")]
pub mod ingest {}

#[doc = include_str!("../../../book/src/reward_model.md")]
pub mod reward_model {}

#[doc = include_str!("../../../book/src/retrieval.md")]
pub mod retrieval {}

#[doc = include_str!("../../../book/src/judges.md")]
pub mod judges {}

#[doc = include_str!("../../../book/src/curation.md")]
pub mod curation {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/service.md")]
pub mod service {}

#[doc = include_str!("../../../book/src/configuration.md")]
pub mod configuration {}

// mdbook can't resolve crate dependencies when testing, so each chapter is
// pulled in here as a module doc and `cargo test --doc` runs the snippets.
// One module per chapter keeps failure names traceable to a file.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/channel.md")]
pub mod channel {}
#[doc = include_str!("src/modulation.md")]
pub mod modulation {}
#[doc = include_str!("src/detection.md")]
pub mod detection {}
#[doc = include_str!("src/selector-network.md")]
pub mod selector_network {}
#[doc = include_str!("src/complexity.md")]
pub mod complexity {}
#[doc = include_str!("src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}

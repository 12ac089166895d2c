// mdbook cannot link listings against workspace crates, so each chapter is
// included here as a module doc and `cargo test -p qreset-book` runs its
// code blocks as ordinary doc-tests. One module per chapter keeps failures
// traceable to a file.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/no-click.md")]
pub mod no_click {}
#[doc = include_str!("src/trajectories.md")]
pub mod trajectories {}
#[doc = include_str!("src/counting.md")]
pub mod counting {}
#[doc = include_str!("src/renewal.md")]
pub mod renewal {}
#[doc = include_str!("src/spectral.md")]
pub mod spectral {}
#[doc = include_str!("src/resolvent.md")]
pub mod resolvent {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
#[doc = include_str!("src/verification.md")]
pub mod verification {}
#[doc = include_str!("../README.md")]
pub mod readme {}

//! Scenario runner, log verifier and offline tools for `trolley-core`.

pub mod config;
pub mod runner;
pub mod tools;
pub mod verify;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/scenarios.md")]
mod book_scenarios {}

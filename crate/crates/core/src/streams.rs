//! Sub-seed tags.
//!
//! Every randomized step draws from `Rng::new(seed).derive(TAG)` (further
//! keyed by graph name or epoch where needed), so adding a step or a graph
//! never shifts the randomness seen by the others.

pub const ALIGN: u64 = 1;
pub const INIT: u64 = 2;
pub const SUPPORT: u64 = 3;
pub const PAIRS: u64 = 4;
pub const PSEUDO: u64 = 5;
pub const FINETUNE: u64 = 6;
pub const INJECT: u64 = 7;
pub const SYNTH: u64 = 8;
pub const LABELED: u64 = 9;

//! Key-collision dictionary attack on toy ciphers.
//!
//! Fingerprint many keys by enciphering one fixed `3n`-bit plaintext, sort
//! the fingerprints into a dictionary, and recover unknown keys by looking
//! up their fingerprints. [`bounds`] evaluates how likely the fingerprints
//! are to be collision-free and how many captured targets are needed before
//! one lands in the dictionary, both in closed form and by simulation.

pub mod attack;
pub mod bounds;
pub mod cipher;
pub mod cli;
pub mod dictionary;
pub mod parallel;

pub use attack::{capture_targets, run_attack, AttackError, AttackReport, Recovery, TargetBatch};
pub use bounds::{
    mc_distinctness, mc_hit_rate, prop1_eval, prop2_eval, BoundsError, McEstimate, Prop1Report,
    Prop2Report,
};
pub use cipher::{
    default_x0, feistel_block, fingerprint, mix64, CipherError, CipherId, CipherSpec, Fingerprint,
    KeyValue, Plaintext,
};
pub use dictionary::{enumerate_keys, DictEntry, DictError, Dictionary, KeyMode, MatchResult};

//! Narration-guided reward shaping on the MicroBuild mini-game.
//!
//! * [`env`]: deterministic build-order simulator with goal detectors.
//! * [`nn`]: small network toolkit (conv, dense, LSTM, Adam).
//! * [`encoder`]: the shared convolutional state trunk.
//! * [`lexicon`]: tokenizer, vocabulary and a skip-gram word-vector trainer.
//! * [`mem`]: the mutual-embedding model grounding commands in game states.
//! * [`agents`]: A3C with pluggable reward-shaping strategies.
//! * [`harness`]: experiment orchestration, reports and figures.

pub mod nn;
pub mod env;
pub mod encoder;
pub mod lexicon;
pub mod mem;
pub mod agents;
pub mod harness;

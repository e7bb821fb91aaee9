//! Embodied scene description on discretized grid scenes.
//!
//! An agent moves and rotates through a procedurally generated room looking
//! for the viewpoint whose caption best agrees with what it can see. The
//! crate covers the whole pipeline: scene geometry ([`gridscene`]), a
//! synthetic word-embedding table ([`lexicon`]), a noisy detector and caption
//! oracle ([`perception`]), the matching-based viewpoint score ([`scoring`]),
//! shortest-path demonstrations ([`demogen`]), a recurrent policy trained by
//! imitation and REINFORCE ([`policy`]), captioning metrics
//! ([`langmetrics`]), and experiment orchestration ([`harness`]).

pub mod demogen;
pub mod gridscene;
pub mod harness;
pub mod langmetrics;
pub mod lexicon;
pub mod policy;
pub mod perception;
pub mod rng;
pub mod scoring;

//! Desk-scale laboratory for self-supervised forward/inverse articulatory
//! learning.
//!
//! An agent owns a black-box articulatory synthesizer (the *plant*) that maps
//! 6 interpretable vocal-tract parameters to an 18-band Bark-scale spectral
//! frame. Given acoustic-only speech material, it jointly trains
//!
//! * a framewise *forward model* `f` predicting the acoustic consequence of
//!   an articulatory command, and
//! * a recurrent *inverse model* `g` recovering articulatory commands from
//!   acoustic input,
//!
//! by imitation: invert, ground the forward model on the plant's actual
//! response, then improve the inverse model by backpropagating the imitation
//! error through the frozen forward model. The plant is never differentiated.
//!
//! Everything is deterministic from explicit seeds: corpus generation,
//! initialization, dropout, training order, and probes.

pub mod corpus;
pub mod error;
pub mod models;
pub mod numerics;
pub mod plant;
pub mod probes;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};

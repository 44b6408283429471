//! Progressive image-pivoted zero-resource translation on synthetic scenes.
//!
//! Stages: synthetic scene/caption generation ([`synthpivot`]), a
//! pivot-conditioned multilingual captioner ([`captioner`]), EMD-based
//! re-weighting of pseudo pairs ([`emdweight`]), a shared encoder-decoder
//! with denoising auto-encoding ([`nmt`]), scoring ([`evalkit`]) and the
//! staged driver ([`pipeline`]).

pub mod beam;
pub mod captioner;
pub mod emdweight;
pub mod error;
pub mod evalkit;
pub mod layers;
pub mod nmt;
pub mod optim;
pub mod pipeline;
pub mod seeds;
pub mod synthpivot;
pub mod textproc;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lang {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "b")]
    B,
}

impl Lang {
    pub fn other(self) -> Lang {
        match self {
            Lang::A => Lang::B,
            Lang::B => Lang::A,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Lang::A => "a",
            Lang::B => "b",
        }
    }

    pub fn parse(s: &str) -> Result<Lang> {
        match s {
            "a" | "A" => Ok(Lang::A),
            "b" | "B" => Ok(Lang::B),
            _ => Err(Error::Config(format!("unknown language {s:?}, expected a or b"))),
        }
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

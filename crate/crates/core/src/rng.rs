//! Labelled random streams derived from one master seed.
//!
//! Every consumer of randomness draws from its own ChaCha stream, so adding
//! or removing draws in one place (say, evaluating more often) never shifts
//! the numbers another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    /// Training-set sampling.
    Data = 1,
    /// Parameter initialization.
    Init = 2,
    /// Latent noise for training steps.
    Noise = 3,
    /// Gradient-penalty interpolation coefficients.
    Interp = 4,
    /// Minibatch index selection.
    Batch = 5,
    /// Evaluation draws; combined with the iteration number.
    Eval = 6,
    /// Standalone sampling and data export.
    Sample = 7,
}

pub fn stream(seed: u64, label: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label as u64);
    rng
}

/// Evaluation stream for the report taken at `iteration`.
pub fn eval_stream(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((Stream::Eval as u64) << 48) | (iteration & ((1 << 48) - 1)));
    rng
}

/// Exact position of a ChaCha stream, for checkpointing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub const ENCODED_LEN: usize = 32 + 8 + 16;

    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.seed);
        out.extend_from_slice(&self.stream.to_le_bytes());
        out.extend_from_slice(&self.word_pos.to_le_bytes());
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != Self::ENCODED_LEN {
            return Err(Error::Checkpoint("truncated rng state".into()));
        }
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&bytes[..32]);
        let stream = u64::from_le_bytes(bytes[32..40].try_into().unwrap());
        let word_pos = u128::from_le_bytes(bytes[40..56].try_into().unwrap());
        Ok(RngState {
            seed,
            stream,
            word_pos,
        })
    }
}

//! Counter-based random streams: every draw is addressed by
//! `(root seed, stream, counter)`, so draws can be made in any order and on
//! any thread with the same result.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Words of the ChaCha stream reserved per counter value.
const WORDS_PER_DRAW: u128 = 4;

/// Sequential generator for stream `stream` under `root`.
pub fn stream(root: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream);
    rng
}

/// Standard normal draw at `(root, stream, counter)` via Box–Muller on two
/// 53-bit uniforms taken from a fixed position of the stream.
pub fn normal_at(root: u64, stream_id: u64, counter: u64) -> f64 {
    let mut rng = stream(root, stream_id);
    rng.set_word_pos(counter as u128 * WORDS_PER_DRAW);
    let a = rng.next_u64() >> 11;
    let b = rng.next_u64() >> 11;
    let scale = 1.0 / (1u64 << 53) as f64;
    let u1 = (a + 1) as f64 * scale;
    let u2 = b as f64 * scale;
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

//! Random draw sources.
//!
//! Every replication owns a [`CounterStream`]: a ChaCha8 keystream keyed by
//! `(master_seed, tile_index)` with the replication index as the stream id.
//! Distinct `(tile, replication)` pairs therefore never share keystream
//! blocks, and any replication can be regenerated without touching the others.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::special::normal_quantile;

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

/// Source of the randomness a trial simulation consumes.
///
/// Only [`DrawSource::next_u64`] is required; the derived draws can be
/// overridden by test sources to force specific values.
pub trait DrawSource {
    fn next_u64(&mut self) -> u64;

    /// Uniform on [0, 1) with 53 bits of resolution.
    fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Uniform on the open interval (0, 1).
    fn open_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * TWO_POW_NEG_53
    }

    /// Standard normal by inversion of one open uniform.
    fn std_normal(&mut self) -> f64 {
        normal_quantile(self.open_uniform())
    }

    /// Gamma(shape, 1) by Marsaglia–Tsang.
    fn gamma(&mut self, shape: f64) -> f64 {
        if shape < 1.0 {
            let g = self.gamma(shape + 1.0);
            return g * self.open_uniform().powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (3.0 * d.sqrt());
        loop {
            let x = self.std_normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = self.open_uniform();
            let x2 = x * x;
            if u < 1.0 - 0.0331 * x2 * x2 {
                return d * v;
            }
            if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }

    /// Beta(a, b) through the gamma ratio Γa / (Γa + Γb).
    fn beta(&mut self, a: f64, b: f64) -> f64 {
        let x = self.gamma(a);
        let y = self.gamma(b);
        x / (x + y)
    }

    /// True once a finite source has been asked for more draws than it holds.
    fn exhausted(&self) -> bool {
        false
    }
}

/// Counter-based stream for one `(tile, replication)` pair.
#[derive(Clone, Debug)]
pub struct CounterStream {
    rng: ChaCha8Rng,
}

impl CounterStream {
    pub fn new(master_seed: u64, tile_index: u64, replication: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(stream_key(master_seed, tile_index));
        rng.set_stream(replication);
        Self { rng }
    }
}

impl DrawSource for CounterStream {
    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

fn stream_key(master_seed: u64, tile_index: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&tile_index.to_le_bytes());
    key[16..].copy_from_slice(b"tilebound/stream");
    key
}

/// Externally supplied master seed and the substream derivation rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedPolicy {
    pub master_seed: u64,
}

impl SeedPolicy {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn stream(&self, tile_index: u64, replication: u64) -> CounterStream {
        CounterStream::new(self.master_seed, tile_index, replication)
    }
}

/// A finite source that replays fixed uniforms, for tests and audits.
///
/// Reading past the end yields 0.5 and marks the source exhausted.
#[derive(Clone, Debug)]
pub struct ReplaySource {
    uniforms: Vec<f64>,
    pos: usize,
    exhausted: bool,
}

impl ReplaySource {
    pub fn new(uniforms: Vec<f64>) -> Self {
        Self {
            uniforms,
            pos: 0,
            exhausted: false,
        }
    }

    pub fn consumed(&self) -> usize {
        self.pos
    }

    fn take(&mut self) -> f64 {
        match self.uniforms.get(self.pos) {
            Some(&u) => {
                self.pos += 1;
                u
            }
            None => {
                self.exhausted = true;
                0.5
            }
        }
    }
}

impl DrawSource for ReplaySource {
    fn next_u64(&mut self) -> u64 {
        let u = self.take();
        ((u * (1u64 << 53) as f64) as u64) << 11
    }

    fn uniform(&mut self) -> f64 {
        self.take()
    }

    fn open_uniform(&mut self) -> f64 {
        let u = self.take();
        if u <= 0.0 {
            0.5 * TWO_POW_NEG_53
        } else {
            u
        }
    }

    fn exhausted(&self) -> bool {
        self.exhausted
    }
}

/// Wraps a source and records every uniform it hands out.
pub struct RecordingSource<S> {
    inner: S,
    pub log: Vec<u64>,
}

impl<S: DrawSource> RecordingSource<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            log: Vec::new(),
        }
    }
}

impl<S: DrawSource> DrawSource for RecordingSource<S> {
    fn next_u64(&mut self) -> u64 {
        let x = self.inner.next_u64();
        self.log.push(x);
        x
    }
}

/// Replays recorded raw words, then continues with an arbitrary tail source.
pub struct SplicedSource<S> {
    prefix: Vec<u64>,
    pos: usize,
    tail: S,
}

impl<S: DrawSource> SplicedSource<S> {
    pub fn new(prefix: Vec<u64>, tail: S) -> Self {
        Self {
            prefix,
            pos: 0,
            tail,
        }
    }
}

impl<S: DrawSource> DrawSource for SplicedSource<S> {
    fn next_u64(&mut self) -> u64 {
        if let Some(&x) = self.prefix.get(self.pos) {
            self.pos += 1;
            x
        } else {
            self.tail.next_u64()
        }
    }
}

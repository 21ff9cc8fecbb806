//! Counter-based random numbers for reproducible parallel Monte Carlo.
//!
//! Every random draw in the crate is a pure function of
//! `(seed, stream, cell, draw)`: `seed` is the experiment master seed,
//! `stream` identifies the Monte Carlo sample, `cell` is a flat space-time
//! cell index and `draw` distinguishes multiple values per cell. There is no
//! shared generator state, so any traversal order and any worker count
//! produce bitwise-identical output.
//!
//! The block cipher underneath is Philox-4x32 with 10 rounds.

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

/// One invocation of Philox-4x32-10: 128-bit counter, 64-bit key,
/// 128 bits of output.
#[inline]
pub fn philox4x32(mut ctr: [u32; 4], key: u64) -> [u32; 4] {
    let mut k0 = key as u32;
    let mut k1 = (key >> 32) as u32;
    for _ in 0..10 {
        let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0];
        k0 = k0.wrapping_add(PHILOX_W0);
        k1 = k1.wrapping_add(PHILOX_W1);
    }
    ctr
}

/// Role of a draw inside a sampler. Keeps unrelated consumers of the same
/// space-time cell on disjoint counters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamKind {
    EnvSite = 1,
    GibbsInit = 2,
    LangevinNoise = 3,
    Generic = 4,
}

/// Stateless view of one Monte Carlo stream.
#[derive(Clone, Copy, Debug)]
pub struct CounterRng {
    seed: u64,
    stream: u32,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u32) -> Self {
        CounterRng { seed, stream }
    }

    pub fn stream(&self) -> u32 {
        self.stream
    }

    #[inline]
    fn raw(&self, kind: StreamKind, cell: u64, draw: u32) -> [u32; 4] {
        debug_assert!(draw < 1 << 24, "draw index too large");
        let tag = draw | ((kind as u32) << 24);
        let ctr = [tag, cell as u32, (cell >> 32) as u32, self.stream];
        philox4x32(ctr, self.seed)
    }

    /// Two independent u64 words for `(kind, cell, draw)`.
    #[inline]
    pub fn u64x2(&self, kind: StreamKind, cell: u64, draw: u32) -> (u64, u64) {
        let r = self.raw(kind, cell, draw);
        (
            (r[0] as u64) << 32 | r[1] as u64,
            (r[2] as u64) << 32 | r[3] as u64,
        )
    }

    /// Uniform in the open interval (0, 1), 53-bit resolution.
    #[inline]
    pub fn u01(&self, kind: StreamKind, cell: u64, draw: u32) -> f64 {
        let (a, _) = self.u64x2(kind, cell, draw);
        ((a >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    /// Pair of uniforms from a single cipher call.
    #[inline]
    pub fn u01x2(&self, kind: StreamKind, cell: u64, draw: u32) -> (f64, f64) {
        let (a, b) = self.u64x2(kind, cell, draw);
        const SCALE: f64 = 1.0 / 9007199254740992.0;
        (
            ((a >> 11) as f64 + 0.5) * SCALE,
            ((b >> 11) as f64 + 0.5) * SCALE,
        )
    }

    /// Standard normal pair via Box-Muller.
    #[inline]
    pub fn normal_pair(&self, kind: StreamKind, cell: u64, draw: u32) -> (f64, f64) {
        let (u1, u2) = self.u01x2(kind, cell, draw);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        (r * c, r * s)
    }

    #[inline]
    pub fn normal(&self, kind: StreamKind, cell: u64, draw: u32) -> f64 {
        self.normal_pair(kind, cell, draw).0
    }

    /// Fair sign, +1 or -1.
    #[inline]
    pub fn sign(&self, kind: StreamKind, cell: u64, draw: u32) -> f64 {
        let r = self.raw(kind, cell, draw);
        if r[0] & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

//! Counter-based Gaussian increments.
//!
//! Every draw is a pure function of `(seed, replica, stream, site, index)`:
//! the key tuple is fed through the Philox4x32-10 bijection and the output
//! bits are mapped to a standard normal by a fixed inverse-CDF transform.
//! Trajectories therefore do not depend on thread count or evaluation order.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with 10 rounds.
#[inline]
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// Inverse of the standard normal CDF (Acklam's rational approximation,
/// relative error below 1.2e-9 on (0, 1)).
#[inline]
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

#[inline]
fn bits_to_normal(bits: u64) -> f64 {
    let u = ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    inverse_normal_cdf(u)
}

/// Per-site increments for a whole lattice, generated two steps at a time.
#[derive(Debug, Clone)]
pub struct IncrementCache {
    block: Option<i64>,
    values: Vec<[f64; 2]>,
}

impl IncrementCache {
    pub fn new(sites: usize) -> Self {
        Self { block: None, values: vec![[0.0; 2]; sites] }
    }

    /// Standardized increments of step `k` for every key in `keys`.
    pub fn step<'a>(&'a mut self, src: &NoiseSource, keys: &[u64], k: i64) -> impl Iterator<Item = f64> + 'a {
        let m = k.div_euclid(2);
        if self.block != Some(m) {
            for (v, &key) in self.values.iter_mut().zip(keys) {
                *v = src.increment_pair(key, m);
            }
            self.block = Some(m);
        }
        let half = k.rem_euclid(2) as usize;
        self.values.iter().map(move |v| v[half])
    }
}

/// Independent families of draws sharing one seed and replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    /// Brownian increments on `[k dt, (k+1) dt]`, `k >= 0`.
    ForwardTime = 0,
    /// The independent Brownian family used for negative times.
    BackwardTime = 1,
    /// Spectral coefficients of Gaussian free field samples.
    FreeField = 2,
    /// Scalar processes and random environments.
    Auxiliary = 3,
}

const REPLICA_BITS: u32 = 29;

/// Packs lattice coordinates (at most four axes, each in `i16` range) into
/// a 64-bit site key.
pub fn site_key(coords: &[i64]) -> u64 {
    debug_assert!(coords.len() <= 4);
    let mut key = 0u64;
    for (axis, &c) in coords.iter().enumerate() {
        debug_assert!((i16::MIN as i64..=i16::MAX as i64).contains(&c));
        key |= ((c as i16 as u16) as u64) << (16 * axis);
    }
    key
}

/// Deterministic source of standard normal draws for one replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSource {
    pub seed: u64,
    pub replica: u32,
}

impl NoiseSource {
    pub fn new(seed: u64, replica: u32) -> Self {
        assert!(replica < (1 << REPLICA_BITS), "replica id out of range");
        Self { seed, replica }
    }

    /// The source for another replica under the same master seed.
    pub fn with_replica(&self, replica: u32) -> Self {
        Self::new(self.seed, replica)
    }

    /// One standard normal for the key `(stream, site, index)`.
    #[inline]
    pub fn normal(&self, stream: Stream, site: u64, index: u64) -> f64 {
        // One Philox block serves two consecutive indices.
        debug_assert!(index >> 1 <= u32::MAX as u64);
        let counter = [
            site as u32,
            (site >> 32) as u32,
            (index >> 1) as u32,
            ((stream as u32) << REPLICA_BITS) | self.replica,
        ];
        let key = [self.seed as u32, (self.seed >> 32) as u32];
        let out = philox4x32_10(counter, key);
        let half = 2 * (index & 1) as usize;
        bits_to_normal(((out[half] as u64) << 32) | out[half + 1] as u64)
    }

    /// Standardized Brownian increment at `site` over `[k dt, (k+1) dt]`.
    ///
    /// Negative steps read the second Brownian family run backwards in
    /// time, so that `B_t = B^0_t` for `t >= 0` and `B_t = B^1_{-t}` for
    /// `t < 0`.
    #[inline]
    pub fn increment(&self, site: u64, step: i64) -> f64 {
        if step >= 0 {
            self.normal(Stream::ForwardTime, site, step as u64)
        } else {
            -self.normal(Stream::BackwardTime, site, (-step - 1) as u64)
        }
    }

    /// Both standardized increments of steps `2m` and `2m + 1` at `site`,
    /// from a single generator call.
    #[inline]
    pub fn increment_pair(&self, site: u64, m: i64) -> [f64; 2] {
        if m >= 0 {
            let out = self.block(Stream::ForwardTime, site, m as u64);
            [out[0], out[1]]
        } else {
            // Steps 2m and 2m+1 read backward indices -2m-1 and -2m-2.
            let out = self.block(Stream::BackwardTime, site, (-m - 1) as u64);
            [-out[1], -out[0]]
        }
    }

    #[inline]
    fn block(&self, stream: Stream, site: u64, block: u64) -> [f64; 2] {
        debug_assert!(block <= u32::MAX as u64);
        let counter = [
            site as u32,
            (site >> 32) as u32,
            block as u32,
            ((stream as u32) << REPLICA_BITS) | self.replica,
        ];
        let key = [self.seed as u32, (self.seed >> 32) as u32];
        let out = philox4x32_10(counter, key);
        [
            bits_to_normal(((out[0] as u64) << 32) | out[1] as u64),
            bits_to_normal(((out[2] as u64) << 32) | out[3] as u64),
        ]
    }

    /// Brownian increment scaled by `sqrt(dt)`.
    #[inline]
    pub fn brownian_increment(&self, site: u64, step: i64, dt: f64) -> f64 {
        dt.sqrt() * self.increment(site, step)
    }

    /// Increments at `sites` for step `k` minus their spatial average.
    pub fn mean_subtracted(&self, sites: &[u64], step: i64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; sites.len()];
        self.mean_subtracted_into(sites, step, &mut out)?;
        Ok(out)
    }

    /// Buffer-reusing form of [`Self::mean_subtracted`].
    pub fn mean_subtracted_into(&self, sites: &[u64], step: i64, out: &mut [f64]) -> Result<()> {
        if sites.len() < 2 {
            return invalid("mean-subtracted noise needs at least two sites");
        }
        debug_assert_eq!(sites.len(), out.len());
        let mut sum = 0.0;
        for (o, &s) in out.iter_mut().zip(sites) {
            *o = self.increment(s, step);
            sum += *o;
        }
        project_mean_zero(out, sum);
        Ok(())
    }
}

/// Removes the spatial mean from `values`, whose sum is `sum`.
#[inline]
pub(crate) fn project_mean_zero(values: &mut [f64], sum: f64) {
    let mean = sum / values.len() as f64;
    for v in values.iter_mut() {
        *v -= mean;
    }
}

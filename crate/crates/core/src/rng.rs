//! Deterministic random streams and Gaussian sampling.
//!
//! Every random decision in the crate flows through [`RngStream`], a
//! ChaCha8 generator keyed by a `(seed, stream)` pair. Child seeds are
//! derived statelessly with [`derive_seed`], so any iteration or rollout
//! can be replayed without replaying its predecessors.
//!
//! Gaussian deviates are produced by inverting the normal CDF with a
//! rational approximation instead of calling into `libm`. Apart from the
//! log of tail probabilities, which is computed here from exact bit
//! manipulation and a short polynomial, every operation involved
//! (add, mul, div, sqrt) is exactly rounded under IEEE-754, so the
//! sampled bit pattern for a given `(seed, stream)` is identical on any
//! conforming platform and for any thread count.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One step of the splitmix64 sequence: advance by the golden-ratio
/// increment, then apply the finalizer. Bijective on `u64`.
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a path of tags, e.g.
/// `derive_seed(run_seed, &[iteration, slot])` for a rollout seed.
/// Stateless: the result depends only on the arguments.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut s = mix64(base);
    for &t in tags {
        s = mix64(s ^ mix64(t));
    }
    s
}

/// A ChaCha8 generator addressed by `(seed, stream)`. Distinct streams
/// under one seed are independent, which is what makes block-parallel
/// noise generation and per-iteration offset draws order-free.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

/// Natural log for finite positive inputs, built from exponent
/// extraction and an `atanh` series. Only exactly rounded arithmetic is
/// used, so the result is bit-identical across platforms. Absolute error
/// is below 1e-13, far inside the tolerance of the inverse-CDF rational
/// approximation that consumes it.
pub(crate) fn det_ln(x: f64) -> f64 {
    debug_assert!(x > 0.0 && x.is_finite());
    let bits = x.to_bits();
    let mut e = ((bits >> 52) & 0x7FF) as i64 - 1023;
    let mut m = f64::from_bits((bits & 0x000F_FFFF_FFFF_FFFF) | 0x3FF0_0000_0000_0000);
    // Center the mantissa on 1 so the series argument stays small.
    if m > std::f64::consts::SQRT_2 {
        m *= 0.5;
        e += 1;
    }
    // ln m = 2 atanh t with t = (m-1)/(m+1), |t| <= sqrt(2)-1 over the
    // centered range; terms through t^17 reach double precision.
    let t = (m - 1.0) / (m + 1.0);
    let t2 = t * t;
    let series = 1.0
        + t2 * (1.0 / 3.0
            + t2 * (1.0 / 5.0
                + t2 * (1.0 / 7.0
                    + t2 * (1.0 / 9.0
                        + t2 * (1.0 / 11.0
                            + t2 * (1.0 / 13.0 + t2 * (1.0 / 15.0 + t2 * (1.0 / 17.0))))))));
    2.0 * t * series + (e as f64) * std::f64::consts::LN_2
}

/// Inverse of the standard normal CDF (rational approximation, relative
/// error below 1.2e-9). Input must lie strictly inside (0, 1).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| -> f64 {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    if p < P_LOW {
        tail((-2.0 * det_ln(p)).sqrt())
    } else if p > 1.0 - P_LOW {
        // 1 - p is exact here (both operands are within a factor of two).
        -tail((-2.0 * det_ln(1.0 - p)).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Maps 64 random bits to a standard normal deviate in f32. The top 52
/// bits become a uniform in (0, 1): `k + 0.5` is exactly representable
/// for every `k < 2^52` and the power-of-two scale is exact, so the
/// uniform never collapses onto an endpoint.
pub fn normal_from_bits(bits: u64) -> f32 {
    const SCALE: f64 = 1.0 / 4503599627370496.0; // 2^-52
    let u = ((bits >> 12) as f64 + 0.5) * SCALE;
    inverse_normal_cdf(u) as f32
}

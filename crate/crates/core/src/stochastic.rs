//! Deterministic, splittable random streams and distribution sampling.
//!
//! Every random quantity in the simulator is drawn from an [`RngStream`]
//! derived from a master seed and a [`StreamKey`] (node, sample, purpose,
//! step). Streams with distinct keys are statistically independent and the
//! sequence for a given key is identical across runs, platforms and worker
//! counts, so parallel execution cannot change results.
//!
//! Poisson sampling is exact: Knuth's product method below the cutover
//! mean, Hormann's PTRS transformed rejection above it. No normal
//! approximation is used anywhere; per-step means as low as 0.1 would make
//! one visibly biased.

use thiserror::Error;

/// Upper bound accepted for base service rates.
pub const MAX_BASE_RATE: f64 = 1e6;

/// Mean at which Poisson sampling switches from inversion to rejection.
const POISSON_REJECTION_CUTOVER: f64 = 10.0;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error, PartialEq)]
pub enum StochasticError {
    #[error("poisson mean must be finite and >= 0, got {0}")]
    InvalidMean(f64),
    #[error("uniform bounds must be finite with lo <= hi, got [{lo}, {hi})")]
    InvalidUniformBounds { lo: f64, hi: f64 },
    #[error("invalid parameter ranges: {0}")]
    InvalidRanges(String),
}

/// What a stream is used for. Keeps draws for different purposes at the
/// same (node, sample, step) independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Arrival,
    Departure,
    LambdaDraw,
    RateDraw,
    ControlPick,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Arrival => 1,
            Purpose::Departure => 2,
            Purpose::LambdaDraw => 3,
            Purpose::RateDraw => 4,
            Purpose::ControlPick => 5,
        }
    }
}

/// Identifies one logical stream within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub node: u64,
    pub sample: u64,
    pub purpose: Purpose,
    pub step: u64,
}

impl StreamKey {
    pub fn new(node: usize, sample: usize, purpose: Purpose, step: u64) -> Self {
        Self {
            node: node as u64,
            sample: sample as u64,
            purpose,
            step,
        }
    }
}

/// SplitMix64 finalizer: full-avalanche bijection on u64.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based random stream: the key fields are folded into the state
/// through chained avalanche rounds, then draws advance a SplitMix64
/// sequence. Cheap to derive per (node, sample, step), never shared.
#[derive(Debug, Clone)]
pub struct RngStream {
    state: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, key: StreamKey) -> Self {
        let mut s = mix(master_seed ^ GOLDEN_GAMMA);
        s = mix(s ^ key.node);
        s = mix(s ^ key.sample);
        s = mix(s ^ key.purpose.tag());
        s = mix(s ^ key.step);
        Self { state: s }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        const DEN: f64 = (1u64 << 53) as f64;
        (self.next_u64() >> 11) as f64 / DEN
    }
}

/// Exact Poisson(mean) count. `mean == 0` returns 0 without consuming
/// randomness.
pub fn sample_poisson(stream: &mut RngStream, mean: f64) -> Result<u64, StochasticError> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(StochasticError::InvalidMean(mean));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    if mean < POISSON_REJECTION_CUTOVER {
        Ok(poisson_inversion(stream, mean))
    } else {
        Ok(poisson_rejection(stream, mean))
    }
}

/// Knuth's product method: multiply uniforms until the product drops below
/// e^-mean. Exact; expected mean+1 uniforms per draw.
fn poisson_inversion(stream: &mut RngStream, mean: f64) -> u64 {
    let limit = (-mean).exp();
    let mut count = 0u64;
    let mut product = stream.next_f64();
    while product > limit {
        count += 1;
        product *= stream.next_f64();
    }
    count
}

/// Hormann's PTRS transformed rejection, valid for mean >= 10.
fn poisson_rejection(stream: &mut RngStream, mean: f64) -> u64 {
    let b = 0.931 + 2.53 * mean.sqrt();
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    let ln_mean = mean.ln();
    loop {
        let u = stream.next_f64() - 0.5;
        let v = stream.next_f64();
        let u_shifted = 0.5 - u.abs();
        let k = ((2.0 * a / u_shifted + b) * u + mean + 0.43).floor();
        if u_shifted >= 0.07 && v <= v_r {
            return k as u64;
        }
        if k < 0.0 || (u_shifted < 0.013 && v > u_shifted) {
            continue;
        }
        let lhs = (v * inv_alpha / (a / (u_shifted * u_shifted) + b)).ln();
        if lhs <= k * ln_mean - mean - ln_gamma(k + 1.0) {
            return k as u64;
        }
    }
}

/// Natural log of the gamma function (Lanczos, g = 7), |err| < 1e-12 on
/// the positive axis.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 8] = [
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x).
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.999_999_999_999_809_9;
    for (i, c) in COEF.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Uniform draw in [lo, hi); lo == hi returns lo.
pub fn sample_uniform(stream: &mut RngStream, lo: f64, hi: f64) -> Result<f64, StochasticError> {
    if !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(StochasticError::InvalidUniformBounds { lo, hi });
    }
    let v = lo + (hi - lo) * stream.next_f64();
    // Rounding of the product can land exactly on hi; keep the half-open
    // contract.
    if v >= hi && hi > lo {
        return Ok(hi.next_down());
    }
    Ok(v)
}

/// Admissible ranges for the per-node parameter draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRanges {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub m_min: f64,
    pub m_max: f64,
}

impl ParamRanges {
    pub fn new(
        lambda_min: f64,
        lambda_max: f64,
        m_min: f64,
        m_max: f64,
    ) -> Result<Self, StochasticError> {
        let r = Self {
            lambda_min,
            lambda_max,
            m_min,
            m_max,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), StochasticError> {
        let bad = |msg: String| Err(StochasticError::InvalidRanges(msg));
        if !(self.lambda_min.is_finite() && self.lambda_max.is_finite()) {
            return bad(format!(
                "arrival-rate range must be finite, got [{}, {}]",
                self.lambda_min, self.lambda_max
            ));
        }
        if self.lambda_min < 0.0 || self.lambda_min > self.lambda_max {
            return bad(format!(
                "arrival-rate range needs 0 <= lambda-min <= lambda-max, got [{}, {}]",
                self.lambda_min, self.lambda_max
            ));
        }
        if !(self.m_min.is_finite() && self.m_max.is_finite()) {
            return bad(format!(
                "service-rate range must be finite, got [{}, {}]",
                self.m_min, self.m_max
            ));
        }
        if self.m_min < 0.0 || self.m_min > self.m_max || self.m_max > MAX_BASE_RATE {
            return bad(format!(
                "service-rate range needs 0 <= m-min <= m-max <= {MAX_BASE_RATE}, got [{}, {}]",
                self.m_min, self.m_max
            ));
        }
        Ok(())
    }
}

/// Per-node arrival and base service rates, fixed for the whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeParams {
    pub lambda: Vec<f64>,
    pub base_rate: Vec<f64>,
}

impl NodeParams {
    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    /// Arrival rate of `node` at step `_step`. Rates are constant over a
    /// run; a time-varying profile would plug in here.
    #[inline]
    pub fn lambda_at(&self, node: usize, _step: u64) -> f64 {
        self.lambda[node]
    }
}

/// Draw per-node (lambda_i, m_i) pairs, one stream per node and purpose,
/// so the result is independent of iteration order.
pub fn draw_node_params(
    master_seed: u64,
    num_nodes: usize,
    ranges: &ParamRanges,
) -> Result<NodeParams, StochasticError> {
    ranges.validate()?;
    let mut lambda = Vec::with_capacity(num_nodes);
    let mut base_rate = Vec::with_capacity(num_nodes);
    for node in 0..num_nodes {
        let mut ls = RngStream::new(master_seed, StreamKey::new(node, 0, Purpose::LambdaDraw, 0));
        lambda.push(sample_uniform(&mut ls, ranges.lambda_min, ranges.lambda_max)?);
        let mut ms = RngStream::new(master_seed, StreamKey::new(node, 0, Purpose::RateDraw, 0));
        base_rate.push(sample_uniform(&mut ms, ranges.m_min, ranges.m_max)?);
    }
    Ok(NodeParams { lambda, base_rate })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(seed: u64, node: usize, purpose: Purpose) -> RngStream {
        RngStream::new(seed, StreamKey::new(node, 0, purpose, 0))
    }

    #[test]
    fn streams_are_deterministic() {
        let key = StreamKey::new(17, 3, Purpose::Departure, 942);
        let mut a = RngStream::new(0xDEAD_BEEF, key);
        let mut b = RngStream::new(0xDEAD_BEEF, key);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_keys_differ() {
        let mut a = stream(1, 0, Purpose::Arrival);
        let mut b = stream(1, 1, Purpose::Arrival);
        let mut c = stream(1, 0, Purpose::Departure);
        let first: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        assert_ne!(first, (0..4).map(|_| b.next_u64()).collect::<Vec<_>>());
        assert_ne!(first, (0..4).map(|_| c.next_u64()).collect::<Vec<_>>());
    }

    #[test]
    fn stream_independence_proxy() {
        // Correlation between standardized Poisson draws from two streams.
        let n = 100_000;
        let mean = 1.0;
        let mut a = stream(99, 0, Purpose::Arrival);
        let mut b = stream(99, 1, Purpose::Arrival);
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = sample_poisson(&mut a, mean).unwrap() as f64;
            let y = sample_poisson(&mut b, mean).unwrap() as f64;
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
        let nf = n as f64;
        let cov = sxy / nf - (sx / nf) * (sy / nf);
        let vx = sxx / nf - (sx / nf) * (sx / nf);
        let vy = syy / nf - (sy / nf) * (sy / nf);
        let rho = cov / (vx * vy).sqrt();
        assert!(rho.abs() < 0.01, "streams correlate: rho = {rho}");
    }

    #[test]
    fn poisson_zero_mean_is_zero() {
        let mut s = stream(5, 0, Purpose::Arrival);
        for _ in 0..1000 {
            assert_eq!(sample_poisson(&mut s, 0.0).unwrap(), 0);
        }
    }

    #[test]
    fn poisson_rejects_bad_means() {
        let mut s = stream(5, 0, Purpose::Arrival);
        assert!(sample_poisson(&mut s, -1.0).is_err());
        assert!(sample_poisson(&mut s, f64::NAN).is_err());
        assert!(sample_poisson(&mut s, f64::INFINITY).is_err());
    }

    fn poisson_moments(mean: f64, n: usize) -> (f64, f64) {
        let mut s = stream(7, (mean * 1000.0) as usize, Purpose::Arrival);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let x = sample_poisson(&mut s, mean).unwrap() as f64;
            sum += x;
            sumsq += x * x;
        }
        let m = sum / n as f64;
        (m, sumsq / n as f64 - m * m)
    }

    #[test]
    fn poisson_mean_small() {
        // Sample mean of Poisson(0.3) within 4 standard errors.
        let n = 1_000_000;
        let (m, _) = poisson_moments(0.3, n);
        let se = (0.3f64 / n as f64).sqrt();
        assert!((m - 0.3).abs() < 4.0 * se, "mean {m} vs 0.3 +- {}", 4.0 * se);
    }

    #[test]
    fn poisson_variance_matches_mean() {
        let n = 1_000_000;
        let (_, v) = poisson_moments(5.0, n);
        assert!((v - 5.0).abs() < 0.05 * 5.0, "variance {v} vs 5.0 +- 5%");
    }

    #[test]
    fn poisson_rejection_branch_moments() {
        // Means 10 and 50 go through PTRS; check both first moments.
        for mean in [10.0, 50.0] {
            let n = 1_000_000;
            let (m, v) = poisson_moments(mean, n);
            let se_mean = (mean / n as f64).sqrt();
            assert!((m - mean).abs() < 4.0 * se_mean, "mean {m} vs {mean}");
            // Var(sample variance) ~ (2*mean^2 + mean)/n for Poisson.
            let se_var = ((2.0 * mean * mean + mean) / n as f64).sqrt();
            assert!((v - mean).abs() < 4.0 * se_var, "variance {v} vs {mean}");
        }
    }

    #[test]
    fn ln_gamma_reference_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-12);
        assert!((ln_gamma(2.0)).abs() < 1e-12);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(11.0) - 3_628_800f64.ln()).abs() < 1e-11);
        let half = 0.572_364_942_924_700_1;
        assert!((ln_gamma(0.5) - half).abs() < 1e-12);
    }

    #[test]
    fn uniform_degenerate_interval() {
        let mut s = stream(3, 0, Purpose::LambdaDraw);
        assert_eq!(sample_uniform(&mut s, 2.0, 2.0).unwrap(), 2.0);
    }

    #[test]
    fn uniform_rejects_inverted_bounds() {
        let mut s = stream(3, 0, Purpose::LambdaDraw);
        assert!(sample_uniform(&mut s, 1.0, 0.5).is_err());
    }

    #[test]
    fn uniform_mean_and_support() {
        let n = 1_000_000;
        let mut s = stream(11, 0, Purpose::LambdaDraw);
        let mut sum = 0.0;
        for _ in 0..n {
            let x = sample_uniform(&mut s, 0.1, 0.5).unwrap();
            assert!((0.1..0.5).contains(&x));
            sum += x;
        }
        let m = sum / n as f64;
        assert!((m - 0.3).abs() < 0.002, "uniform mean {m}");

        let mut s = stream(12, 0, Purpose::RateDraw);
        for _ in 0..n {
            let x = sample_uniform(&mut s, 1.0, 5.0).unwrap();
            assert!((1.0..5.0).contains(&x));
        }
    }

    #[test]
    fn node_params_respect_ranges() {
        let ranges = ParamRanges::new(0.1, 0.5, 1.0, 5.0).unwrap();
        let p = draw_node_params(424_242, 100, &ranges).unwrap();
        assert_eq!(p.len(), 100);
        for i in 0..100 {
            assert!((0.1..0.5).contains(&p.lambda[i]));
            assert!((1.0..5.0).contains(&p.base_rate[i]));
        }
    }

    #[test]
    fn node_params_degenerate_ranges() {
        let ranges = ParamRanges::new(0.3, 0.3, 2.0, 2.0).unwrap();
        let p = draw_node_params(1, 1, &ranges).unwrap();
        assert_eq!(p.lambda, vec![0.3]);
        assert_eq!(p.base_rate, vec![2.0]);
    }

    #[test]
    fn node_params_deterministic() {
        let ranges = ParamRanges::new(0.1, 0.5, 1.0, 5.0).unwrap();
        let a = draw_node_params(777, 50, &ranges).unwrap();
        let b = draw_node_params(777, 50, &ranges).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ranges_reject_bad_values() {
        assert!(ParamRanges::new(-0.1, 0.5, 1.0, 5.0).is_err());
        assert!(ParamRanges::new(0.5, 0.1, 1.0, 5.0).is_err());
        assert!(ParamRanges::new(0.1, 0.5, 5.0, 1.0).is_err());
        assert!(ParamRanges::new(0.1, 0.5, 1.0, f64::INFINITY).is_err());
    }
}

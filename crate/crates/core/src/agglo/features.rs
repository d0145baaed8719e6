//! Mergeable boundary statistics and the fixed-length feature vector built
//! from them.

use std::ops::{Add, AddAssign};

pub const HISTOGRAM_BINS: usize = 10;
/// Features contributed by each affinity channel.
pub const CHANNEL_FEATURES: usize = 6 + HISTOGRAM_BINS;
/// Total feature vector length.
pub const FEATURE_LEN: usize = 3 * CHANNEL_FEATURES + 3;

/// Variance below which skewness and kurtosis are reported as 0.
const FLAT_VARIANCE: f64 = 1e-12;

/// Fixed-point scale of the power sums. Each term `a^k` with `a` in
/// `[0, 1]` is truncated to a multiple of 2^-96 and summed as an integer, so
/// sums do not depend on the order edges arrive in and combining is exact.
/// Room for 2^32 edges per accumulator.
const SUM_SCALE: f64 = 79228162514264337593543950336.0; // 2^96

/// Power sums, extrema and a 10-bin histogram over `[0, 1]` for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub count: u64,
    /// Sums of `a`, `a^2`, `a^3`, `a^4` in units of 2^-96.
    pub sums: [u128; 4],
    pub min: f32,
    pub max: f32,
    pub histogram: [u64; HISTOGRAM_BINS],
}

impl Default for ChannelStats {
    fn default() -> Self {
        Self {
            count: 0,
            sums: [0; 4],
            min: f32::INFINITY,
            max: f32::NEG_INFINITY,
            histogram: [0; HISTOGRAM_BINS],
        }
    }
}

pub fn histogram_bin(a: f32) -> usize {
    ((f64::from(a) * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

impl ChannelStats {
    pub fn push(&mut self, a: f32) {
        debug_assert!((0.0..=1.0).contains(&a));
        let x = f64::from(a);
        let x2 = x * x;
        for (s, term) in self.sums.iter_mut().zip([x, x2, x2 * x, x2 * x2]) {
            *s += (term * SUM_SCALE) as u128;
        }
        self.count += 1;
        self.min = self.min.min(a);
        self.max = self.max.max(a);
        self.histogram[histogram_bin(a)] += 1;
    }

    /// Sum of `a^k` for `k` in 1..=4.
    pub fn power_sum(&self, k: usize) -> f64 {
        self.sums[k - 1] as f64 / SUM_SCALE
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.power_sum(1) / self.count as f64
        }
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let n = self.count as f64;
        let mean = self.power_sum(1) / n;
        (self.power_sum(2) / n - mean * mean).max(0.0)
    }

    pub fn skewness(&self) -> f64 {
        let var = self.variance();
        if var < FLAT_VARIANCE {
            return 0.0;
        }
        let n = self.count as f64;
        let (m, e2, e3) = (self.power_sum(1) / n, self.power_sum(2) / n, self.power_sum(3) / n);
        let central3 = e3 - 3.0 * m * e2 + 2.0 * m * m * m;
        central3 / var.powf(1.5)
    }

    /// Excess kurtosis.
    pub fn kurtosis(&self) -> f64 {
        let var = self.variance();
        if var < FLAT_VARIANCE {
            return 0.0;
        }
        let n = self.count as f64;
        let [m, e2, e3, e4] = [1, 2, 3, 4].map(|k| self.power_sum(k) / n);
        let central4 = e4 - 4.0 * m * e3 + 6.0 * m * m * e2 - 3.0 * m.powi(4);
        central4 / (var * var) - 3.0
    }

    fn write_features(&self, out: &mut [f64]) {
        if self.count == 0 {
            out.fill(0.0);
            return;
        }
        out[0] = self.mean();
        out[1] = self.variance();
        out[2] = self.skewness();
        out[3] = self.kurtosis();
        out[4] = f64::from(self.min);
        out[5] = f64::from(self.max);
        let n = self.count as f64;
        for (o, &h) in out[6..].iter_mut().zip(&self.histogram) {
            *o = h as f64 / n;
        }
    }
}

impl AddAssign<&ChannelStats> for ChannelStats {
    fn add_assign(&mut self, other: &ChannelStats) {
        self.count += other.count;
        for (s, o) in self.sums.iter_mut().zip(other.sums) {
            *s += o;
        }
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        for (h, o) in self.histogram.iter_mut().zip(&other.histogram) {
            *h += o;
        }
    }
}

/// Statistics of the affinity edges making up a boundary (or a segment
/// interior), kept separately for the z, y and x channels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureAccumulator {
    pub channels: [ChannelStats; 3],
}

impl FeatureAccumulator {
    pub fn push(&mut self, channel: usize, a: f32) {
        self.channels[channel].push(a);
    }

    /// Number of affinity edges over all channels.
    pub fn count(&self) -> u64 {
        self.channels.iter().map(|c| c.count).sum()
    }

    /// Mean affinity over all channels.
    pub fn mean(&self) -> f64 {
        let n = self.count();
        if n == 0 {
            0.0
        } else {
            self.channels.iter().map(|c| c.sums[0]).sum::<u128>() as f64 / SUM_SCALE / n as f64
        }
    }

    pub fn combine(&self, other: &FeatureAccumulator) -> FeatureAccumulator {
        let mut out = self.clone();
        out += other;
        out
    }

    /// Feature vector for a boundary between segments of the given sizes.
    pub fn features(&self, size_a: u64, size_b: u64) -> FeatureVector {
        let mut values = [0.0; FEATURE_LEN];
        for (c, stats) in self.channels.iter().enumerate() {
            stats.write_features(&mut values[c * CHANNEL_FEATURES..(c + 1) * CHANNEL_FEATURES]);
        }
        let tail = 3 * CHANNEL_FEATURES;
        values[tail] = (self.count().max(1) as f64).ln();
        values[tail + 1] = (size_a.min(size_b).max(1) as f64).ln();
        values[tail + 2] = (size_a.max(size_b).max(1) as f64).ln();
        FeatureVector(values)
    }
}

impl AddAssign<&FeatureAccumulator> for FeatureAccumulator {
    fn add_assign(&mut self, other: &FeatureAccumulator) {
        for (c, o) in self.channels.iter_mut().zip(&other.channels) {
            *c += o;
        }
    }
}

impl Add<&FeatureAccumulator> for &FeatureAccumulator {
    type Output = FeatureAccumulator;
    fn add(self, other: &FeatureAccumulator) -> FeatureAccumulator {
        self.combine(other)
    }
}

/// Per channel: mean, variance, skewness, excess kurtosis, min, max and ten
/// histogram fractions; then ln(boundary edges), ln(smaller size),
/// ln(larger size).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_LEN]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.0[c * CHANNEL_FEATURES..(c + 1) * CHANNEL_FEATURES]
    }

    pub fn histogram(&self, c: usize) -> &[f64] {
        &self.channel(c)[6..]
    }
}

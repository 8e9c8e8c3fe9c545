//! Welch PSD estimates, innovation whiteness test and ensemble statistics.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            // periodic Hann, the usual choice for spectral averaging
            Window::Hann => (0..len)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
                .collect(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
        }
    }
}

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
    pub segment_length: usize,
    pub overlap: f64,
    pub window: Window,
    /// Number of averaged segments.
    pub segments: usize,
}

impl PsdEstimate {
    pub fn resolution(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            0.0
        }
    }

    /// `∑ S·Δf`, the variance the estimate accounts for.
    pub fn integrated_power(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.resolution()
    }

    /// Value in the bin nearest to `f_hz`.
    pub fn at(&self, f_hz: f64) -> f64 {
        let df = self.resolution();
        let k = ((f_hz / df).round() as usize).min(self.values.len() - 1);
        self.values[k]
    }

    /// Largest value within `±half_width` Hz of `f_hz`.
    pub fn peak_near(&self, f_hz: f64, half_width: f64) -> f64 {
        self.freqs
            .iter()
            .zip(&self.values)
            .filter(|(f, _)| (**f - f_hz).abs() <= half_width)
            .map(|(_, v)| *v)
            .fold(0.0, f64::max)
    }

    /// Mean over `[lo, hi]` Hz.
    pub fn band_mean(&self, lo: f64, hi: f64) -> f64 {
        let sel: Vec<f64> = self
            .freqs
            .iter()
            .zip(&self.values)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(_, v)| *v)
            .collect();
        sel.iter().sum::<f64>() / sel.len().max(1) as f64
    }
}

/// Averaged windowed periodograms, normalized so that `∑ S·Δf` equals the
/// mean-square value of the signal.
pub fn welch_psd(signal: &[f64], f_s: f64, segment_length: usize, overlap: f64, window: Window) -> Result<PsdEstimate> {
    if signal.is_empty() {
        return Err(Error::invalid("psd.signal", "empty signal"));
    }
    if segment_length < 2 || segment_length > signal.len() {
        return Err(Error::invalid(
            "psd.segment_length",
            format!("must lie in 2..={}", signal.len()),
        ));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid("psd.overlap", "must lie in [0, 1)"));
    }
    if !(f_s > 0.0) {
        return Err(Error::invalid("psd.f_s", "must be > 0"));
    }
    let len = segment_length;
    let hop = ((len as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    let w = window.coefficients(len);
    let w_power: f64 = w.iter().map(|v| v * v).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(len);
    let bins = len / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    let mut segments = 0;
    let mut start = 0;
    while start + len <= signal.len() {
        for (b, (x, wi)) in buf.iter_mut().zip(signal[start..start + len].iter().zip(&w)) {
            *b = Complex::new(x * wi, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        segments += 1;
        start += hop;
    }
    let scale = 1.0 / (f_s * w_power * segments as f64);
    let values: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (len % 2 == 0 && k == len / 2) { 1.0 } else { 2.0 };
            a * scale * one_sided
        })
        .collect();
    let freqs = (0..bins).map(|k| k as f64 * f_s / len as f64).collect();
    Ok(PsdEstimate {
        freqs,
        values,
        segment_length: len,
        overlap,
        window,
        segments,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WhitenessConfig {
    pub max_lag: usize,
    /// Required share of lags inside `±3/√N`.
    pub lag_fraction: f64,
    pub band_hz: (f64, f64),
    pub flatness_db: f64,
    /// Longest Welch segment; halved (down to 256) on short records until
    /// `min_segments` segments are averaged.
    pub segment_length: usize,
    pub min_segments: usize,
    pub sample_rate: f64,
}

impl Default for WhitenessConfig {
    fn default() -> Self {
        Self {
            max_lag: 100,
            lag_fraction: 0.95,
            band_hz: (10e3, 130e3),
            flatness_db: 3.0,
            segment_length: 4096,
            min_segments: 128,
            sample_rate: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitenessReport {
    pub pass: bool,
    pub max_abs_autocorr: f64,
    /// Share of lags within the confidence band.
    pub fraction_within: f64,
    /// Largest deviation of the in-band PSD from its band mean [dB].
    pub flatness_db: f64,
    /// Welch segment length actually used.
    pub segment_length: usize,
}

/// Normalized autocorrelation at lags `1..=max_lag`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    (1..=max_lag)
        .map(|lag| {
            if lag >= n || c0 == 0.0 {
                return 0.0;
            }
            let c: f64 = (0..n - lag).map(|k| (x[k] - mean) * (x[k + lag] - mean)).sum();
            c / c0
        })
        .collect()
}

/// Autocorrelation and spectral-flatness test of an innovation sequence.
pub fn whiteness_test(innovations: &[f64], cfg: &WhitenessConfig) -> Result<WhitenessReport> {
    let n = innovations.len();
    if n < 10_000 {
        return Err(Error::invalid("whiteness", format!("need at least 10000 samples, got {n}")));
    }
    let rho = autocorrelation(innovations, cfg.max_lag);
    let limit = 3.0 / (n as f64).sqrt();
    let within = rho.iter().filter(|r| r.abs() <= limit).count();
    let fraction_within = within as f64 / rho.len().max(1) as f64;
    let max_abs_autocorr = rho.iter().map(|r| r.abs()).fold(0.0, f64::max);

    // the flatness bound is only meaningful once the bins are averaged
    let segments = |len: usize| (n - len) / (len / 2) + 1;
    let mut seg = cfg.segment_length.clamp(2, n);
    while seg / 2 >= 256 && segments(seg) < cfg.min_segments {
        seg /= 2;
    }
    let psd = welch_psd(innovations, cfg.sample_rate, seg, 0.5, Window::Hann)?;
    let (lo, hi) = cfg.band_hz;
    let mean = psd.band_mean(lo, hi);
    let flatness_db = psd
        .freqs
        .iter()
        .zip(&psd.values)
        .filter(|(f, _)| **f >= lo && **f <= hi)
        .map(|(_, v)| (10.0 * (v / mean).log10()).abs())
        .fold(0.0, f64::max);
    let pass = fraction_within >= cfg.lag_fraction && flatness_db <= cfg.flatness_db;
    Ok(WhitenessReport {
        pass,
        max_abs_autocorr,
        fraction_within,
        flatness_db,
        segment_length: seg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub magnitude: f64,
    pub mean: f64,
    /// Unbiased (n − 1) standard deviation.
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub groups: Vec<GroupStats>,
    pub slope: f64,
    pub intercept: f64,
}

/// Per-group mean and standard deviation plus the least-squares line of
/// estimate against applied value over all points.
///
/// `points` are `(applied, estimated)` pairs; groups are formed by equal
/// applied values, in order of first appearance.
pub fn ensemble_stats(points: &[(f64, f64)]) -> Result<EnsembleStats> {
    let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
    for &(a, e) in points {
        match groups.iter_mut().find(|(m, _)| *m == a) {
            Some((_, v)) => v.push(e),
            None => groups.push((a, vec![e])),
        }
    }
    if groups.len() < 2 {
        return Err(Error::invalid("ensemble", "regression needs at least two groups"));
    }
    let stats = groups
        .iter()
        .map(|(m, v)| {
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            GroupStats {
                magnitude: *m,
                mean,
                std,
                n,
            }
        })
        .collect();
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok(EnsembleStats {
        groups: stats,
        slope,
        intercept: my - slope * mx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn white(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn white_noise_level() {
        let sigma = 2.0;
        let f_s = 1000.0;
        let x = white(256 * 101, sigma, 1);
        let psd = welch_psd(&x, f_s, 512, 0.5, Window::Hann).unwrap();
        assert!(psd.segments >= 100);
        let level = psd.band_mean(10.0, 490.0);
        assert_relative_eq!(level, sigma * sigma / (f_s / 2.0), max_relative = 0.05);
    }

    #[test]
    fn sine_power_is_one_half() {
        let f_s = 1024.0;
        let f0 = 100.0;
        let x: Vec<f64> = (0..65536)
            .map(|k| (2.0 * std::f64::consts::PI * f0 * k as f64 / f_s).sin())
            .collect();
        let psd = welch_psd(&x, f_s, 1024, 0.5, Window::Hann).unwrap();
        let df = psd.resolution();
        let power: f64 = psd
            .freqs
            .iter()
            .zip(&psd.values)
            .filter(|(f, _)| (**f - f0).abs() <= 5.0 * df)
            .map(|(_, v)| v * df)
            .sum();
        assert_relative_eq!(power, 0.5, max_relative = 0.02);
    }

    #[test]
    fn zero_signal_zero_psd() {
        let psd = welch_psd(&[0.0; 64], 1.0, 16, 0.5, Window::Hann).unwrap();
        assert!(psd.values.iter().all(|v| *v == 0.0));
        assert!(welch_psd(&[], 1.0, 16, 0.5, Window::Hann).is_err());
    }

    #[test]
    fn iid_passes_ar1_fails() {
        let cfg = WhitenessConfig::default();
        let x = white(200_000, 1.0, 7);
        assert!(whiteness_test(&x, &cfg).unwrap().pass);
        let mut ar = x.clone();
        for k in 1..ar.len() {
            ar[k] += 0.9 * ar[k - 1];
        }
        let rep = whiteness_test(&ar, &cfg).unwrap();
        assert!(!rep.pass);
        assert_relative_eq!(rep.max_abs_autocorr, 0.9, epsilon = 0.01);
    }

    #[test]
    fn ensemble_basics() {
        let pts = [(1.0, 1.0), (1.0, 1.0), (2.0, 2.0), (2.0, 2.0)];
        let st = ensemble_stats(&pts).unwrap();
        assert_eq!(st.groups[0].std, 0.0);
        assert_relative_eq!(st.slope, 1.0, epsilon = 1e-15);
        assert_relative_eq!(st.intercept, 0.0, epsilon = 1e-15);
        assert!(ensemble_stats(&[(1.0, 1.0), (1.0, 2.0)]).is_err());
    }
}

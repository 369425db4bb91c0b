use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_WINDOW: usize = 8;
pub const DEFAULT_WINDOW: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detrend {
    #[default]
    None,
    /// Subtract each segment's mean before windowing.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WelchOptions {
    /// Segment length; `None` means `min(256, len)`.
    pub window_len: Option<usize>,
    /// Samples shared by consecutive segments; `None` means half a segment.
    pub overlap: Option<usize>,
    pub detrend: Detrend,
}

/// One-sided power spectral density in cycles per iteration (unit sampling rate).
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub frequencies: Vec<f64>,
    pub density: Vec<f64>,
    pub window_len: usize,
    pub segments: usize,
    /// The requested window was longer than the series and was shrunk to fit.
    pub window_shrunk: bool,
}

impl Psd {
    pub fn bin_width(&self) -> f64 {
        1.0 / self.window_len as f64
    }

    /// `Σ PSD·Δf`, the estimated mean power.
    pub fn total_power(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width()
    }

    pub fn peak_bin(&self) -> usize {
        self.density
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0
    }

    /// Power at frequencies above `cutoff` over power at all nonzero frequencies.
    /// Zero when there is no power away from DC.
    pub fn high_frequency_ratio(&self, cutoff: f64) -> f64 {
        let mut high = 0.0;
        let mut total = 0.0;
        for (&f, &p) in self.frequencies.iter().zip(&self.density).skip(1) {
            total += p;
            if f > cutoff {
                high += p;
            }
        }
        if total > 0.0 { high / total } else { 0.0 }
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Welch's averaged modified periodogram with a Hann window.
pub fn welch_psd(signal: &[f64], opts: &WelchOptions) -> Result<Psd> {
    if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
        return Err(Error::numerical("welch input", Some(i)));
    }
    let requested = opts.window_len.unwrap_or(DEFAULT_WINDOW.min(signal.len()));
    if requested < MIN_WINDOW {
        return Err(Error::usage(format!("window length must be >= {MIN_WINDOW}, got {requested}")));
    }
    let window_shrunk = requested > signal.len();
    let nperseg = requested.min(signal.len());
    if nperseg < MIN_WINDOW {
        return Err(Error::usage(format!(
            "series of length {} is shorter than the minimum window {MIN_WINDOW}",
            signal.len()
        )));
    }
    let overlap = opts.overlap.unwrap_or(nperseg / 2);
    if overlap >= nperseg {
        return Err(Error::usage("overlap must be smaller than the window"));
    }
    let step = nperseg - overlap;
    let segments = (signal.len() - nperseg) / step + 1;

    let window = hann(nperseg);
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nperseg);
    let bins = nperseg / 2 + 1;
    let mut density = vec![0.0; bins];
    let mut buffer = vec![Complex::new(0.0, 0.0); nperseg];
    for s in 0..segments {
        let seg = &signal[s * step..s * step + nperseg];
        let mean = match opts.detrend {
            Detrend::None => 0.0,
            Detrend::Constant => seg.iter().sum::<f64>() / nperseg as f64,
        };
        for ((b, &x), &w) in buffer.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buffer);
        for (d, z) in density.iter_mut().zip(&buffer) {
            *d += z.norm_sqr();
        }
    }
    let norm = 1.0 / (window_power * segments as f64);
    for (i, d) in density.iter_mut().enumerate() {
        let nyquist = nperseg.is_multiple_of(2) && i == bins - 1;
        *d *= if i == 0 || nyquist { norm } else { 2.0 * norm };
    }
    Ok(Psd {
        frequencies: (0..bins).map(|i| i as f64 / nperseg as f64).collect(),
        density,
        window_len: nperseg,
        segments,
        window_shrunk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn sine(freq: f64, amp: f64, len: usize) -> Vec<f64> {
        (0..len).map(|k| amp * (2.0 * PI * freq * k as f64).sin()).collect()
    }

    fn variance(x: &[f64]) -> f64 {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64
    }

    /// Plain DFT periodogram, used as the oracle for single-segment estimates.
    fn dft_power(x: &[f64], bin: usize) -> f64 {
        let n = x.len() as f64;
        let w = hann(x.len());
        let (mut re, mut im) = (0.0, 0.0);
        for (k, (v, wk)) in x.iter().zip(&w).enumerate() {
            let angle = -2.0 * PI * bin as f64 * k as f64 / n;
            re += v * wk * angle.cos();
            im += v * wk * angle.sin();
        }
        re * re + im * im
    }

    #[test]
    fn constant_signal_is_dc_only() {
        let psd = welch_psd(&vec![3.0; 512], &WelchOptions::default()).unwrap();
        let total: f64 = psd.density.iter().sum();
        let off_dc: f64 = psd.density.iter().skip(1).sum();
        // Hann leaks DC into the first bin only.
        assert!(psd.density[2..].iter().all(|&p| p <= 1e-20 * total));
        assert!(off_dc < total);
        assert_eq!(psd.peak_bin(), 0);
    }

    #[test]
    fn sinusoid_peak_is_exact() {
        let x = sine(0.25, 1.0, 256);
        let psd = welch_psd(&x, &WelchOptions::default()).unwrap();
        assert_eq!(psd.window_len, 256);
        assert_eq!(psd.segments, 1);
        assert_eq!(psd.frequencies[psd.peak_bin()], 0.25);
        let oracle = 2.0 * dft_power(&x, 64) / hann(256).iter().map(|w| w * w).sum::<f64>();
        assert!((psd.density[64] - oracle).abs() <= 1e-10 * oracle);
    }

    #[test]
    fn two_tone_power_ratio() {
        let x: Vec<f64> = sine(0.1, 2.0, 2048)
            .iter()
            .zip(sine(0.4, 1.0, 2048))
            .map(|(a, b)| a + b)
            .collect();
        let psd = welch_psd(&x, &WelchOptions::default()).unwrap();
        let band = |f: f64| -> f64 {
            let centre = (f * psd.window_len as f64).round() as usize;
            psd.density[centre - 3..=centre + 3].iter().sum()
        };
        let ratio = band(0.1) / band(0.4);
        assert!((ratio - 4.0).abs() <= 0.8, "ratio {ratio}");
    }

    #[test]
    fn parseval_on_stationary_signals() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let normal = Normal::new(0.0, 1.5).unwrap();
        let noise: Vec<f64> = (0..4096).map(|_| normal.sample(&mut rng)).collect();
        let mut ar = vec![0.0; 4096];
        for k in 1..ar.len() {
            ar[k] = 0.8 * ar[k - 1] + normal.sample(&mut rng);
        }
        let signals = [sine(0.13, 1.0, 2048), sine(0.31, 3.0, 1024), noise, ar];
        for x in &signals {
            let psd = welch_psd(x, &WelchOptions::default()).unwrap();
            let rel = (psd.total_power() - variance(x)).abs() / variance(x);
            assert!(rel < 0.1, "rel {rel}");
        }
    }

    #[test]
    fn short_series_shrinks_window() {
        let x = sine(0.25, 1.0, 40);
        let psd = welch_psd(
            &x,
            &WelchOptions {
                window_len: Some(64),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(psd.window_shrunk);
        assert_eq!(psd.window_len, 40);
        assert!(welch_psd(&x[..5], &WelchOptions::default()).is_err());
        let bad = WelchOptions {
            window_len: Some(16),
            overlap: Some(16),
            ..Default::default()
        };
        assert!(welch_psd(&x, &bad).is_err());
    }

    #[test]
    fn constant_detrend_removes_offset() {
        let x: Vec<f64> = sine(0.25, 1.0, 256).iter().map(|v| v + 10.0).collect();
        let opts = WelchOptions {
            detrend: Detrend::Constant,
            ..Default::default()
        };
        let psd = welch_psd(&x, &opts).unwrap();
        assert!(psd.density[0] < 1e-20);
        assert_eq!(psd.peak_bin(), 64);
    }

    #[test]
    fn high_frequency_ratio_bounds() {
        let slow = welch_psd(&sine(0.02, 1.0, 512), &WelchOptions::default()).unwrap();
        assert!(slow.high_frequency_ratio(0.1) < 0.01);
        let alternating: Vec<f64> = (0..512).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let fast = welch_psd(&alternating, &WelchOptions::default()).unwrap();
        assert!(fast.high_frequency_ratio(0.1) > 0.99);
        let flat = welch_psd(&[0.0; 64], &WelchOptions::default()).unwrap();
        assert_eq!(flat.high_frequency_ratio(0.1), 0.0);
    }
}

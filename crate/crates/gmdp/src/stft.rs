//! Forward and inverse short-time Fourier transform for real multichannel
//! audio, with one-sided spectra and weighted overlap-add synthesis.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex64;
use realfft::RealFftPlanner;
use thiserror::Error;

use crate::types::{CoreError, Spectrogram, TensorSpectrogram};

#[derive(Debug, Error)]
pub enum StftError {
    #[error("invalid STFT config: {0}")]
    InvalidConfig(String),
    #[error("signal too short: {len} samples, need at least {window_length}")]
    SignalTooShort { len: usize, window_length: usize },
    #[error("channel {channel} sample {index} is not finite")]
    NonFiniteInput { channel: usize, index: usize },
    #[error("channels have differing lengths")]
    ChannelLengthMismatch,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no channels provided")]
    NoChannels,
    #[error("fft backend: {0}")]
    Fft(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Analysis/synthesis window pair. The same function is used on both sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Square-root of the periodic Hann window; the pair multiplies to Hann.
    SqrtHann,
    /// Periodic Hann on both sides (needs at least 4x overlap).
    Hann,
    Rectangular,
}

impl Window {
    fn samples(&self, len: usize) -> Vec<f64> {
        let hann = |i: usize| {
            0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos()
        };
        match self {
            Window::SqrtHann => (0..len).map(|i| hann(i).sqrt()).collect(),
            Window::Hann => (0..len).map(hann).collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }
}

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sqrt-hann" | "sqrt_hann" | "sqrthann" => Ok(Window::SqrtHann),
            "hann" => Ok(Window::Hann),
            "rect" | "rectangular" => Ok(Window::Rectangular),
            other => Err(format!("unknown window '{other}' (expected sqrt-hann, hann, rect)")),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Window::SqrtHann => "sqrt-hann",
            Window::Hann => "hann",
            Window::Rectangular => "rect",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    window_length: usize,
    hop: usize,
    window: Window,
    sample_rate: u32,
}

impl StftConfig {
    /// Validates the geometry and the constant-overlap-add condition of the
    /// window pair at the requested hop.
    pub fn new(
        window_length: usize,
        hop: usize,
        window: Window,
        sample_rate: u32,
    ) -> Result<Self, StftError> {
        if window_length < 2 || window_length % 2 != 0 {
            return Err(StftError::InvalidConfig(format!(
                "window_length must be even and at least 2, got {window_length}"
            )));
        }
        if hop == 0 || window_length % hop != 0 {
            return Err(StftError::InvalidConfig(format!(
                "hop must divide window_length, got hop={hop}, window_length={window_length}"
            )));
        }
        if sample_rate == 0 {
            return Err(StftError::InvalidConfig("sample_rate must be positive".into()));
        }
        let cfg = StftConfig { window_length, hop, window, sample_rate };
        cfg.check_overlap_add()?;
        Ok(cfg)
    }

    /// 2048-sample square-root Hann frames with 512 hop at 16 kHz.
    pub fn default_16k() -> Self {
        StftConfig::new(2048, 512, Window::SqrtHann, 16_000).expect("default config is valid")
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Bins of the one-sided spectrum: window_length / 2 + 1.
    pub fn num_bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    /// Frames needed to cover `len` samples (tail zero-padded).
    pub fn num_frames(&self, len: usize) -> Result<usize, StftError> {
        if len < self.window_length {
            return Err(StftError::SignalTooShort { len, window_length: self.window_length });
        }
        Ok((len - self.window_length).div_ceil(self.hop) + 1)
    }

    fn analysis_window(&self) -> Vec<f64> {
        self.window.samples(self.window_length)
    }

    fn synthesis_window(&self) -> Vec<f64> {
        self.window.samples(self.window_length)
    }

    /// The tiled overlap-add of the analysis*synthesis product must be a
    /// positive constant for perfect reconstruction on interior samples.
    fn check_overlap_add(&self) -> Result<(), StftError> {
        let analysis = self.analysis_window();
        let synthesis = self.synthesis_window();
        let product: Vec<f64> =
            analysis.iter().zip(&synthesis).map(|(a, s)| a * s).collect();
        let mut residues = vec![0.0f64; self.hop];
        for (i, p) in product.iter().enumerate() {
            residues[i % self.hop] += p;
        }
        let mean = residues.iter().sum::<f64>() / self.hop as f64;
        let max_dev = residues.iter().map(|r| (r - mean).abs()).fold(0.0f64, f64::max);
        if mean <= 1e-12 || max_dev > 1e-10 * mean {
            return Err(StftError::InvalidConfig(format!(
                "window pair '{}' does not satisfy constant overlap-add at hop {}",
                self.window, self.hop
            )));
        }
        Ok(())
    }
}

/// Forward STFT of a real multichannel signal. All channels must share one
/// length of at least `window_length` finite samples.
pub fn forward(signal: &[Vec<f64>], cfg: &StftConfig) -> Result<TensorSpectrogram, StftError> {
    if signal.is_empty() {
        return Err(StftError::NoChannels);
    }
    let len = signal[0].len();
    if signal.iter().any(|ch| ch.len() != len) {
        return Err(StftError::ChannelLengthMismatch);
    }
    for (channel, ch) in signal.iter().enumerate() {
        if let Some(index) = ch.iter().position(|s| !s.is_finite()) {
            return Err(StftError::NonFiniteInput { channel, index });
        }
    }
    let n_frames = cfg.num_frames(len)?;
    let window_length = cfg.window_length();
    let n_bins = cfg.num_bins();
    let window = cfg.analysis_window();

    let mut planner = RealFftPlanner::<f64>::new();
    let r2c = planner.plan_fft_forward(window_length);
    let mut frame = r2c.make_input_vec();
    let mut spectrum = r2c.make_output_vec();

    let mut channels = Vec::with_capacity(signal.len());
    for ch in signal {
        let mut data = Array2::zeros((n_bins, n_frames));
        for m in 0..n_frames {
            let start = m * cfg.hop();
            for (i, slot) in frame.iter_mut().enumerate() {
                let sample = if start + i < len { ch[start + i] } else { 0.0 };
                *slot = sample * window[i];
            }
            r2c.process(&mut frame, &mut spectrum)
                .map_err(|e| StftError::Fft(e.to_string()))?;
            for (f, value) in spectrum.iter().enumerate() {
                data[[f, m]] = *value;
            }
        }
        channels.push(Spectrogram::new(data)?);
    }
    Ok(TensorSpectrogram::new(channels)?)
}

/// Inverse STFT by weighted overlap-add. Reconstruction is exact (up to FFT
/// rounding) wherever the window-product tiling is nonzero; samples with no
/// window coverage come back as zero.
///
/// The DC and Nyquist bins are treated as real; any imaginary component left
/// there by spectral processing is discarded.
pub fn inverse(
    spec: &TensorSpectrogram,
    cfg: &StftConfig,
    out_length: usize,
) -> Result<Vec<Vec<f64>>, StftError> {
    let n_bins = cfg.num_bins();
    if spec.num_freqs() != n_bins {
        return Err(StftError::ShapeMismatch(format!(
            "spectrogram has {} bins, config expects {}",
            spec.num_freqs(),
            n_bins
        )));
    }
    let n_frames = spec.num_frames();
    let window_length = cfg.window_length();
    let hop = cfg.hop();
    let covered = (n_frames - 1) * hop + window_length;
    if out_length > covered {
        return Err(StftError::ShapeMismatch(format!(
            "out_length {out_length} exceeds covered length {covered}"
        )));
    }

    let synthesis = cfg.synthesis_window();
    let analysis = cfg.analysis_window();
    let mut den = vec![0.0f64; covered];
    for m in 0..n_frames {
        let start = m * hop;
        for i in 0..window_length {
            den[start + i] += analysis[i] * synthesis[i];
        }
    }
    let den_max = den.iter().cloned().fold(0.0f64, f64::max);
    let den_floor = den_max * 1e-14;

    let mut planner = RealFftPlanner::<f64>::new();
    let c2r = planner.plan_fft_inverse(window_length);
    let mut spectrum = c2r.make_input_vec();
    let mut frame = c2r.make_output_vec();
    let scale = 1.0 / window_length as f64;

    let mut out = Vec::with_capacity(spec.num_channels());
    for ch in spec.channels() {
        let data = ch.data();
        let mut num = vec![0.0f64; covered];
        for m in 0..n_frames {
            for f in 0..n_bins {
                spectrum[f] = data[[f, m]];
            }
            spectrum[0] = Complex64::new(spectrum[0].re, 0.0);
            spectrum[n_bins - 1] = Complex64::new(spectrum[n_bins - 1].re, 0.0);
            c2r.process(&mut spectrum, &mut frame)
                .map_err(|e| StftError::Fft(e.to_string()))?;
            let start = m * hop;
            for i in 0..window_length {
                num[start + i] += frame[i] * scale * synthesis[i];
            }
        }
        let mut samples = vec![0.0f64; out_length];
        for (t, s) in samples.iter_mut().enumerate() {
            if den[t] > den_floor {
                *s = num[t] / den[t];
            }
        }
        out.push(samples);
    }
    Ok(out)
}

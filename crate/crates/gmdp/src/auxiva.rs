//! Determined blind source separation via auxiliary-function independent
//! vector analysis with the spherical Laplace contrast and iterative
//! projection updates.
//!
//! Output scaling is left untouched here; resolving the per-frequency scale
//! ambiguity is the scaling module's job.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::Lu;
use crate::types::{CoreError, DemixingSet, Spectrogram, TensorSpectrogram};

#[derive(Debug, Error)]
pub enum AuxIvaError {
    #[error("invalid AuxIVA config: {0}")]
    InvalidConfig(String),
    #[error("determined separation needs at least 2 channels, got {0}")]
    TooFewChannels(usize),
    #[error("weighted covariance is numerically singular at frequency {f}")]
    SingularCovariance { f: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxIvaConfig {
    n_iters: usize,
    weight_floor: f64,
}

impl AuxIvaConfig {
    pub fn new(n_iters: usize, weight_floor: f64) -> Result<Self, AuxIvaError> {
        if n_iters == 0 {
            return Err(AuxIvaError::InvalidConfig("n_iters must be at least 1".into()));
        }
        if !(weight_floor > 0.0) {
            return Err(AuxIvaError::InvalidConfig("weight_floor must be positive".into()));
        }
        Ok(AuxIvaConfig { n_iters, weight_floor })
    }

    pub fn n_iters(&self) -> usize {
        self.n_iters
    }

    pub fn weight_floor(&self) -> f64 {
        self.weight_floor
    }
}

impl Default for AuxIvaConfig {
    fn default() -> Self {
        AuxIvaConfig { n_iters: 50, weight_floor: 1e-10 }
    }
}

/// Per-frequency channel-major views of a tensor spectrogram: `K x N` per bin.
fn to_freq_major(mix: &TensorSpectrogram) -> Vec<Array2<Complex64>> {
    let (n_ch, n_freq, n_frames) =
        (mix.num_channels(), mix.num_freqs(), mix.num_frames());
    let mut slabs = Vec::with_capacity(n_freq);
    for f in 0..n_freq {
        let mut slab = Array2::zeros((n_ch, n_frames));
        for (ch, spec) in mix.channels().iter().enumerate() {
            let data = spec.data();
            for n in 0..n_frames {
                slab[[ch, n]] = data[[f, n]];
            }
        }
        slabs.push(slab);
    }
    slabs
}

fn to_channel_major(
    slabs: Vec<Array2<Complex64>>,
    n_ch: usize,
) -> Result<TensorSpectrogram, CoreError> {
    let n_freq = slabs.len();
    let n_frames = slabs[0].ncols();
    let mut channels = Vec::with_capacity(n_ch);
    for ch in 0..n_ch {
        let mut data = Array2::zeros((n_freq, n_frames));
        for (f, slab) in slabs.iter().enumerate() {
            for n in 0..n_frames {
                data[[f, n]] = slab[[ch, n]];
            }
        }
        channels.push(Spectrogram::new(data)?);
    }
    TensorSpectrogram::new(channels)
}

/// Cross-frequency l2 norm of source `k` per frame.
fn frame_norms(slabs: &[Array2<Complex64>], k: usize, n_frames: usize) -> Vec<f64> {
    let mut acc = vec![0.0f64; n_frames];
    for slab in slabs {
        for (n, a) in acc.iter_mut().enumerate() {
            *a += slab[[k, n]].norm_sqr();
        }
    }
    acc.iter().map(|a| a.sqrt()).collect()
}

/// One iterative-projection update of source `k` at a single frequency:
/// weighted covariance, rank-1 solve, normalization, and refresh of the
/// separated row.
fn update_source_row(
    f: usize,
    w: &mut Array2<Complex64>,
    y: &mut Array2<Complex64>,
    x: &Array2<Complex64>,
    weights: &[f64],
    k: usize,
) -> Result<(), AuxIvaError> {
    let dim = w.nrows();
    let n_frames = x.ncols();

    let mut cov = Array2::<Complex64>::zeros((dim, dim));
    for n in 0..n_frames {
        let wt = weights[n];
        for i in 0..dim {
            let xi = x[[i, n]] * wt;
            for j in 0..dim {
                cov[[i, j]] += xi * x[[j, n]].conj();
            }
        }
    }
    cov.mapv_inplace(|z| z / n_frames as f64);

    let system = w.dot(&cov);
    let mut rhs = Array1::zeros(dim);
    rhs[k] = Complex64::new(1.0, 0.0);
    let u = Lu::factor(&system)
        .solve(&rhs)
        .ok_or(AuxIvaError::SingularCovariance { f })?;

    let quad = {
        let vu = cov.dot(&u);
        u.iter().zip(vu.iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>()
    };
    if !(quad.is_finite() && quad > 0.0) {
        return Err(AuxIvaError::SingularCovariance { f });
    }
    let norm = quad.sqrt();

    for j in 0..dim {
        w[[k, j]] = u[j].conj() / norm;
    }
    for n in 0..n_frames {
        let mut value = Complex64::new(0.0, 0.0);
        for j in 0..dim {
            value += w[[k, j]] * x[[j, n]];
        }
        y[[k, n]] = value;
    }
    Ok(())
}

/// Separates a determined mixture (channel count == source count) and
/// returns the demixing matrices along with the separated sources
/// `y_fn = W_f x_fn`. Deterministic: identity initialization, fixed sweep
/// and reduction order.
pub fn separate(
    mix: &TensorSpectrogram,
    cfg: &AuxIvaConfig,
) -> Result<(DemixingSet, TensorSpectrogram), AuxIvaError> {
    let n_ch = mix.num_channels();
    if n_ch < 2 {
        return Err(AuxIvaError::TooFewChannels(n_ch));
    }
    separate_from(mix, cfg, &DemixingSet::identity(mix.num_freqs(), n_ch))
}

/// [`separate`] with a caller-supplied warm start for the demixing matrices.
pub fn separate_from(
    mix: &TensorSpectrogram,
    cfg: &AuxIvaConfig,
    init: &DemixingSet,
) -> Result<(DemixingSet, TensorSpectrogram), AuxIvaError> {
    let n_ch = mix.num_channels();
    if n_ch < 2 {
        return Err(AuxIvaError::TooFewChannels(n_ch));
    }
    if init.dim() != n_ch || init.num_freqs() != mix.num_freqs() {
        return Err(AuxIvaError::ShapeMismatch(format!(
            "initial demixing is {}x({}x{}), mixture needs {}x({}x{})",
            init.num_freqs(),
            init.dim(),
            init.dim(),
            mix.num_freqs(),
            n_ch,
            n_ch
        )));
    }
    let n_frames = mix.num_frames();
    let xs = to_freq_major(mix);
    let mut ws: Vec<Array2<Complex64>> = init.matrices().to_vec();
    let mut ys: Vec<Array2<Complex64>> =
        ws.iter().zip(&xs).map(|(w, x)| w.dot(x)).collect();

    for _ in 0..cfg.n_iters {
        for k in 0..n_ch {
            let norms = frame_norms(&ys, k, n_frames);
            let weights: Vec<f64> =
                norms.iter().map(|r| 1.0 / (2.0 * r.max(cfg.weight_floor))).collect();
            let results: Vec<Result<(), AuxIvaError>> = ws
                .par_iter_mut()
                .zip(ys.par_iter_mut())
                .zip(xs.par_iter())
                .enumerate()
                .map(|(f, ((w, y), x))| update_source_row(f, w, y, x, &weights, k))
                .collect();
            for result in results {
                result?;
            }
        }
    }

    let demixing = DemixingSet::new(ws)?;
    let separated = to_channel_major(ys, n_ch)?;
    Ok((demixing, separated))
}

/// Applies the demixing matrices: exact per-(f, n) matrix-vector product.
pub fn demix_apply(
    w: &DemixingSet,
    mix: &TensorSpectrogram,
) -> Result<TensorSpectrogram, AuxIvaError> {
    if w.dim() != mix.num_channels() {
        return Err(AuxIvaError::ShapeMismatch(format!(
            "demixing dim {} vs {} channels",
            w.dim(),
            mix.num_channels()
        )));
    }
    if w.num_freqs() != mix.num_freqs() {
        return Err(AuxIvaError::ShapeMismatch(format!(
            "demixing has {} frequencies, mixture has {}",
            w.num_freqs(),
            mix.num_freqs()
        )));
    }
    let (n_ch, n_freq, n_frames) =
        (mix.num_channels(), mix.num_freqs(), mix.num_frames());
    let mut out = vec![Array2::zeros((n_freq, n_frames)); n_ch];
    for f in 0..n_freq {
        let matrix = w.matrix(f);
        for n in 0..n_frames {
            for (i, target) in out.iter_mut().enumerate() {
                let mut value = Complex64::new(0.0, 0.0);
                for j in 0..n_ch {
                    value += matrix[[i, j]] * mix.channel(j).data()[[f, n]];
                }
                target[[f, n]] = value;
            }
        }
    }
    let channels = out
        .into_iter()
        .map(Spectrogram::new)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TensorSpectrogram::new(channels)?)
}

/// Negative log-likelihood of the spherical Laplace IVA model:
/// mean cross-frequency frame norms minus the log-determinant term. The
/// iterative projection updates never increase this value.
pub fn objective(w: &DemixingSet, mix: &TensorSpectrogram) -> Result<f64, AuxIvaError> {
    let separated = demix_apply(w, mix)?;
    let n_frames = separated.num_frames() as f64;
    let mut contrast = 0.0f64;
    for k in 0..separated.num_channels() {
        let data = separated.channel(k).data();
        for n in 0..separated.num_frames() {
            let mut acc = 0.0f64;
            for f in 0..separated.num_freqs() {
                acc += data[[f, n]].norm_sqr();
            }
            contrast += acc.sqrt();
        }
    }
    let mut log_det = 0.0f64;
    for f in 0..w.num_freqs() {
        log_det += Lu::factor(w.matrix(f)).det().norm().ln();
    }
    Ok(contrast / n_frames - 2.0 * log_det)
}

//! Source image estimation from separated sources: projection back, the
//! minimal distortion principle (MDP), and its mixed-norm generalization
//! (GMDP) solved by majorization-minimization as a reweighted least-squares
//! iteration.
//!
//! Every (mic, source) subproblem is independent: the scaling vector for
//! source `k` at mic `m` minimizes a norm of the residual spectrogram
//! `X_m - diag(z) Y_k`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{self, Lu};
use crate::types::{
    CoreError, DemixingSet, MixedNormParams, ScalingVector, Spectrogram, TensorSpectrogram,
    CONDITION_BOUND,
};

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("invalid mixed-norm exponent: p={p}, q={q} (both must be positive)")]
    InvalidExponent { p: f64, q: f64 },
    #[error(
        "demixing matrix at frequency {f} is numerically singular (condition estimate {cond:.3e})"
    )]
    SingularDemixing { f: usize, cond: f64 },
    #[error("reference mic {ref_mic} out of range for {mics} mics")]
    InvalidReferenceMic { ref_mic: usize, mics: usize },
    #[error("source index {index} out of range for {sources} sources")]
    InvalidSourceIndex { index: usize, sources: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Mixed l_{p,q} norm: frequency is the inner grouping dimension,
/// `(sum_n (sum_f |e_fn|^q)^{p/q})^{1/p}`.
///
/// Defined for any positive exponents, beyond the solver's `p <= q <= 2`
/// regime.
pub fn mixed_norm(e: &Spectrogram, p: f64, q: f64) -> Result<f64, ScalingError> {
    if !(p > 0.0) || !(q > 0.0) {
        return Err(ScalingError::InvalidExponent { p, q });
    }
    Ok(mixed_norm_pow(e.data(), p, q).powf(1.0 / p))
}

/// `x^e` with exact shortcuts for the exponents that dominate in practice.
#[inline]
fn fpow(x: f64, e: f64) -> f64 {
    if e == 1.0 {
        x
    } else if e == 0.0 {
        1.0
    } else if e == 0.5 {
        x.sqrt()
    } else if e == 2.0 {
        x * x
    } else {
        x.powf(e)
    }
}

/// `||E||_{p,q}^p`, the objective minimized by the GMDP solver.
fn mixed_norm_pow(data: &Array2<Complex64>, p: f64, q: f64) -> f64 {
    let mut total = 0.0f64;
    for n in 0..data.ncols() {
        let mut inner = 0.0f64;
        for f in 0..data.nrows() {
            inner += fpow(data[[f, n]].norm_sqr(), q / 2.0);
        }
        total += fpow(inner, p / q);
    }
    total
}

/// Majorizer weights for the reweighted least-squares step:
/// `w_fn = p / (2 (sum_f' g_f'n^q)^(1 - p/q) g_fn^(2 - q))` with
/// `g = max(|residual|, floor_abs)`. The floor keeps the weights finite as
/// residual entries approach zero; it must be positive.
pub fn irls_weights(residual: &Array2<Complex64>, p: f64, q: f64, floor_abs: f64) -> Array2<f64> {
    let (n_freq, n_frames) = residual.dim();
    let mut magnitudes = Array2::zeros((n_freq, n_frames));
    let mut weights = Array2::zeros((n_freq, n_frames));
    for n in 0..n_frames {
        let mut inner = 0.0f64;
        for f in 0..n_freq {
            let g = residual[[f, n]].norm().max(floor_abs);
            magnitudes[[f, n]] = g;
            inner += fpow(g, q);
        }
        let outer = fpow(inner, 1.0 - p / q);
        for f in 0..n_freq {
            weights[[f, n]] = p / (2.0 * outer * fpow(magnitudes[[f, n]], 2.0 - q));
        }
    }
    weights
}

/// Images plus the coefficients that produced them. `images[k]` holds the
/// M-channel source image tensor of source `k`; coefficients, iteration
/// counts and objective traces are indexed by `(source, mic)`.
#[derive(Debug, Clone)]
pub struct ScalingResult {
    images: Vec<TensorSpectrogram>,
    coefficients: Vec<Vec<ScalingVector>>,
    iterations: Vec<Vec<usize>>,
    objective_traces: Vec<Vec<Vec<f64>>>,
}

impl ScalingResult {
    pub fn num_sources(&self) -> usize {
        self.images.len()
    }

    pub fn num_mics(&self) -> usize {
        self.coefficients[0].len()
    }

    pub fn images(&self) -> &[TensorSpectrogram] {
        &self.images
    }

    pub fn image(&self, source: usize) -> &TensorSpectrogram {
        &self.images[source]
    }

    pub fn coefficient(&self, source: usize, mic: usize) -> &ScalingVector {
        &self.coefficients[source][mic]
    }

    /// Solver iterations for the `(source, mic)` subproblem; 1 for the
    /// closed-form back-ends.
    pub fn iterations(&self, source: usize, mic: usize) -> usize {
        self.iterations[source][mic]
    }

    /// Mixed-norm objective trace (p-th power), non-increasing for GMDP;
    /// empty for the closed-form back-ends.
    pub fn objective_trace(&self, source: usize, mic: usize) -> &[f64] {
        &self.objective_traces[source][mic]
    }
}

fn check_pair_shapes(
    x: &TensorSpectrogram,
    y: &TensorSpectrogram,
    source: usize,
) -> Result<(), ScalingError> {
    if source >= y.num_channels() {
        return Err(ScalingError::InvalidSourceIndex {
            index: source,
            sources: y.num_channels(),
        });
    }
    if x.num_freqs() != y.num_freqs() || x.num_frames() != y.num_frames() {
        return Err(ScalingError::ShapeMismatch(format!(
            "mic tensor is {}x{}, source tensor is {}x{}",
            x.num_freqs(),
            x.num_frames(),
            y.num_freqs(),
            y.num_frames()
        )));
    }
    Ok(())
}

/// Closed-form per-frequency least-squares coefficients of source `source`
/// against every mic: `z_mf = (sum_n x_mfn y*_fn) / (sum_n |y_fn|^2)`.
/// Frequencies where the source is identically zero get `z = 0`.
pub fn mdp(
    x: &TensorSpectrogram,
    y: &TensorSpectrogram,
    source: usize,
) -> Result<Vec<ScalingVector>, ScalingError> {
    check_pair_shapes(x, y, source)?;
    let y_data = y.channel(source).data();
    let (n_freq, n_frames) = y_data.dim();
    let mut denominators = vec![0.0f64; n_freq];
    for f in 0..n_freq {
        for n in 0..n_frames {
            denominators[f] += y_data[[f, n]].norm_sqr();
        }
    }
    let mut out = Vec::with_capacity(x.num_channels());
    for m in 0..x.num_channels() {
        let x_data = x.channel(m).data();
        let mut z = Array1::zeros(n_freq);
        for f in 0..n_freq {
            if denominators[f] == 0.0 {
                continue;
            }
            let mut num = Complex64::new(0.0, 0.0);
            for n in 0..n_frames {
                num += x_data[[f, n]] * y_data[[f, n]].conj();
            }
            z[f] = num / denominators[f];
        }
        out.push(ScalingVector::new(z)?);
    }
    Ok(out)
}

/// Outcome of the mixed-norm solver for one source across all mics.
#[derive(Debug, Clone)]
pub struct GmdpRun {
    /// Per-mic scaling vectors.
    pub coefficients: Vec<ScalingVector>,
    /// Per-mic iteration counts (update steps after the closed-form init).
    pub iterations: Vec<usize>,
    /// Per-mic objective traces `||E(z_t)||_{p,q}^p`, starting at the
    /// initial point.
    pub objective_traces: Vec<Vec<f64>>,
}

struct MicSolve {
    z: Array1<Complex64>,
    iterations: usize,
    trace: Vec<f64>,
}

fn residual_into(
    e: &mut Array2<Complex64>,
    x: &Array2<Complex64>,
    y: &Array2<Complex64>,
    z: &Array1<Complex64>,
) {
    let (n_freq, n_frames) = x.dim();
    for f in 0..n_freq {
        let zf = z[f];
        for n in 0..n_frames {
            e[[f, n]] = x[[f, n]] - zf * y[[f, n]];
        }
    }
}

fn solve_single_mic(
    x: &Array2<Complex64>,
    y: &Array2<Complex64>,
    params: &MixedNormParams,
) -> MicSolve {
    let (n_freq, n_frames) = x.dim();
    let p = params.p();
    let q = params.q();

    let mut source_energy = vec![0.0f64; n_freq];
    for f in 0..n_freq {
        for n in 0..n_frames {
            source_energy[f] += y[[f, n]].norm_sqr();
        }
    }
    let degenerate: Vec<bool> = source_energy.iter().map(|&e| e == 0.0).collect();

    let rms = (x.iter().map(|v| v.norm_sqr()).sum::<f64>()
        / (n_freq * n_frames) as f64)
        .sqrt();
    let floor_abs = if rms > 0.0 { params.floor() * rms } else { params.floor() };

    // Closed-form least-squares initialization.
    let mut z = Array1::<Complex64>::zeros(n_freq);
    for f in 0..n_freq {
        if degenerate[f] {
            continue;
        }
        let mut num = Complex64::new(0.0, 0.0);
        for n in 0..n_frames {
            num += x[[f, n]] * y[[f, n]].conj();
        }
        z[f] = num / source_energy[f];
    }

    let mut residual = Array2::zeros((n_freq, n_frames));
    residual_into(&mut residual, x, y, &z);
    let mut trace = vec![mixed_norm_pow(&residual, p, q)];
    let mut iterations = 0;

    for t in 1..=params.max_iters() {
        iterations = t;
        let weights = irls_weights(&residual, p, q, floor_abs);
        let mut z_next = z.clone();
        for f in 0..n_freq {
            if degenerate[f] {
                continue;
            }
            let mut num = Complex64::new(0.0, 0.0);
            let mut den = 0.0f64;
            for n in 0..n_frames {
                let w = weights[[f, n]];
                num += w * x[[f, n]] * y[[f, n]].conj();
                den += w * y[[f, n]].norm_sqr();
            }
            z_next[f] = num / den;
        }
        residual_into(&mut residual, x, y, &z_next);
        trace.push(mixed_norm_pow(&residual, p, q));

        let mut delta_sq = 0.0f64;
        let mut base_sq = 0.0f64;
        let mut next_sq = 0.0f64;
        for f in 0..n_freq {
            if degenerate[f] {
                continue;
            }
            delta_sq += (z_next[f] - z[f]).norm_sqr();
            base_sq += z[f].norm_sqr();
            next_sq += z_next[f].norm_sqr();
        }
        z = z_next;
        let converged = if base_sq == 0.0 {
            next_sq.sqrt() <= params.floor()
        } else {
            (delta_sq / base_sq).sqrt() <= params.rel_tol()
        };
        if converged {
            break;
        }
    }

    MicSolve { z, iterations, trace }
}

/// Mixed-norm scaling of source `source` against every mic, solved by
/// reweighted least squares from the closed-form least-squares start. The
/// objective trace is non-increasing and iteration stops at `max_iters` or
/// when the relative coefficient change drops to `rel_tol`.
pub fn gmdp(
    x: &TensorSpectrogram,
    y: &TensorSpectrogram,
    source: usize,
    params: &MixedNormParams,
) -> Result<GmdpRun, ScalingError> {
    check_pair_shapes(x, y, source)?;
    let y_data = y.channel(source).data();
    let solves: Vec<MicSolve> = (0..x.num_channels())
        .into_par_iter()
        .map(|m| solve_single_mic(x.channel(m).data(), y_data, params))
        .collect();
    let mut coefficients = Vec::with_capacity(solves.len());
    let mut iterations = Vec::with_capacity(solves.len());
    let mut objective_traces = Vec::with_capacity(solves.len());
    for solve in solves {
        coefficients.push(ScalingVector::new(solve.z)?);
        iterations.push(solve.iterations);
        objective_traces.push(solve.trace);
    }
    Ok(GmdpRun { coefficients, iterations, objective_traces })
}

/// Source images through the inverse demixing matrices: the image of source
/// `k` at mic `m` is `(W_f^-1)_mk y_kfn`. The per-source images sum to the
/// mixture reconstruction exactly.
pub fn projection_back(
    w: &DemixingSet,
    y: &TensorSpectrogram,
    ref_mic: usize,
) -> Result<ScalingResult, ScalingError> {
    let dim = w.dim();
    if dim != y.num_channels() {
        return Err(ScalingError::ShapeMismatch(format!(
            "demixing dim {} vs {} separated sources",
            dim,
            y.num_channels()
        )));
    }
    if w.num_freqs() != y.num_freqs() {
        return Err(ScalingError::ShapeMismatch(format!(
            "demixing has {} frequencies, sources have {}",
            w.num_freqs(),
            y.num_freqs()
        )));
    }
    if ref_mic >= dim {
        return Err(ScalingError::InvalidReferenceMic { ref_mic, mics: dim });
    }
    let n_freq = w.num_freqs();
    let mut inverses = Vec::with_capacity(n_freq);
    for f in 0..n_freq {
        let matrix = w.matrix(f);
        let inverse = Lu::factor(matrix).inverse().ok_or(ScalingError::SingularDemixing {
            f,
            cond: f64::INFINITY,
        })?;
        let cond = linalg::frobenius_norm(matrix) * linalg::frobenius_norm(&inverse);
        if !(cond <= CONDITION_BOUND) {
            return Err(ScalingError::SingularDemixing { f, cond });
        }
        inverses.push(inverse);
    }
    let mut coefficients = Vec::with_capacity(dim);
    for k in 0..dim {
        let mut per_mic = Vec::with_capacity(dim);
        for m in 0..dim {
            let z = Array1::from_shape_fn(n_freq, |f| inverses[f][[m, k]]);
            per_mic.push(ScalingVector::new(z)?);
        }
        coefficients.push(per_mic);
    }
    apply_scaling(&coefficients, y)
}

/// Entrywise image assembly: `images[k].channel(m) = diag(z_km) Y_k`.
/// `coefficients` is indexed `[source][mic]` and every vector must have the
/// tensor's frequency count.
pub fn apply_scaling(
    coefficients: &[Vec<ScalingVector>],
    y: &TensorSpectrogram,
) -> Result<ScalingResult, ScalingError> {
    if coefficients.len() != y.num_channels() {
        return Err(ScalingError::ShapeMismatch(format!(
            "{} coefficient rows for {} sources",
            coefficients.len(),
            y.num_channels()
        )));
    }
    let n_mics = coefficients[0].len();
    if n_mics == 0 || coefficients.iter().any(|row| row.len() != n_mics) {
        return Err(ScalingError::ShapeMismatch(
            "coefficient rows must share one positive mic count".into(),
        ));
    }
    let n_freq = y.num_freqs();
    let n_frames = y.num_frames();
    let mut images = Vec::with_capacity(coefficients.len());
    for (k, per_mic) in coefficients.iter().enumerate() {
        let y_data = y.channel(k).data();
        let mut channels = Vec::with_capacity(n_mics);
        for z in per_mic {
            if z.len() != n_freq {
                return Err(ScalingError::ShapeMismatch(format!(
                    "scaling vector has {} entries, expected {}",
                    z.len(),
                    n_freq
                )));
            }
            let mut data = Array2::zeros((n_freq, n_frames));
            for f in 0..n_freq {
                let zf = z.get(f);
                for n in 0..n_frames {
                    data[[f, n]] = zf * y_data[[f, n]];
                }
            }
            channels.push(Spectrogram::new(data).map_err(ScalingError::Core)?);
        }
        images.push(TensorSpectrogram::new(channels).map_err(ScalingError::Core)?);
    }
    let n_sources = coefficients.len();
    Ok(ScalingResult {
        images,
        coefficients: coefficients.to_vec(),
        iterations: vec![vec![1; n_mics]; n_sources],
        objective_traces: vec![vec![Vec::new(); n_mics]; n_sources],
    })
}

/// Source image scaling back-end selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingMethod {
    ProjectionBack,
    Mdp,
    Gmdp,
}

impl FromStr for ScalingMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pb" | "projection-back" => Ok(ScalingMethod::ProjectionBack),
            "mdp" => Ok(ScalingMethod::Mdp),
            "gmdp" => Ok(ScalingMethod::Gmdp),
            other => Err(format!("unknown scaling method '{other}' (expected pb, mdp, gmdp)")),
        }
    }
}

impl fmt::Display for ScalingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ScalingMethod::ProjectionBack => "pb",
            ScalingMethod::Mdp => "mdp",
            ScalingMethod::Gmdp => "gmdp",
        };
        f.write_str(name)
    }
}

/// Runs the chosen back-end over every source and assembles the full result.
/// `x` is the mixture tensor (M mics), `w` and `y` come from the separator,
/// `params` is consulted by the mixed-norm back-end only.
pub fn estimate_images(
    method: ScalingMethod,
    x: &TensorSpectrogram,
    w: &DemixingSet,
    y: &TensorSpectrogram,
    ref_mic: usize,
    params: &MixedNormParams,
) -> Result<ScalingResult, ScalingError> {
    match method {
        ScalingMethod::ProjectionBack => projection_back(w, y, ref_mic),
        ScalingMethod::Mdp => {
            let coefficients: Vec<Vec<ScalingVector>> = (0..y.num_channels())
                .map(|k| mdp(x, y, k))
                .collect::<Result<_, _>>()?;
            apply_scaling(&coefficients, y)
        }
        ScalingMethod::Gmdp => {
            let runs: Vec<GmdpRun> = (0..y.num_channels())
                .map(|k| gmdp(x, y, k, params))
                .collect::<Result<_, _>>()?;
            let coefficients: Vec<Vec<ScalingVector>> =
                runs.iter().map(|r| r.coefficients.clone()).collect();
            let mut result = apply_scaling(&coefficients, y)?;
            result.iterations = runs.iter().map(|r| r.iterations.clone()).collect();
            result.objective_traces =
                runs.into_iter().map(|r| r.objective_traces).collect();
            Ok(result)
        }
    }
}

//! Shared domain types for frequency-domain source separation.
//!
//! Conventions used throughout the crate:
//! - spectrogram entries are indexed `(f, n)` with `f` the frequency bin and
//!   `n` the frame,
//! - complex data is double precision (`Complex64`),
//! - all types are immutable after construction and can be shared freely
//!   between threads.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use thiserror::Error;

use crate::linalg;

/// Magic bytes of the binary spectrogram container.
const SPECTROGRAM_MAGIC: &[u8; 8] = b"SPGMBIN1";

/// Condition-estimate bound above which a demixing matrix is reported as
/// effectively singular. Checked by [`DemixingSet::check_conditioning`], not
/// on every update.
pub const CONDITION_BOUND: f64 = 1e8;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("non-finite entry at (f={f}, n={n})")]
    NonFiniteEntry { f: usize, n: usize },
    #[error("spectrogram must have at least one frequency bin and one frame")]
    EmptySpectrogram,
    #[error("tensor spectrogram needs at least one channel")]
    NoChannels,
    #[error("demixing matrix at frequency {f} is {rows}x{cols}, expected square {dim}x{dim}")]
    NotSquare { f: usize, rows: usize, cols: usize, dim: usize },
    #[error("demixing matrix at frequency {f} has a non-finite entry")]
    NonFiniteMatrix { f: usize },
    #[error(
        "demixing matrix at frequency {f} has condition estimate {cond:.3e}, above bound {bound:.3e}"
    )]
    IllConditioned { f: usize, cond: f64, bound: f64 },
    #[error("scaling vector entry {index} is not finite")]
    NonFiniteCoefficient { index: usize },
    #[error("scaling vector must have at least one entry")]
    EmptyScalingVector,
    #[error("invalid mixed-norm parameters: {0}")]
    InvalidParams(String),
    #[error("spectrogram container: {0}")]
    Container(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Complex time-frequency matrix for a single channel or source.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Array2<Complex64>,
}

impl Spectrogram {
    /// Validating constructor: rejects empty shapes and non-finite entries.
    pub fn new(data: Array2<Complex64>) -> Result<Self, CoreError> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(CoreError::EmptySpectrogram);
        }
        if let Some((f, n)) = first_non_finite(&data) {
            return Err(CoreError::NonFiniteEntry { f, n });
        }
        Ok(Spectrogram { data })
    }

    /// Wraps data without the finiteness scan. Entry point for callers that
    /// already hold validated data or deliberately carry sentinel values;
    /// [`validate_compatible`] still detects non-finite entries.
    pub fn from_data_unchecked(data: Array2<Complex64>) -> Self {
        Spectrogram { data }
    }

    pub fn zeros(num_freqs: usize, num_frames: usize) -> Self {
        Spectrogram { data: Array2::zeros((num_freqs, num_frames)) }
    }

    pub fn num_freqs(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_frames(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.data.nrows(), self.data.ncols())
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<Complex64> {
        self.data
    }

    /// Writes the binary container: magic, F and N as little-endian u64,
    /// then row-major interleaved re/im doubles. Bit-exact round trip.
    pub fn write_to<W: Write>(&self, writer: &mut W) -> Result<(), CoreError> {
        writer.write_all(SPECTROGRAM_MAGIC)?;
        writer.write_all(&(self.num_freqs() as u64).to_le_bytes())?;
        writer.write_all(&(self.num_frames() as u64).to_le_bytes())?;
        for value in self.data.iter() {
            writer.write_all(&value.re.to_le_bytes())?;
            writer.write_all(&value.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(reader: &mut R) -> Result<Self, CoreError> {
        let mut magic = [0u8; 8];
        reader.read_exact(&mut magic)?;
        if &magic != SPECTROGRAM_MAGIC {
            return Err(CoreError::Container("bad magic bytes".into()));
        }
        let mut buf = [0u8; 8];
        reader.read_exact(&mut buf)?;
        let num_freqs = u64::from_le_bytes(buf) as usize;
        reader.read_exact(&mut buf)?;
        let num_frames = u64::from_le_bytes(buf) as usize;
        if num_freqs == 0 || num_frames == 0 {
            return Err(CoreError::Container("empty dimensions".into()));
        }
        let mut data = Array2::zeros((num_freqs, num_frames));
        for value in data.iter_mut() {
            reader.read_exact(&mut buf)?;
            let re = f64::from_le_bytes(buf);
            reader.read_exact(&mut buf)?;
            let im = f64::from_le_bytes(buf);
            *value = Complex64::new(re, im);
        }
        Spectrogram::new(data)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), CoreError> {
        let mut writer = BufWriter::new(File::create(path)?);
        self.write_to(&mut writer)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, CoreError> {
        let mut reader = BufReader::new(File::open(path)?);
        Spectrogram::read_from(&mut reader)
    }
}

fn first_non_finite(data: &Array2<Complex64>) -> Option<(usize, usize)> {
    for ((f, n), value) in data.indexed_iter() {
        if !value.re.is_finite() || !value.im.is_finite() {
            return Some((f, n));
        }
    }
    None
}

/// Succeeds iff both spectrograms share the same `(F, N)` shape and contain
/// only finite entries.
pub fn validate_compatible(a: &Spectrogram, b: &Spectrogram) -> Result<(), CoreError> {
    if let Some((f, n)) = first_non_finite(a.data()) {
        return Err(CoreError::NonFiniteEntry { f, n });
    }
    if let Some((f, n)) = first_non_finite(b.data()) {
        return Err(CoreError::NonFiniteEntry { f, n });
    }
    if a.shape() != b.shape() {
        return Err(CoreError::ShapeMismatch { expected: a.shape(), got: b.shape() });
    }
    Ok(())
}

/// Stack of spectrograms sharing one `(F, N)` shape: the multichannel STFT
/// signal. Channel order is preserved by every operation in the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpectrogram {
    channels: Vec<Spectrogram>,
}

impl TensorSpectrogram {
    pub fn new(channels: Vec<Spectrogram>) -> Result<Self, CoreError> {
        let first = channels.first().ok_or(CoreError::NoChannels)?;
        let shape = first.shape();
        for ch in &channels[1..] {
            if ch.shape() != shape {
                return Err(CoreError::ShapeMismatch { expected: shape, got: ch.shape() });
            }
        }
        Ok(TensorSpectrogram { channels })
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn num_freqs(&self) -> usize {
        self.channels[0].num_freqs()
    }

    pub fn num_frames(&self) -> usize {
        self.channels[0].num_frames()
    }

    pub fn channel(&self, index: usize) -> &Spectrogram {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Spectrogram] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Spectrogram> {
        self.channels
    }
}

/// Per-frequency square demixing matrices produced by a separator.
#[derive(Debug, Clone, PartialEq)]
pub struct DemixingSet {
    matrices: Vec<Array2<Complex64>>,
}

impl DemixingSet {
    pub fn new(matrices: Vec<Array2<Complex64>>) -> Result<Self, CoreError> {
        let first = matrices.first().ok_or(CoreError::NoChannels)?;
        let dim = first.nrows();
        for (f, m) in matrices.iter().enumerate() {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(CoreError::NotSquare { f, rows: m.nrows(), cols: m.ncols(), dim });
            }
            if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(CoreError::NonFiniteMatrix { f });
            }
        }
        Ok(DemixingSet { matrices })
    }

    pub fn identity(num_freqs: usize, dim: usize) -> Self {
        let eye = Array2::from_diag(&Array1::from_elem(dim, Complex64::new(1.0, 0.0)));
        DemixingSet { matrices: vec![eye; num_freqs] }
    }

    pub fn num_freqs(&self) -> usize {
        self.matrices.len()
    }

    /// Channel/source dimension K.
    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn matrix(&self, f: usize) -> &Array2<Complex64> {
        &self.matrices[f]
    }

    pub fn matrices(&self) -> &[Array2<Complex64>] {
        &self.matrices
    }

    /// Frobenius condition estimate of the matrix at frequency `f`
    /// (infinite when singular).
    pub fn condition_estimate(&self, f: usize) -> f64 {
        linalg::condition_estimate(&self.matrices[f])
    }

    pub fn max_condition_estimate(&self) -> f64 {
        (0..self.num_freqs())
            .map(|f| self.condition_estimate(f))
            .fold(0.0f64, f64::max)
    }

    /// On-demand invertibility diagnostic: errors on the first frequency
    /// whose condition estimate exceeds `bound` (use [`CONDITION_BOUND`]
    /// for the default).
    pub fn check_conditioning(&self, bound: f64) -> Result<(), CoreError> {
        for f in 0..self.num_freqs() {
            let cond = self.condition_estimate(f);
            if !(cond <= bound) {
                return Err(CoreError::IllConditioned { f, cond, bound });
            }
        }
        Ok(())
    }
}

/// Per-frequency complex coefficients mapping one separated source to one
/// microphone's source image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingVector {
    coeffs: Array1<Complex64>,
}

impl ScalingVector {
    pub fn new(coeffs: Array1<Complex64>) -> Result<Self, CoreError> {
        if coeffs.is_empty() {
            return Err(CoreError::EmptyScalingVector);
        }
        for (index, z) in coeffs.iter().enumerate() {
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(CoreError::NonFiniteCoefficient { index });
            }
        }
        Ok(ScalingVector { coeffs })
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn get(&self, f: usize) -> Complex64 {
        self.coeffs[f]
    }

    pub fn coeffs(&self) -> &Array1<Complex64> {
        &self.coeffs
    }
}

/// Mixed-norm exponents and solver controls for the generalized
/// minimal-distortion solver.
///
/// The exponents must satisfy `0 < p <= q <= 2`, the regime where the
/// reweighted least-squares surrogate is valid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedNormParams {
    p: f64,
    q: f64,
    max_iters: usize,
    rel_tol: f64,
    floor: f64,
}

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_REL_TOL: f64 = 1e-2;
pub const DEFAULT_FLOOR: f64 = 1e-10;

impl MixedNormParams {
    pub fn new(p: f64, q: f64) -> Result<Self, CoreError> {
        if !(p > 0.0 && p <= q && q <= 2.0) {
            return Err(CoreError::InvalidParams(format!(
                "exponents must satisfy 0 < p <= q <= 2, got p={p}, q={q}"
            )));
        }
        Ok(MixedNormParams {
            p,
            q,
            max_iters: DEFAULT_MAX_ITERS,
            rel_tol: DEFAULT_REL_TOL,
            floor: DEFAULT_FLOOR,
        })
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Result<Self, CoreError> {
        if max_iters == 0 {
            return Err(CoreError::InvalidParams("max_iters must be at least 1".into()));
        }
        self.max_iters = max_iters;
        Ok(self)
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Result<Self, CoreError> {
        if !(rel_tol > 0.0) {
            return Err(CoreError::InvalidParams("rel_tol must be positive".into()));
        }
        self.rel_tol = rel_tol;
        Ok(self)
    }

    pub fn with_floor(mut self, floor: f64) -> Result<Self, CoreError> {
        if !(floor > 0.0) {
            return Err(CoreError::InvalidParams("floor must be positive".into()));
        }
        self.floor = floor;
        Ok(self)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn max_iters(&self) -> usize {
        self.max_iters
    }

    pub fn rel_tol(&self) -> f64 {
        self.rel_tol
    }

    /// Dimensionless magnitude floor, applied relative to the RMS of the
    /// microphone spectrogram inside the solver.
    pub fn floor(&self) -> f64 {
        self.floor
    }
}

//! Scale-invariant SDR/SIR evaluation with best-permutation alignment
//! against reference signals.

use itertools::Itertools;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("reference signal is all zero")]
    ZeroReference,
    #[error("interference references are linearly dependent")]
    DegenerateSpan,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Reports are clamped to +/- this value instead of going infinite when a
/// projection residual underflows (or the target projection vanishes).
pub const DB_CAP: f64 = 300.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        return -DB_CAP;
    }
    if den == 0.0 {
        return DB_CAP;
    }
    (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
}

/// Scale-invariant signal-to-distortion ratio in dB: the estimate is
/// projected onto the reference and the energies of the projection and the
/// leftover are compared. Invariant to nonzero rescaling of the estimate.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64, MetricsError> {
    if estimate.len() != reference.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_energy = dot(reference, reference);
    if ref_energy == 0.0 {
        return Err(MetricsError::ZeroReference);
    }
    let alpha = dot(estimate, reference) / ref_energy;
    let target_energy = alpha * alpha * ref_energy;
    let residual_energy: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| (e - alpha * r).powi(2))
        .sum();
    Ok(ratio_db(target_energy, residual_energy))
}

/// Scale-invariant signal-to-interference ratio in dB: the estimate is
/// decomposed into its projection onto the target and the leftover's
/// projection onto the span of the interference references.
///
/// An empty interference list yields the +cap (nothing to leak into).
pub fn si_sir(
    estimate: &[f64],
    target: &[f64],
    interference: &[&[f64]],
) -> Result<f64, MetricsError> {
    if estimate.len() != target.len()
        || interference.iter().any(|b| b.len() != estimate.len())
    {
        return Err(MetricsError::ShapeMismatch("signal lengths differ".into()));
    }
    let target_energy = dot(target, target);
    if target_energy == 0.0 {
        return Err(MetricsError::ZeroReference);
    }
    let alpha = dot(estimate, target) / target_energy;
    let e_target_energy = alpha * alpha * target_energy;
    let residual: Vec<f64> = estimate
        .iter()
        .zip(target)
        .map(|(e, r)| e - alpha * r)
        .collect();

    let e_interf_energy = if interference.is_empty() {
        0.0
    } else {
        let coeffs = project_onto_span(&residual, interference)?;
        let mut energy = 0.0f64;
        for t in 0..residual.len() {
            let mut v = 0.0f64;
            for (c, b) in coeffs.iter().zip(interference) {
                v += c * b[t];
            }
            energy += v * v;
        }
        energy
    };
    Ok(ratio_db(e_target_energy, e_interf_energy))
}

/// Least-squares coefficients of `signal` against the basis via the normal
/// equations, solved by Gaussian elimination with partial pivoting.
fn project_onto_span(signal: &[f64], basis: &[&[f64]]) -> Result<Vec<f64>, MetricsError> {
    let k = basis.len();
    let mut gram = vec![vec![0.0f64; k + 1]; k];
    for i in 0..k {
        for j in 0..k {
            gram[i][j] = dot(basis[i], basis[j]);
        }
        gram[i][k] = dot(signal, basis[i]);
    }
    let scale = (0..k).map(|i| gram[i][i]).fold(0.0f64, f64::max);
    if scale == 0.0 {
        return Err(MetricsError::DegenerateSpan);
    }
    for col in 0..k {
        let (pivot_row, pivot) = (col..k)
            .map(|r| (r, gram[r][col].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if pivot <= scale * 1e-12 {
            return Err(MetricsError::DegenerateSpan);
        }
        gram.swap(col, pivot_row);
        for row in 0..k {
            if row == col {
                continue;
            }
            let factor = gram[row][col] / gram[col][col];
            for j in col..=k {
                gram[row][j] -= factor * gram[col][j];
            }
        }
    }
    Ok((0..k).map(|i| gram[i][k] / gram[i][i]).collect())
}

/// Best-permutation evaluation of separated estimates against references.
#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Per-estimate SI-SDR under the chosen assignment, in dB.
    pub si_sdr: Vec<f64>,
    /// Per-estimate SI-SIR under the chosen assignment, in dB.
    pub si_sir: Vec<f64>,
    /// `permutation[k]` is the reference assigned to estimate `k`.
    pub permutation: Vec<usize>,
    pub mean_si_sdr: f64,
    pub mean_si_sir: f64,
}

impl EvalReport {
    /// Cells for CSV reporting: semicolon-joined per-source metrics and the
    /// permutation, then the means. Pairs with [`EvalReport::csv_header_cells`].
    pub fn csv_cells(&self) -> Vec<String> {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).join(";");
        vec![
            self.permutation.iter().map(|p| p.to_string()).join(";"),
            join(&self.si_sdr),
            join(&self.si_sir),
            format!("{:.4}", self.mean_si_sdr),
            format!("{:.4}", self.mean_si_sir),
        ]
    }

    pub fn csv_header_cells() -> Vec<&'static str> {
        vec!["permutation", "si_sdr_per_source", "si_sir_per_source", "mean_si_sdr", "mean_si_sir"]
    }
}

/// Aligns estimates to references with the permutation maximizing mean
/// SI-SDR (exhaustive search; factorial in the source count, intended for
/// up to 4 sources) and reports per-source metrics under that assignment.
pub fn evaluate(estimates: &[Vec<f64>], references: &[Vec<f64>]) -> Result<EvalReport, MetricsError> {
    let k = estimates.len();
    if k == 0 || references.len() != k {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} estimates vs {} references",
            k,
            references.len()
        )));
    }
    let len = estimates[0].len();
    if estimates.iter().chain(references).any(|s| s.len() != len) {
        return Err(MetricsError::ShapeMismatch("signal lengths differ".into()));
    }

    let mut sdr_matrix = vec![vec![0.0f64; k]; k];
    for (i, estimate) in estimates.iter().enumerate() {
        for (j, reference) in references.iter().enumerate() {
            sdr_matrix[i][j] = si_sdr(estimate, reference)?;
        }
    }

    let mut best_perm: Vec<usize> = (0..k).collect();
    let mut best_mean = f64::NEG_INFINITY;
    for perm in (0..k).permutations(k) {
        let mean = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| sdr_matrix[i][j])
            .sum::<f64>()
            / k as f64;
        if mean > best_mean {
            best_mean = mean;
            best_perm = perm;
        }
    }

    let mut per_sdr = Vec::with_capacity(k);
    let mut per_sir = Vec::with_capacity(k);
    for (i, &j) in best_perm.iter().enumerate() {
        per_sdr.push(sdr_matrix[i][j]);
        let interference: Vec<&[f64]> = (0..k)
            .filter(|&other| other != j)
            .map(|other| references[other].as_slice())
            .collect();
        per_sir.push(si_sir(&estimates[i], &references[j], &interference)?);
    }
    let mean_si_sdr = per_sdr.iter().sum::<f64>() / k as f64;
    let mean_si_sir = per_sir.iter().sum::<f64>() / k as f64;
    Ok(EvalReport {
        si_sdr: per_sdr,
        si_sir: per_sir,
        permutation: best_perm,
        mean_si_sdr,
        mean_si_sir,
    })
}

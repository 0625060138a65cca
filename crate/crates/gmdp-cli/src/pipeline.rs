//! Subcommand implementations: scenario generation, separation, evaluation,
//! and the (p, q) sweep.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gmdp::{
    estimate_images, evaluate, forward, inverse, laplacian_bursts, read_manifest, read_wav,
    separate, write_manifest, write_scenario, write_wav_f32, AuxIvaConfig, EvalReport,
    ScalingMethod, ScalingResult, ScenarioRecord, Spectrogram, StftConfig, TensorSpectrogram,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{FileConfig, ScalingSettings};

pub const RUN_RECORD_FILE: &str = "run_record.jsonl";

/// One line of the separation run record: everything needed to re-run and
/// evaluate a scenario's estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub method: String,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// 1-based, as on the command line.
    pub ref_mic: usize,
    pub auxiva_iters: usize,
    pub sample_rate: u32,
    pub n_samples: usize,
    pub estimate_files: Vec<String>,
    /// `iterations[source][mic]` solver iteration counts.
    pub iterations: Vec<Vec<usize>>,
    /// Mixed-norm objective traces per `(source, mic)`; empty for the
    /// closed-form back-ends.
    pub objective_traces: Vec<Vec<Vec<f64>>>,
}

fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)
        .with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path)
        .with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}

fn install_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(job());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("cannot build worker pool")?;
    Ok(pool.install(job))
}

// ---------------------------------------------------------------------------
// mix
// ---------------------------------------------------------------------------

fn load_source_material(cfg: &FileConfig, n_samples: usize) -> Result<Option<Vec<Vec<f64>>>> {
    if cfg.mix.source_files.is_empty() {
        return Ok(None);
    }
    if cfg.mix.source_files.len() != cfg.mix.sources {
        bail!(
            "config error: {} source files for {} sources",
            cfg.mix.source_files.len(),
            cfg.mix.sources
        );
    }
    let mut sources = Vec::new();
    for file in &cfg.mix.source_files {
        let path = Path::new(file);
        if !path.exists() {
            bail!("config error: missing source file {file}");
        }
        let (channels, rate) = read_wav(path)?;
        if rate != cfg.stft.sample_rate {
            bail!(
                "config error: {file} has sample rate {rate}, config says {}",
                cfg.stft.sample_rate
            );
        }
        sources.push(channels.into_iter().next().unwrap_or_default());
    }
    let available = sources.iter().map(|s| s.len()).min().unwrap_or(0);
    let take = available.min(n_samples);
    if take == 0 {
        bail!("config error: source files contain no samples");
    }
    for s in &mut sources {
        s.truncate(take);
    }
    Ok(Some(sources))
}

pub fn cmd_mix(
    cfg: &FileConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
    scenarios_override: Option<usize>,
) -> Result<()> {
    let base_seed = seed_override.unwrap_or(cfg.mix.seed);
    let n_scenarios = scenarios_override.unwrap_or(cfg.mix.scenarios).max(1);
    let sample_rate = cfg.stft.sample_rate;
    let n_samples = (cfg.mix.duration_s * sample_rate as f64).round() as usize;
    if n_samples == 0 {
        bail!("config error: duration_s must be positive");
    }
    let material = load_source_material(cfg, n_samples)?;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;

    let mut records = Vec::with_capacity(n_scenarios);
    for s in 0..n_scenarios {
        let seed = base_seed.wrapping_add(s as u64);
        let mix_cfg = cfg.mix_config(Some(seed))?;
        let sources = match &material {
            Some(sources) => sources.clone(),
            None => laplacian_bursts(mix_cfg.sources, n_samples, seed ^ 0x5eed_50u64),
        };
        let id = format!("scene{s:03}");
        let record = write_scenario(out_dir, &id, &mix_cfg, &sources, sample_rate)
            .with_context(|| format!("cannot generate scenario {id}"))?;
        records.push(record);
    }
    write_manifest(&out_dir.join("manifest.jsonl"), &records)?;
    println!(
        "wrote {} scenario(s) ({} mics each) under {}",
        records.len(),
        records[0].mixture_files.len(),
        out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// separate
// ---------------------------------------------------------------------------

fn read_scenario_mixtures(
    base: &Path,
    record: &ScenarioRecord,
    expected_rate: u32,
) -> Result<Vec<Vec<f64>>> {
    let mut mixtures = Vec::with_capacity(record.mixture_files.len());
    for file in &record.mixture_files {
        let path = base.join(file);
        if !path.exists() {
            bail!("missing reference: {} (scenario {})", path.display(), record.id);
        }
        let (channels, rate) = read_wav(&path)?;
        if rate != expected_rate {
            bail!(
                "config error: {} has sample rate {rate}, config says {expected_rate}",
                path.display()
            );
        }
        mixtures.push(channels.into_iter().next().unwrap_or_default());
    }
    Ok(mixtures)
}

struct SeparatedScenario {
    mixture: TensorSpectrogram,
    demixing: gmdp::DemixingSet,
    sources: TensorSpectrogram,
    n_samples: usize,
}

fn separate_scenario(
    base: &Path,
    record: &ScenarioRecord,
    stft_cfg: &StftConfig,
    iva_cfg: &AuxIvaConfig,
) -> Result<SeparatedScenario> {
    let mixtures = read_scenario_mixtures(base, record, stft_cfg.sample_rate())?;
    let n_samples = mixtures[0].len();
    let mixture = forward(&mixtures, stft_cfg)
        .with_context(|| format!("scenario {}: forward transform failed", record.id))?;
    let (demixing, sources) = separate(&mixture, iva_cfg)
        .with_context(|| format!("scenario {}: separation failed", record.id))?;
    Ok(SeparatedScenario { mixture, demixing, sources, n_samples })
}

/// Reference-mic estimates in the time domain, one per source.
fn synthesize_ref_mic(
    result: &ScalingResult,
    ref_mic: usize,
    stft_cfg: &StftConfig,
    n_samples: usize,
) -> Result<Vec<Vec<f64>>> {
    let channels: Vec<Spectrogram> = (0..result.num_sources())
        .map(|k| result.image(k).channel(ref_mic).clone())
        .collect();
    let stacked = TensorSpectrogram::new(channels).context("image assembly failed")?;
    Ok(inverse(&stacked, stft_cfg, n_samples)?)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_separate(
    manifest: &Path,
    cfg: &FileConfig,
    settings: &ScalingSettings,
    auxiva_iters: Option<usize>,
    out_dir: &Path,
    workers: usize,
) -> Result<()> {
    let records = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let stft_cfg = cfg.stft_config()?;
    let iva_cfg = cfg.auxiva_config(auxiva_iters)?;
    let settings = *settings;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;

    let run_records: Vec<RunRecord> = install_pool(workers, || {
        records
            .par_iter()
            .map(|record| -> Result<RunRecord> {
                let sep = separate_scenario(&base, record, &stft_cfg, &iva_cfg)?;
                if settings.ref_mic >= sep.mixture.num_channels() {
                    bail!(
                        "config error: ref_mic {} but scenario {} has {} mics",
                        settings.ref_mic + 1,
                        record.id,
                        sep.mixture.num_channels()
                    );
                }
                let result = estimate_images(
                    settings.method,
                    &sep.mixture,
                    &sep.demixing,
                    &sep.sources,
                    settings.ref_mic,
                    &settings.params,
                )
                .with_context(|| format!("scenario {}: scaling failed", record.id))?;
                let estimates =
                    synthesize_ref_mic(&result, settings.ref_mic, &stft_cfg, sep.n_samples)?;
                let mut estimate_files = Vec::new();
                for (k, estimate) in estimates.iter().enumerate() {
                    let file = format!("{}_src{}.wav", record.id, k + 1);
                    write_wav_f32(
                        out_dir.join(&file),
                        std::slice::from_ref(estimate),
                        stft_cfg.sample_rate(),
                    )?;
                    estimate_files.push(file);
                }
                let n_sources = result.num_sources();
                let n_mics = result.num_mics();
                let iterations: Vec<Vec<usize>> = (0..n_sources)
                    .map(|k| (0..n_mics).map(|m| result.iterations(k, m)).collect())
                    .collect();
                let objective_traces: Vec<Vec<Vec<f64>>> = (0..n_sources)
                    .map(|k| {
                        (0..n_mics).map(|m| result.objective_trace(k, m).to_vec()).collect()
                    })
                    .collect();
                let is_gmdp = settings.method == ScalingMethod::Gmdp;
                Ok(RunRecord {
                    scenario: record.id.clone(),
                    method: settings.method.to_string(),
                    p: is_gmdp.then(|| settings.params.p()),
                    q: is_gmdp.then(|| settings.params.q()),
                    max_iters: settings.params.max_iters(),
                    rel_tol: settings.params.rel_tol(),
                    ref_mic: settings.ref_mic + 1,
                    auxiva_iters: iva_cfg.n_iters(),
                    sample_rate: stft_cfg.sample_rate(),
                    n_samples: sep.n_samples,
                    estimate_files,
                    iterations,
                    objective_traces,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut file = fs::File::create(out_dir.join(RUN_RECORD_FILE))?;
    for record in &run_records {
        writeln!(file, "{}", serde_json::to_string(record)?)?;
    }
    println!(
        "separated {} scenario(s) with {} into {}",
        run_records.len(),
        settings.method,
        out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn read_run_records(estimates_dir: &Path) -> Result<Vec<RunRecord>> {
    let path = estimates_dir.join(RUN_RECORD_FILE);
    if !path.exists() {
        bail!("missing reference: no estimates found in {}", estimates_dir.display());
    }
    let text = fs::read_to_string(&path)?;
    let mut records = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        records.push(serde_json::from_str(line).context("cannot parse run record")?);
    }
    if records.is_empty() {
        bail!("missing reference: no estimates found in {}", estimates_dir.display());
    }
    Ok(records)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

fn eval_row(record: &RunRecord, report: &EvalReport, k: usize) -> String {
    let iterations = record
        .iterations
        .iter()
        .flat_map(|row| row.iter().map(|i| i.to_string()))
        .collect::<Vec<_>>()
        .join(";");
    let cells = report.csv_cells();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}\n",
        record.scenario,
        k,
        record.method,
        fmt_opt(record.p),
        fmt_opt(record.q),
        record.ref_mic,
        cells[0],
        cells[1],
        cells[2],
        cells[3],
        cells[4],
        iterations
    )
}

pub const EVAL_CSV_HEADER: &str = "scenario,k,method,p,q,ref_mic,permutation,si_sdr_per_source,si_sir_per_source,mean_si_sdr,mean_si_sir,iterations\n";

pub fn cmd_eval(estimates_dir: &Path, references_dir: &Path, out: &Path) -> Result<()> {
    let run_records = read_run_records(estimates_dir)?;
    let manifest_path = references_dir.join("manifest.jsonl");
    if !manifest_path.exists() {
        bail!("missing reference: no manifest at {}", manifest_path.display());
    }
    let manifest: BTreeMap<String, ScenarioRecord> = read_manifest(&manifest_path)?
        .into_iter()
        .map(|r| (r.id.clone(), r))
        .collect();

    let mut csv = String::from(EVAL_CSV_HEADER);
    let mut mean_sdr = 0.0f64;
    let mut mean_sir = 0.0f64;
    let mut k_last = 0usize;
    for record in &run_records {
        let scenario = manifest.get(&record.scenario).ok_or_else(|| {
            anyhow::anyhow!("missing reference: scenario {} not in manifest", record.scenario)
        })?;
        let mic = record.ref_mic - 1;
        let mut estimates = Vec::new();
        for file in &record.estimate_files {
            let (channels, _) = read_wav(estimates_dir.join(file))?;
            estimates.push(channels.into_iter().next().unwrap_or_default());
        }
        let mut references = Vec::new();
        for image_row in &scenario.image_files {
            let path = references_dir.join(&image_row[mic]);
            if !path.exists() {
                bail!("missing reference: {}", path.display());
            }
            let (channels, _) = read_wav(&path)?;
            let mut reference = channels.into_iter().next().unwrap_or_default();
            reference.truncate(record.n_samples);
            references.push(reference);
        }
        for estimate in &mut estimates {
            estimate.truncate(references[0].len());
        }
        let report = evaluate(&estimates, &references)
            .with_context(|| format!("scenario {}: evaluation failed", record.scenario))?;
        k_last = estimates.len();
        mean_sdr += report.mean_si_sdr;
        mean_sir += report.mean_si_sir;
        csv.push_str(&eval_row(record, &report, estimates.len()));
    }
    let n = run_records.len() as f64;
    let first = &run_records[0];
    csv.push_str(&format!(
        "mean,{},{},{},{},{},,,,{:.4},{:.4},\n",
        k_last,
        first.method,
        fmt_opt(first.p),
        fmt_opt(first.q),
        first.ref_mic,
        mean_sdr / n,
        mean_sir / n
    ));
    atomic_write(out, &csv)?;
    println!("evaluated {} scenario(s) -> {}", run_records.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

/// Accepts `a,b,c` lists or `start:end:step` ranges.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            bail!("config error: grid '{spec}' must be start:end:step");
        }
        let start: f64 = parts[0].parse().context("config error: bad grid start")?;
        let end: f64 = parts[1].parse().context("config error: bad grid end")?;
        let step: f64 = parts[2].parse().context("config error: bad grid step")?;
        if step <= 0.0 || end < start {
            bail!("config error: grid '{spec}' must have positive step and end >= start");
        }
        let count = ((end - start) / step).round() as usize + 1;
        (0..count)
            .map(|i| start + i as f64 * step)
            .filter(|v| *v <= end + 1e-9)
            .collect()
    } else {
        spec.split(',')
            .map(|s| s.trim().parse::<f64>().context("config error: bad grid value"))
            .collect::<Result<Vec<f64>>>()?
    };
    if values.iter().any(|v| !(*v > 0.0 && *v <= 2.0)) {
        bail!("config error: grid values must lie in (0, 2]");
    }
    Ok(values)
}

pub const SWEEP_CSV_HEADER: &str = "p,q,method,n_scenarios,seeds,auxiva_iters,max_iters,rel_tol,ref_mic,mean_si_sdr,mean_si_sir,median_iterations\n";

#[allow(clippy::too_many_arguments)]
pub fn cmd_sweep(
    manifest: &Path,
    cfg: &FileConfig,
    settings: &ScalingSettings,
    auxiva_iters: Option<usize>,
    p_grid: &[f64],
    q_grid: &[f64],
    out: &Path,
    workers: usize,
) -> Result<()> {
    let records = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let stft_cfg = cfg.stft_config()?;
    let iva_cfg = cfg.auxiva_config(auxiva_iters)?;
    let settings = *settings;

    let mut cells: Vec<(f64, f64)> = Vec::new();
    for &p in p_grid {
        for &q in q_grid {
            if p <= q {
                cells.push((p, q));
            }
        }
    }
    cells.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cells.dedup();
    if cells.is_empty() {
        eprintln!("warning: no (p, q) cells satisfy p <= q; writing empty sweep");
        atomic_write(out, SWEEP_CSV_HEADER)?;
        return Ok(());
    }

    struct ScenarioSweep {
        per_cell: Vec<(f64, f64, Vec<usize>)>,
    }

    let sweeps: Vec<ScenarioSweep> = install_pool(workers, || {
        records
            .par_iter()
            .map(|record| -> Result<ScenarioSweep> {
                let sep = separate_scenario(&base, record, &stft_cfg, &iva_cfg)?;
                if settings.ref_mic >= sep.mixture.num_channels() {
                    bail!(
                        "config error: ref_mic {} but scenario {} has {} mics",
                        settings.ref_mic + 1,
                        record.id,
                        sep.mixture.num_channels()
                    );
                }
                let mut references = Vec::new();
                for image_row in &record.image_files {
                    let path = base.join(&image_row[settings.ref_mic]);
                    if !path.exists() {
                        bail!("missing reference: {}", path.display());
                    }
                    let (channels, _) = read_wav(&path)?;
                    references.push(channels.into_iter().next().unwrap_or_default());
                }
                let per_cell = cells
                    .iter()
                    .map(|&(p, q)| -> Result<(f64, f64, Vec<usize>)> {
                        let params = gmdp::MixedNormParams::new(p, q)
                            .and_then(|pr| pr.with_max_iters(settings.params.max_iters()))
                            .and_then(|pr| pr.with_rel_tol(settings.params.rel_tol()))
                            .and_then(|pr| pr.with_floor(settings.params.floor()))
                            .context("config error: invalid sweep cell")?;
                        let result = estimate_images(
                            ScalingMethod::Gmdp,
                            &sep.mixture,
                            &sep.demixing,
                            &sep.sources,
                            settings.ref_mic,
                            &params,
                        )?;
                        let estimates = synthesize_ref_mic(
                            &result,
                            settings.ref_mic,
                            &stft_cfg,
                            sep.n_samples,
                        )?;
                        let refs: Vec<Vec<f64>> = references
                            .iter()
                            .map(|r| r[..sep.n_samples.min(r.len())].to_vec())
                            .collect();
                        let report = evaluate(&estimates, &refs)?;
                        let mut iters = Vec::new();
                        for k in 0..result.num_sources() {
                            for m in 0..result.num_mics() {
                                iters.push(result.iterations(k, m));
                            }
                        }
                        Ok((report.mean_si_sdr, report.mean_si_sir, iters))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ScenarioSweep { per_cell })
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let seeds = records
        .iter()
        .map(|r| r.seed.to_string())
        .collect::<Vec<_>>()
        .join(";");
    let n = records.len() as f64;
    let mut csv = String::from(SWEEP_CSV_HEADER);
    for (ci, &(p, q)) in cells.iter().enumerate() {
        let mean_sdr = sweeps.iter().map(|s| s.per_cell[ci].0).sum::<f64>() / n;
        let mean_sir = sweeps.iter().map(|s| s.per_cell[ci].1).sum::<f64>() / n;
        let mut iters: Vec<usize> =
            sweeps.iter().flat_map(|s| s.per_cell[ci].2.iter().copied()).collect();
        iters.sort_unstable();
        let median = iters[iters.len() / 2];
        csv.push_str(&format!(
            "{},{},gmdp,{},{},{},{},{},{},{:.6},{:.6},{}\n",
            p,
            q,
            records.len(),
            seeds,
            iva_cfg.n_iters(),
            settings.params.max_iters(),
            settings.params.rel_tol(),
            settings.ref_mic + 1,
            mean_sdr,
            mean_sir,
            median
        ));
    }
    atomic_write(out, &csv)?;
    println!(
        "swept {} cell(s) over {} scenario(s) -> {}",
        cells.len(),
        records.len(),
        out.display()
    );
    Ok(())
}

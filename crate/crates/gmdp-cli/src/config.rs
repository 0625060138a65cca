//! Run configuration: a TOML file with one section per pipeline stage, all
//! keys optional, overridable by command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use gmdp::{AuxIvaConfig, MixConfig, MixedNormParams, ScalingMethod, StftConfig, Window};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub stft: StftSection,
    pub auxiva: AuxIvaSection,
    pub scaling: ScalingSection,
    pub mix: MixSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftSection {
    pub window_length: usize,
    pub hop: usize,
    pub window: String,
    pub sample_rate: u32,
}

impl Default for StftSection {
    fn default() -> Self {
        StftSection {
            window_length: 2048,
            hop: 512,
            window: "sqrt-hann".into(),
            sample_rate: 16_000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuxIvaSection {
    pub n_iters: usize,
    pub weight_floor: f64,
}

impl Default for AuxIvaSection {
    fn default() -> Self {
        AuxIvaSection { n_iters: 50, weight_floor: 1e-10 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingSection {
    pub method: String,
    pub p: f64,
    pub q: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub floor: f64,
    /// 1-based microphone index, first microphone by default.
    pub ref_mic: usize,
}

impl Default for ScalingSection {
    fn default() -> Self {
        ScalingSection {
            method: "gmdp".into(),
            p: 1.0,
            q: 2.0,
            max_iters: 100,
            rel_tol: 1e-2,
            floor: 1e-10,
            ref_mic: 1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixSection {
    pub sources: usize,
    pub duration_s: f64,
    pub filter_length: usize,
    pub decay: f64,
    pub direct_gain: f64,
    pub noise_snr_db: Option<f64>,
    pub seed: u64,
    pub scenarios: usize,
    /// WAV files to use as source material; seeded synthetic bursts when
    /// empty.
    pub source_files: Vec<String>,
}

impl Default for MixSection {
    fn default() -> Self {
        MixSection {
            sources: 2,
            duration_s: 5.0,
            filter_length: 256,
            decay: 0.95,
            direct_gain: 1.0,
            noise_snr_db: None,
            seed: 0,
            scenarios: 1,
            source_files: Vec::new(),
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("config error: cannot read {}", path.display()))?;
                let cfg: FileConfig = toml::from_str(&text)
                    .with_context(|| format!("config error: cannot parse {}", path.display()))?;
                Ok(cfg)
            }
        }
    }

    pub fn stft_config(&self) -> Result<StftConfig> {
        let window: Window = self
            .stft
            .window
            .parse()
            .map_err(|e: String| anyhow::anyhow!("config error: {e}"))?;
        StftConfig::new(
            self.stft.window_length,
            self.stft.hop,
            window,
            self.stft.sample_rate,
        )
        .context("config error: invalid [stft] section")
    }

    pub fn auxiva_config(&self, n_iters_override: Option<usize>) -> Result<AuxIvaConfig> {
        AuxIvaConfig::new(
            n_iters_override.unwrap_or(self.auxiva.n_iters),
            self.auxiva.weight_floor,
        )
        .context("config error: invalid [auxiva] section")
    }

    pub fn mix_config(&self, seed_override: Option<u64>) -> Result<MixConfig> {
        let cfg = MixConfig {
            sources: self.mix.sources,
            mics: self.mix.sources,
            filter_length: self.mix.filter_length,
            decay: self.mix.decay,
            direct_gain: self.mix.direct_gain,
            noise_snr_db: self.mix.noise_snr_db,
            seed: seed_override.unwrap_or(self.mix.seed),
        };
        cfg.validate().context("config error: invalid [mix] section")?;
        Ok(cfg)
    }
}

/// Scaling settings after applying flag overrides: the method, the solver
/// parameters, and the zero-based reference mic.
#[derive(Debug, Clone, Copy)]
pub struct ScalingSettings {
    pub method: ScalingMethod,
    pub params: MixedNormParams,
    pub ref_mic: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ScalingOverrides {
    pub method: Option<ScalingMethod>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub max_iters: Option<usize>,
    pub rel_tol: Option<f64>,
    pub ref_mic: Option<usize>,
}

impl FileConfig {
    pub fn scaling_settings(&self, over: &ScalingOverrides) -> Result<ScalingSettings> {
        let method = match over.method {
            Some(m) => m,
            None => self
                .scaling
                .method
                .parse()
                .map_err(|e: String| anyhow::anyhow!("config error: {e}"))?,
        };
        let params = MixedNormParams::new(
            over.p.unwrap_or(self.scaling.p),
            over.q.unwrap_or(self.scaling.q),
        )
        .and_then(|p| p.with_max_iters(over.max_iters.unwrap_or(self.scaling.max_iters)))
        .and_then(|p| p.with_rel_tol(over.rel_tol.unwrap_or(self.scaling.rel_tol)))
        .and_then(|p| p.with_floor(self.scaling.floor))
        .context("config error: invalid scaling parameters")?;
        let ref_mic_1 = over.ref_mic.unwrap_or(self.scaling.ref_mic);
        if ref_mic_1 == 0 {
            bail!("config error: ref_mic is 1-based, got 0");
        }
        Ok(ScalingSettings { method, params, ref_mic: ref_mic_1 - 1 })
    }
}

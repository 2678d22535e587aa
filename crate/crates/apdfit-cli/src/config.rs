//! Pipeline configuration: JSON file with a versioned schema, overridable
//! by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use apdfit::support::{
    InteriorParams, PencilParams, ResolutionParams, SupportStrategy,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub input: InputConfig,
    /// "sgbpd" or "dilpm".
    pub method: String,
    #[serde(default)]
    pub support: SupportConfig,
    #[serde(default)]
    pub sgbpd: SgbpdConfig,
    #[serde(default)]
    pub dilpm: DilpmConfig,
    /// Classification tie tolerance; `null` selects the relative default.
    #[serde(default)]
    pub tie_tol: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub header: PathBuf,
    pub data: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupportConfig {
    /// "none", "pencil" or "resolution".
    pub strategy: String,
    pub rays_per_site: usize,
    pub batch_error: f64,
    pub ellipsoidal: bool,
    /// Coarse grid per axis for the resolution strategy.
    pub tau: Option<[usize; 3]>,
    /// Alternative to `tau`: derive it from the worst-case bound for this
    /// epsilon, clamped to the volume dimensions.
    pub tau_eps: Option<f64>,
    /// Uniform interior-removal depth; `null` disables removal.
    pub interior_delta: Option<u32>,
}

impl Default for SupportConfig {
    fn default() -> Self {
        Self {
            strategy: "none".into(),
            rays_per_site: 64,
            batch_error: 1.0,
            ellipsoidal: true,
            tau: None,
            tau_eps: None,
            interior_delta: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgbpdConfig {
    pub candidates_per_point: usize,
}

impl Default for SgbpdConfig {
    fn default() -> Self {
        Self {
            candidates_per_point: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DilpmConfig {
    pub delta: u32,
    /// Strict ring `[lo, hi)`; `null` uses the plain delta interior.
    pub ring: Option<[u32; 2]>,
    pub margin: f64,
}

impl Default for DilpmConfig {
    fn default() -> Self {
        Self {
            delta: 2,
            ring: None,
            margin: 1.0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                config.schema_version
            ));
        }
        match config.method.as_str() {
            "sgbpd" | "dilpm" => {}
            other => return Err(format!("unknown method {other:?}")),
        }
        match config.support.strategy.as_str() {
            "none" | "pencil" | "resolution" => {}
            other => return Err(format!("unknown support strategy {other:?}")),
        }
        Ok(config)
    }

    /// Resolve the support strategy against a concrete volume.
    pub fn strategy(
        &self,
        dims: (usize, usize, usize),
        k: usize,
    ) -> Result<(SupportStrategy, Option<InteriorParams>), String> {
        let s = &self.support;
        let strategy = match s.strategy.as_str() {
            "none" => SupportStrategy::None,
            "pencil" => SupportStrategy::Pencil(PencilParams {
                rays_per_site: s.rays_per_site,
                batch_error: s.batch_error,
                ellipsoidal: s.ellipsoidal,
            }),
            "resolution" => {
                let tau = match (s.tau, s.tau_eps) {
                    (Some(t), _) => (t[0], t[1], t[2]),
                    (None, Some(eps)) => {
                        let bar = apdfit::support::advisory_tau(k, eps)
                            .map_err(|e| e.to_string())? as usize;
                        (bar.min(dims.0), bar.min(dims.1), bar.min(dims.2))
                    }
                    (None, None) => {
                        return Err("resolution strategy needs tau or tau_eps".into())
                    }
                };
                SupportStrategy::Resolution(ResolutionParams { tau })
            }
            other => return Err(format!("unknown support strategy {other:?}")),
        };
        let interior = s.interior_delta.map(|delta| InteriorParams { delta });
        Ok((strategy, interior))
    }
}

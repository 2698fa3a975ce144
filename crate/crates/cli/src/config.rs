//! The run configuration: one JSON document holding the model, the
//! simulation parameters, and the experiment knobs.
//!
//! Parsing is strict: unknown keys anywhere are errors, so a typo cannot
//! silently fall back to a default.  Omitted sections get documented
//! defaults.  After loading, the configuration is normalized (defaults
//! materialized, snapshot times resolved), and that normalized form is
//! what overrides apply to, what the manifest echoes, and what re-emits
//! byte-for-byte.

use std::fs;
use std::path::Path;

use atlaslab::coefficients::{CoefficientFunction, InitialDistribution, MarketModel};
use atlaslab::error::{CoreError, Result};
use atlaslab::simulator::SimConfig;
use serde::{Deserialize, Serialize};

/// Coefficient triple exactly as the model section spells it.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub gamma: CoefficientFunction<f64>,
    pub sigma2: CoefficientFunction<f64>,
    pub m: InitialDistribution<f64>,
}

/// Simulation parameters; every field has a default.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    /// `null` means "resolve to a uniform grid of 41 times".
    pub snapshot_times: Option<Vec<f64>>,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            n: 2000,
            dt: 1e-3,
            t_end: 10.0,
            seed: 42,
            snapshot_times: None,
        }
    }
}

/// Experiment knobs; every field has a default.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Weight exponents, strictly increasing.
    pub p_grid: Vec<f64>,
    pub replicas: usize,
    /// Particle counts for the chaos diagnostic.
    pub n_grid: Vec<usize>,
    /// Time-averaging window [lo, hi].
    pub window: [f64; 2],
    /// Interversion probe tolerance.
    pub tol: f64,
    /// Equilibrium grid resolution (odd, at least 129).
    pub grid_points: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            p_grid: vec![0.0, 0.5, 1.0, 2.0, 4.0],
            replicas: 10,
            n_grid: vec![200, 2000, 10000],
            window: [5.0, 10.0],
            tol: 0.03,
            grid_points: 4097,
        }
    }
}

/// The whole document.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

impl FileConfig {
    /// Reads and strictly parses a config file, then applies `--set`
    /// overrides onto the normalized form.
    pub fn load(path: &Path, overrides: &[String]) -> Result<FileConfig> {
        let text = fs::read_to_string(path).map_err(|e| {
            CoreError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let parsed: FileConfig = serde_json::from_str(&text).map_err(|e| {
            CoreError::Config(format!(
                "config {} line {} column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })?;
        // Materialize defaults, then let overrides address any resolved
        // key; reparse strictly so an override cannot produce an invalid
        // document.
        let mut doc = serde_json::to_value(&parsed)?;
        apply_overrides(&mut doc, overrides)?;
        let cfg: FileConfig = serde_json::from_value(doc)
            .map_err(|e| CoreError::Config(format!("after overrides: {e}")))?;
        Ok(cfg)
    }

    /// Validated market model from the model section.
    pub fn build_model(&self) -> Result<MarketModel<f64>> {
        MarketModel::new(
            self.model.gamma.clone(),
            self.model.sigma2.clone(),
            self.model.m.clone(),
        )
    }

    /// Simulator configuration with snapshot times resolved: either the
    /// explicit list, or a uniform grid of 41 times snapped to exact step
    /// multiples.
    pub fn build_sim(&self) -> Result<SimConfig<f64>> {
        let s = &self.sim;
        let snapshot_times = match &s.snapshot_times {
            Some(ts) => ts.clone(),
            None => default_snapshots(s.t_end, s.dt)?,
        };
        let cfg = SimConfig {
            n: s.n,
            dt: s.dt,
            t_end: s.t_end,
            seed: s.seed,
            snapshot_times,
            scheme: Default::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The document with all defaults materialized and snapshot times
    /// resolved; loading this output and re-emitting it reproduces it
    /// byte-for-byte.
    pub fn normalized(&self) -> Result<FileConfig> {
        let mut out = self.clone();
        out.sim.snapshot_times = Some(self.build_sim()?.snapshot_times);
        Ok(out)
    }

    /// Pretty JSON of [`FileConfig::normalized`] with a trailing newline.
    pub fn normalized_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(&self.normalized()?)?;
        text.push('\n');
        Ok(text)
    }
}

/// 41 uniform times over [0, t_end], each snapped to an exact multiple of
/// dt, duplicates removed.
fn default_snapshots(t_end: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0 && t_end >= 0.0 && t_end.is_finite()) {
        return Err(CoreError::Config(format!(
            "cannot build a snapshot grid for dt = {dt}, t_end = {t_end}"
        )));
    }
    let steps = t_end / dt;
    let mut out: Vec<f64> = Vec::with_capacity(41);
    for k in 0..=40u32 {
        let step = (steps * k as f64 / 40.0).round();
        let t = step * dt;
        if out.last().map_or(true, |&prev| t > prev) {
            out.push(t);
        }
    }
    Ok(out)
}

/// Applies `key.path=value` overrides in order.  Each path must already
/// exist in the document; values parse as JSON first, bare words fall
/// back to strings.
pub fn apply_overrides(doc: &mut serde_json::Value, sets: &[String]) -> Result<()> {
    for set in sets {
        let (path, raw) = set.split_once('=').ok_or_else(|| {
            CoreError::Config(format!("override '{set}' is not of the form key=value"))
        })?;
        let value: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut cursor = &mut *doc;
        let segments: Vec<&str> = path.split('.').collect();
        for (i, seg) in segments.iter().enumerate() {
            let next = match cursor {
                serde_json::Value::Object(map) => map.get_mut(*seg).ok_or_else(|| {
                    CoreError::Config(format!(
                        "override '{path}': no key '{seg}' at this position"
                    ))
                })?,
                serde_json::Value::Array(items) => {
                    let idx: usize = seg.parse().map_err(|_| {
                        CoreError::Config(format!(
                            "override '{path}': '{seg}' is not an array index"
                        ))
                    })?;
                    let len = items.len();
                    items.get_mut(idx).ok_or_else(|| {
                        CoreError::Config(format!(
                            "override '{path}': index {idx} out of bounds for length {len}"
                        ))
                    })?
                }
                _ => {
                    return Err(CoreError::Config(format!(
                        "override '{path}': '{seg}' addresses a scalar"
                    )))
                }
            };
            if i + 1 == segments.len() {
                *next = value;
                break;
            }
            cursor = next;
        }
    }
    Ok(())
}

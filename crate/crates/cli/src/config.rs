use std::path::Path;

use epigeom::fivepoint::RansacConfig;
use epigeom::io;
use epigeom::losses::LossWeights;
use epigeom::metrics::DepthEvalConfig;
use epigeom::refine::RefineConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Initial-pose perturbation applied by `refine` before optimizing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Perturbation {
    pub rotation_deg: f64,
    pub translation_frac: f64,
}

/// Parameters of the `synth` command when no scene file is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub width: usize,
    pub height: usize,
    /// Highest texture frequency, cycles per world unit.
    pub max_frequency: f64,
    /// Camera rotation angle, degrees, about a random axis.
    pub rotation_deg: f64,
    /// Camera translation length, random direction.
    pub baseline: f64,
    pub moving_object: bool,
    /// Fraction of the frame the moving object covers.
    pub object_coverage: f64,
    pub object_distance: f64,
    /// World-frame translation of the moving object.
    pub object_motion: [f64; 3],
    pub matches: usize,
    pub match_noise_px: f64,
    pub outlier_fraction: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            width: 128,
            height: 96,
            max_frequency: 0.5,
            rotation_deg: 1.5,
            baseline: 0.5,
            moving_object: false,
            object_coverage: 0.15,
            object_distance: 4.0,
            object_motion: [0.3, 0.0, 0.0],
            matches: 200,
            match_noise_px: 0.0,
            outlier_fraction: 0.0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> CliResult<()> {
        if self.width < 8 || self.height < 8 {
            return Err(CliError::config("synth.width and synth.height must be at least 8"));
        }
        let positive = [
            ("synth.max_frequency", self.max_frequency),
            ("synth.object_coverage", self.object_coverage),
            ("synth.object_distance", self.object_distance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(CliError::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.baseline.is_finite() && self.baseline >= 0.0) {
            return Err(CliError::config("synth.baseline must be non-negative"));
        }
        if !self.rotation_deg.is_finite() || !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err(CliError::config(
                "synth.rotation_deg must be finite and synth.outlier_fraction in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// Every tunable of every command, loadable from one JSON file. Fields
/// left out keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub ransac: RansacConfig,
    pub loss: LossWeights,
    pub depth_eval: DepthEvalConfig,
    pub refine: RefineConfig,
    pub perturbation: Perturbation,
    pub synth: SynthParams,
    pub snippet_length: Option<usize>,
}

impl RunConfig {
    pub const DEFAULT_SNIPPET: usize = 3;

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let cfg = match path {
            Some(p) => {
                require_file(p, "--config")?;
                io::read_json(p).map_err(|e| CliError::config(e.to_string()))?
            }
            None => Self::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Routes the single seed into every consumer of randomness.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.ransac.seed = s;
            self.refine.seed = s;
        }
        self
    }

    pub fn seed(&self) -> u64 {
        self.refine.seed
    }

    pub fn snippet(&self) -> usize {
        self.snippet_length.unwrap_or(Self::DEFAULT_SNIPPET)
    }

    pub fn validate(&self) -> CliResult<()> {
        let section = |name: &str, r: epigeom::Result<()>| {
            r.map_err(|e| CliError::config(format!("config {name}: {e}")))
        };
        section("ransac", self.ransac.validate())?;
        section("loss", self.loss.validate())?;
        section("depth_eval", self.depth_eval.validate())?;
        section("refine", self.refine.validate())?;
        self.synth.validate()?;
        let p = &self.perturbation;
        if !(p.rotation_deg.is_finite() && p.translation_frac.is_finite()) {
            return Err(CliError::config("perturbation values must be finite"));
        }
        if self.snippet_length.is_some_and(|n| n < 2) {
            return Err(CliError::config("snippet_length must be at least 2"));
        }
        Ok(())
    }
}

/// Fails with an I/O exit code naming `flag` and `path` when the input is
/// missing.
pub fn require_file(path: &Path, flag: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::new(
            crate::error::code::IO,
            format!("{flag}: file not found: {}", path.display()),
        ))
    }
}

//! Run configuration: one JSON document covering scene generation, the
//! synthetic detector, the tracking pipeline, evaluation, and default paths.
//! Every section and field is optional; absent fields take the defaults
//! printed by `boxtrack --help`.

use std::path::{Path, PathBuf};

use boxtrack::detector::StubConfig;
use boxtrack::sim::TrajectoryConfig;
use boxtrack::tracker::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::schema::SCHEMA;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// 3D IoU thresholds at which average precision is reported.
    pub iou_thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: vec![0.5],
        }
    }
}

/// Fallback file locations used when the matching flag is absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub scene: Option<PathBuf>,
    pub poses: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub overlay: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    pub trajectory: TrajectoryConfig,
    pub stub: StubConfig,
    pub pipeline: PipelineConfig,
    pub eval: EvalConfig,
    pub paths: Paths,
}

impl RunConfig {
    /// Parse and validate a config document. Errors name the offending key.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config {
                key: path,
                message: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load from `path`, or the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::from_json(&crate::schema::read_text(p)?),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, message: String| {
            Err(CliError::Config {
                key: key.into(),
                message,
            })
        };
        if let Some(s) = &self.schema {
            if s != SCHEMA {
                return bad("schema", format!("expected \"{SCHEMA}\", found \"{s}\""));
            }
        }
        if let Err(e) = self.trajectory.validate() {
            let key = match &e {
                boxtrack::sim::SimError::InvalidConfig { field, .. } => format!("trajectory.{field}"),
                _ => "trajectory.intrinsics".into(),
            };
            return bad(&key, e.to_string());
        }
        if let Err(e) = self.stub.validate() {
            return bad("stub", e);
        }
        if let Err(e) = self.pipeline.validate() {
            return bad("pipeline", e.to_string());
        }
        if let Some(t) = self.eval.iou_thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return bad(
                "eval.iou_thresholds",
                format!("thresholds must lie in (0, 1], found {t}"),
            );
        }
        Ok(())
    }

    /// Replace every seed in the config with `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.trajectory.seed = seed;
        self.stub.seed = seed;
        self.pipeline.ransac.seed = seed;
    }

    /// The defaults as pretty JSON, for `--help`.
    pub fn defaults_json() -> String {
        serde_json::to_string_pretty(&RunConfig::default()).expect("config serializes")
    }
}

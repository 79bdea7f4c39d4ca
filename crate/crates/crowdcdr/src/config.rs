//! Run configuration read from TOML.

use std::path::Path;

use crowdcdr_core::attendance::{DEFAULT_NON_USE, DEFAULT_PREVALENCE, SENSITIVITY_CONSTANT};
use crowdcdr_core::geo::ActivityRule;
use crowdcdr_core::logistic::FitOptions;
use crowdcdr_core::model::StudyWindow;
use crowdcdr_core::pipeline::{default_sensitivity_grid, AnalysisConfig, DailyUseEstimator};
use crowdcdr_core::sbm::GroupDemoConfig;
use crowdcdr_core::spatial::{BootstrapOptions, PeakMode, DEFAULT_BOOTSTRAP_REPLICATES};
use crowdcdr_core::synth::ScenarioConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::{CdrSchema, ParseOptions, DEFAULT_PARSE_TOLERANCE};

/// The bundled configuration, with comments.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../config/default.toml");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: toml::de::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub parse_tolerance: f64,
    pub schema: CdrSchema,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection { parse_tolerance: DEFAULT_PARSE_TOLERANCE, schema: CdrSchema::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttendanceSection {
    pub prevalence: f64,
    pub daily_use: Option<f64>,
    pub daily_use_estimator: DailyUseEstimator,
    pub non_use: Option<f64>,
    pub default_non_use: f64,
    pub sensitivity_constant: f64,
    pub sensitivity_grid: Vec<f64>,
}

impl Default for AttendanceSection {
    fn default() -> Self {
        AttendanceSection {
            prevalence: DEFAULT_PREVALENCE,
            daily_use: None,
            daily_use_estimator: DailyUseEstimator::Interior,
            non_use: None,
            default_non_use: DEFAULT_NON_USE,
            sensitivity_constant: SENSITIVITY_CONSTANT,
            sensitivity_grid: default_sensitivity_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SocialSection {
    pub exclude_local: bool,
    pub subsample_cap: Option<usize>,
    pub max_iter: usize,
    pub score_tol: f64,
    pub step_tol: f64,
}

impl Default for SocialSection {
    fn default() -> Self {
        let fit = FitOptions::default();
        SocialSection {
            exclude_local: true,
            subsample_cap: None,
            max_iter: fit.max_iter,
            score_tol: fit.score_tol,
            step_tol: fit.step_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialSection {
    pub activity_rule: ActivityRule,
    pub peak_mode: PeakMode,
    pub bootstrap_replicates: usize,
    pub permutations: usize,
}

impl Default for SpatialSection {
    fn default() -> Self {
        SpatialSection {
            activity_rule: ActivityRule::FullWindow,
            peak_mode: PeakMode::Data,
            bootstrap_replicates: DEFAULT_BOOTSTRAP_REPLICATES,
            permutations: 9999,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmSection {
    pub group_counts: Vec<u64>,
    pub group_size: u64,
    pub p_in: f64,
    pub p_out: f64,
    pub monte_carlo_replicates: usize,
    pub demo_replicates: usize,
}

impl Default for SbmSection {
    fn default() -> Self {
        let demo = GroupDemoConfig::default();
        SbmSection {
            group_counts: vec![1, 2, 5, 10, 20, 50, 100],
            group_size: demo.group_size,
            p_in: demo.p_in,
            p_out: demo.p_out,
            monte_carlo_replicates: 200,
            demo_replicates: demo.replicates,
        }
    }
}

impl SbmSection {
    pub fn demo(&self, seed: u64) -> GroupDemoConfig {
        GroupDemoConfig {
            group_size: self.group_size,
            p_in: self.p_in,
            p_out: self.p_out,
            replicates: self.demo_replicates,
            seed,
            ..GroupDemoConfig::default()
        }
    }
}

/// Parameters of the bundled synthetic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub attendees: u64,
    pub min_representation: f64,
    pub max_representation: f64,
    pub projection_noise: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            attendees: 800_000,
            min_representation: 0.005,
            max_representation: 0.0745,
            projection_noise: 0.05,
        }
    }
}

impl ScenarioSection {
    pub fn scenario(&self, seed: u64, window: StudyWindow) -> ScenarioConfig {
        let mut sc = ScenarioConfig::standard(seed, self.attendees, self.min_representation, self.max_representation);
        sc.projection_noise = self.projection_noise;
        sc.window = window;
        sc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub window: StudyWindow,
    pub ingest: IngestSection,
    pub attendance: AttendanceSection,
    pub social: SocialSection,
    pub spatial: SpatialSection,
    pub sbm: SbmSection,
    pub scenario: ScenarioSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            window: StudyWindow::default(),
            ingest: IngestSection::default(),
            attendance: AttendanceSection::default(),
            social: SocialSection::default(),
            spatial: SpatialSection::default(),
            sbm: SbmSection::default(),
            scenario: ScenarioSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse { path: path.to_owned(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let label = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: label.clone(), source })?;
        Self::from_toml(&text, &label)
    }

    /// Canonical serialization, independent of comments and key order in the
    /// source file.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn parse_options(&self) -> ParseOptions {
        ParseOptions { window: self.window, tolerance: self.ingest.parse_tolerance }
    }

    pub fn analysis(&self) -> AnalysisConfig {
        let a = &self.attendance;
        AnalysisConfig {
            window: self.window,
            prevalence: a.prevalence,
            daily_use: a.daily_use,
            daily_use_estimator: a.daily_use_estimator,
            non_use: a.non_use,
            default_non_use: a.default_non_use,
            sensitivity_constant: a.sensitivity_constant,
            sensitivity_grid: a.sensitivity_grid.clone(),
            exclude_local: self.social.exclude_local,
            subsample_seed: self.seed,
            subsample_cap: self.social.subsample_cap,
            fit: FitOptions {
                max_iter: self.social.max_iter,
                score_tol: self.social.score_tol,
                step_tol: self.social.step_tol,
            },
            activity_rule: self.spatial.activity_rule,
            peak_mode: self.spatial.peak_mode,
            bootstrap: BootstrapOptions { replicates: self.spatial.bootstrap_replicates, seed: self.seed },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_file_matches_defaults() {
        let parsed = RunConfig::from_toml(DEFAULT_CONFIG_TOML, "default.toml").unwrap();
        let mut expected = RunConfig::default();
        // The grid differs from the computed one only in the last bits.
        assert_eq!(parsed.attendance.sensitivity_grid.len(), expected.attendance.sensitivity_grid.len());
        for (a, b) in parsed.attendance.sensitivity_grid.iter().zip(&expected.attendance.sensitivity_grid) {
            assert!((a - b).abs() < 1e-12);
        }
        expected.attendance.sensitivity_grid = parsed.attendance.sensitivity_grid.clone();
        assert_eq!(parsed, expected);
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml("", "x").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_refused() {
        assert!(RunConfig::from_toml("[social]\nexclude_locals = false\n", "x").is_err());
    }

    #[test]
    fn canonical_round_trip_and_digest() {
        let mut c = RunConfig::default();
        c.attendance.non_use = Some(0.4);
        c.spatial.peak_mode = PeakMode::Calendar;
        let back = RunConfig::from_toml(&c.canonical(), "x").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
        assert_ne!(c.digest(), RunConfig::default().digest());
    }

    #[test]
    fn analysis_carries_seed() {
        let c = RunConfig { seed: 9, ..Default::default() };
        let a = c.analysis();
        assert_eq!((a.subsample_seed, a.bootstrap.seed), (9, 9));
        assert!(a.exclude_local);
    }

    #[test]
    fn scenario_toml_round_trip() {
        let sc = ScenarioSection::default().scenario(3, StudyWindow::default());
        let text = toml::to_string(&sc).unwrap();
        let back: ScenarioConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, sc);
    }
}

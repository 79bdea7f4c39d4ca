//! End-to-end analysis over a stream of records.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::attendance::{
    self, attendance_series, calibrate_non_use, censoring_sensitivity, cumulative_attendance, daily_attendance,
    daily_representation, estimate_daily_use, estimate_daily_use_interior, sensitivity_curve, stay_pairs,
    AdjustmentFactors, AttendanceError, AttendanceSeries, Calibration, SENSITIVITY_CONSTANT,
};
use crate::geo::{ActivityRule, GeoError, Tessellation, TowerActivity};
use crate::logistic::{fit_logistic, FitError, FitOptions, LogisticFit};
use crate::model::{
    CdrEvent, DailyObservation, Day, EventDefect, StateCode, StateTable, StudyWindow, TowerId, TowerSite,
};
use crate::observe::{count_unique_handsets, stays, FirstUseIndex};
use crate::sbm::{estimate_block_probs, BlockEstimates};
use crate::social::{census_triples, subsample_independent, NetworkBuilder, TripleCensus};
use crate::spatial::{
    partition_days, partition_from_peaks, spatial_report, BootstrapOptions, CoLocationSeries, PeakMode, SpatialError,
    SpatialHomophilyReport, CALENDAR_PEAK_DAYS,
};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "kebab-case"))]
pub enum DailyUseEstimator {
    /// Active days over first-to-last span.
    Span,
    /// Same ratio over the days strictly inside each span.
    #[default]
    Interior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub window: StudyWindow,
    pub prevalence: f64,
    /// Fixed daily-use probability; estimated from the data when `None`.
    pub daily_use: Option<f64>,
    pub daily_use_estimator: DailyUseEstimator,
    /// Fixed non-use share; calibrated against projections when `None` and
    /// projections exist, otherwise `default_non_use`.
    pub non_use: Option<f64>,
    pub default_non_use: f64,
    pub sensitivity_constant: f64,
    pub sensitivity_grid: Vec<f64>,
    pub exclude_local: bool,
    pub subsample_seed: u64,
    pub subsample_cap: Option<usize>,
    pub fit: FitOptions,
    pub activity_rule: ActivityRule,
    pub peak_mode: PeakMode,
    pub bootstrap: BootstrapOptions,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            window: StudyWindow::default(),
            prevalence: attendance::DEFAULT_PREVALENCE,
            daily_use: None,
            daily_use_estimator: DailyUseEstimator::Interior,
            non_use: None,
            default_non_use: attendance::DEFAULT_NON_USE,
            sensitivity_constant: SENSITIVITY_CONSTANT,
            sensitivity_grid: default_sensitivity_grid(),
            exclude_local: true,
            subsample_seed: 0,
            subsample_cap: None,
            fit: FitOptions::default(),
            activity_rule: ActivityRule::FullWindow,
            peak_mode: PeakMode::Data,
            bootstrap: BootstrapOptions::default(),
        }
    }
}

/// 0.05, 0.10, ..., 0.90 plus the calibrated default 0.406.
pub fn default_sensitivity_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (1..=18).map(|i| (i * 5) as f64 / 100.0).collect();
    grid.push(attendance::DEFAULT_NON_USE);
    grid.sort_by(f64::total_cmp);
    grid
}

/// Streaming accumulators; shards can be merged in any order.
#[derive(Debug, Clone, Default)]
pub struct Accumulator {
    pub first_use: FirstUseIndex,
    pub network: NetworkBuilder,
    pub activity: TowerActivity,
    pub accepted: u64,
    pub rejected: BTreeMap<EventDefect, u64>,
}

impl Accumulator {
    /// Validates and folds one record. `known_tower` decides whether the
    /// record's tower is listed.
    pub fn observe(&mut self, event: &CdrEvent, window: &StudyWindow, known_tower: impl Fn(TowerId) -> bool) {
        let verdict = event.validate(window).and_then(|_| {
            if known_tower(event.tower) {
                Ok(())
            } else {
                Err(EventDefect::UnknownTower)
            }
        });
        match verdict {
            Ok(()) => {
                self.accepted += 1;
                self.first_use.observe(event, window);
                self.network.observe(event);
                self.activity.observe(event, window);
            }
            Err(defect) => *self.rejected.entry(defect).or_default() += 1,
        }
    }

    pub fn merge(&mut self, other: Accumulator) {
        self.first_use.merge(other.first_use);
        self.network.merge(other.network);
        self.activity.merge(other.activity);
        self.accepted += other.accepted;
        for (k, v) in other.rejected {
            *self.rejected.entry(k).or_default() += v;
        }
    }

    pub fn rejected_total(&self) -> u64 {
        self.rejected.values().sum()
    }
}

pub fn accumulate<'a>(
    events: impl IntoIterator<Item = &'a CdrEvent>,
    towers: &[TowerSite],
    window: &StudyWindow,
) -> Accumulator {
    let known: BTreeSet<TowerId> = towers.iter().map(|t| t.id).collect();
    let mut acc = Accumulator::default();
    for e in events {
        acc.observe(e, window, |t| known.contains(&t));
    }
    acc
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("no valid observations")]
    NoObservations,
    #[error(transparent)]
    Attendance(#[from] AttendanceError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyUseReport {
    pub used: f64,
    pub span: Option<f64>,
    pub interior: Option<f64>,
    pub stays: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocialReport {
    pub nodes: usize,
    pub edges: usize,
    pub census: TripleCensus,
    /// `(closed, representation)` for each subsampled triple.
    pub sample: Vec<(bool, f64, StateCode)>,
    pub fit: Result<LogisticFit, FitError>,
}

/// Attendance stage output.
#[derive(Debug, Clone)]
pub struct AttendanceReport {
    pub observations: usize,
    pub persons: usize,
    pub handsets: BTreeMap<(StateCode, Day), u64>,
    pub daily_use: DailyUseReport,
    pub calibration: Option<Calibration>,
    /// Daily totals with non-use zero, the calibration input.
    pub base_daily: BTreeMap<Day, f64>,
    pub series: AttendanceSeries,
    /// Cumulative total with non-use zero.
    pub uncorrected_cumulative: f64,
    pub sensitivity: Vec<(f64, f64)>,
    pub censoring_sensitivity: Vec<(f64, f64)>,
}

/// Spatial stage output.
#[derive(Debug, Clone)]
pub struct SpatialStage {
    pub tessellation: Tessellation,
    pub colocation: CoLocationSeries,
    pub report: SpatialHomophilyReport,
}

/// Everything the pipeline computes.
#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub accepted_events: u64,
    pub rejected_events: u64,
    pub attendance: AttendanceReport,
    pub social: SocialReport,
    pub blocks: BlockEstimates,
    pub spatial: SpatialStage,
}

fn estimate_use(obs: &[DailyObservation], cfg: &AnalysisConfig) -> Result<DailyUseReport, AttendanceError> {
    let pairs = stay_pairs(&stays(obs));
    let span = estimate_daily_use(&pairs).ok();
    let interior = estimate_daily_use_interior(&pairs).ok();
    let used = match (cfg.daily_use, cfg.daily_use_estimator) {
        (Some(p), _) => p,
        (None, DailyUseEstimator::Span) => estimate_daily_use(&pairs)?,
        (None, DailyUseEstimator::Interior) => estimate_daily_use_interior(&pairs)?,
    };
    Ok(DailyUseReport { used, span, interior, stays: pairs.len() })
}

/// Handset counts, usage estimates, calibration and attendance series.
pub fn run_attendance(
    acc: &Accumulator,
    states: &StateTable,
    projections: &BTreeMap<Day, f64>,
    cfg: &AnalysisConfig,
) -> Result<AttendanceReport, PipelineError> {
    let window = cfg.window;
    let obs = acc.first_use.observations();
    if obs.is_empty() {
        return Err(PipelineError::NoObservations);
    }
    let handsets = count_unique_handsets(&obs);
    let daily_use = estimate_use(&obs, cfg)?;

    let base = AdjustmentFactors::new(cfg.prevalence, daily_use.used, 0.0)?;
    let base_daily = daily_attendance(&handsets, states, &base)?;
    let (non_use, calibration) = match cfg.non_use {
        Some(q) => (q, None),
        None if !projections.is_empty() => {
            let c = calibrate_non_use(&base_daily, projections)?;
            (c.non_use, Some(c))
        }
        None => (cfg.default_non_use, None),
    };
    let factors = AdjustmentFactors::new(cfg.prevalence, daily_use.used, non_use)?;
    let series = attendance_series(&obs, &handsets, states, &factors, &window)?;
    let uncorrected_cumulative = cumulative_attendance(&obs, states, &base, &window)?.final_total();
    Ok(AttendanceReport {
        observations: obs.len(),
        persons: obs.iter().map(|o| o.person).collect::<BTreeSet<_>>().len(),
        handsets,
        daily_use,
        calibration,
        base_daily,
        series,
        uncorrected_cumulative,
        sensitivity: sensitivity_curve(cfg.sensitivity_constant, &cfg.sensitivity_grid)?,
        censoring_sensitivity: censoring_sensitivity(uncorrected_cumulative, &cfg.sensitivity_grid)?,
    })
}

/// Network, triple census, subsample and closure fit, plus block densities.
/// Fit failures are carried in the report.
pub fn run_social(
    acc: &Accumulator,
    states: &StateTable,
    representation: &BTreeMap<StateCode, f64>,
    cfg: &AnalysisConfig,
) -> (SocialReport, BlockEstimates) {
    let net = acc.network.build(states, cfg.exclude_local);
    let census = census_triples(&net);
    let sample: Vec<(bool, f64, StateCode)> = subsample_independent(&net, cfg.subsample_seed, cfg.subsample_cap)
        .into_iter()
        .filter_map(|t| representation.get(&t.state).map(|&w| (t.closed, w, t.state)))
        .collect();
    let pairs: Vec<(bool, f64)> = sample.iter().map(|&(c, w, _)| (c, w)).collect();
    let fit = fit_logistic(&pairs, &cfg.fit);
    let blocks = estimate_block_probs(&net);
    (SocialReport { nodes: net.node_count(), edges: net.edge_count(), census, sample, fit }, blocks)
}

/// Tessellation over active towers, co-location series and the per-state report.
pub fn run_spatial(
    acc: &Accumulator,
    towers: &[TowerSite],
    attendance: &AttendanceReport,
    cfg: &AnalysisConfig,
) -> Result<SpatialStage, PipelineError> {
    let window = cfg.window;
    let obs = acc.first_use.observations();
    let tessellation = Tessellation::build(&acc.activity.apply(towers, ActivityRule::FullWindow, None))?;
    let colocation = match cfg.activity_rule {
        ActivityRule::FullWindow => {
            CoLocationSeries::from_observations(&obs, |t, _| tessellation.owner_of(t).unwrap_or(t))
        }
        ActivityRule::Daily => {
            let mut per_day: BTreeMap<Day, Tessellation> = BTreeMap::new();
            for d in window.day_range() {
                let sites = acc.activity.apply(towers, ActivityRule::Daily, Some(d));
                if sites.iter().any(|s| s.active) {
                    per_day.insert(d, Tessellation::build(&sites)?);
                }
            }
            CoLocationSeries::from_observations(&obs, |t, d| per_day.get(&d).and_then(|ts| ts.owner_of(t)).unwrap_or(t))
        }
    };
    let partition = match cfg.peak_mode {
        PeakMode::Data => partition_days(&attendance.series.daily, &window)?,
        PeakMode::Calendar => partition_from_peaks(&CALENDAR_PEAK_DAYS, &window)?,
    };
    let report = spatial_report(
        &colocation,
        partition,
        &daily_representation(&attendance.series.by_state_daily),
        &window,
        &cfg.bootstrap,
    )?;
    Ok(SpatialStage { tessellation, colocation, report })
}

/// Runs every stage.
pub fn analyze(
    acc: &Accumulator,
    towers: &[TowerSite],
    states: &StateTable,
    projections: &BTreeMap<Day, f64>,
    cfg: &AnalysisConfig,
) -> Result<AnalysisReport, PipelineError> {
    let attendance = run_attendance(acc, states, projections, cfg)?;
    let (social, blocks) = run_social(acc, states, &attendance.series.representation, cfg);
    let spatial = run_spatial(acc, towers, &attendance, cfg)?;
    Ok(AnalysisReport {
        accepted_events: acc.accepted,
        rejected_events: acc.rejected_total(),
        attendance,
        social,
        blocks,
        spatial,
    })
}

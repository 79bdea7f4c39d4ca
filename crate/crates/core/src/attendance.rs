//! Attendance estimation from distinct-handset counts.
//!
//! Raw counts are scaled up by four factors: the state-specific market
//! share of the operator, national handset prevalence, the probability that
//! a present user touches the phone on a given day, and the share of
//! attendees who never use their phone during the stay. Cumulative series
//! skip the daily-use factor.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::model::{DailyObservation, Day, PersonId, StateCode, StateTable, StudyWindow};
use crate::observe::Stay;

/// National wireless subscription rate used as the default prevalence.
pub const DEFAULT_PREVALENCE: f64 = 0.713;
/// Default probability of use on a given day of the stay.
pub const DEFAULT_DAILY_USE: f64 = 0.404;
/// Default share of attendees who never use their phone.
pub const DEFAULT_NON_USE: f64 = 0.406;
/// Constant of the published sensitivity curve `c / q`.
pub const SENSITIVITY_CONSTANT: f64 = 24_467_257.0;
/// Upper clamp for a calibrated non-use share.
pub const MAX_NON_USE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttendanceError {
    #[error("no stays to estimate daily use from")]
    NoStays,
    #[error("invalid stay: {active_days} active days over a stay of {stay_length}")]
    InvalidStay { active_days: u32, stay_length: u32 },
    #[error("state {0} has no market share")]
    MissingMarketShare(StateCode),
    #[error("adjustment factor {name} = {value} outside its range")]
    InvalidFactor { name: &'static str, value: f64 },
    #[error("no projection day overlaps the estimated series")]
    NoProjectionOverlap,
    #[error("base estimates are all zero on projection days")]
    DegenerateCalibration,
    #[error("non-use share {0} outside (0, 1)")]
    Domain(f64),
    #[error("total attendance is zero")]
    ZeroTotal,
}

/// Multiplicative corrections applied to raw handset counts.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdjustmentFactors {
    pub prevalence: f64,
    pub daily_use: f64,
    pub non_use: f64,
}

impl Default for AdjustmentFactors {
    fn default() -> Self {
        AdjustmentFactors { prevalence: DEFAULT_PREVALENCE, daily_use: DEFAULT_DAILY_USE, non_use: DEFAULT_NON_USE }
    }
}

impl AdjustmentFactors {
    /// Prevalence and daily use must lie in (0, 1]; non-use in [0, 1). A
    /// zero non-use share is how uncalibrated base series are computed.
    pub fn new(prevalence: f64, daily_use: f64, non_use: f64) -> Result<Self, AttendanceError> {
        let f = AdjustmentFactors { prevalence, daily_use, non_use };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), AttendanceError> {
        if !(self.prevalence > 0.0 && self.prevalence <= 1.0) {
            return Err(AttendanceError::InvalidFactor { name: "prevalence", value: self.prevalence });
        }
        if !(self.daily_use > 0.0 && self.daily_use <= 1.0) {
            return Err(AttendanceError::InvalidFactor { name: "daily_use", value: self.daily_use });
        }
        if !(self.non_use >= 0.0 && self.non_use < 1.0) {
            return Err(AttendanceError::InvalidFactor { name: "non_use", value: self.non_use });
        }
        Ok(())
    }

    pub fn with_non_use(self, non_use: f64) -> Self {
        AdjustmentFactors { non_use, ..self }
    }

    fn daily_scale(&self, share: f64) -> f64 {
        1.0 / share / self.prevalence / self.daily_use / (1.0 - self.non_use)
    }

    fn cumulative_scale(&self, share: f64) -> f64 {
        1.0 / share / self.prevalence / (1.0 - self.non_use)
    }
}

fn check_stay(active: u32, length: u32) -> Result<(), AttendanceError> {
    if active == 0 || active > length {
        return Err(AttendanceError::InvalidStay { active_days: active, stay_length: length });
    }
    Ok(())
}

/// Total active days over total stay length, each stay spanning first to
/// last active day.
pub fn estimate_daily_use(stays: &[(u32, u32)]) -> Result<f64, AttendanceError> {
    if stays.is_empty() {
        return Err(AttendanceError::NoStays);
    }
    let (mut active, mut length) = (0u64, 0u64);
    for &(a, l) in stays {
        check_stay(a, l)?;
        active += a as u64;
        length += l as u64;
    }
    Ok(active as f64 / length as f64)
}

/// Daily-use estimate that corrects for the observed stay being truncated
/// to the first and last active day.
///
/// Under independent daily use, the days strictly between the first and
/// last active day are untouched by that truncation, so the ratio is taken
/// over interior days only. Stays shorter than three days carry no interior.
pub fn estimate_daily_use_interior(stays: &[(u32, u32)]) -> Result<f64, AttendanceError> {
    let (mut active, mut length) = (0u64, 0u64);
    for &(a, l) in stays {
        check_stay(a, l)?;
        if l >= 2 && a < 2 {
            // A multi-day stay is bounded by two active days.
            return Err(AttendanceError::InvalidStay { active_days: a, stay_length: l });
        }
        if l >= 3 {
            active += (a - 2) as u64;
            length += (l - 2) as u64;
        }
    }
    if length == 0 {
        return Err(AttendanceError::NoStays);
    }
    Ok(active as f64 / length as f64)
}

pub fn stay_pairs(stays: &[Stay]) -> Vec<(u32, u32)> {
    stays.iter().map(|s| (s.active_days, s.length())).collect()
}

fn share_of(states: &StateTable, code: StateCode) -> Result<f64, AttendanceError> {
    states.market_share(code).ok_or(AttendanceError::MissingMarketShare(code))
}

/// Per-state daily estimates with all four corrections.
pub fn daily_attendance_by_state(
    counts: &BTreeMap<(StateCode, Day), u64>,
    states: &StateTable,
    factors: &AdjustmentFactors,
) -> Result<BTreeMap<(StateCode, Day), f64>, AttendanceError> {
    factors.validate()?;
    counts
        .iter()
        .map(|(&(state, day), &n)| Ok(((state, day), n as f64 * factors.daily_scale(share_of(states, state)?))))
        .collect()
}

/// Daily estimate summed over states. State shares are applied per state
/// before summation; the sum runs in state-code order for every day.
pub fn daily_attendance(
    counts: &BTreeMap<(StateCode, Day), u64>,
    states: &StateTable,
    factors: &AdjustmentFactors,
) -> Result<BTreeMap<Day, f64>, AttendanceError> {
    let by_state = daily_attendance_by_state(counts, states, factors)?;
    Ok(sum_over_states(&by_state))
}

pub fn sum_over_states(by_state: &BTreeMap<(StateCode, Day), f64>) -> BTreeMap<Day, f64> {
    let mut out = BTreeMap::new();
    for (&(_, day), &v) in by_state {
        *out.entry(day).or_insert(0.0) += v;
    }
    out
}

/// Cumulative series: persons first seen on or before each day.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeAttendance {
    pub total: BTreeMap<Day, f64>,
    pub by_state: BTreeMap<(StateCode, Day), f64>,
    /// Distinct persons per state over the whole window, before scaling.
    pub distinct_persons: BTreeMap<StateCode, u64>,
}

impl CumulativeAttendance {
    pub fn final_by_state(&self) -> BTreeMap<StateCode, f64> {
        let mut out = BTreeMap::new();
        for (&(state, _), &v) in &self.by_state {
            // Keys are ordered by day within each state, so the last write wins.
            out.insert(state, v);
        }
        out
    }

    pub fn final_total(&self) -> f64 {
        self.total.values().next_back().copied().unwrap_or(0.0)
    }
}

/// Cumulative attendance for every day of the window, scaled by market
/// share, prevalence and non-use only.
pub fn cumulative_attendance(
    observations: &[DailyObservation],
    states: &StateTable,
    factors: &AdjustmentFactors,
    window: &StudyWindow,
) -> Result<CumulativeAttendance, AttendanceError> {
    factors.validate()?;
    let mut first_seen: BTreeMap<PersonId, (Day, StateCode)> = BTreeMap::new();
    for o in observations {
        first_seen
            .entry(o.person)
            .and_modify(|e| {
                if o.day < e.0 {
                    *e = (o.day, o.state);
                }
            })
            .or_insert((o.day, o.state));
    }
    let mut arrivals: BTreeMap<StateCode, BTreeMap<Day, u64>> = BTreeMap::new();
    for &(day, state) in first_seen.values() {
        *arrivals.entry(state).or_default().entry(day).or_default() += 1;
    }
    let mut by_state = BTreeMap::new();
    let mut distinct_persons = BTreeMap::new();
    for (&state, per_day) in &arrivals {
        let scale = factors.cumulative_scale(share_of(states, state)?);
        let mut running = 0u64;
        for day in window.day_range() {
            running += per_day.get(&day).copied().unwrap_or(0);
            by_state.insert((state, day), running as f64 * scale);
        }
        distinct_persons.insert(state, running);
    }
    let mut total: BTreeMap<Day, f64> = window.day_range().map(|d| (d, 0.0)).collect();
    for (&(_, day), &v) in &by_state {
        *total.get_mut(&day).expect("window day") += v;
    }
    Ok(CumulativeAttendance { total, by_state, distinct_persons })
}

/// Cumulative per-state estimates from distinct-person counts alone.
pub fn extrapolate_distinct(
    distinct: &BTreeMap<StateCode, u64>,
    states: &StateTable,
    factors: &AdjustmentFactors,
) -> Result<BTreeMap<StateCode, f64>, AttendanceError> {
    factors.validate()?;
    distinct.iter().map(|(&s, &n)| Ok((s, n as f64 * factors.cumulative_scale(share_of(states, s)?)))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationWarning {
    /// Projections sit at or below the uncorrected estimates; non-use set to zero.
    ProjectionsBelowEstimates,
    /// The least-squares share exceeded the upper clamp.
    Clamped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub non_use: f64,
    /// Least-squares scale between base estimates and projections.
    pub scale: f64,
    pub days_used: Vec<Day>,
    pub warning: Option<CalibrationWarning>,
}

/// Least-squares non-use share `q` minimising `sum (base_d / (1 - q) - proj_d)^2`
/// over days present in both series. `base` must be computed with zero non-use.
pub fn calibrate_non_use(
    base: &BTreeMap<Day, f64>,
    projections: &BTreeMap<Day, f64>,
) -> Result<Calibration, AttendanceError> {
    let days: Vec<Day> = projections.keys().copied().filter(|d| base.contains_key(d)).collect();
    if days.is_empty() {
        return Err(AttendanceError::NoProjectionOverlap);
    }
    let (mut cross, mut sq) = (0.0, 0.0);
    for d in &days {
        let (b, p) = (base[d], projections[d]);
        cross += b * p;
        sq += b * b;
    }
    if sq == 0.0 {
        return Err(AttendanceError::DegenerateCalibration);
    }
    let scale = cross / sq;
    let (non_use, warning) = if scale <= 1.0 {
        (0.0, Some(CalibrationWarning::ProjectionsBelowEstimates))
    } else {
        let q = 1.0 - 1.0 / scale;
        if q > MAX_NON_USE {
            (MAX_NON_USE, Some(CalibrationWarning::Clamped))
        } else {
            (q, None)
        }
    };
    Ok(Calibration { non_use, scale, days_used: days, warning })
}

/// The published sensitivity curve `f(q) = c / q` over a grid of non-use shares.
pub fn sensitivity_curve(c: f64, grid: &[f64]) -> Result<Vec<(f64, f64)>, AttendanceError> {
    grid.iter()
        .map(|&q| {
            if !(q > 0.0 && q < 1.0) {
                return Err(AttendanceError::Domain(q));
            }
            Ok((q, c / q))
        })
        .collect()
}

/// Sensitivity of the cumulative total under the `1 / (1 - q)` censoring
/// correction, given the total before any non-use correction.
pub fn censoring_sensitivity(uncorrected_total: f64, grid: &[f64]) -> Result<Vec<(f64, f64)>, AttendanceError> {
    grid.iter()
        .map(|&q| {
            if !(q >= 0.0 && q < 1.0) {
                return Err(AttendanceError::Domain(q));
            }
            Ok((q, uncorrected_total / (1.0 - q)))
        })
        .collect()
}

/// Each state's share of the summed estimate.
pub fn state_representation(estimates: &BTreeMap<StateCode, f64>) -> Result<BTreeMap<StateCode, f64>, AttendanceError> {
    let total: f64 = estimates.values().sum();
    if !(total > 0.0) {
        return Err(AttendanceError::ZeroTotal);
    }
    Ok(estimates.iter().map(|(&s, &v)| (s, v / total)).collect())
}

/// Each state's share of each day's estimate, for days with nonzero total.
pub fn daily_representation(by_state_daily: &BTreeMap<(StateCode, Day), f64>) -> BTreeMap<(StateCode, Day), f64> {
    let totals = sum_over_states(by_state_daily);
    by_state_daily
        .iter()
        .filter(|(&(_, d), _)| totals[&d] > 0.0)
        .map(|(&(s, d), &v)| ((s, d), v / totals[&d]))
        .collect()
}

/// Full attendance output.
#[derive(Debug, Clone, PartialEq)]
pub struct AttendanceSeries {
    pub factors: AdjustmentFactors,
    pub daily: BTreeMap<Day, f64>,
    pub cumulative: BTreeMap<Day, f64>,
    pub by_state_daily: BTreeMap<(StateCode, Day), f64>,
    pub by_state_cumulative: BTreeMap<StateCode, f64>,
    pub representation: BTreeMap<StateCode, f64>,
}

pub fn attendance_series(
    observations: &[DailyObservation],
    counts: &BTreeMap<(StateCode, Day), u64>,
    states: &StateTable,
    factors: &AdjustmentFactors,
    window: &StudyWindow,
) -> Result<AttendanceSeries, AttendanceError> {
    let by_state_daily = daily_attendance_by_state(counts, states, factors)?;
    let daily = sum_over_states(&by_state_daily);
    let cumulative = cumulative_attendance(observations, states, factors, window)?;
    let by_state_cumulative = cumulative.final_by_state();
    let representation = state_representation(&by_state_cumulative)?;
    Ok(AttendanceSeries {
        factors: *factors,
        daily,
        cumulative: cumulative.total,
        by_state_daily,
        by_state_cumulative,
        representation,
    })
}

//! Daily co-location probabilities per state and their aggregates.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math;
use crate::model::{DailyObservation, Day, StateCode, StudyWindow, TowerId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpatialError {
    #[error("bootstrap needs at least two defined days, got {0}")]
    TooFewDays(usize),
    #[error("bootstrap needs at least 200 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("peak day {0} outside the study window")]
    PeakOutsideWindow(Day),
}

/// Probability that an ordered pair of distinct persons shares a cell:
/// `sum_c n_c (n_c - 1) / (N (N - 1))`. `None` when fewer than two persons.
pub fn colocation_probability(counts: &[u64]) -> Option<f64> {
    let total: u128 = counts.iter().map(|&c| c as u128).sum();
    if total < 2 {
        return None;
    }
    let pairs: u128 = counts.iter().map(|&c| c as u128 * (c as u128).saturating_sub(1)).sum();
    Some(pairs as f64 / (total * (total - 1)) as f64)
}

/// Per-(state, day) cell occupancy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoLocationSeries {
    pub cells: BTreeMap<(StateCode, Day), BTreeMap<TowerId, u64>>,
}

impl CoLocationSeries {
    /// Each observation is placed in the cell owning its first tower.
    pub fn from_observations(observations: &[DailyObservation], cell_of: impl Fn(TowerId, Day) -> TowerId) -> Self {
        let mut cells: BTreeMap<(StateCode, Day), BTreeMap<TowerId, u64>> = BTreeMap::new();
        for o in observations {
            *cells.entry((o.state, o.day)).or_default().entry(cell_of(o.first_tower, o.day)).or_default() += 1;
        }
        CoLocationSeries { cells }
    }

    pub fn total(&self, state: StateCode, day: Day) -> u64 {
        self.cells.get(&(state, day)).map_or(0, |m| m.values().sum())
    }

    pub fn probability(&self, state: StateCode, day: Day) -> Option<f64> {
        let counts: Vec<u64> = self.cells.get(&(state, day))?.values().copied().collect();
        colocation_probability(&counts)
    }

    pub fn states(&self) -> BTreeSet<StateCode> {
        self.cells.keys().map(|k| k.0).collect()
    }

    /// Defined daily probabilities for one state, keyed by day.
    pub fn daily_probabilities(&self, state: StateCode) -> BTreeMap<Day, f64> {
        self.cells
            .range((state, Day::MIN)..=(state, Day::MAX))
            .filter_map(|(&(_, d), m)| colocation_probability(&m.values().copied().collect::<Vec<_>>()).map(|p| (d, p)))
            .collect()
    }
}

/// High- and low-volume day sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DayPartition {
    pub peaks: Vec<Day>,
    pub high: BTreeSet<Day>,
    pub low: BTreeSet<Day>,
}

/// Days the crowds peaked on when taken from the calendar: 10 Feb, 15 Feb
/// and 10 Mar 2013 as day indices from 1 Jan.
pub const CALENDAR_PEAK_DAYS: [Day; 3] = [41, 46, 69];

/// Half-width of the window placed around each peak.
pub const PEAK_HALF_WIDTH: Day = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "kebab-case"))]
pub enum PeakMode {
    /// Three highest-attendance days.
    #[default]
    Data,
    /// Fixed calendar peak days.
    Calendar,
}

/// Windows of ±2 days around each peak, clipped to the study window; every
/// other day of the window is low volume.
pub fn partition_from_peaks(peaks: &[Day], window: &StudyWindow) -> Result<DayPartition, SpatialError> {
    let mut high = BTreeSet::new();
    for &p in peaks {
        if !window.day_range().contains(&p) {
            return Err(SpatialError::PeakOutsideWindow(p));
        }
        let lo = p.saturating_sub(PEAK_HALF_WIDTH).max(window.first_day());
        let hi = (p + PEAK_HALF_WIDTH).min(window.last_day());
        high.extend(lo..=hi);
    }
    let low = window.day_range().filter(|d| !high.contains(d)).collect();
    let mut peaks = peaks.to_vec();
    peaks.sort_unstable();
    Ok(DayPartition { peaks, high, low })
}

/// Picks the three highest-attendance days. A day within ±2 of an
/// already chosen peak belongs to that peak's window and is not a new peak.
pub fn find_peaks(daily: &BTreeMap<Day, f64>, count: usize) -> Vec<Day> {
    let mut ranked: Vec<(Day, f64)> = daily.iter().map(|(&d, &v)| (d, v)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut peaks: Vec<Day> = Vec::with_capacity(count);
    for (d, _) in ranked {
        if peaks.len() == count {
            break;
        }
        if peaks.iter().all(|&p| p.abs_diff(d) > PEAK_HALF_WIDTH) {
            peaks.push(d);
        }
    }
    peaks
}

pub fn partition_days(daily: &BTreeMap<Day, f64>, window: &StudyWindow) -> Result<DayPartition, SpatialError> {
    partition_from_peaks(&find_peaks(daily, 3), window)
}

/// Point estimates for one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QEstimates {
    pub q_a: Option<f64>,
    pub q_h: Option<f64>,
    pub q_l: Option<f64>,
    pub q_d: Option<f64>,
    pub days_defined: usize,
}

fn mean_over(p: &BTreeMap<Day, f64>, days: impl Iterator<Item = Day>) -> Option<f64> {
    let v: Vec<f64> = days.filter_map(|d| p.get(&d).copied()).collect();
    math::mean(&v)
}

/// Means of the defined daily probabilities over all, high and low days.
/// Days without a defined probability drop out of the divisor.
pub fn aggregate_q(daily: &BTreeMap<Day, f64>, partition: &DayPartition, window: &StudyWindow) -> QEstimates {
    let q_a = mean_over(daily, window.day_range());
    let q_h = mean_over(daily, partition.high.iter().copied());
    let q_l = mean_over(daily, partition.low.iter().copied());
    let q_d = match (q_h, q_l) {
        (Some(h), Some(l)) if l > 0.0 => Some(h / l),
        _ => None,
    };
    QEstimates { q_a, q_h, q_l, q_d, days_defined: window.day_range().filter(|d| daily.contains_key(d)).count() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

pub const DEFAULT_BOOTSTRAP_REPLICATES: usize = 1000;
pub const MIN_BOOTSTRAP_REPLICATES: usize = 200;

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

fn resample_mean(values: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let n = values.len();
    (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64
}

fn percentile_interval(mut stats: Vec<f64>) -> Interval {
    stats.sort_by(f64::total_cmp);
    Interval { lo: math::quantile_sorted(&stats, 0.025), hi: math::quantile_sorted(&stats, 0.975) }
}

/// Percentile 95% interval for the mean, resampling days with replacement.
/// Each replicate draws from its own ChaCha stream so the result does not
/// depend on evaluation order.
pub fn bootstrap_mean_ci(values: &[f64], replicates: usize, seed: u64) -> Result<Interval, SpatialError> {
    if values.len() < 2 {
        return Err(SpatialError::TooFewDays(values.len()));
    }
    if replicates < MIN_BOOTSTRAP_REPLICATES {
        return Err(SpatialError::TooFewReplicates(replicates));
    }
    let stats = (0..replicates).map(|b| resample_mean(values, &mut replicate_rng(seed, b))).collect();
    Ok(percentile_interval(stats))
}

/// Percentile 95% interval for `mean(high) / mean(low)`, resampling the two
/// day strata separately. Replicates with a zero low mean are skipped.
pub fn bootstrap_ratio_ci(high: &[f64], low: &[f64], replicates: usize, seed: u64) -> Result<Interval, SpatialError> {
    if high.len() < 2 || low.len() < 2 {
        return Err(SpatialError::TooFewDays(high.len().min(low.len())));
    }
    if replicates < MIN_BOOTSTRAP_REPLICATES {
        return Err(SpatialError::TooFewReplicates(replicates));
    }
    let stats: Vec<f64> = (0..replicates)
        .filter_map(|b| {
            let mut rng = replicate_rng(seed, b);
            let h = resample_mean(high, &mut rng);
            let l = resample_mean(low, &mut rng);
            (l > 0.0).then(|| h / l)
        })
        .collect();
    if stats.is_empty() {
        return Err(SpatialError::TooFewDays(0));
    }
    Ok(percentile_interval(stats))
}

/// Widens `ci` to include `point` when a skewed bootstrap distribution
/// leaves the point estimate outside the percentile interval.
fn covering(ci: Interval, point: f64) -> Interval {
    Interval { lo: ci.lo.min(point), hi: ci.hi.max(point) }
}

/// Mean over days (with a share) of log10 daily representation per state.
pub fn mean_log_representation(daily_representation: &BTreeMap<(StateCode, Day), f64>) -> BTreeMap<StateCode, f64> {
    let mut acc: BTreeMap<StateCode, (f64, usize)> = BTreeMap::new();
    for (&(s, _), &w) in daily_representation {
        if w > 0.0 {
            let e = acc.entry(s).or_default();
            e.0 += math::log10(w);
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(s, (sum, n))| (s, sum / n as f64)).collect()
}

/// Pearson correlation between a per-state statistic and mean log10 daily
/// representation. States missing either value are dropped; `None` for
/// fewer than three pairs or a zero-variance margin.
pub fn correlate(
    values: &BTreeMap<StateCode, f64>,
    daily_representation: &BTreeMap<(StateCode, Day), f64>,
) -> Option<f64> {
    let rep = mean_log_representation(daily_representation);
    let (x, y): (Vec<f64>, Vec<f64>) = values.iter().filter_map(|(s, &v)| rep.get(s).map(|&r| (v, r))).unzip();
    if x.len() < 3 {
        return None;
    }
    math::pearson(&x, &y)
}

/// Two-sided permutation p-value for a Pearson correlation.
pub fn permutation_p_value(x: &[f64], y: &[f64], permutations: usize, seed: u64) -> Option<f64> {
    use rand::seq::SliceRandom;
    let observed = math::abs(math::pearson(x, y)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = y.to_vec();
    let mut extreme = 0usize;
    for _ in 0..permutations {
        shuffled.shuffle(&mut rng);
        if math::pearson(x, &shuffled).is_some_and(|r| math::abs(r) >= observed - 1e-12) {
            extreme += 1;
        }
    }
    Some((extreme + 1) as f64 / (permutations + 1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpatial {
    pub estimates: QEstimates,
    pub ci_a: Option<Interval>,
    pub ci_d: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialHomophilyReport {
    pub per_state: BTreeMap<StateCode, StateSpatial>,
    pub partition: DayPartition,
    pub rho_a: Option<f64>,
    pub rho_d: Option<f64>,
}

impl SpatialHomophilyReport {
    pub fn q_a(&self) -> BTreeMap<StateCode, f64> {
        self.per_state.iter().filter_map(|(&s, r)| r.estimates.q_a.map(|q| (s, q))).collect()
    }

    pub fn q_d(&self) -> BTreeMap<StateCode, f64> {
        self.per_state.iter().filter_map(|(&s, r)| r.estimates.q_d.map(|q| (s, q))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions { replicates: DEFAULT_BOOTSTRAP_REPLICATES, seed: 0 }
    }
}

/// Point estimates, bootstrap intervals and correlations for every state in
/// the series.
pub fn spatial_report(
    series: &CoLocationSeries,
    partition: DayPartition,
    daily_representation: &BTreeMap<(StateCode, Day), f64>,
    window: &StudyWindow,
    bootstrap: &BootstrapOptions,
) -> Result<SpatialHomophilyReport, SpatialError> {
    if bootstrap.replicates < MIN_BOOTSTRAP_REPLICATES {
        return Err(SpatialError::TooFewReplicates(bootstrap.replicates));
    }
    let mut per_state = BTreeMap::new();
    for state in series.states() {
        let daily = series.daily_probabilities(state);
        let estimates = aggregate_q(&daily, &partition, window);
        // Distinct, order-independent seed per state.
        let seed = bootstrap.seed ^ (state.get() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let all: Vec<f64> = daily.values().copied().collect();
        let ci_a = estimates
            .q_a
            .and_then(|q| bootstrap_mean_ci(&all, bootstrap.replicates, seed).ok().map(|ci| covering(ci, q)));
        let pick = |days: &BTreeSet<Day>| days.iter().filter_map(|d| daily.get(d).copied()).collect::<Vec<_>>();
        let ci_d = estimates.q_d.and_then(|q| {
            bootstrap_ratio_ci(
                &pick(&partition.high),
                &pick(&partition.low),
                bootstrap.replicates,
                seed.wrapping_add(1),
            )
            .ok()
            .map(|ci| covering(ci, q))
        });
        per_state.insert(state, StateSpatial { estimates, ci_a, ci_d });
    }
    let mut report = SpatialHomophilyReport { per_state, partition, rho_a: None, rho_d: None };
    report.rho_a = correlate(&report.q_a(), daily_representation);
    report.rho_d = correlate(&report.q_d(), daily_representation);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn s(c: u8) -> StateCode {
        StateCode::new(c).unwrap()
    }

    /// Enumerates ordered pairs of distinct persons.
    fn brute_force(counts: &[u64]) -> Option<f64> {
        let persons: Vec<usize> =
            counts.iter().enumerate().flat_map(|(c, &n)| core::iter::repeat_n(c, n as usize)).collect();
        let n = persons.len();
        if n < 2 {
            return None;
        }
        let mut same = 0u64;
        for i in 0..n {
            for j in 0..n {
                if i != j && persons[i] == persons[j] {
                    same += 1;
                }
            }
        }
        Some(same as f64 / (n * (n - 1)) as f64)
    }

    #[test]
    fn small_cases() {
        assert_eq!(colocation_probability(&[2, 0]), Some(1.0));
        assert_eq!(colocation_probability(&[1, 1]), Some(0.0));
        assert!((colocation_probability(&[2, 2]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(colocation_probability(&[1]), None);
        assert_eq!(colocation_probability(&[]), None);
    }

    #[test]
    fn uniform_spread_tends_to_one_over_c() {
        let c = 50;
        let p = colocation_probability(&vec![20_000u64; c]).unwrap();
        assert!((p - 1.0 / c as f64).abs() < 1e-5);
    }

    fn window() -> StudyWindow {
        StudyWindow::default()
    }

    #[test]
    fn constant_series() {
        let daily: BTreeMap<Day, f64> = window().day_range().map(|d| (d, 0.013)).collect();
        let part = partition_from_peaks(&[10, 20, 30], &window()).unwrap();
        let q = aggregate_q(&daily, &part, &window());
        assert!((q.q_a.unwrap() - 0.013).abs() < 1e-15);
        assert!((q.q_d.unwrap() - 1.0).abs() < 1e-12);
        let ci = bootstrap_mean_ci(&daily.values().copied().collect::<Vec<_>>(), 1000, 4).unwrap();
        assert!((ci.lo - 0.013).abs() < 1e-15 && (ci.hi - 0.013).abs() < 1e-15);
    }

    #[test]
    fn high_low_ratio() {
        let part = partition_from_peaks(&[10, 20, 30], &window()).unwrap();
        let daily: BTreeMap<Day, f64> =
            window().day_range().map(|d| (d, if part.high.contains(&d) { 0.02 } else { 0.01 })).collect();
        let q = aggregate_q(&daily, &part, &window());
        assert!((q.q_d.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn undefined_days_shrink_the_divisor() {
        let daily: BTreeMap<Day, f64> = [(1, 0.1), (2, 0.3)].into_iter().collect();
        let part = partition_from_peaks(&[50, 60, 70], &window()).unwrap();
        let q = aggregate_q(&daily, &part, &window());
        assert!((q.q_a.unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(q.q_h, None);
        assert_eq!(q.q_d, None);
        let zero_low: BTreeMap<Day, f64> = [(1, 0.0), (50, 0.3)].into_iter().collect();
        assert_eq!(aggregate_q(&zero_low, &part, &window()).q_d, None);
    }

    #[test]
    fn partition_examples() {
        let p = partition_from_peaks(&[10, 20, 30], &window()).unwrap();
        let expected: BTreeSet<Day> = (8..=12).chain(18..=22).chain(28..=32).collect();
        assert_eq!(p.high, expected);
        assert_eq!(p.high.len(), 15);
        assert_eq!(p.low.len(), 75);
        let clipped = partition_from_peaks(&[2, 20, 30], &window()).unwrap();
        assert!(clipped.high.contains(&1) && !clipped.high.contains(&0));
        assert_eq!(clipped.high.len(), 14);
        let calendar = partition_from_peaks(&CALENDAR_PEAK_DAYS, &window()).unwrap();
        assert_eq!(calendar.high.len(), 15);
        assert!(partition_from_peaks(&[91], &window()).is_err());
    }

    #[test]
    fn peaks_from_data() {
        let mut daily: BTreeMap<Day, f64> = window().day_range().map(|d| (d, 100.0)).collect();
        for (peak, v) in [(41, 900.0), (46, 700.0), (69, 800.0)] {
            daily.insert(peak, v);
            // Shoulders are high but stay inside the peak window.
            daily.insert(peak + 1, v - 50.0);
            daily.insert(peak - 1, v - 60.0);
        }
        let p = partition_days(&daily, &window()).unwrap();
        assert_eq!(p.peaks, vec![41, 46, 69]);
        assert_eq!(p.high.len(), 15);
    }

    #[test]
    fn bootstrap_is_deterministic_and_validates() {
        let v: Vec<f64> = (0..90).map(|i| 0.01 + (i % 7) as f64 * 0.001).collect();
        assert_eq!(bootstrap_mean_ci(&v, 1000, 9).unwrap(), bootstrap_mean_ci(&v, 1000, 9).unwrap());
        assert_eq!(bootstrap_mean_ci(&v[..1], 1000, 9).unwrap_err(), SpatialError::TooFewDays(1));
        assert_eq!(bootstrap_mean_ci(&v, 100, 9).unwrap_err(), SpatialError::TooFewReplicates(100));
        let r = bootstrap_ratio_ci(&v[..15], &v[15..], 500, 3).unwrap();
        assert!(r.lo <= r.hi);
    }

    #[test]
    fn bootstrap_covers_known_mean() {
        use rand_distr::{Distribution, Normal};
        let dist = Normal::new(0.013, 0.004).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let covered = (0..100)
            .filter(|&rep| {
                let days: Vec<f64> = (0..90).map(|_| dist.sample(&mut rng)).collect();
                bootstrap_mean_ci(&days, 1000, rep).unwrap().contains(0.013)
            })
            .count();
        assert!(covered >= 93, "{covered}");
    }

    #[test]
    fn correlation_cases() {
        let values: BTreeMap<StateCode, f64> = (1..=5).map(|c| (s(c), 10.0 - c as f64)).collect();
        let rep: BTreeMap<(StateCode, Day), f64> =
            (1..=5u8).flat_map(|c| (1..=3).map(move |d| ((s(c), d), libm::pow(10.0, c as f64 - 6.0)))).collect();
        assert!((correlate(&values, &rep).unwrap() + 1.0).abs() < 1e-12);
        let two: BTreeMap<StateCode, f64> = values.iter().take(2).map(|(&k, &v)| (k, v)).collect();
        assert_eq!(correlate(&two, &rep), None);
    }

    #[test]
    fn permutation_p_values_look_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut below = 0;
        let mut rhos = Vec::new();
        let trials = 200;
        for t in 0..trials {
            let x: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
            rhos.push(math::pearson(&x, &y).unwrap());
            if permutation_p_value(&x, &y, 199, t).unwrap() <= 0.1 {
                below += 1;
            }
        }
        // Under the null about 10% of p-values fall at or below 0.1.
        assert!((8..=35).contains(&below), "{below}");
        assert!(math::abs(math::mean(&rhos).unwrap()) < 0.05);
    }

    proptest! {
        #[test]
        fn matches_pair_enumeration(counts in prop::collection::vec(0u64..40, 1..8)) {
            prop_assume!(counts.iter().sum::<u64>() <= 200);
            let a = colocation_probability(&counts);
            let b = brute_force(&counts);
            match (a, b) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-12),
                (x, y) => prop_assert_eq!(x, y),
            }
        }

        #[test]
        fn grows_toward_sum_of_squares(counts in prop::collection::vec(1u64..30, 1..10)) {
            let n: u64 = counts.iter().sum();
            prop_assume!(n >= 2);
            let mut last = 0.0;
            for a in [1u64, 2, 5, 10, 100, 1000] {
                let scaled: Vec<u64> = counts.iter().map(|&c| c * a).collect();
                let p = colocation_probability(&scaled).unwrap();
                prop_assert!(p >= last);
                last = p;
            }
        }

        #[test]
        fn partition_is_exhaustive(peaks in prop::collection::vec(1u32..=90, 3)) {
            let p = partition_from_peaks(&peaks, &window()).unwrap();
            prop_assert_eq!(p.high.len() + p.low.len(), 90);
            prop_assert!(p.high.is_disjoint(&p.low));
        }
    }
}

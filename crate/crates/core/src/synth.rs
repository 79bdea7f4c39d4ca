//! Synthetic record generator with planted attendance, usage, social and
//! spatial structure.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Geometric, Poisson, StandardNormal};

use crate::math;
use crate::model::{
    CdrEvent, Day, EventKind, PersonId, StateCode, StateProfile, StateTable, StateTableError, StudyWindow, TowerId,
    TowerSite, SECONDS_PER_DAY,
};
use crate::spatial::{partition_from_peaks, CALENDAR_PEAK_DAYS};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct StateScenario {
    pub code: StateCode,
    pub name: String,
    pub market_share: f64,
    /// Share of all attendees coming from this state.
    pub representation: f64,
    pub is_local: bool,
    /// Planted mean daily co-location probability.
    pub q_target: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct StayModel {
    pub min_length: u32,
    /// Mean of the geometric number of days added to `min_length`.
    pub mean_extra_days: f64,
    pub peak_days: Vec<Day>,
    /// Arrival weight of a peak day relative to an ordinary day.
    pub peak_arrival_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct UsageModel {
    pub prevalence: f64,
    pub daily_use: f64,
    pub non_use: f64,
    /// Probability that a person's first record of the day is an incoming one.
    pub incoming_share: f64,
    /// Mean number of further records with outside parties per active day.
    pub extra_events_mean: f64,
    pub text_share: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SocialModel {
    pub group_size: u64,
    /// Cap on groups per state; all eligible customers are grouped when absent.
    pub max_groups_per_state: Option<u64>,
    /// Closure probability `logistic(beta0 + beta1 * log10 W)` for the pairs
    /// of a group not joined by its base path.
    pub beta0: f64,
    pub beta1: f64,
    /// Edge probability between members of different groups of one state.
    pub p_out: f64,
    /// Mean number of ties per grouped person to persons of other states.
    pub cross_state_degree: f64,
    /// Mean number of records per tie beyond the first.
    pub extra_events_per_edge: f64,
    pub include_local: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SpatialModel {
    /// Towers that carry traffic.
    pub serving_towers: u16,
    /// Listed towers that never carry traffic.
    pub idle_towers: u16,
    pub center_lat: f64,
    pub center_lon: f64,
    /// Half-width of the square the towers are spread over.
    pub half_extent_km: f64,
    /// Multiplier on each state's home-cell probability on peak-window days.
    pub peak_theta_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ScenarioConfig {
    pub seed: u64,
    pub window: StudyWindow,
    pub attendees: u64,
    pub states: Vec<StateScenario>,
    pub stay: StayModel,
    pub usage: UsageModel,
    pub social: SocialModel,
    pub spatial: SpatialModel,
    pub projection_days: Vec<Day>,
    pub projection_noise: f64,
}

/// Two-letter names for the 23 state codes, local state first.
const STATE_NAMES: [&str; 23] = [
    "RJ", "SP", "MG", "ES", "BA", "PR", "SC", "RS", "DF", "GO", "PE", "CE", "PA", "AM", "MA", "PB", "RN", "AL", "PI",
    "MT", "MS", "SE", "TO",
];

impl ScenarioConfig {
    /// 23 states: one local state taking the remaining attendees, the others
    /// log-spaced in representation from `min_representation` to
    /// `max_representation`. Planted co-location falls linearly in log10
    /// representation from 0.018 to 0.008, with 0.0055 for the local state.
    pub fn standard(seed: u64, attendees: u64, min_representation: f64, max_representation: f64) -> Self {
        let visitors = STATE_COUNT_USIZE - 1;
        let (lo, hi) = (math::log10(min_representation), math::log10(max_representation));
        let mut states = Vec::with_capacity(STATE_COUNT_USIZE);
        let mut visitor_total = 0.0;
        for i in 0..visitors {
            let t = i as f64 / (visitors - 1) as f64;
            let x = lo + t * (hi - lo);
            let w = libm::pow(10.0, x);
            visitor_total += w;
            // Spread market shares over [0.137, 0.426] independently of size.
            let share = 0.137 + (0.426 - 0.137) * ((i * 7) % visitors) as f64 / (visitors - 1) as f64;
            states.push(StateScenario {
                code: StateCode::new(i as u8 + 2).expect("valid code"),
                name: STATE_NAMES[i + 1].into(),
                market_share: share,
                representation: w,
                is_local: false,
                q_target: 0.018 - 0.010 * t,
            });
        }
        states.insert(
            0,
            StateScenario {
                code: StateCode::new(1).expect("valid code"),
                name: STATE_NAMES[0].into(),
                market_share: 0.3,
                representation: 1.0 - visitor_total,
                is_local: true,
                q_target: 0.0055,
            },
        );
        ScenarioConfig {
            seed,
            window: StudyWindow::default(),
            attendees,
            states,
            stay: StayModel {
                min_length: 1,
                mean_extra_days: 4.0,
                peak_days: CALENDAR_PEAK_DAYS.to_vec(),
                peak_arrival_multiplier: 6.0,
            },
            usage: UsageModel {
                prevalence: 0.713,
                daily_use: 0.404,
                non_use: 0.406,
                incoming_share: 0.3,
                extra_events_mean: 0.5,
                text_share: 0.4,
            },
            social: SocialModel {
                group_size: 3,
                max_groups_per_state: None,
                beta0: -1.0,
                beta1: -0.208,
                p_out: 0.0,
                cross_state_degree: 0.5,
                extra_events_per_edge: 1.0,
                include_local: false,
            },
            spatial: SpatialModel {
                serving_towers: 207,
                idle_towers: 10,
                center_lat: -22.91,
                center_lon: -43.20,
                half_extent_km: 15.0,
                peak_theta_multiplier: 1.2,
            },
            projection_days: alloc::vec![20, 35, 55, 80],
            projection_noise: 0.05,
        }
    }

    /// Desk-scale default: 800k attendees, visiting states from 0.5% to 7.45%.
    pub fn desk(seed: u64) -> Self {
        Self::standard(seed, 800_000, 0.005, 0.0745)
    }
}

const STATE_COUNT_USIZE: usize = crate::model::STATE_COUNT as usize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{name} = {value} is not a probability")]
    Probability { name: String, value: f64 },
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("invalid state table: {0}")]
    States(#[from] StateTableError),
    #[error("representations sum to {0}, not 1")]
    RepresentationSum(f64),
    #[error("state {state}: co-location target {target} below the uniform floor {floor}")]
    TargetBelowFloor { state: StateCode, target: f64, floor: f64 },
    #[error("state {state}: {members} attendees cannot fill a group of {group_size}")]
    GroupLargerThanState { state: StateCode, members: u64, group_size: u64 },
    #[error("group size must be at least 2")]
    GroupTooSmall,
    #[error("day {0} outside the study window")]
    DayOutsideWindow(Day),
}

fn check_prob(name: &str, value: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ConfigError::Probability { name: name.into(), value })
    }
}

impl ScenarioConfig {
    pub fn state_table(&self) -> Result<StateTable, ConfigError> {
        Ok(StateTable::new(self.states.iter().map(|s| StateProfile {
            code: s.code,
            name: s.name.clone(),
            market_share: s.market_share,
            is_local: s.is_local,
        }))?)
    }

    fn attendees_of(&self, s: &StateScenario) -> u64 {
        math::round(self.attendees as f64 * s.representation) as u64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.state_table()?;
        if self.attendees == 0 {
            return Err(ConfigError::NonPositive("attendees"));
        }
        if self.window.days == 0 {
            return Err(ConfigError::NonPositive("window.days"));
        }
        if self.stay.min_length == 0 {
            return Err(ConfigError::NonPositive("stay.min_length"));
        }
        if !(self.stay.mean_extra_days >= 0.0) {
            return Err(ConfigError::NonPositive("stay.mean_extra_days"));
        }
        if !(self.stay.peak_arrival_multiplier > 0.0) {
            return Err(ConfigError::NonPositive("stay.peak_arrival_multiplier"));
        }
        if self.spatial.serving_towers == 0 {
            return Err(ConfigError::NonPositive("spatial.serving_towers"));
        }
        if !(self.spatial.half_extent_km > 0.0 && self.spatial.peak_theta_multiplier > 0.0) {
            return Err(ConfigError::NonPositive("spatial extent and multiplier"));
        }
        let u = &self.usage;
        for (name, v) in [
            ("prevalence", u.prevalence),
            ("daily_use", u.daily_use),
            ("non_use", u.non_use),
            ("incoming_share", u.incoming_share),
            ("text_share", u.text_share),
            ("p_out", self.social.p_out),
        ] {
            check_prob(name, v)?;
        }
        if !(u.extra_events_mean >= 0.0
            && self.social.cross_state_degree >= 0.0
            && self.social.extra_events_per_edge >= 0.0)
        {
            return Err(ConfigError::NonPositive("event and degree means"));
        }
        if self.social.group_size < 2 {
            return Err(ConfigError::GroupTooSmall);
        }
        let sum: f64 = self.states.iter().map(|s| s.representation).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ConfigError::RepresentationSum(sum));
        }
        let floor = 1.0 / self.spatial.serving_towers as f64;
        for s in &self.states {
            check_prob(&format!("state {} representation", s.code), s.representation)?;
            check_prob(&format!("state {} q_target", s.code), s.q_target)?;
            if s.q_target < floor {
                return Err(ConfigError::TargetBelowFloor { state: s.code, target: s.q_target, floor });
            }
            let grouped = !s.is_local || self.social.include_local;
            let members = self.attendees_of(s);
            if grouped && members < self.social.group_size {
                return Err(ConfigError::GroupLargerThanState {
                    state: s.code,
                    members,
                    group_size: self.social.group_size,
                });
            }
        }
        for &d in self.stay.peak_days.iter().chain(&self.projection_days) {
            if !self.window.day_range().contains(&d) {
                return Err(ConfigError::DayOutsideWindow(d));
            }
        }
        Ok(())
    }
}

/// Probability of going to the state's home cell such that two independent
/// placements coincide with probability `target` over `cells` cells:
/// `theta^2 + (1 - theta^2) / C = target`.
pub fn home_cell_probability(target: f64, cells: usize) -> f64 {
    let floor = 1.0 / cells as f64;
    if cells == 1 {
        return 1.0;
    }
    math::sqrt(((target - floor) / (1.0 - floor)).max(0.0))
}

/// Everything the generator planted.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Attendees present per state and day, phone or not.
    pub by_state_daily: BTreeMap<(StateCode, Day), u64>,
    pub daily: BTreeMap<Day, u64>,
    /// Attendees arrived on or before each day.
    pub cumulative: BTreeMap<Day, u64>,
    pub attendees_by_state: BTreeMap<StateCode, u64>,
    pub representation: BTreeMap<StateCode, f64>,
    /// Active customers per state and day.
    pub handsets: BTreeMap<(StateCode, Day), u64>,
    /// Cell occupancy of active customers per state and day.
    pub placements: BTreeMap<(StateCode, Day), BTreeMap<TowerId, u64>>,
    pub edges: BTreeSet<(PersonId, PersonId)>,
    /// Member lists of the planted groups.
    pub groups: Vec<(StateCode, Vec<PersonId>)>,
    pub beta0: f64,
    pub beta1: f64,
    pub q_targets: BTreeMap<StateCode, f64>,
    pub theta: BTreeMap<StateCode, f64>,
    pub home_cells: BTreeMap<StateCode, TowerId>,
    pub peak_days: Vec<Day>,
    pub non_use: f64,
    pub daily_use: f64,
}

/// A generated dataset in memory.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub events: Vec<CdrEvent>,
    pub towers: Vec<TowerSite>,
    pub states: StateTable,
    pub projections: BTreeMap<Day, f64>,
    pub truth: GroundTruth,
}

struct SimPerson {
    id: PersonId,
    state: StateCode,
    /// Active days and the cell used on each.
    days: Vec<(Day, TowerId)>,
}

const OUTSIDE_ID_BASE: u64 = 9_000_000_000;

fn person_id(state: StateCode, index: u64) -> PersonId {
    PersonId(state.get() as u64 * 100_000_000 + index)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids: states use their code, the rest sit above the code range.
const STREAM_TOWERS: u64 = 1000;
const STREAM_HOMES: u64 = 1001;
const STREAM_SOCIAL: u64 = 1002;
const STREAM_EVENTS: u64 = 1003;
const STREAM_PROJECTIONS: u64 = 1004;

fn layout_towers(cfg: &SpatialModel, rng: &mut ChaCha8Rng) -> Vec<TowerSite> {
    let total = cfg.serving_towers as usize + cfg.idle_towers as usize;
    let side = libm::ceil(math::sqrt(total as f64)) as usize;
    let step = 2.0 * cfg.half_extent_km / side as f64;
    let km_per_deg_lat = crate::geo::EARTH_RADIUS_KM * core::f64::consts::PI / 180.0;
    let km_per_deg_lon = km_per_deg_lat * math::cos(cfg.center_lat.to_radians());
    let mut slots: Vec<usize> = (0..side * side).collect();
    slots.shuffle(rng);
    slots.truncate(total);
    slots.sort_unstable();
    slots
        .iter()
        .enumerate()
        .map(|(i, &slot)| {
            let (gx, gy) = ((slot % side) as f64, (slot / side) as f64);
            let x = -cfg.half_extent_km + (gx + 0.2 + 0.6 * rng.random::<f64>()) * step;
            let y = -cfg.half_extent_km + (gy + 0.2 + 0.6 * rng.random::<f64>()) * step;
            TowerSite {
                id: TowerId(i as u16 + 1),
                latitude: cfg.center_lat + y / km_per_deg_lat,
                longitude: cfg.center_lon + x / km_per_deg_lon,
                active: true,
            }
        })
        .collect()
}

fn geometric(mean: f64) -> Option<Geometric> {
    (mean > 0.0).then(|| Geometric::new(1.0 / (1.0 + mean)).expect("valid geometric"))
}

fn poisson(mean: f64) -> Option<Poisson<f64>> {
    (mean > 0.0).then(|| Poisson::new(mean).expect("valid poisson"))
}

/// Generates a dataset. Output depends only on the configuration.
pub fn generate(cfg: &ScenarioConfig) -> Result<Synthetic, ConfigError> {
    cfg.validate()?;
    let states = cfg.state_table()?;
    let window = cfg.window;

    let mut tower_rng = stream_rng(cfg.seed, STREAM_TOWERS);
    let towers = layout_towers(&cfg.spatial, &mut tower_rng);
    // Idle towers are picked at random from the layout.
    let mut order: Vec<usize> = (0..towers.len()).collect();
    order.shuffle(&mut tower_rng);
    let idle: BTreeSet<usize> = order.iter().take(cfg.spatial.idle_towers as usize).copied().collect();
    let serving: Vec<TowerId> =
        towers.iter().enumerate().filter(|(i, _)| !idle.contains(i)).map(|(_, t)| t.id).collect();

    let mut home_rng = stream_rng(cfg.seed, STREAM_HOMES);
    let cells = serving.len();
    let mut home_cells = BTreeMap::new();
    let mut theta = BTreeMap::new();
    let mut q_targets = BTreeMap::new();
    for s in &cfg.states {
        home_cells.insert(s.code, serving[home_rng.random_range(0..cells)]);
        theta.insert(s.code, home_cell_probability(s.q_target, cells));
        q_targets.insert(s.code, s.q_target);
    }
    let high_days = partition_from_peaks(&cfg.stay.peak_days, &window).expect("validated").high;

    let arrival = WeightedIndex::new(window.day_range().map(|d| {
        if cfg.stay.peak_days.contains(&d) {
            cfg.stay.peak_arrival_multiplier
        } else {
            1.0
        }
    }))
    .expect("positive weights");
    let extra_days = geometric(cfg.stay.mean_extra_days);

    let mut by_state_daily: BTreeMap<(StateCode, Day), u64> = BTreeMap::new();
    let mut arrivals: BTreeMap<Day, u64> = BTreeMap::new();
    let mut attendees_by_state = BTreeMap::new();
    let mut placements: BTreeMap<(StateCode, Day), BTreeMap<TowerId, u64>> = BTreeMap::new();
    let mut persons: Vec<SimPerson> = Vec::new();
    let u = &cfg.usage;

    for s in &cfg.states {
        let mut rng = stream_rng(cfg.seed, s.code.get() as u64);
        let n = cfg.attendees_of(s);
        attendees_by_state.insert(s.code, n);
        let home = home_cells[&s.code];
        let th = theta[&s.code];
        let th_peak = (th * cfg.spatial.peak_theta_multiplier).min(1.0);
        let mut present = alloc::vec![0u64; window.days as usize + 1];
        for i in 0..n {
            let first = arrival.sample(&mut rng) as Day + 1;
            let extra = extra_days.map_or(0, |g| g.sample(&mut rng)) as u32;
            let last = (first + cfg.stay.min_length - 1 + extra).min(window.last_day());
            *arrivals.entry(first).or_default() += 1;
            for d in first..=last {
                present[d as usize] += 1;
            }
            let customer = rng.random_bool(u.prevalence) && rng.random_bool(s.market_share);
            if !customer || rng.random_bool(u.non_use) {
                continue;
            }
            let mut days = Vec::new();
            for d in first..=last {
                if rng.random_bool(u.daily_use) {
                    let t = if high_days.contains(&d) { th_peak } else { th };
                    let cell = if rng.random_bool(t) { home } else { serving[rng.random_range(0..cells)] };
                    *placements.entry((s.code, d)).or_default().entry(cell).or_default() += 1;
                    days.push((d, cell));
                }
            }
            if !days.is_empty() {
                persons.push(SimPerson { id: person_id(s.code, i), state: s.code, days });
            }
        }
        for d in window.day_range() {
            by_state_daily.insert((s.code, d), present[d as usize]);
        }
    }

    let total_attendees: u64 = attendees_by_state.values().sum();
    let representation: BTreeMap<StateCode, f64> =
        attendees_by_state.iter().map(|(&s, &n)| (s, n as f64 / total_attendees as f64)).collect();
    let mut daily = BTreeMap::new();
    for (&(_, d), &n) in &by_state_daily {
        *daily.entry(d).or_insert(0u64) += n;
    }
    let mut cumulative = BTreeMap::new();
    let mut running = 0;
    for d in window.day_range() {
        running += arrivals.get(&d).copied().unwrap_or(0);
        cumulative.insert(d, running);
    }
    let handsets = placements.iter().map(|(&k, m)| (k, m.values().sum())).collect();

    let (edges, groups) = plant_social(cfg, &persons, &representation, &states);
    let events = emit_events(cfg, &persons, &edges);

    let truth = GroundTruth {
        by_state_daily,
        daily,
        cumulative,
        attendees_by_state,
        representation,
        handsets,
        placements,
        edges,
        groups,
        beta0: cfg.social.beta0,
        beta1: cfg.social.beta1,
        q_targets,
        theta,
        home_cells,
        peak_days: cfg.stay.peak_days.clone(),
        non_use: u.non_use,
        daily_use: u.daily_use,
    };
    let mut proj_rng = stream_rng(cfg.seed, STREAM_PROJECTIONS);
    let projections = emit_projections(&truth, &cfg.projection_days, cfg.projection_noise, &mut proj_rng);
    Ok(Synthetic { events, towers, states, projections, truth })
}

fn ordered(a: PersonId, b: PersonId) -> (PersonId, PersonId) {
    (a.min(b), a.max(b))
}

type Planted = (BTreeSet<(PersonId, PersonId)>, Vec<(StateCode, Vec<PersonId>)>);

fn plant_social(
    cfg: &ScenarioConfig,
    persons: &[SimPerson],
    representation: &BTreeMap<StateCode, f64>,
    states: &StateTable,
) -> Planted {
    let sc = &cfg.social;
    let mut rng = stream_rng(cfg.seed, STREAM_SOCIAL);
    let mut by_state: BTreeMap<StateCode, Vec<PersonId>> = BTreeMap::new();
    for p in persons {
        by_state.entry(p.state).or_default().push(p.id);
    }
    let mut edges = BTreeSet::new();
    let mut groups = Vec::new();
    let m = sc.group_size as usize;
    let mut grouped_all: Vec<(StateCode, PersonId)> = Vec::new();
    for (&state, members) in &by_state {
        if states.is_local(state) && !sc.include_local {
            continue;
        }
        let mut pool = members.clone();
        pool.shuffle(&mut rng);
        let mut count = pool.len() / m;
        if let Some(cap) = sc.max_groups_per_state {
            count = count.min(cap as usize);
        }
        let closure = math::logistic(sc.beta0 + sc.beta1 * math::log10(representation[&state]));
        for g in 0..count {
            let group = &pool[g * m..(g + 1) * m];
            for i in 0..m {
                for j in i + 1..m {
                    // Consecutive members form the base path.
                    if j == i + 1 || rng.random_bool(closure) {
                        edges.insert(ordered(group[i], group[j]));
                    }
                }
            }
            groups.push((state, group.to_vec()));
            grouped_all.extend(group.iter().map(|&p| (state, p)));
        }
        let grouped = count * m;
        if sc.p_out > 0.0 && count > 1 {
            let pairs = (grouped * (grouped - 1) / 2 - count * m * (m - 1) / 2) as u64;
            let k = Binomial::new(pairs, sc.p_out).expect("valid binomial").sample(&mut rng);
            let mut added = 0;
            while added < k {
                let (a, b) = (rng.random_range(0..grouped), rng.random_range(0..grouped));
                if a / m != b / m && edges.insert(ordered(pool[a], pool[b])) {
                    added += 1;
                }
            }
        }
    }
    if let Some(dist) = poisson(sc.cross_state_degree / 2.0) {
        let everyone: Vec<(StateCode, PersonId)> = persons.iter().map(|p| (p.state, p.id)).collect();
        for &(state, p) in &grouped_all {
            let k = dist.sample(&mut rng) as usize;
            for _ in 0..k {
                // Redraw a few times if the partner shares the state.
                for _ in 0..8 {
                    let (s2, q) = everyone[rng.random_range(0..everyone.len())];
                    if s2 != state {
                        edges.insert(ordered(p, q));
                        break;
                    }
                }
            }
        }
    }
    (edges, groups)
}

fn time_in(rng: &mut ChaCha8Rng, window: &StudyWindow, day: Day, from_hour: i64, to_hour: i64) -> i64 {
    window.day_start(day) + rng.random_range(from_hour * 3600..to_hour * 3600).min(SECONDS_PER_DAY - 1)
}

fn random_kind(rng: &mut ChaCha8Rng, text_share: f64) -> (EventKind, u32) {
    if rng.random_bool(text_share) {
        (EventKind::Text, 0)
    } else {
        (EventKind::Call, rng.random_range(5..900))
    }
}

fn emit_events(cfg: &ScenarioConfig, persons: &[SimPerson], edges: &BTreeSet<(PersonId, PersonId)>) -> Vec<CdrEvent> {
    let u = &cfg.usage;
    let window = cfg.window;
    let mut rng = stream_rng(cfg.seed, STREAM_EVENTS);
    let extra = poisson(u.extra_events_mean);
    let mut events = Vec::new();
    let outside = |rng: &mut ChaCha8Rng| PersonId(OUTSIDE_ID_BASE + rng.random_range(0..100_000_000));
    let outside_event = |rng: &mut ChaCha8Rng, p: &SimPerson, cell: TowerId, ts: i64| {
        let other = outside(rng);
        let (kind, duration) = random_kind(rng, u.text_share);
        let incoming = rng.random_bool(u.incoming_share);
        let (caller, callee) = if incoming { (other, p.id) } else { (p.id, other) };
        CdrEvent {
            timestamp: ts,
            caller,
            callee,
            kind,
            duration,
            tower: cell,
            caller_state: (!incoming).then_some(p.state),
            callee_state: incoming.then_some(p.state),
            caller_is_customer: !incoming,
            callee_is_customer: incoming,
        }
    };
    let mut index: BTreeMap<PersonId, usize> = BTreeMap::new();
    for (i, p) in persons.iter().enumerate() {
        index.insert(p.id, i);
        for &(day, cell) in &p.days {
            // The day's first record is always with an outside party, before noon.
            let ts = time_in(&mut rng, &window, day, 6, 12);
            events.push(outside_event(&mut rng, p, cell, ts));
            for _ in 0..extra.map_or(0, |d| d.sample(&mut rng) as usize) {
                let ts = time_in(&mut rng, &window, day, 12, 24);
                events.push(outside_event(&mut rng, p, cell, ts));
            }
        }
    }
    let per_edge = geometric(cfg.social.extra_events_per_edge);
    for &(a, b) in edges {
        let k = 1 + per_edge.map_or(0, |g| g.sample(&mut rng));
        for _ in 0..k {
            let (from, to) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
            let (p, q) = (&persons[index[&from]], &persons[index[&to]]);
            let (day, cell) = p.days[rng.random_range(0..p.days.len())];
            let (kind, duration) = random_kind(&mut rng, u.text_share);
            events.push(CdrEvent {
                timestamp: time_in(&mut rng, &window, day, 12, 24),
                caller: p.id,
                callee: q.id,
                kind,
                duration,
                tower: cell,
                caller_state: Some(p.state),
                callee_state: Some(q.state),
                caller_is_customer: true,
                callee_is_customer: true,
            });
        }
    }
    events.sort_unstable_by_key(|e| (e.timestamp, e.caller, e.callee, e.tower, e.duration));
    events
}

/// Daily projections equal to the true attendance of each chosen day times
/// `1 + noise * Z` with `Z` standard normal.
pub fn emit_projections(truth: &GroundTruth, days: &[Day], noise: f64, rng: &mut impl Rng) -> BTreeMap<Day, f64> {
    days.iter()
        .filter_map(|&d| {
            let t = *truth.daily.get(&d)? as f64;
            let z: f64 = rng.sample(StandardNormal);
            Some((d, t * (1.0 + noise * z)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observe::{count_unique_handsets, dedupe_daily};
    use crate::spatial::colocation_probability;

    fn small(seed: u64) -> ScenarioConfig {
        ScenarioConfig::standard(seed, 60_000, 0.01, 0.07)
    }

    #[test]
    fn standard_config_is_valid() {
        let cfg = ScenarioConfig::desk(1);
        cfg.validate().unwrap();
        assert_eq!(cfg.states.len(), 23);
        let local = cfg.states.iter().find(|s| s.is_local).unwrap();
        assert!(local.representation > 0.3);
        let visitors: Vec<&StateScenario> = cfg.states.iter().filter(|s| !s.is_local).collect();
        assert!((visitors[0].representation - 0.005).abs() < 1e-12);
        assert!((visitors[21].representation - 0.0745).abs() < 1e-12);
        assert!(visitors.iter().all(|s| (0.137..=0.426 + 1e-12).contains(&s.market_share)));
    }

    #[test]
    fn deterministic() {
        let a = generate(&small(3)).unwrap();
        let b = generate(&small(3)).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.projections, b.projections);
        assert_ne!(generate(&small(4)).unwrap().events, a.events);
    }

    #[test]
    fn rescan_matches_bookkeeping() {
        let syn = generate(&small(5)).unwrap();
        let window = StudyWindow::default();
        let obs = dedupe_daily(&syn.events, &window);
        assert_eq!(count_unique_handsets(&obs), syn.truth.handsets);
        let mut cells: BTreeMap<(StateCode, Day), BTreeMap<TowerId, u64>> = BTreeMap::new();
        for o in &obs {
            *cells.entry((o.state, o.day)).or_default().entry(o.first_tower).or_default() += 1;
        }
        assert_eq!(cells, syn.truth.placements);
        for e in &syn.events {
            e.validate(&window).unwrap();
        }
    }

    #[test]
    fn everyone_stays_home_when_targets_are_one() {
        let mut cfg = small(6);
        for s in &mut cfg.states {
            s.q_target = 1.0;
        }
        let syn = generate(&cfg).unwrap();
        for (&(state, _), cells) in &syn.truth.placements {
            assert_eq!(cells.len(), 1);
            assert_eq!(*cells.keys().next().unwrap(), syn.truth.home_cells[&state]);
            let counts: Vec<u64> = cells.values().copied().collect();
            if counts[0] >= 2 {
                assert_eq!(colocation_probability(&counts), Some(1.0));
            }
        }
    }

    #[test]
    fn total_non_use_silences_everyone() {
        let mut cfg = small(7);
        cfg.usage.non_use = 1.0;
        let syn = generate(&cfg).unwrap();
        assert!(syn.events.is_empty());
        assert!(syn.truth.handsets.is_empty());
    }

    #[test]
    fn exact_projections_without_noise() {
        let syn = generate(&small(8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = emit_projections(&syn.truth, &[3, 50, 61, 88], 0.0, &mut rng);
        assert_eq!(p.keys().copied().collect::<Vec<_>>(), vec![3, 50, 61, 88]);
        for (d, v) in p {
            assert_eq!(v, syn.truth.daily[&d] as f64);
        }
    }

    #[test]
    fn home_probability_hits_target() {
        for (target, c) in [(0.018, 207), (0.0055, 207), (0.5, 10), (1.0, 50)] {
            let th = home_cell_probability(target, c);
            let floor = 1.0 / c as f64;
            assert!((th * th + (1.0 - th * th) * floor - target).abs() < 1e-12);
        }
    }

    #[test]
    fn config_errors() {
        let mut cfg = small(1);
        cfg.states[3].q_target = 0.001;
        assert!(matches!(cfg.validate(), Err(ConfigError::TargetBelowFloor { .. })));
        let mut cfg = small(1);
        cfg.social.group_size = 100_000;
        assert!(matches!(cfg.validate(), Err(ConfigError::GroupLargerThanState { .. })));
        let mut cfg = small(1);
        cfg.usage.daily_use = 1.5;
        assert!(matches!(cfg.validate(), Err(ConfigError::Probability { .. })));
        let mut cfg = small(1);
        cfg.projection_days.push(91);
        assert_eq!(cfg.validate(), Err(ConfigError::DayOutsideWindow(91)));
        let mut cfg = small(1);
        cfg.states[0].representation += 0.1;
        assert!(matches!(cfg.validate(), Err(ConfigError::RepresentationSum(_))));
    }

    #[test]
    fn planted_groups_are_closed_at_the_planted_rate() {
        let mut cfg = small(9);
        cfg.social.beta0 = 0.0;
        cfg.social.beta1 = 0.0;
        let syn = generate(&cfg).unwrap();
        let (mut closed, mut total) = (0, 0);
        for (_, g) in &syn.truth.groups {
            total += 1;
            if syn.truth.edges.contains(&ordered(g[0], g[2])) {
                closed += 1;
            }
        }
        let f = closed as f64 / total as f64;
        let se = math::sqrt(0.25 / total as f64);
        assert!(total > 300 && (f - 0.5).abs() < 4.0 * se, "{closed}/{total}");
    }
}

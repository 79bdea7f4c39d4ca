//! Values reported for the 2013 operator dataset. They cannot be recomputed
//! without that data and serve as documentation and as targets for planted
//! synthetic scenarios.

/// Towers at the venue.
pub const TOWERS: usize = 207;
pub const TEXTS: u64 = 145_736_764;
pub const CALLS: u64 = 245_252_102;
pub const EVENTS: u64 = 390_988_866;

/// Cumulative attendance by the end of March.
pub const CUMULATIVE_ATTENDANCE: f64 = 60.6e6;
/// Largest single-day attendance.
pub const PEAK_DAILY_ATTENDANCE: f64 = 25e6;
/// Cumulative totals at non-use 0.45 and 0.35.
pub const CUMULATIVE_AT_NON_USE_045: f64 = 54e6;
pub const CUMULATIVE_AT_NON_USE_035: f64 = 69e6;

pub const NETWORK_NODES: u64 = 2_130_463;
pub const NETWORK_EDGES: u64 = 8_204_602;
pub const CONNECTED_TRIPLES: u64 = 1_630_553;

/// Closure slope per decade of representation and its 95% interval.
pub const BETA1: f64 = -0.208;
pub const BETA1_CI: (f64, f64) = (-0.259, -0.157);

/// Correlation of all-day and peak-ratio co-location with mean log daily
/// representation.
pub const RHO_A: f64 = -0.54;
pub const RHO_D: f64 = -0.27;

/// Range and mean of per-state all-day co-location.
pub const Q_A_RANGE: (f64, f64) = (0.0025, 0.018);
pub const Q_A_MEAN: f64 = 0.013;

/// Range of state representation.
pub const REPRESENTATION_RANGE: (f64, f64) = (0.00018, 0.0745);

/// Range of operator market share across states.
pub const MARKET_SHARE_RANGE: (f64, f64) = (0.137, 0.426);

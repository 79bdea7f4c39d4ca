//! Local planar projection and the Voronoi tessellation of active towers.
//!
//! Inactive towers are dropped before tessellating, so the region an idle
//! tower would have owned is absorbed by its nearest active neighbours.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::math;
use crate::model::{CdrEvent, Day, StudyWindow, TowerId, TowerSite};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Largest distance from the projection origin accepted by [`project_local`].
pub const MAX_PROJECTION_KM: f64 = 50.0;

/// Padding added around the tower extent to form the clipping box.
pub const BOX_PADDING_KM: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

/// Planar point in kilometres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist2(self, other: Point) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        dx * dx + dy * dy
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeoError {
    #[error("point ({lat}, {lon}) lies {distance_km:.1} km from the origin, beyond the {MAX_PROJECTION_KM} km projection range")]
    OutOfRange { lat: f64, lon: f64, distance_km: f64 },
    #[error("no active towers")]
    NoActiveTowers,
    #[error("active towers {0} and {1} share coordinates")]
    DuplicateCoordinates(TowerId, TowerId),
    #[error("tower {0} listed more than once")]
    DuplicateTower(TowerId),
}

pub fn haversine_km(a: LatLon, b: LatLon) -> f64 {
    let to_rad = core::f64::consts::PI / 180.0;
    let (p1, p2) = (a.lat * to_rad, b.lat * to_rad);
    let dp = p2 - p1;
    let dl = (b.lon - a.lon) * to_rad;
    let s1 = math::sin(dp / 2.0);
    let s2 = math::sin(dl / 2.0);
    let h = s1 * s1 + math::cos(p1) * math::cos(p2) * s2 * s2;
    2.0 * EARTH_RADIUS_KM * math::asin(math::sqrt(h.min(1.0)))
}

/// Equirectangular projection about `origin`, in kilometres.
pub fn project_local(lat: f64, lon: f64, origin: LatLon) -> Result<Point, GeoError> {
    let distance_km = haversine_km(origin, LatLon { lat, lon });
    if !(distance_km <= MAX_PROJECTION_KM) {
        return Err(GeoError::OutOfRange { lat, lon, distance_km });
    }
    let to_rad = core::f64::consts::PI / 180.0;
    Ok(Point {
        x: EARTH_RADIUS_KM * (lon - origin.lon) * to_rad * math::cos(origin.lat * to_rad),
        y: EARTH_RADIUS_KM * (lat - origin.lat) * to_rad,
    })
}

/// Inverse of [`project_local`].
pub fn unproject_local(p: Point, origin: LatLon) -> LatLon {
    let to_deg = 180.0 / core::f64::consts::PI;
    let lat = origin.lat + p.y / EARTH_RADIUS_KM * to_deg;
    let lon = origin.lon + p.x / (EARTH_RADIUS_KM * math::cos(origin.lat / to_deg)) * to_deg;
    LatLon { lat, lon }
}

/// Nearest active tower by Euclidean distance; ties go to the smallest id.
pub fn nearest_active_tower(p: Point, sites: &[(TowerId, Point, bool)]) -> Option<TowerId> {
    sites
        .iter()
        .filter(|(_, _, active)| *active)
        .min_by(|a, b| p.dist2(a.1).total_cmp(&p.dist2(b.1)).then(a.0.cmp(&b.0)))
        .map(|(id, _, _)| *id)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Point,
    pub max: Point,
}

impl BoundingBox {
    pub fn area(&self) -> f64 {
        (self.max.x - self.min.x) * (self.max.y - self.min.y)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    fn corners(&self) -> Vec<Point> {
        alloc::vec![self.min, Point::new(self.max.x, self.min.y), self.max, Point::new(self.min.x, self.max.y),]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiCell {
    pub tower: TowerId,
    /// Counter-clockwise ring, not closed.
    pub polygon: Vec<Point>,
    pub area: f64,
}

impl VoronoiCell {
    /// Well-known-text rendering of the cell polygon.
    pub fn wkt(&self) -> String {
        let mut s = String::from("POLYGON((");
        for (i, p) in self.polygon.iter().chain(self.polygon.first()).enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            let _ = write!(s, "{:.6} {:.6}", p.x, p.y);
        }
        s.push_str("))");
        s
    }

    pub fn contains(&self, p: Point, eps: f64) -> bool {
        let n = self.polygon.len();
        (0..n).all(|i| {
            let a = self.polygon[i];
            let b = self.polygon[(i + 1) % n];
            (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) >= -eps
        })
    }
}

fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum();
    twice / 2.0
}

/// Sutherland-Hodgman clip keeping the side of the bisector closer to `site`.
fn clip_to_site(poly: &[Point], site: Point, other: Point) -> Vec<Point> {
    let nx = other.x - site.x;
    let ny = other.y - site.y;
    let mx = (site.x + other.x) / 2.0;
    let my = (site.y + other.y) / 2.0;
    let side = |p: Point| (p.x - mx) * nx + (p.y - my) * ny;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let cur = poly[i];
        let next = poly[(i + 1) % poly.len()];
        let (sc, sn) = (side(cur), side(next));
        if sc <= 0.0 {
            out.push(cur);
        }
        if (sc < 0.0 && sn > 0.0) || (sc > 0.0 && sn < 0.0) {
            let t = sc / (sc - sn);
            out.push(Point::new(cur.x + t * (next.x - cur.x), cur.y + t * (next.y - cur.y)));
        }
    }
    out
}

/// Voronoi tessellation of the active towers, clipped to the padded tower
/// extent. Immutable once built.
#[derive(Debug, Clone)]
pub struct Tessellation {
    origin: LatLon,
    bbox: BoundingBox,
    sites: Vec<(TowerId, Point, bool)>,
    cells: Vec<VoronoiCell>,
    owner: BTreeMap<TowerId, TowerId>,
}

impl Tessellation {
    /// Projection origin is the centroid of all tower coordinates; the box
    /// is the extent of all towers padded by [`BOX_PADDING_KM`], so it does
    /// not move when towers are deactivated.
    pub fn build(towers: &[TowerSite]) -> Result<Self, GeoError> {
        let mut seen = BTreeSet::new();
        for t in towers {
            if !seen.insert(t.id) {
                return Err(GeoError::DuplicateTower(t.id));
            }
        }
        if !towers.iter().any(|t| t.active) {
            return Err(GeoError::NoActiveTowers);
        }
        let n = towers.len() as f64;
        let origin = LatLon {
            lat: towers.iter().map(|t| t.latitude).sum::<f64>() / n,
            lon: towers.iter().map(|t| t.longitude).sum::<f64>() / n,
        };
        let mut sites = Vec::with_capacity(towers.len());
        for t in towers {
            sites.push((t.id, project_local(t.latitude, t.longitude, origin)?, t.active));
        }
        sites.sort_by_key(|s| s.0);

        let active: Vec<(TowerId, Point)> = sites.iter().filter(|s| s.2).map(|s| (s.0, s.1)).collect();
        let mut by_coord: Vec<&(TowerId, Point)> = active.iter().collect();
        by_coord.sort_by(|a, b| a.1.x.total_cmp(&b.1.x).then(a.1.y.total_cmp(&b.1.y)));
        for w in by_coord.windows(2) {
            if w[0].1 == w[1].1 {
                return Err(GeoError::DuplicateCoordinates(w[0].0.min(w[1].0), w[0].0.max(w[1].0)));
            }
        }

        let (mut min, mut max) = (sites[0].1, sites[0].1);
        for (_, p, _) in &sites {
            min = Point::new(min.x.min(p.x), min.y.min(p.y));
            max = Point::new(max.x.max(p.x), max.y.max(p.y));
        }
        let bbox = BoundingBox {
            min: Point::new(min.x - BOX_PADDING_KM, min.y - BOX_PADDING_KM),
            max: Point::new(max.x + BOX_PADDING_KM, max.y + BOX_PADDING_KM),
        };

        let cells = active
            .iter()
            .map(|&(id, site)| {
                let mut poly = bbox.corners();
                for &(other_id, other) in &active {
                    if other_id != id && !poly.is_empty() {
                        poly = clip_to_site(&poly, site, other);
                    }
                }
                let area = polygon_area(&poly);
                VoronoiCell { tower: id, polygon: poly, area }
            })
            .collect();

        let owner = sites
            .iter()
            .map(|&(id, p, _)| (id, nearest_active_tower(p, &sites).expect("at least one active tower")))
            .collect();

        Ok(Tessellation { origin, bbox, sites, cells, owner })
    }

    pub fn origin(&self) -> LatLon {
        self.origin
    }

    pub fn bounding_box(&self) -> BoundingBox {
        self.bbox
    }

    pub fn cells(&self) -> &[VoronoiCell] {
        &self.cells
    }

    pub fn cell(&self, tower: TowerId) -> Option<&VoronoiCell> {
        self.cells.iter().find(|c| c.tower == tower)
    }

    pub fn site(&self, tower: TowerId) -> Option<Point> {
        self.sites.iter().find(|s| s.0 == tower).map(|s| s.1)
    }

    /// Active tower whose cell contains `p`.
    pub fn locate(&self, p: Point) -> TowerId {
        nearest_active_tower(p, &self.sites).expect("at least one active tower")
    }

    /// The active tower whose cell absorbs the location of `tower`.
    pub fn owner_of(&self, tower: TowerId) -> Option<TowerId> {
        self.owner.get(&tower).copied()
    }

    pub fn active_count(&self) -> usize {
        self.cells.len()
    }
}

/// What counts as tower "activity" when deciding which towers to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "kebab-case"))]
pub enum ActivityRule {
    /// Active if it carried at least one event anywhere in the window.
    #[default]
    FullWindow,
    /// Active on a day only if it carried an event that day.
    Daily,
}

/// Which towers carried traffic, overall and per day.
#[derive(Debug, Clone, Default)]
pub struct TowerActivity {
    per_day: BTreeMap<Day, BTreeSet<TowerId>>,
}

impl TowerActivity {
    pub fn observe(&mut self, event: &CdrEvent, window: &StudyWindow) {
        if let Some(day) = window.day_of(event.timestamp) {
            self.per_day.entry(day).or_default().insert(event.tower);
        }
    }

    pub fn merge(&mut self, other: TowerActivity) {
        for (day, set) in other.per_day {
            self.per_day.entry(day).or_default().extend(set);
        }
    }

    pub fn active_set(&self, rule: ActivityRule, day: Option<Day>) -> BTreeSet<TowerId> {
        match (rule, day) {
            (ActivityRule::Daily, Some(d)) => self.per_day.get(&d).cloned().unwrap_or_default(),
            _ => self.per_day.values().flatten().copied().collect(),
        }
    }

    /// Copies `towers` with the `active` flag set according to `rule`.
    pub fn apply(&self, towers: &[TowerSite], rule: ActivityRule, day: Option<Day>) -> Vec<TowerSite> {
        let set = self.active_set(rule, day);
        towers.iter().map(|t| TowerSite { active: set.contains(&t.id), ..*t }).collect()
    }
}

pub fn format_point(p: Point) -> String {
    format!("{:.6} {:.6}", p.x, p.y)
}

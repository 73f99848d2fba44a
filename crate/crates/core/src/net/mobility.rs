use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::NetError;
use crate::market::RsuId;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsuSite {
    pub position: Point,
    pub radius_m: f64,
}

/// Position, unit heading and speed (m/s) of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kinematics {
    pub position: Point,
    pub heading: (f64, f64),
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityConfig {
    pub arena_m: f64,
    pub speed_mean: f64,
    pub speed_std: f64,
    /// Per-step probability that a vehicle redraws its heading.
    pub turn_probability: f64,
    pub rsu_radius_m: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self { arena_m: 1000.0, speed_mean: 25.0, speed_std: 2.5, turn_probability: 0.05, rsu_radius_m: 500.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub width: f64,
    pub height: f64,
    pub rsus: Vec<RsuSite>,
    pub vehicles: Vec<Kinematics>,
}

fn random_heading<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let angle = rng.random::<f64>() * std::f64::consts::TAU;
    (angle.cos(), angle.sin())
}

/// Folds `x` back into `[0, limit]`, returning whether the heading flips.
fn reflect(x: f64, limit: f64) -> (f64, bool) {
    if limit <= 0.0 {
        return (0.0, false);
    }
    let period = 2.0 * limit;
    let m = x.rem_euclid(period);
    if m <= limit {
        let crossings = (x / limit).floor().abs() as i64;
        (m, crossings % 2 == 1)
    } else {
        (period - m, true)
    }
}

impl Topology {
    /// RSUs on a uniform grid of `per_side`² cells, each at its cell centre.
    pub fn grid(arena_m: f64, per_side: u32, radius_m: f64) -> Self {
        let cell = arena_m / f64::from(per_side.max(1));
        let mut rsus = Vec::new();
        for row in 0..per_side {
            for col in 0..per_side {
                let position = Point::new(cell * (f64::from(col) + 0.5), cell * (f64::from(row) + 0.5));
                rsus.push(RsuSite { position, radius_m });
            }
        }
        Self { width: arena_m, height: arena_m, rsus, vehicles: Vec::new() }
    }

    /// Default four-RSU layout of a square arena.
    pub fn with_defaults(config: &MobilityConfig) -> Self {
        Self::grid(config.arena_m, 2, config.rsu_radius_m)
    }

    /// Places `count` vehicles uniformly with random headings and
    /// normally distributed speeds.
    pub fn spawn<R: Rng + ?Sized>(&mut self, count: u32, config: &MobilityConfig, rng: &mut R) {
        let speed = Normal::new(config.speed_mean, config.speed_std.max(0.0)).expect("finite speed parameters");
        self.vehicles = (0..count)
            .map(|_| {
                let position = Point::new(rng.random::<f64>() * self.width, rng.random::<f64>() * self.height);
                let heading = random_heading(rng);
                Kinematics { position, heading, speed: speed.sample(rng).max(0.0) }
            })
            .collect();
    }

    /// Advances every vehicle by `dt` seconds, reflecting at arena walls.
    /// Heading redraws happen before the move; `dt == 0` is the identity.
    pub fn step<R: Rng + ?Sized>(&mut self, dt: f64, turn_probability: f64, rng: &mut R) -> Result<(), NetError> {
        if !dt.is_finite() || dt < 0.0 {
            return Err(NetError::InvalidTimeStep(dt));
        }
        if dt == 0.0 {
            return Ok(());
        }
        for v in &mut self.vehicles {
            if turn_probability > 0.0 && rng.random::<f64>() < turn_probability {
                v.heading = random_heading(rng);
            }
            let (x, flip_x) = reflect(v.position.x + v.heading.0 * v.speed * dt, self.width);
            let (y, flip_y) = reflect(v.position.y + v.heading.1 * v.speed * dt, self.height);
            v.position = Point::new(x, y);
            if flip_x {
                v.heading.0 = -v.heading.0;
            }
            if flip_y {
                v.heading.1 = -v.heading.1;
            }
        }
        Ok(())
    }

    /// Whether every point of a `step`-metre lattice over the arena lies
    /// inside some RSU's coverage disc.
    pub fn fully_covered(&self, step: f64) -> bool {
        let nx = (self.width / step).ceil() as u32;
        let ny = (self.height / step).ceil() as u32;
        (0..=nx).all(|i| {
            (0..=ny).all(|j| {
                let p = Point::new((f64::from(i) * step).min(self.width), (f64::from(j) * step).min(self.height));
                self.rsus.iter().any(|r| r.position.distance(p) <= r.radius_m)
            })
        })
    }

    pub fn attachments(&self) -> Result<Vec<RsuId>, NetError> {
        self.vehicles.iter().map(|v| attach_rsu(self, v.position)).collect()
    }
}

/// Nearest RSU whose disc contains `position`, ties to the lower id. Falls
/// back to the nearest RSU overall when no disc contains the point.
pub fn attach_rsu(topology: &Topology, position: Point) -> Result<RsuId, NetError> {
    let nearest = |covering_only: bool| {
        topology
            .rsus
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r, r.position.distance(position)))
            .filter(|(_, r, d)| !covering_only || *d <= r.radius_m)
            .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)))
            .map(|(i, _, _)| RsuId(i as u32))
    };
    nearest(true).or_else(|| nearest(false)).ok_or(NetError::NoRsus)
}

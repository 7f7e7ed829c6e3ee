//! Random-waypoint motion with zero pause time.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arena {
    pub width: f64,
    pub height: f64,
}

impl Arena {
    pub fn random_point<R: Rng>(&self, rng: &mut R) -> Point {
        Point::new(rng.random_range(0.0..=self.width), rng.random_range(0.0..=self.height))
    }
}

/// One node's leg towards its current waypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub position: Point,
    pub target: Point,
    pub speed: f64,
}

pub fn draw_speed<R: Rng>(rng: &mut R, min: f64, max: f64) -> f64 {
    if max > min {
        rng.random_range(min..=max)
    } else {
        min
    }
}

impl Waypoint {
    pub fn start<R: Rng>(rng: &mut R, arena: Arena, speed_min: f64, speed_max: f64) -> Self {
        let position = arena.random_point(rng);
        let target = arena.random_point(rng);
        let speed = draw_speed(rng, speed_min, speed_max);
        Self { position, target, speed }
    }

    /// Advances by `dt_ms`. Reaching the waypoint mid-step draws a new target
    /// and speed and spends the rest of the step on the new leg.
    pub fn advance<R: Rng>(&mut self, dt_ms: f64, rng: &mut R, arena: Arena, speed_min: f64, speed_max: f64) {
        let mut remaining_s = dt_ms / 1000.0;
        // A bounded number of legs per step keeps degenerate (tiny arena) cases finite.
        for _ in 0..64 {
            if remaining_s <= 0.0 || self.speed <= 0.0 {
                return;
            }
            let dist = self.position.distance(&self.target);
            let reach = self.speed * remaining_s;
            if reach < dist {
                let f = reach / dist;
                self.position.x += (self.target.x - self.position.x) * f;
                self.position.y += (self.target.y - self.position.y) * f;
                return;
            }
            remaining_s -= dist / self.speed;
            self.position = self.target;
            self.target = arena.random_point(rng);
            self.speed = draw_speed(rng, speed_min, speed_max);
        }
    }
}

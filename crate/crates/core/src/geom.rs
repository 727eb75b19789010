//! Planar geometry shared by the planner, the simulator and the metrics:
//! points, GPS error discs, headings and the uniform-disc position model.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// A point or velocity in the horizontal plane (meters, or meters/second).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Counter-clockwise quarter turn.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn from_polar(radius: f64, angle: f64) -> Vec2 {
        Vec2::new(radius * angle.cos(), radius * angle.sin())
    }

    /// Linear interpolation, `frac = 0` gives `self`.
    pub fn lerp(self, other: Vec2, frac: f64) -> Vec2 {
        self + (other - self) * frac
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// GPS error disc around a reported position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyDisc {
    pub center: Vec2,
    pub radius: f64,
}

impl SafetyDisc {
    pub fn new(center: Vec2, radius: f64) -> Self {
        debug_assert!(radius >= 0.0);
        Self { center, radius }
    }
}

/// Strict overlap test: discs whose centers are exactly `r_a + r_b` apart
/// are tangent and do not overlap.
pub fn disc_overlap(a: &SafetyDisc, b: &SafetyDisc) -> bool {
    a.center.distance(b.center) < a.radius + b.radius
}

/// Angle between the x-axis and `v`, in (-pi, pi]. The zero vector maps to 0.
pub fn heading_angle(v: Vec2) -> f64 {
    if v.x == 0.0 && v.y == 0.0 {
        return 0.0;
    }
    let a = v.y.atan2(v.x);
    // atan2 returns -pi for (negative, -0.0)
    if a == -PI {
        PI
    } else {
        a
    }
}

/// Four-quadrant bearing of the goal seen from `pos`.
pub fn bearing_to_goal(pos: Vec2, goal: Vec2) -> Result<f64, Error> {
    if pos == goal {
        return Err(Error::CoincidentPoints);
    }
    Ok(heading_angle(goal - pos))
}

/// Speed and heading of a velocity vector.
pub fn recover_polar(v: Vec2) -> (f64, f64) {
    (v.norm(), heading_angle(v))
}

/// Smallest absolute angular distance between two angles, in [0, pi].
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    if d > PI {
        2.0 * PI - d
    } else {
        d
    }
}

/// Draws a point uniformly from the closed disc of `radius` around `reported`.
pub fn sample_true_position<R: Rng + ?Sized>(reported: Vec2, radius: f64, rng: &mut R) -> Vec2 {
    if radius <= 0.0 {
        return reported;
    }
    // inverse-CDF on the radius: P(rho <= s) = (s / r)^2
    let u: f64 = rng.random();
    let theta: f64 = rng.random::<f64>() * 2.0 * PI;
    let mut rho = radius * u.sqrt();
    loop {
        let p = reported + Vec2::from_polar(rho, theta);
        // rounding in cos/sin can put rho == radius a hair outside
        if p.distance(reported) <= radius {
            return p;
        }
        rho *= 1.0 - 1e-12;
    }
}

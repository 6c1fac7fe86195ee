use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn xy(self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// Horizontal wind vector in m/s; `u` points east, `v` points north.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Velocity {
    pub u: f64,
    pub v: f64,
}

impl Velocity {
    pub const ZERO: Velocity = Velocity { u: 0.0, v: 0.0 };

    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Converts meteorological speed and direction (the bearing the wind
    /// blows FROM, degrees clockwise from north) into components.
    pub fn from_speed_direction(speed: f64, direction_deg: f64) -> Self {
        let (s, c) = direction_deg.to_radians().sin_cos();
        Self {
            u: -speed * s,
            v: -speed * c,
        }
    }

    pub fn speed(self) -> f64 {
        self.u.hypot(self.v)
    }

    /// Meteorological direction in [0, 360).
    pub fn direction_deg(self) -> f64 {
        normalize_degrees((-self.u).atan2(-self.v).to_degrees())
    }
}

/// Wraps an angle into [0, 360).
pub fn normalize_degrees(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn north_wind_blows_south() {
        let v = Velocity::from_speed_direction(2.0, 0.0);
        assert!(v.u.abs() < 1e-15);
        assert_eq!(v.v, -2.0);
        let w = Velocity::from_speed_direction(3.0, 270.0);
        assert!((w.u - 3.0).abs() < 1e-12);
        assert!(w.v.abs() < 1e-12);
    }

    #[test]
    fn wrap_handles_negative_rounding() {
        assert_eq!(normalize_degrees(-1e-20), 0.0);
        assert_eq!(normalize_degrees(362.0), 2.0);
        assert_eq!(normalize_degrees(-90.0), 270.0);
    }

    proptest! {
        #[test]
        fn speed_direction_round_trip(speed in 1e-3f64..50.0, dir in 0.0f64..360.0) {
            let v = Velocity::from_speed_direction(speed, dir);
            prop_assert!((v.speed() - speed).abs() < 1e-9);
            let d = v.direction_deg();
            let diff = (d - dir).abs();
            prop_assert!(diff.min(360.0 - diff) < 1e-9);
        }
    }
}

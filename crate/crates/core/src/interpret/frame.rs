use serde::{Deserialize, Serialize};

use crate::env::Pose;
use crate::error::{Error, Result};

/// A world point in the navigator's frame: heading along +y, right along +x.
pub fn relative_goal_frame(pose: &Pose, goal: (f64, f64)) -> (f64, f64) {
    pose.to_ego(goal.0 - pose.x, goal.1 - pose.y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AngleScheme {
    /// |angle from heading| in four 45° bins over [0°, 180°].
    Abs4,
    /// Signed angle, counter-clockwise from heading, in eight 45° sectors.
    Full8,
}

/// Angle bin of an egocentric offset. Bins are lower-inclusive; 180° joins the last ABS4 bin.
pub fn angle_bins(x: f64, y: f64, scheme: AngleScheme) -> Result<usize> {
    if x == 0.0 && y == 0.0 {
        return Err(Error::Degenerate("angle of the zero vector is undefined".into()));
    }
    // counter-clockwise from +y means a point to the left (x < 0) has a positive angle
    let deg = (-x).atan2(y).to_degrees();
    Ok(match scheme {
        AngleScheme::Abs4 => ((deg.abs() / 45.0).floor() as usize).min(3),
        AngleScheme::Full8 => ((deg.rem_euclid(360.0) / 45.0).floor() as usize).min(7),
    })
}

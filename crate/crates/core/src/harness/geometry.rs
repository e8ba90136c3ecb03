//! Scenario geometry export for plotting.

use std::io::Write;

use crate::error::Result;
use crate::simenv::{ReferencePath, Trajectory};

pub const PATH_COLUMNS: [&str; 4] = ["X", "Y", "heading", "arclength"];
pub const OBSTACLE_COLUMNS: [&str; 3] = ["t", "X", "Y"];

/// Reference path samples, one row per point.
pub fn write_path_csv<W: Write>(path: &ReferencePath, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PATH_COLUMNS)?;
    for p in path.points() {
        w.write_record([
            p.x.to_string(),
            p.y.to_string(),
            p.heading.to_string(),
            p.arclength.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// World-frame front-vehicle position at every recorded step. Writes only
/// the header when the trajectory has no front vehicle.
pub fn write_obstacle_csv<W: Write>(traj: &Trajectory, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(OBSTACLE_COLUMNS)?;
    for (t, pos) in traj.obstacle_positions.iter().enumerate() {
        if let Some((x, y)) = pos {
            w.write_record([t.to_string(), x.to_string(), y.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

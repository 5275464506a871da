//! Robot-in-a-grid-world simulation for continual learning.
//!
//! A [`GridWorld`] is a boolean occupancy grid with square cells. The robot
//! pose is continuous; a simulated range scanner walks rays through the grid
//! (DDA traversal) and an auto-labeler turns scans into blocked/free labels:
//! blocked iff any beam inside the field of view reports a range strictly
//! below the trigger distance.

mod session;

pub use session::{
    collect_route, collect_step, continual_session, fuse, CameraConfig, SessionConfig,
    SessionOutput, StepRecord,
};

use crate::data::Realm;
use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::Path;

/// Robot pose in world coordinates (meters; heading in radians, 0 = +x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// One range scan: per-beam angular offsets from the heading plus measured
/// ranges, both in beam order.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub offsets: Vec<f64>,
    pub ranges: Vec<f64>,
    pub max_range: f64,
}

/// Occupancy grid with square cells of `cell_size` meters.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    pub realm: Realm,
    occupied: Vec<bool>,
}

/// Serialized form: occupied cells as coordinate pairs.
#[derive(Serialize, Deserialize)]
struct WorldFile {
    cell_size: f64,
    width: usize,
    height: usize,
    realm: Realm,
    occupied: Vec<[usize; 2]>,
}

impl GridWorld {
    pub fn empty(width: usize, height: usize, cell_size: f64, realm: Realm) -> Result<GridWorld> {
        if width == 0 || height == 0 {
            return Err(Error::Config("world dimensions must be positive".into()));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::Config(format!("bad cell size {cell_size}")));
        }
        Ok(GridWorld { cell_size, width, height, realm, occupied: vec![false; width * height] })
    }

    pub fn set_occupied(&mut self, ix: usize, iy: usize, value: bool) {
        if ix < self.width && iy < self.height {
            self.occupied[iy * self.width + ix] = value;
        }
    }

    /// Cells outside the grid count as free (rays exit to max range).
    pub fn is_occupied(&self, ix: i64, iy: i64) -> bool {
        if ix < 0 || iy < 0 || ix >= self.width as i64 || iy >= self.height as i64 {
            return false;
        }
        self.occupied[iy as usize * self.width + ix as usize]
    }

    /// Grid cell containing a world point.
    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.cell_size).floor() as i64, (y / self.cell_size).floor() as i64)
    }

    /// Center of a cell in world coordinates.
    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        ((ix as f64 + 0.5) * self.cell_size, (iy as f64 + 0.5) * self.cell_size)
    }

    pub fn occupied_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height)
            .flat_map(move |y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.occupied[y * self.width + x])
    }

    /// Scatters obstacles at the given density, keeping the spawn cell (0, 0)
    /// and its 8-neighborhood clear. Deterministic in the seed.
    pub fn random(
        width: usize,
        height: usize,
        cell_size: f64,
        realm: Realm,
        density: f64,
        seed: u64,
    ) -> Result<GridWorld> {
        if !(0.0..=0.5).contains(&density) {
            return Err(Error::Config(format!("obstacle density {density} outside [0, 0.5]")));
        }
        let mut world = GridWorld::empty(width, height, cell_size, realm)?;
        let mut rng = rng::rng_from(rng::derive(seed, "world"));
        for iy in 0..height {
            for ix in 0..width {
                if ix <= 1 && iy <= 1 {
                    continue; // spawn area stays free
                }
                if rng.gen::<f64>() < density {
                    world.set_occupied(ix, iy, true);
                }
            }
        }
        Ok(world)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = WorldFile {
            cell_size: self.cell_size,
            width: self.width,
            height: self.height,
            realm: self.realm,
            occupied: self.occupied_cells().map(|(x, y)| [x, y]).collect(),
        };
        let json = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<GridWorld> {
        let file: WorldFile = serde_json::from_reader(std::fs::File::open(path)?)?;
        let mut world = GridWorld::empty(file.width, file.height, file.cell_size, file.realm)?;
        for [x, y] in file.occupied {
            if x >= file.width || y >= file.height {
                return Err(Error::Config(format!(
                    "occupied cell [{x}, {y}] outside {}x{} grid",
                    file.width, file.height
                )));
            }
            world.set_occupied(x, y, true);
        }
        Ok(world)
    }

    /// Shortest 4-connected path between free cells (BFS), including both
    /// endpoints. `None` when unreachable.
    pub fn bfs_path(&self, from: (usize, usize), to: (usize, usize)) -> Option<Vec<(usize, usize)>> {
        let blocked =
            |&(x, y): &(usize, usize)| self.is_occupied(x as i64, y as i64);
        if blocked(&from) || blocked(&to) {
            return None;
        }
        if from == to {
            return Some(vec![from]);
        }
        let idx = |(x, y): (usize, usize)| y * self.width + x;
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; self.width * self.height];
        let mut seen = vec![false; self.width * self.height];
        let mut queue = VecDeque::new();
        seen[idx(from)] = true;
        queue.push_back(from);
        while let Some(cur) = queue.pop_front() {
            if cur == to {
                let mut path = vec![to];
                let mut c = to;
                while let Some(p) = prev[idx(c)] {
                    path.push(p);
                    c = p;
                }
                path.reverse();
                return Some(path);
            }
            let (x, y) = cur;
            let mut neighbors = Vec::with_capacity(4);
            if x > 0 {
                neighbors.push((x - 1, y));
            }
            if x + 1 < self.width {
                neighbors.push((x + 1, y));
            }
            if y > 0 {
                neighbors.push((x, y - 1));
            }
            if y + 1 < self.height {
                neighbors.push((x, y + 1));
            }
            for nb in neighbors {
                if !seen[idx(nb)] && !blocked(&nb) {
                    seen[idx(nb)] = true;
                    prev[idx(nb)] = Some(cur);
                    queue.push_back(nb);
                }
            }
        }
        None
    }
}

/// Samples `count` distinct route goals among free cells reachable from
/// `start`, deterministically in the seed.
pub fn random_goals(
    world: &GridWorld,
    start: (usize, usize),
    count: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    if world.is_occupied(start.0 as i64, start.1 as i64) {
        return Err(Error::State(format!("start cell {start:?} is occupied")));
    }
    // Flood fill the reachable component, row-major order for determinism.
    let idx = |(x, y): (usize, usize)| y * world.width + x;
    let mut seen = vec![false; world.width * world.height];
    let mut queue = VecDeque::from([start]);
    seen[idx(start)] = true;
    while let Some((x, y)) = queue.pop_front() {
        let mut push = |nb: (usize, usize)| {
            if !seen[idx(nb)] && !world.is_occupied(nb.0 as i64, nb.1 as i64) {
                seen[idx(nb)] = true;
                queue.push_back(nb);
            }
        };
        if x > 0 {
            push((x - 1, y));
        }
        if x + 1 < world.width {
            push((x + 1, y));
        }
        if y > 0 {
            push((x, y - 1));
        }
        if y + 1 < world.height {
            push((x, y + 1));
        }
    }
    let reachable: Vec<(usize, usize)> = (0..world.height)
        .flat_map(|y| (0..world.width).map(move |x| (x, y)))
        .filter(|&c| c != start && seen[idx(c)])
        .collect();
    if reachable.len() < count {
        return Err(Error::Navigation(format!(
            "only {} reachable cells for {count} goals",
            reachable.len()
        )));
    }
    let mut rng = rng::rng_from(rng::derive(seed, "goals"));
    let picks = rand::seq::index::sample(&mut rng, reachable.len(), count);
    Ok(picks.iter().map(|i| reachable[i]).collect())
}

/// Casts rays through the grid and returns per-beam ranges.
///
/// Each range is the distance from the pose to the point where the ray first
/// enters an occupied cell, clamped to `max_range`; rays that leave the grid
/// or hit nothing report `max_range`. Errors if the pose sits inside an
/// occupied cell.
pub fn raycast(
    world: &GridWorld,
    pose: &Pose,
    beam_offsets: &[f64],
    max_range: f64,
) -> Result<LidarScan> {
    if !(max_range.is_finite() && max_range > 0.0) {
        return Err(Error::Config(format!("bad max range {max_range}")));
    }
    if beam_offsets.is_empty() {
        return Err(Error::Config("no beams configured".into()));
    }
    let (cx, cy) = world.cell_of(pose.x, pose.y);
    if world.is_occupied(cx, cy) {
        return Err(Error::State(format!(
            "pose ({:.3}, {:.3}) is inside an occupied cell",
            pose.x, pose.y
        )));
    }

    let ranges = beam_offsets
        .iter()
        .map(|&off| cast_one(world, pose, pose.heading + off, max_range))
        .collect();
    Ok(LidarScan { offsets: beam_offsets.to_vec(), ranges, max_range })
}

/// Amanatides–Woo grid traversal for a single ray.
fn cast_one(world: &GridWorld, pose: &Pose, angle: f64, max_range: f64) -> f64 {
    let (dx, dy) = (angle.cos(), angle.sin());
    let cs = world.cell_size;
    let (mut ix, mut iy) = world.cell_of(pose.x, pose.y);

    let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dy > 0.0 { 1 } else { -1 };

    // Distance along the ray to the first vertical / horizontal cell border.
    let mut t_max_x = if dx == 0.0 {
        f64::INFINITY
    } else {
        let border = if dx > 0.0 { (ix + 1) as f64 * cs } else { ix as f64 * cs };
        (border - pose.x) / dx
    };
    let mut t_max_y = if dy == 0.0 {
        f64::INFINITY
    } else {
        let border = if dy > 0.0 { (iy + 1) as f64 * cs } else { iy as f64 * cs };
        (border - pose.y) / dy
    };
    let t_delta_x = if dx == 0.0 { f64::INFINITY } else { (cs / dx).abs() };
    let t_delta_y = if dy == 0.0 { f64::INFINITY } else { (cs / dy).abs() };

    loop {
        let t = t_max_x.min(t_max_y);
        if t > max_range {
            return max_range;
        }
        if t_max_x <= t_max_y {
            ix += step_x;
            t_max_x += t_delta_x;
        } else {
            iy += step_y;
            t_max_y += t_delta_y;
        }
        if world.is_occupied(ix, iy) {
            return t.min(max_range);
        }
        // Cells outside the grid are free, so walking past the border is
        // harmless; the `t > max_range` check above bounds the loop.
    }
}

/// Blocked/free decision from a scan: blocked iff any beam with |offset| at
/// most fov/2 reports a range strictly below `d_trig`. A range exactly equal
/// to `d_trig` counts as free.
pub fn label_from_scan(scan: &LidarScan, d_trig: f64, fov: f64) -> Result<u8> {
    if !(d_trig.is_finite() && d_trig > 0.0) {
        return Err(Error::Config(format!("bad trigger distance {d_trig}")));
    }
    if !(fov.is_finite() && fov > 0.0) {
        return Err(Error::Config(format!("bad field of view {fov}")));
    }
    let half = fov / 2.0;
    let mut in_fov = 0usize;
    let mut min_range = f64::INFINITY;
    for (&off, &r) in scan.offsets.iter().zip(&scan.ranges) {
        if off.abs() <= half {
            in_fov += 1;
            if r < min_range {
                min_range = r;
            }
        }
    }
    if in_fov == 0 {
        return Err(Error::Config(format!("field of view {fov:.3} rad contains no beams")));
    }
    Ok(u8::from(min_range < d_trig))
}

//! Deployment sessions: drive a route, auto-label camera frames from range
//! scans, and emit model updates from fixed-size experience buffers.

use super::{label_from_scan, raycast, GridWorld, Pose};
use crate::data::{render, EnvironmentDataset, EnvironmentId, LabeledExample, Realm, SceneSpec};
use crate::data::{Blob, BlobShape, ShiftKnobs, Split};
use crate::error::{Error, Result};
use crate::federation::{aggregate, train_epochs, ClientUpdate, TrainSchedule};
use crate::models::ModelParams;
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI, TAU};

/// Forward camera model: obstacles inside the frustum project to image blobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    /// Horizontal field of view in radians.
    pub fov: f64,
    /// Furthest obstacle the camera resolves, in meters.
    pub range: f64,
    /// At most this many nearest cells are drawn.
    pub max_blobs: usize,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig { fov: FRAC_PI_2, range: 2.5, max_blobs: 6 }
    }
}

/// Session parameters: scanner geometry, labeling rule, buffer hand-off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Blocked iff a front-facing beam measures strictly less than this.
    pub d_trig: f64,
    /// Angular window, centered on the heading, consulted by the labeler.
    pub fov: f64,
    /// Total angular span covered by the scanner beams.
    pub beam_span: f64,
    pub beam_count: usize,
    pub max_range: f64,
    /// Experience buffer size; a model update is produced each time the
    /// buffer fills, and a partial trailing buffer is discarded.
    pub n_buf: usize,
    pub camera: CameraConfig,
    pub knobs: ShiftKnobs,
    pub schedule: TrainSchedule,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            d_trig: 0.5,
            fov: PI / 3.0,
            beam_span: 150.0_f64.to_radians(),
            beam_count: 16,
            max_range: 10.0,
            n_buf: 64,
            camera: CameraConfig::default(),
            knobs: ShiftKnobs::default(),
            schedule: TrainSchedule { rounds: 1, local_epochs: 2, lr: 0.02, batch_size: 16 },
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_count < 2 {
            return Err(Error::Config("need at least two scanner beams".into()));
        }
        if self.n_buf == 0 {
            return Err(Error::Config("buffer size must be positive".into()));
        }
        if !(self.beam_span.is_finite() && self.beam_span > 0.0 && self.beam_span <= TAU) {
            return Err(Error::Config(format!("bad beam span {}", self.beam_span)));
        }
        if self.camera.max_blobs == 0 || !(self.camera.fov > 0.0 && self.camera.range > 0.0) {
            return Err(Error::Config("bad camera geometry".into()));
        }
        self.schedule.validate()
    }

    /// Evenly spaced beam offsets across the span, symmetric about zero.
    pub fn beam_offsets(&self) -> Vec<f64> {
        let n = self.beam_count;
        let half = self.beam_span / 2.0;
        (0..n).map(|i| -half + self.beam_span * i as f64 / (n - 1) as f64).collect()
    }
}

/// One step of a session log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub pose: Pose,
    /// Auto-label from the range scan: 1 = blocked, 0 = free.
    pub label: u8,
    /// Occupied cells the camera saw at this pose.
    pub visible_cells: usize,
}

/// Everything a session produced.
#[derive(Debug)]
pub struct SessionOutput {
    /// One update per filled buffer, in hand-off order.
    pub updates: Vec<ClientUpdate>,
    pub steps: Vec<StepRecord>,
    /// Examples left in the buffer at route end (discarded, never trained on).
    pub leftover: usize,
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

fn realm_env(realm: Realm) -> EnvironmentId {
    match realm {
        Realm::Sim => EnvironmentId::HuskySim,
        Realm::Real => EnvironmentId::HuskyReal,
    }
}

/// Renders the camera view at a pose and labels it from the range scan.
pub fn collect_step(
    world: &GridWorld,
    pose: &Pose,
    cfg: &SessionConfig,
    texture_seed: u64,
) -> Result<(LabeledExample, StepRecord)> {
    let scan = raycast(world, pose, &cfg.beam_offsets(), cfg.max_range)?;
    let label = label_from_scan(&scan, cfg.d_trig, cfg.fov)?;

    // Occupied cells inside the camera frustum, nearest first.
    let mut seen: Vec<(f64, f64, usize, usize)> = world
        .occupied_cells()
        .filter_map(|(ix, iy)| {
            let (cx, cy) = world.cell_center(ix, iy);
            let (dx, dy) = (cx - pose.x, cy - pose.y);
            let d = (dx * dx + dy * dy).sqrt();
            let bearing = wrap_angle(dy.atan2(dx) - pose.heading);
            (d > 1e-9 && d <= cfg.camera.range && bearing.abs() <= cfg.camera.fov / 2.0)
                .then_some((d, bearing, ix, iy))
        })
        .collect();
    seen.sort_by(|a, b| a.0.total_cmp(&b.0));
    seen.truncate(cfg.camera.max_blobs);

    let half_cell = world.cell_size / 2.0;
    let blobs = seen
        .iter()
        .map(|&(d, bearing, ix, iy)| {
            let rx = ((half_cell / d).atan() / cfg.camera.fov).clamp(0.04, 0.40) as f32;
            Blob {
                // Alternate silhouettes deterministically across the grid.
                shape: if (ix + iy) % 2 == 0 { BlobShape::Rect } else { BlobShape::Ellipse },
                cx: (0.5 - bearing / cfg.camera.fov).clamp(0.0, 1.0) as f32,
                // Nearer obstacles sit lower in the frame.
                cy: (0.45 + 0.18 / d).clamp(0.30, 0.95) as f32,
                rx,
                ry: (rx * 0.8).clamp(0.04, 0.35),
                rot: 0.0,
            }
        })
        .collect::<Vec<_>>();

    let env = realm_env(world.realm);
    let scene = SceneSpec { env, blobs, texture_seed };
    let image = render(&scene, &cfg.knobs);
    let example = LabeledExample { image, label, env };
    let record = StepRecord { pose: *pose, label, visible_cells: seen.len() };
    Ok((example, record))
}

/// Plans a route through the goal cells and returns the visited cells
/// including the start.
fn plan_route(
    world: &GridWorld,
    start: (usize, usize),
    goals: &[(usize, usize)],
) -> Result<Vec<(usize, usize)>> {
    let mut route = vec![start];
    let mut at = start;
    for &goal in goals {
        let leg = world
            .bfs_path(at, goal)
            .ok_or_else(|| Error::Navigation(format!("no path from {at:?} to {goal:?}")))?;
        route.extend_from_slice(&leg[1..]);
        at = goal;
    }
    Ok(route)
}

/// Drives the route and collects one auto-labeled frame per visited cell.
fn walk_route(
    world: &GridWorld,
    route: &[(usize, usize)],
    cfg: &SessionConfig,
    seed: u64,
) -> Result<Vec<(LabeledExample, StepRecord)>> {
    let mut texture_rng = rng::rng_from(rng::derive(seed, "session"));
    let mut out = Vec::with_capacity(route.len());
    for (i, &(ix, iy)) in route.iter().enumerate() {
        let (px, py) = world.cell_center(ix, iy);
        // Face the next cell; at the route end keep the arrival heading.
        let heading = if let Some(&(nx, ny)) = route.get(i + 1) {
            let (tx, ty) = world.cell_center(nx, ny);
            (ty - py).atan2(tx - px)
        } else if i > 0 {
            let (qx, qy) = world.cell_center(route[i - 1].0, route[i - 1].1);
            (py - qy).atan2(px - qx)
        } else {
            0.0
        };
        let pose = Pose { x: px, y: py, heading };
        out.push(collect_step(world, &pose, cfg, texture_rng.gen::<u64>())?);
    }
    Ok(out)
}

/// Drives a route without training and returns everything it saw as a
/// validation set — a held-out probe of deployment performance.
pub fn collect_route(
    world: &GridWorld,
    start: (usize, usize),
    goals: &[(usize, usize)],
    cfg: &SessionConfig,
    seed: u64,
) -> Result<(EnvironmentDataset, Vec<StepRecord>)> {
    cfg.validate()?;
    let route = plan_route(world, start, goals)?;
    let walked = walk_route(world, &route, cfg, seed)?;
    let mut examples = Vec::with_capacity(walked.len());
    let mut steps = Vec::with_capacity(walked.len());
    for (ex, rec) in walked {
        examples.push(ex);
        steps.push(rec);
    }
    Ok((EnvironmentDataset { examples, split: Split::Val, sources: vec![] }, steps))
}

/// Drives the route, auto-labeling a frame at every cell, and fine-tunes the
/// frozen `prior` on each filled buffer of `n_buf` examples.
///
/// Every update starts from `prior` — buffers never chain — so the outputs
/// are independent candidates for [`fuse`]. Updates are named `<env>#<k>`
/// in hand-off order; a partial trailing buffer is discarded.
pub fn continual_session(
    world: &GridWorld,
    prior: &ModelParams,
    start: (usize, usize),
    goals: &[(usize, usize)],
    cfg: &SessionConfig,
    seed: u64,
) -> Result<SessionOutput> {
    cfg.validate()?;
    let route = plan_route(world, start, goals)?;
    let walked = walk_route(world, &route, cfg, seed)?;
    let env = realm_env(world.realm);

    let mut steps = Vec::with_capacity(walked.len());
    let mut examples = Vec::with_capacity(walked.len());
    for (ex, rec) in walked {
        examples.push(ex);
        steps.push(rec);
    }

    let mut updates = Vec::new();
    for chunk in examples.chunks_exact(cfg.n_buf) {
        let k = updates.len() as u64;
        let dataset = EnvironmentDataset {
            examples: chunk.to_vec(),
            split: Split::Train,
            sources: vec![],
        };
        let local = train_epochs(
            prior,
            &dataset,
            cfg.schedule.local_epochs,
            cfg.schedule.lr,
            cfg.schedule.batch_size,
            rng::derive_indexed(seed, "session-train", &[k]),
        )?;
        updates.push(ClientUpdate {
            client_id: format!("{env}#{k}"),
            params: local,
            sample_count: cfg.n_buf as u32,
        });
    }

    let leftover = examples.len() % cfg.n_buf;
    Ok(SessionOutput { updates, steps, leftover })
}

/// Folds session updates into the prior: sample-weighted averaging when there
/// are updates, otherwise the prior unchanged.
pub fn fuse(prior: &ModelParams, updates: &[ClientUpdate]) -> Result<ModelParams> {
    if updates.is_empty() {
        return Ok(prior.clone());
    }
    aggregate(updates)
}

//! World model, range scanner, auto-labeling rule, and on-robot session
//! collection.

use fedrover::continual::{
    collect_route, collect_step, continual_session, fuse, label_from_scan, random_goals, raycast,
    GridWorld, LidarScan, Pose, SessionConfig,
};
use fedrover::data::{Realm, Split};
use fedrover::error::Error;
use fedrover::federation::TrainSchedule;
use fedrover::models::{ArchName, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;

fn scan(offsets: &[f64], ranges: &[f64]) -> LidarScan {
    LidarScan { offsets: offsets.to_vec(), ranges: ranges.to_vec(), max_range: 10.0 }
}

/// Step the ray forward in tiny increments until it enters an occupied cell.
fn march_one(world: &GridWorld, pose: &Pose, angle: f64, max_range: f64, step: f64) -> f64 {
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut t = step;
    while t <= max_range {
        let (ix, iy) = world.cell_of(pose.x + t * dx, pose.y + t * dy);
        if world.is_occupied(ix, iy) {
            return t;
        }
        t += step;
    }
    max_range
}

/// Plain queue BFS over free cells; returns the hop distance to `to`.
fn bfs_distance(world: &GridWorld, from: (usize, usize), to: (usize, usize)) -> Option<usize> {
    let idx = |(x, y): (usize, usize)| y * world.width + x;
    let mut dist = vec![usize::MAX; world.width * world.height];
    dist[idx(from)] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some((x, y)) = queue.pop_front() {
        if (x, y) == to {
            return Some(dist[idx((x, y))]);
        }
        let d = dist[idx((x, y))];
        let mut neighbors = Vec::new();
        if x > 0 {
            neighbors.push((x - 1, y));
        }
        if y > 0 {
            neighbors.push((x, y - 1));
        }
        if x + 1 < world.width {
            neighbors.push((x + 1, y));
        }
        if y + 1 < world.height {
            neighbors.push((x, y + 1));
        }
        for nb in neighbors {
            if !world.is_occupied(nb.0 as i64, nb.1 as i64) && dist[idx(nb)] == usize::MAX {
                dist[idx(nb)] = d + 1;
                queue.push_back(nb);
            }
        }
    }
    None
}

#[test]
fn raycast_agrees_with_fine_step_marching() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5CA9);
    let offsets = SessionConfig::default().beam_offsets();
    for world_seed in 0..12u64 {
        let world = GridWorld::random(12, 12, 0.4, Realm::Sim, 0.2, world_seed).unwrap();
        let free: Vec<(usize, usize)> = (0..world.height)
            .flat_map(|y| (0..world.width).map(move |x| (x, y)))
            .filter(|&(x, y)| !world.is_occupied(x as i64, y as i64))
            .collect();
        for _ in 0..4 {
            let (cx, cy) = free[rng.gen_range(0..free.len())];
            let (px, py) = world.cell_center(cx, cy);
            let pose = Pose {
                x: px + rng.gen_range(-0.1..0.1),
                y: py + rng.gen_range(-0.1..0.1),
                heading: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            };
            let got = raycast(&world, &pose, &offsets, 4.0).unwrap();
            for (&off, &r) in got.offsets.iter().zip(&got.ranges) {
                let reference = march_one(&world, &pose, pose.heading + off, 4.0, 0.001);
                assert!(
                    (r - reference).abs() <= world.cell_size,
                    "world {world_seed}, beam {off:.3}: traversal {r:.4} vs marching {reference:.4}"
                );
            }
        }
    }
}

#[test]
fn rays_hit_axis_aligned_walls_at_exact_distances() {
    let mut world = GridWorld::empty(8, 8, 0.5, Realm::Sim, ).unwrap();
    world.set_occupied(5, 2, true);
    // From the center of cell (2, 2) looking along +x: the wall face of
    // cell 5 starts at x = 2.5, i.e. 1.25 from the pose.
    let pose = Pose { x: 1.25, y: 1.25, heading: 0.0 };
    let s = raycast(&world, &pose, &[0.0], 10.0).unwrap();
    assert!((s.ranges[0] - 1.25).abs() < 1e-9, "got {}", s.ranges[0]);

    // Looking away: nothing for 10 m.
    let pose = Pose { x: 1.25, y: 1.25, heading: std::f64::consts::PI };
    let s = raycast(&world, &pose, &[0.0], 10.0).unwrap();
    assert_eq!(s.ranges[0], 10.0, "free ray caps at max range");
}

#[test]
fn raycast_rejects_bad_inputs() {
    let mut world = GridWorld::empty(4, 4, 0.5, Realm::Sim).unwrap();
    world.set_occupied(2, 2, true);
    let free = Pose { x: 0.25, y: 0.25, heading: 0.0 };
    let buried = Pose { x: 1.25, y: 1.25, heading: 0.0 };
    assert!(matches!(raycast(&world, &buried, &[0.0], 5.0), Err(Error::State(_))));
    assert!(matches!(raycast(&world, &free, &[], 5.0), Err(Error::Config(_))));
    assert!(matches!(raycast(&world, &free, &[0.0], 0.0), Err(Error::Config(_))));
    assert!(matches!(raycast(&world, &free, &[0.0], f64::NAN), Err(Error::Config(_))));
}

#[test]
fn label_rule_is_a_strict_inequality_sweep() {
    // Exhaustive grid of (range, threshold) pairs: the label must equal
    // `range < threshold`, with equality counting as free.
    for ri in 0..=80 {
        let r = ri as f64 * 0.025;
        for ti in 1..=40 {
            let d_trig = ti as f64 * 0.025;
            let got = label_from_scan(&scan(&[0.0], &[r]), d_trig, 1.0).unwrap();
            assert_eq!(got, u8::from(r < d_trig), "range {r}, threshold {d_trig}");
        }
    }
    // The boundary case spelled out: exactly at the trigger is free.
    assert_eq!(label_from_scan(&scan(&[0.0], &[0.5]), 0.5, 1.0).unwrap(), 0);
    assert_eq!(label_from_scan(&scan(&[0.0], &[0.4999999]), 0.5, 1.0).unwrap(), 1);
}

#[test]
fn only_beams_inside_the_cone_can_trigger() {
    // A close return outside the cone is ignored; inside, any one beam is
    // enough.
    let offsets = [-1.0, -0.2, 0.0, 0.2, 1.0];
    let fov = 1.0; // half-angle 0.5: the ±1.0 beams are out of view
    let side_hit = scan(&offsets, &[0.1, 5.0, 5.0, 5.0, 0.1]);
    assert_eq!(label_from_scan(&side_hit, 0.5, fov).unwrap(), 0);
    let front_hit = scan(&offsets, &[5.0, 5.0, 5.0, 0.3, 5.0]);
    assert_eq!(label_from_scan(&front_hit, 0.5, fov).unwrap(), 1);
    // Offsets exactly at ±fov/2 are inside (closed interval).
    let edge = scan(&[-0.5, 0.5], &[0.2, 5.0]);
    assert_eq!(label_from_scan(&edge, 0.5, fov).unwrap(), 1);
}

#[test]
fn empty_cone_is_a_configuration_error() {
    let s = scan(&[-1.2, 1.2], &[0.1, 0.1]);
    assert!(matches!(label_from_scan(&s, 0.5, 0.5), Err(Error::Config(_))));
    assert!(matches!(label_from_scan(&scan(&[0.0], &[1.0]), 0.0, 1.0), Err(Error::Config(_))));
    assert!(matches!(label_from_scan(&scan(&[0.0], &[1.0]), 0.5, -1.0), Err(Error::Config(_))));
}

#[test]
fn world_paths_are_valid_and_shortest() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..8u64 {
        let world = GridWorld::random(14, 10, 0.5, Realm::Real, 0.25, seed).unwrap();
        let goals = random_goals(&world, (0, 0), 6, seed + 100).unwrap();
        for &goal in &goals {
            let path = world.bfs_path((0, 0), goal).expect("goal came from the reachable set");
            assert_eq!(path.first(), Some(&(0, 0)));
            assert_eq!(path.last(), Some(&goal));
            for pair in path.windows(2) {
                let dx = pair[0].0.abs_diff(pair[1].0);
                let dy = pair[0].1.abs_diff(pair[1].1);
                assert_eq!(dx + dy, 1, "non-adjacent hop {pair:?}");
            }
            for &(x, y) in &path {
                assert!(!world.is_occupied(x as i64, y as i64), "path through obstacle");
            }
            let shortest = bfs_distance(&world, (0, 0), goal).unwrap();
            assert_eq!(path.len() - 1, shortest, "path to {goal:?} is not minimal");
        }
        // Spot-check unreachability handling on a deliberately walled world.
        let _ = rng.gen::<u64>();
    }

    let mut walled = GridWorld::empty(5, 5, 0.5, Realm::Sim).unwrap();
    for y in 0..5 {
        walled.set_occupied(2, y, true);
    }
    assert!(walled.bfs_path((0, 0), (4, 4)).is_none());
    assert!(walled.bfs_path((0, 0), (1, 1)).is_some());
}

#[test]
fn goal_sampling_is_deterministic_and_bounded() {
    let world = GridWorld::random(10, 10, 0.4, Realm::Sim, 0.2, 5).unwrap();
    let a = random_goals(&world, (0, 0), 8, 9).unwrap();
    let b = random_goals(&world, (0, 0), 8, 9).unwrap();
    let c = random_goals(&world, (0, 0), 8, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c, "goal draw must depend on the seed");
    assert_eq!(a.len(), 8);
    let mut dedup = a.clone();
    dedup.sort_unstable();
    dedup.dedup();
    assert_eq!(dedup.len(), 8, "goals must be distinct");
    assert!(!a.contains(&(0, 0)), "the start is not a goal");

    // Asking for more goals than there are reachable cells must fail.
    let mut boxed = GridWorld::empty(3, 3, 0.5, Realm::Sim).unwrap();
    for (x, y) in [(1, 0), (1, 1), (0, 1)] {
        boxed.set_occupied(x, y, true);
    }
    assert!(matches!(random_goals(&boxed, (0, 0), 3, 1), Err(Error::Navigation(_))));
}

#[test]
fn world_files_round_trip_and_reject_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.json");
    let world = GridWorld::random(9, 7, 0.35, Realm::Real, 0.3, 2).unwrap();
    world.save(&path).unwrap();
    let back = GridWorld::load(&path).unwrap();
    assert_eq!(world, back);

    std::fs::write(&path, "{\"cell_size\": 0.5}").unwrap();
    assert!(GridWorld::load(&path).is_err());

    // An occupied cell outside the grid bounds must be rejected.
    std::fs::write(
        &path,
        r#"{"cell_size":0.5,"width":4,"height":4,"realm":"sim","occupied":[[4,0]]}"#,
    )
    .unwrap();
    assert!(GridWorld::load(&path).is_err());
}

#[test]
fn grid_geometry_is_consistent() {
    let world = GridWorld::empty(6, 4, 0.5, Realm::Sim).unwrap();
    for iy in 0..4 {
        for ix in 0..6 {
            let (x, y) = world.cell_center(ix, iy);
            assert_eq!(world.cell_of(x, y), (ix as i64, iy as i64));
        }
    }
    assert!(!world.is_occupied(-1, 0), "outside the grid is free space");
    assert!(!world.is_occupied(0, 99));
    assert_eq!(world.cell_of(-0.2, 0.1), (-1, 0));
}

#[test]
fn random_worlds_respect_density_and_spawn_area() {
    let world = GridWorld::random(30, 30, 0.5, Realm::Sim, 0.2, 7).unwrap();
    for (x, y) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
        assert!(!world.is_occupied(x, y), "spawn area must stay clear");
    }
    let occupied = world.occupied_cells().count();
    let eligible = 30 * 30 - 4;
    let rate = occupied as f64 / eligible as f64;
    assert!((0.1..0.3).contains(&rate), "occupancy rate {rate:.3} far from requested 0.2");
    assert_eq!(
        GridWorld::random(30, 30, 0.5, Realm::Sim, 0.2, 7).unwrap(),
        world,
        "world generation must be deterministic"
    );
    assert!(GridWorld::random(5, 5, 0.5, Realm::Sim, 0.7, 0).is_err(), "density cap");
}

fn session_config() -> SessionConfig {
    SessionConfig {
        n_buf: 16,
        schedule: TrainSchedule { rounds: 1, local_epochs: 1, lr: 0.02, batch_size: 8 },
        ..SessionConfig::default()
    }
}

#[test]
fn collect_step_labels_from_the_scanner() {
    let cfg = session_config();
    let mut world = GridWorld::empty(8, 8, 0.35, Realm::Sim).unwrap();
    let (px, py) = world.cell_center(2, 2);

    // Nothing nearby: free, and no visible obstacle cells.
    let pose = Pose { x: px, y: py, heading: 0.0 };
    let (ex, rec) = collect_step(&world, &pose, &cfg, 1).unwrap();
    assert_eq!(ex.label, 0);
    assert_eq!(rec.label, 0);
    assert_eq!(rec.visible_cells, 0);

    // A wall one cell ahead (0.35 m < 0.5 m trigger): blocked.
    world.set_occupied(3, 2, true);
    let (ex, rec) = collect_step(&world, &pose, &cfg, 1).unwrap();
    assert_eq!(ex.label, 1, "obstacle inside the trigger radius");
    assert!(rec.visible_cells >= 1);
    assert!(rec.visible_cells <= cfg.camera.max_blobs);

    // The same obstacle behind the robot: free again.
    let pose = Pose { x: px, y: py, heading: std::f64::consts::PI };
    let (ex, _) = collect_step(&world, &pose, &cfg, 1).unwrap();
    assert_eq!(ex.label, 0, "labels follow the scanner, not the map");
}

#[test]
fn session_buffers_follow_the_counting_rule() {
    let cfg = session_config();
    let world = GridWorld::random(12, 12, 0.35, Realm::Sim, 0.15, 11).unwrap();
    let goals = random_goals(&world, (0, 0), 5, 3).unwrap();
    let prior = ModelParams::init(ArchName::ResnetLite, 1);
    let out = continual_session(&world, &prior, (0, 0), &goals, &cfg, 21).unwrap();

    assert_eq!(
        out.steps.len(),
        out.updates.len() * cfg.n_buf + out.leftover,
        "every step is either in a full buffer or left over"
    );
    assert!(out.leftover < cfg.n_buf);
    assert!(!out.updates.is_empty(), "route too short to fill one buffer");
    for (k, u) in out.updates.iter().enumerate() {
        assert_eq!(u.client_id, format!("husky_sim#{k}"));
        assert_eq!(u.sample_count, cfg.n_buf as u32);
        assert_eq!(u.params.version, prior.version, "updates share the prior's round");
        assert_ne!(u.params.weights, prior.weights, "buffers must actually train");
    }
}

#[test]
fn sessions_are_deterministic_in_their_seed() {
    let cfg = session_config();
    let world = GridWorld::random(12, 12, 0.35, Realm::Real, 0.15, 12).unwrap();
    let goals = random_goals(&world, (0, 0), 4, 6).unwrap();
    let prior = ModelParams::init(ArchName::ResnetLite, 2);
    let a = continual_session(&world, &prior, (0, 0), &goals, &cfg, 5).unwrap();
    let b = continual_session(&world, &prior, (0, 0), &goals, &cfg, 5).unwrap();
    let c = continual_session(&world, &prior, (0, 0), &goals, &cfg, 6).unwrap();
    assert_eq!(a.steps, b.steps);
    assert_eq!(a.updates.len(), b.updates.len());
    for (ua, ub) in a.updates.iter().zip(&b.updates) {
        assert_eq!(ua.params.weights, ub.params.weights);
    }
    assert_eq!(a.steps.len(), c.steps.len(), "route ignores the texture seed");
    let differs = a
        .updates
        .iter()
        .zip(&c.updates)
        .any(|(ua, uc)| ua.params.weights != uc.params.weights);
    assert!(differs, "texture seed must reach the rendered frames");
    assert_eq!(a.updates[0].client_id, "husky_real#0");
}

#[test]
fn route_collection_yields_a_validation_set() {
    let cfg = session_config();
    let world = GridWorld::random(12, 12, 0.35, Realm::Real, 0.15, 13).unwrap();
    let goals = random_goals(&world, (0, 0), 4, 8).unwrap();
    let (ds, steps) = collect_route(&world, (0, 0), &goals, &cfg, 31).unwrap();
    assert_eq!(ds.split, Split::Val);
    assert_eq!(ds.len(), steps.len());
    let (blocked, free) = ds.class_counts();
    assert!(blocked > 0, "a dense-enough world should produce blocked frames");
    assert!(free > 0);
    for (ex, rec) in ds.examples.iter().zip(&steps) {
        assert_eq!(ex.label, rec.label);
    }
}

#[test]
fn fusing_no_updates_returns_the_prior() {
    let prior = ModelParams::init(ArchName::ResnetLite, 3);
    let same = fuse(&prior, &[]).unwrap();
    assert_eq!(same, prior);

    let cfg = session_config();
    let world = GridWorld::random(12, 12, 0.35, Realm::Sim, 0.15, 14).unwrap();
    let goals = random_goals(&world, (0, 0), 4, 2).unwrap();
    let out = continual_session(&world, &prior, (0, 0), &goals, &cfg, 9).unwrap();
    let fused = fuse(&prior, &out.updates).unwrap();
    assert_eq!(fused.version, prior.version + 1, "fusion commits one round");
    assert_ne!(fused.weights, prior.weights);
}

#[test]
fn session_configs_are_validated() {
    let world = GridWorld::random(8, 8, 0.35, Realm::Sim, 0.1, 1).unwrap();
    let prior = ModelParams::init(ArchName::ResnetLite, 0);
    for bad in [
        SessionConfig { beam_count: 1, ..SessionConfig::default() },
        SessionConfig { n_buf: 0, ..SessionConfig::default() },
        SessionConfig { beam_span: -1.0, ..SessionConfig::default() },
    ] {
        assert!(continual_session(&world, &prior, (0, 0), &[(3, 3)], &bad, 0).is_err());
    }
}

#[test]
fn beam_offsets_are_symmetric_and_evenly_spaced() {
    let cfg = SessionConfig::default();
    let offsets = cfg.beam_offsets();
    assert_eq!(offsets.len(), cfg.beam_count);
    let half = cfg.beam_span / 2.0;
    assert!((offsets[0] + half).abs() < 1e-12);
    assert!((offsets[offsets.len() - 1] - half).abs() < 1e-12);
    for (i, pair) in offsets.windows(2).enumerate() {
        let gap = pair[1] - pair[0];
        let want = cfg.beam_span / (cfg.beam_count - 1) as f64;
        assert!((gap - want).abs() < 1e-12, "gap {i}");
    }
    for (a, b) in offsets.iter().zip(offsets.iter().rev()) {
        assert!((a + b).abs() < 1e-12, "offsets must mirror around zero");
    }
}

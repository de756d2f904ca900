//! Episode sampling with rejection, and the line-delimited dataset format.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, Write};
use std::path::Path;

use super::env::{EpisodeSpec, TaskKind, CLEARANCE_M, DEFAULT_MAX_STEPS};
use super::map::SceneMap;
use super::{NavError, Pose};

/// Episodes with a geodesic/euclidean ratio below this are rejected as
/// near-straight-line.
pub const MIN_DETOUR_RATIO: f64 = 1.1;
/// Minimum start-goal geodesic distance in meters.
pub const MIN_GEODESIC_M: f64 = 1.0;

/// Uniformly sample a free pose from the largest component.
pub fn sample_pose<R: Rng>(map: &SceneMap, rng: &mut R) -> Pose {
    let comp = map.largest_component();
    loop {
        let (r, c) = comp[rng.gen_range(0..comp.len())];
        let (cx, cy) = map.cell_center(r, c);
        // Jitter inside the cell, keeping clearance.
        let x = cx + (rng.gen::<f64>() - 0.5) * map.cell_size * 0.5;
        let y = cy + (rng.gen::<f64>() - 0.5) * map.cell_size * 0.5;
        let theta = rng.gen::<f64>() * 360.0;
        if map.is_free_disc(x, y, CLEARANCE_M) {
            return Pose::new(x, y, theta);
        }
    }
}

/// Rejection-sample one episode on the given scene.
pub fn sample_episode<R: Rng>(
    map: &SceneMap,
    task: TaskKind,
    rng: &mut R,
) -> Result<EpisodeSpec, NavError> {
    for _ in 0..10_000 {
        let start = sample_pose(map, rng);
        match task {
            TaskKind::Exploration => {
                return Ok(EpisodeSpec {
                    scene_id: map.id.clone(),
                    start,
                    task,
                    goal: None,
                    max_steps: DEFAULT_MAX_STEPS,
                });
            }
            TaskKind::PointGoal => {
                let goal_pose = sample_pose(map, rng);
                let goal = (goal_pose.x, goal_pose.y);
                let geo = map.geodesic((start.x, start.y), goal)?;
                if !geo.is_finite() || geo < MIN_GEODESIC_M {
                    continue;
                }
                let euc = super::env::euclid(start.x, start.y, goal.0, goal.1);
                if euc <= 0.0 || geo / euc < MIN_DETOUR_RATIO {
                    continue;
                }
                return Ok(EpisodeSpec {
                    scene_id: map.id.clone(),
                    start,
                    task,
                    goal: Some(goal),
                    max_steps: DEFAULT_MAX_STEPS,
                });
            }
        }
    }
    Err(NavError::InvalidSpec(format!(
        "could not sample a valid episode on scene {}",
        map.id
    )))
}

/// Sample `per_scene` episodes on each scene with a fixed seed.
pub fn sample_suite(
    scenes: &[SceneMap],
    task: TaskKind,
    per_scene: usize,
    seed: u64,
) -> Result<Vec<EpisodeSpec>, NavError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for map in scenes {
        for _ in 0..per_scene {
            out.push(sample_episode(map, task, &mut rng)?);
        }
    }
    Ok(out)
}

pub fn save_dataset(path: &Path, specs: &[EpisodeSpec]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in specs {
        writeln!(f, "{}", serde_json::to_string(s)?)?;
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> std::io::Result<Vec<EpisodeSpec>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

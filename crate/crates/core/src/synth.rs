//! Seeded synthetic scenes: a constant-curvature multi-lane road, an expert
//! that follows the ego lane at constant speed, and traffic placed so the
//! expert stays collision-free.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{vehicle_to_camera_rotation, Camera};
use crate::geometry::{boxes_intersect, Point2, Polygon, Polyline, Pose2};
use crate::metrics::{
    comfort_metric, drivable_area_compliance, no_at_fault_collision, time_to_collision_metric, ScoringConfig,
};
use crate::scene::{agent_state_at, AgentCategory, AgentSample, AgentTrack, EgoStart, Mode, Route, Scene, VehicleDims, PLANNING_DT};
use crate::simulator::{simulate, Rollout};
use crate::{CameraModel, Pose2D};

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("generator config out of range: {0}")]
    InvalidSpec(String),
    #[error("could not place {what} without conflicting with the expert after {retries} attempts")]
    Infeasible { what: String, retries: u32 },
}

/// Generator knobs. Documented ranges are enforced by [`GenConfig::validate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub mode: Mode,
    /// Lane width in meters, 2.5..=5.0.
    pub lane_width: f64,
    /// Extra lanes left and right of the ego lane, 0..=4 each.
    pub lanes_left: u32,
    pub lanes_right: u32,
    /// Ego speed range in m/s, within 2.0..=25.0.
    pub speed_range: [f64; 2],
    /// Largest road curvature magnitude in 1/m, 0..=0.05.
    pub max_curvature: f64,
    /// Agent counts, 0..=32 each.
    pub vehicles: u32,
    pub pedestrians: u32,
    pub static_objects: u32,
    /// Placement attempts per agent, 1..=10000.
    pub max_retries: u32,
    pub cameras: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Navsim,
            lane_width: 3.5,
            lanes_left: 1,
            lanes_right: 1,
            speed_range: [3.0, 15.0],
            max_curvature: 0.01,
            vehicles: 4,
            pedestrians: 1,
            static_objects: 1,
            max_retries: 200,
            cameras: true,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::InvalidSpec(m));
        if !(2.5..=5.0).contains(&self.lane_width) {
            return bad(format!("lane_width {} not in 2.5..=5.0", self.lane_width));
        }
        if self.lanes_left > 4 || self.lanes_right > 4 {
            return bad("at most 4 lanes per side".into());
        }
        let [lo, hi] = self.speed_range;
        if !(2.0..=25.0).contains(&lo) || !(2.0..=25.0).contains(&hi) || lo > hi {
            return bad(format!("speed_range {:?} not within 2..=25 m/s", self.speed_range));
        }
        if !(0.0..=0.05).contains(&self.max_curvature) {
            return bad(format!("max_curvature {} not in 0..=0.05", self.max_curvature));
        }
        if self.vehicles > 32 || self.pedestrians > 32 || self.static_objects > 32 {
            return bad("at most 32 agents per category".into());
        }
        if !(1..=10_000).contains(&self.max_retries) {
            return bad("max_retries must be in 1..=10000".into());
        }
        Ok(())
    }

    fn horizon_steps(&self) -> usize {
        match self.mode {
            Mode::Navsim => 8,
            Mode::Bench2drive => 6,
        }
    }
}

/// Constant-curvature road through the origin, heading +x at arclength 0.
#[derive(Clone, Copy, Debug)]
struct Road {
    curvature: f64,
}

impl Road {
    /// Pose at arclength `s` on the lane offset laterally by `d` (left positive).
    fn pose(&self, s: f64, d: f64) -> Pose2D {
        let k = self.curvature;
        if k.abs() < 1e-12 {
            return Pose2::new(s, d, 0.0);
        }
        let h = k * s;
        let (sin_h, cos_h) = h.sin_cos();
        Pose2::new(sin_h / k - d * sin_h, (1.0 - cos_h) / k + d * cos_h, h)
    }

    fn offset_line(&self, s0: f64, s1: f64, d: f64) -> Vec<Point2<f64>> {
        let n = ((s1 - s0) / 2.0).ceil() as usize;
        (0..=n).map(|i| self.pose(s0 + (s1 - s0) * i as f64 / n as f64, d).position()).collect()
    }
}

/// Front, front-left, front-right and back cameras mounted on the ego roof.
pub fn standard_camera_rig() -> Vec<CameraModel> {
    let views = [("front", 0.0f64), ("front_left", 55f64.to_radians()), ("front_right", -55f64.to_radians()), ("back", std::f64::consts::PI)];
    views
        .iter()
        .map(|&(name, yaw)| {
            let rotation = vehicle_to_camera_rotation(yaw);
            let center = [1.5 + 0.5 * yaw.cos(), 0.5 * yaw.sin(), 1.6];
            let rc = [0, 1, 2].map(|r| rotation[r][0] * center[0] + rotation[r][1] * center[1] + rotation[r][2] * center[2]);
            Camera {
                view_id: name.to_string(),
                intrinsics: [[560.0, 0.0, 400.0], [0.0, 560.0, 225.0], [0.0, 0.0, 1.0]],
                rotation,
                translation: [-rc[0], -rc[1], -rc[2]],
                image_size: (800, 450),
            }
        })
        .collect()
}

const TRACK_DT: f64 = 0.5;
const TRACK_END: f64 = 6.0;
const ROAD_START: f64 = -40.0;

/// Builds a deterministic scene for `seed`.
pub fn gen_synthetic(seed: u64, spec: &GenConfig) -> Result<Scene, GenError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [v_lo, v_hi] = spec.speed_range;
    let speed = if v_hi > v_lo { rng.gen_range(v_lo..=v_hi) } else { v_lo };
    let road_end = (speed * TRACK_END + 60.0).max(100.0);
    // Keep the expert well inside the comfort envelope and the road polygon simple.
    let k_max = spec.max_curvature.min(2.0 / (speed * speed)).min(0.4 / speed).min(1.2 / road_end);
    let curvature = if k_max > 0.0 { rng.gen_range(-k_max..=k_max) } else { 0.0 };
    let road = Road { curvature };
    let w = spec.lane_width;
    let left_edge = (spec.lanes_left as f64 + 0.5) * w;
    let right_edge = -(spec.lanes_right as f64 + 0.5) * w;

    let mut boundary = road.offset_line(ROAD_START, road_end, left_edge);
    let mut right = road.offset_line(ROAD_START, road_end, right_edge);
    right.reverse();
    boundary.extend(right);
    let drivable = Polygon::new(boundary).expect("road polygon has many vertices");
    let centerline = Polyline::new(road.offset_line(ROAD_START, road_end, 0.0)).expect("long road");

    let length = rng.gen_range(4.4..=5.0);
    let ego_dims = VehicleDims { length, width: rng.gen_range(1.8..=2.1), wheelbase: 0.6 * length };
    let expert: Vec<Pose2D> = (1..=spec.horizon_steps()).map(|i| road.pose(speed * i as f64 * PLANNING_DT, 0.0)).collect();

    let mut scene = Scene {
        mode: spec.mode,
        ego: EgoStart { pose: Pose2::new(0.0, 0.0, 0.0), velocity: speed, acceleration: 0.0 },
        ego_dims,
        agents: Vec::new(),
        drivable_area: vec![drivable],
        route: Route { centerline, half_width: w / 2.0, progress_upper_bound: None },
        cameras: if spec.cameras { standard_camera_rig() } else { Vec::new() },
        expert: Some(expert.clone()),
    };
    let bound = scene.progress_upper_bound().expect("expert present");
    scene.route.progress_upper_bound = Some(bound);

    let cfg = ScoringConfig::for_mode(spec.mode);
    let rollout = simulate(&expert, &scene, &cfg.sim).map_err(|e| GenError::InvalidSpec(e.to_string()))?;
    let comfortable = comfort_metric(&rollout, &cfg.comfort, Mode::Navsim, None).unwrap_or(0.0) == 1.0;
    if drivable_area_compliance(&rollout, &scene, spec.mode) != 1.0 || !comfortable {
        return Err(GenError::Infeasible { what: "expert".into(), retries: 0 });
    }

    let mut next_id = 1u64;
    let lanes: Vec<i32> = (-(spec.lanes_right as i32)..=spec.lanes_left as i32).collect();
    let plan = [
        (spec.vehicles, AgentCategory::Vehicle),
        (spec.pedestrians, AgentCategory::Pedestrian),
        (spec.static_objects, AgentCategory::StaticObject),
    ];
    for (count, category) in plan {
        for _ in 0..count {
            let mut placed = false;
            for _ in 0..spec.max_retries {
                let track = sample_agent(&mut rng, next_id, category, road, &lanes, w, left_edge, right_edge, speed);
                if compatible(&track, &scene, &rollout, &cfg) {
                    scene.agents.push(track);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(GenError::Infeasible { what: format!("{category:?} agent {next_id}"), retries: spec.max_retries });
            }
            next_id += 1;
        }
    }
    debug_assert!(scene.validate().is_ok());
    Ok(scene)
}

#[allow(clippy::too_many_arguments)]
fn sample_agent(
    rng: &mut ChaCha8Rng,
    id: u64,
    category: AgentCategory,
    road: Road,
    lanes: &[i32],
    lane_width: f64,
    left_edge: f64,
    right_edge: f64,
    ego_speed: f64,
) -> AgentTrack {
    let reach = ego_speed * TRACK_END + 40.0;
    let (dims, d, s0, speed, category) = match category {
        AgentCategory::Vehicle | AgentCategory::Bicycle => {
            let bicycle = rng.gen_bool(0.2);
            let lane = lanes[rng.gen_range(0..lanes.len())];
            let d = lane as f64 * lane_width + rng.gen_range(-0.2..=0.2);
            let s0 = rng.gen_range(-30.0..=reach);
            if bicycle {
                (VehicleDims { length: 1.8, width: 0.6, wheelbase: 1.1 }, d, s0, rng.gen_range(2.0..=6.0), AgentCategory::Bicycle)
            } else {
                let length = rng.gen_range(4.0..=5.5);
                let dims = VehicleDims { length, width: rng.gen_range(1.7..=2.2), wheelbase: 0.6 * length };
                (dims, d, s0, rng.gen_range(0.0..=ego_speed + 5.0), AgentCategory::Vehicle)
            }
        }
        AgentCategory::Pedestrian => {
            let side = if rng.gen_bool(0.5) { left_edge + rng.gen_range(1.0..=4.0) } else { right_edge - rng.gen_range(1.0..=4.0) };
            (VehicleDims { length: 0.6, width: 0.6, wheelbase: 0.3 }, side, rng.gen_range(-10.0..=reach), rng.gen_range(0.8..=1.6), category)
        }
        AgentCategory::StaticObject => {
            let side = if rng.gen_bool(0.5) { left_edge - rng.gen_range(0.3..=0.8) } else { right_edge + rng.gen_range(0.3..=0.8) };
            (VehicleDims { length: 0.5, width: 0.5, wheelbase: 0.25 }, side, rng.gen_range(0.0..=reach), 0.0, category)
        }
    };
    let states = if category == AgentCategory::StaticObject {
        vec![AgentSample { t: 0.0, pose: road.pose(s0, d), velocity: 0.0, valid: true }]
    } else {
        let n = (TRACK_END / TRACK_DT).round() as usize;
        let vanish_after = if rng.gen_bool(0.15) { Some(rng.gen_range(n / 2..n)) } else { None };
        (0..=n)
            .map(|i| {
                let t = i as f64 * TRACK_DT;
                AgentSample { t, pose: road.pose(s0 + speed * t, d), velocity: speed, valid: vanish_after.map_or(true, |k| i <= k) }
            })
            .collect()
    };
    AgentTrack { id, category, dims, states }
}

/// The agent must leave the expert collision- and TTC-free and not overlap
/// previously placed agents while both are recorded.
fn compatible(track: &AgentTrack, scene: &Scene, rollout: &Rollout, cfg: &ScoringConfig) -> bool {
    let probe = Scene { agents: vec![track.clone()], ..scene.clone() };
    if no_at_fault_collision(rollout, &probe, scene.mode, &cfg.metrics).0 != 1.0 {
        return false;
    }
    if time_to_collision_metric(rollout, &probe, &cfg.metrics).0 != 1.0 {
        return false;
    }
    let n = (TRACK_END / TRACK_DT).round() as usize;
    for other in &scene.agents {
        for i in 0..=n {
            let t = i as f64 * TRACK_DT;
            if let (Some(a), Some(b)) = (agent_state_at(track, t), agent_state_at(other, t)) {
                if a.valid && b.valid && boxes_intersect(&track.footprint(a.pose), &other.footprint(b.pose)) {
                    return false;
                }
            }
        }
    }
    true
}

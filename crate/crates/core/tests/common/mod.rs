#![allow(dead_code)]

use proposal_scorer::geometry::{Point2, Polygon, Polyline, Rigid2};
use proposal_scorer::scene::{AgentCategory, AgentSample, AgentTrack, EgoStart, Mode, Route, Scene, VehicleDims};
use proposal_scorer::Pose2D;

pub fn pose(x: f64, y: f64, h: f64) -> Pose2D {
    Pose2D::new(x, y, h)
}

pub fn rect(x0: f64, x1: f64, y0: f64, y1: f64) -> Polygon<f64> {
    Polygon::new(vec![Point2::new(x0, y0), Point2::new(x1, y0), Point2::new(x1, y1), Point2::new(x0, y1)]).unwrap()
}

/// Straight road along +x, `half_width` either side of y = 0, ego at the
/// origin moving at `v0`. The expert drives straight at `v0` for 8 steps.
pub fn straight_scene(mode: Mode, v0: f64, half_width: f64) -> Scene {
    let steps = match mode {
        Mode::Navsim => 8,
        Mode::Bench2drive => 6,
    };
    Scene {
        mode,
        ego: proposal_scorer::scene::EgoStart { pose: pose(0.0, 0.0, 0.0), velocity: v0, acceleration: 0.0 },
        ego_dims: VehicleDims::default(),
        agents: vec![],
        drivable_area: vec![rect(-30.0, 300.0, -half_width, half_width)],
        route: Route {
            centerline: Polyline::new(vec![Point2::new(-30.0, 0.0), Point2::new(300.0, 0.0)]).unwrap(),
            half_width: 1.75,
            progress_upper_bound: None,
        },
        cameras: vec![],
        expert: Some(straight(v0, steps)),
    }
}

/// Constant-speed straight proposal at the 0.5 s planning interval.
pub fn straight(v: f64, steps: usize) -> Vec<Pose2D> {
    (1..=steps).map(|i| pose(v * 0.5 * i as f64, 0.0, 0.0)).collect()
}

pub fn static_object(id: u64, center: Pose2D, length: f64, width: f64) -> AgentTrack {
    AgentTrack {
        id,
        category: AgentCategory::StaticObject,
        dims: VehicleDims { length, width, wheelbase: length * 0.6 },
        states: vec![AgentSample { t: 0.0, pose: center, velocity: 0.0, valid: true }],
    }
}

/// Road user holding `pose` and moving at constant `v` along its heading,
/// sampled every 0.1 s over `[0, 5]` s.
pub fn moving_vehicle(id: u64, start: Pose2D, v: f64) -> AgentTrack {
    let f = start.forward();
    AgentTrack {
        id,
        category: AgentCategory::Vehicle,
        dims: VehicleDims { length: 4.0, width: 2.0, wheelbase: 2.5 },
        states: (0..=50)
            .map(|i| {
                let t = i as f64 * 0.1;
                AgentSample { t, pose: pose(start.x + f.x * v * t, start.y + f.y * v * t, start.heading), velocity: v, valid: true }
            })
            .collect(),
    }
}

/// The same scene seen from another planar frame. Cameras are dropped.
pub fn transform_scene(scene: &Scene, tf: &Rigid2<f64>) -> Scene {
    let poly = |p: &Polygon<f64>| Polygon::new(p.vertices().iter().map(|&v| tf.apply_point(v)).collect()).unwrap();
    Scene {
        mode: scene.mode,
        ego: EgoStart { pose: tf.apply_pose(scene.ego.pose), ..scene.ego },
        ego_dims: scene.ego_dims,
        agents: scene
            .agents
            .iter()
            .map(|a| AgentTrack {
                states: a.states.iter().map(|s| AgentSample { pose: tf.apply_pose(s.pose), ..*s }).collect(),
                ..a.clone()
            })
            .collect(),
        drivable_area: scene.drivable_area.iter().map(poly).collect(),
        route: Route {
            centerline: Polyline::new(scene.route.centerline.points().iter().map(|&p| tf.apply_point(p)).collect()).unwrap(),
            ..scene.route.clone()
        },
        cameras: vec![],
        expert: scene.expert.as_ref().map(|e| e.iter().map(|&p| tf.apply_pose(p)).collect()),
    }
}

pub fn transform_poses(poses: &[Pose2D], tf: &Rigid2<f64>) -> Vec<Pose2D> {
    poses.iter().map(|&p| tf.apply_pose(p)).collect()
}

pub fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

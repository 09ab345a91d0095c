//! Ego rollouts: a kinematic bicycle model tracked by a lateral LQR and a
//! proportional speed loop, or a perfect replay controller.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rear_axle_footprint, OrientedBox, Pose2};
use crate::num::{angle_diff, wrap_angle, Real};
use crate::scene::{planning_timestamps, resample_trajectory, Mode, ResampleError, Scene, VehicleDims};
use crate::Pose2D;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("proposal is empty")]
    EmptyProposal,
    #[error("proposal contains a non-finite pose at index {0}")]
    NonFiniteReference(usize),
    #[error("{op} requires {expected} mode")]
    WrongMode { op: &'static str, expected: Mode },
    #[error("kinematic profile needs at least 3 states, got {0}")]
    TooFewStates(usize),
    #[error("invalid simulator config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Resample(#[from] ResampleError),
}

/// Ego state at the rear axle.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct EgoKinState<T> {
    pub pose: Pose2<T>,
    pub velocity: T,
    pub acceleration: T,
    pub steering: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlLimits {
    pub steering_limit: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    pub allow_reverse: bool,
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self { steering_limit: 0.83, accel_min: -4.05, accel_max: 2.40, allow_reverse: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub mode: Mode,
    pub sim_hz: f64,
    pub horizon: f64,
    /// Lateral state cost on `[lateral error, heading error]`.
    pub q_lat: [[f64; 2]; 2],
    pub r_lat: f64,
    pub k_speed: f64,
    /// Gain turning along-track position error into a speed correction (1/s).
    pub k_position: f64,
    pub limits: ControlLimits,
}

impl SimConfig {
    pub fn navsim() -> Self {
        Self {
            mode: Mode::Navsim,
            sim_hz: 10.0,
            horizon: 4.0,
            q_lat: [[1.0, 0.0], [0.0, 10.0]],
            r_lat: 1.0,
            k_speed: 2.0,
            k_position: 0.5,
            limits: ControlLimits::default(),
        }
    }

    pub fn bench2drive() -> Self {
        Self { mode: Mode::Bench2drive, sim_hz: 2.0, horizon: 3.0, ..Self::navsim() }
    }

    pub fn for_mode(mode: Mode) -> Self {
        match mode {
            Mode::Navsim => Self::navsim(),
            Mode::Bench2drive => Self::bench2drive(),
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sim_hz
    }

    pub fn ticks(&self) -> usize {
        (self.horizon * self.sim_hz + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::BadConfig(m.to_string()));
        if !(self.sim_hz > 0.0 && self.sim_hz.is_finite()) {
            return bad("sim_hz must be positive");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive");
        }
        let q = self.q_lat;
        let psd = q[0][1] == q[1][0] && q[0][0] >= 0.0 && q[1][1] >= 0.0 && q[0][0] * q[1][1] - q[0][1] * q[1][0] >= 0.0;
        if !psd {
            return bad("q_lat must be symmetric positive semidefinite");
        }
        if !(self.r_lat > 0.0) {
            return bad("r_lat must be positive");
        }
        if !(self.k_speed >= 0.0 && self.k_position >= 0.0) {
            return bad("speed gains must be non-negative");
        }
        let l = &self.limits;
        if !(l.steering_limit > 0.0 && l.accel_min <= 0.0 && l.accel_max >= 0.0) {
            return bad("control limits must bracket zero");
        }
        Ok(())
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::navsim()
    }
}

/// Simulated ego trajectory, one state per tick starting at the scene start.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub dt: f64,
    pub states: Vec<EgoKinState<f64>>,
}

impl Rollout {
    pub fn time(&self, tick: usize) -> f64 {
        tick as f64 * self.dt
    }

    pub fn poses(&self) -> impl Iterator<Item = Pose2D> + '_ {
        self.states.iter().map(|s| s.pose)
    }

    /// Tick index whose time matches `t`, if the rollout reaches it.
    pub fn tick_at(&self, t: f64) -> Option<usize> {
        let i = (t / self.dt).round();
        if i < 0.0 || (i * self.dt - t).abs() > 1e-6 {
            return None;
        }
        let i = i as usize;
        (i < self.states.len()).then_some(i)
    }

    pub fn footprint(&self, tick: usize, dims: &VehicleDims) -> OrientedBox<f64> {
        rear_axle_footprint(self.states[tick].pose, dims.length, dims.width, dims.wheelbase)
    }
}

/// One step of the rear-axle kinematic bicycle model.
///
/// Controls are clamped first. Speed integrates explicitly; position and
/// heading advance with the step's mean speed and the position update uses
/// the mid-step heading, which keeps the step second-order accurate.
pub fn bicycle_step<T: Real>(s: &EgoKinState<T>, accel: T, steering: T, dt: T, wheelbase: T, limits: &ControlLimits) -> EgoKinState<T> {
    let steer_max = T::lit(limits.steering_limit);
    let steering = steering.max(-steer_max).min(steer_max);
    let accel = accel.max(T::lit(limits.accel_min)).min(T::lit(limits.accel_max));
    let mut v_next = s.velocity + accel * dt;
    if !limits.allow_reverse && v_next < T::zero() {
        v_next = T::zero();
    }
    let v_mean = (s.velocity + v_next) * T::half();
    let dheading = v_mean * steering.tan() / wheelbase * dt;
    let mid = s.pose.heading + dheading * T::half();
    let (sin_m, cos_m) = mid.sin_cos();
    EgoKinState {
        pose: Pose2 {
            x: s.pose.x + v_mean * cos_m * dt,
            y: s.pose.y + v_mean * sin_m * dt,
            heading: wrap_angle(s.pose.heading + dheading),
        },
        velocity: v_next,
        acceleration: (v_next - s.velocity) / dt,
        steering,
    }
}

/// Discrete infinite-horizon LQR gain for the lateral error model
/// `x' = [[1, v dt], [0, 1]] x + [0, dt]ᵀ u`, solved by Riccati iteration.
pub fn lateral_lqr_gain(v: f64, dt: f64, q: &[[f64; 2]; 2], r: f64) -> [f64; 2] {
    let a = v * dt;
    let mut p = *q;
    let mut gain = [0.0; 2];
    for _ in 0..100_000 {
        // AᵀPB and BᵀPB with A = [[1, a], [0, 1]], B = [0, dt]ᵀ.
        let pb = [p[0][1] * dt, p[1][1] * dt];
        let atpb = [pb[0], a * pb[0] + pb[1]];
        let s = r + dt * pb[1];
        // AᵀPA
        let apa = [
            [p[0][0], a * p[0][0] + p[0][1]],
            [a * p[0][0] + p[1][0], a * a * p[0][0] + a * (p[0][1] + p[1][0]) + p[1][1]],
        ];
        let mut next = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                next[i][j] = apa[i][j] - atpb[i] * atpb[j] / s + q[i][j];
            }
        }
        gain = [atpb[0] / s, atpb[1] / s];
        let delta = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| (next[i][j] - p[i][j]).abs()).fold(0.0, f64::max);
        p = next;
        if delta < 1e-10 {
            break;
        }
    }
    let pb = [p[0][1] * dt, p[1][1] * dt];
    let s = r + dt * pb[1];
    if s.is_finite() {
        gain = [pb[0] / s, (a * pb[0] + pb[1]) / s];
    }
    gain
}

fn check_proposal(proposal: &[Pose2D]) -> Result<(), SimError> {
    if proposal.is_empty() {
        return Err(SimError::EmptyProposal);
    }
    if let Some(i) = proposal.iter().position(|p| !(p.x.is_finite() && p.y.is_finite() && p.heading.is_finite())) {
        return Err(SimError::NonFiniteReference(i));
    }
    Ok(())
}

fn densify(proposal: &[Pose2D], scene: &Scene, hz: f64) -> Result<Vec<Pose2D>, SimError> {
    let mut knots = vec![(0.0, scene.ego.pose)];
    knots.extend(planning_timestamps(proposal).into_iter().map(|(t, p)| (t, Pose2::new(p.x, p.y, p.heading))));
    Ok(resample_trajectory(&knots, hz)?.into_iter().map(|(_, p)| p).collect())
}

struct Reference {
    poses: Vec<Pose2D>,
    /// Speed over segment `i -> i + 1`, centered at `t_i + dt / 2`.
    seg_speed: Vec<f64>,
    seg_curvature: Vec<f64>,
    dt: f64,
}

impl Reference {
    fn new(poses: Vec<Pose2D>, dt: f64) -> Self {
        let mut seg_speed = Vec::with_capacity(poses.len());
        let mut seg_curvature = Vec::with_capacity(poses.len());
        for w in poses.windows(2) {
            let ds = w[0].position().dist(w[1].position());
            seg_speed.push(ds / dt);
            seg_curvature.push(if ds > 1e-6 { angle_diff(w[1].heading, w[0].heading) / ds } else { 0.0 });
        }
        Self { poses, seg_speed, seg_curvature, dt }
    }

    fn pose(&self, tick: usize) -> Pose2D {
        self.poses[tick.min(self.poses.len() - 1)]
    }

    fn curvature(&self, tick: usize) -> f64 {
        self.seg_curvature.get(tick).copied().unwrap_or(0.0)
    }

    /// Reference speed at time `t`, interpolated between segment midpoints
    /// and held at the last segment speed past the end.
    fn speed_at(&self, t: f64) -> f64 {
        let n = self.seg_speed.len();
        if n == 0 {
            return 0.0;
        }
        let x = t / self.dt - 0.5;
        if x <= 0.0 {
            return self.seg_speed[0];
        }
        let i = x.floor() as usize;
        if i + 1 >= n {
            return self.seg_speed[n - 1];
        }
        let f = x - i as f64;
        self.seg_speed[i] * (1.0 - f) + self.seg_speed[i + 1] * f
    }
}

/// Tracks a proposal with the bicycle model for `cfg.horizon` seconds.
///
/// Lateral control is a discrete LQR on `[lateral error, heading error]`
/// producing a yaw-rate correction on top of the reference curvature.
/// Longitudinal control is `a = k_speed (v_ref - v)` where `v_ref` is the
/// reference speed `1 / k_speed` seconds ahead plus `k_position` times the
/// along-track position error.
pub fn lqr_track(proposal: &[Pose2D], scene: &Scene, cfg: &SimConfig) -> Result<Rollout, SimError> {
    if cfg.mode != Mode::Navsim {
        return Err(SimError::WrongMode { op: "lqr_track", expected: Mode::Navsim });
    }
    cfg.validate()?;
    check_proposal(proposal)?;
    let dt = cfg.dt();
    let reference = Reference::new(densify(proposal, scene, cfg.sim_hz)?, dt);
    let wheelbase = scene.ego_dims.wheelbase;
    let lookahead = if cfg.k_speed > 0.0 { 1.0 / cfg.k_speed } else { 0.0 };

    let mut state = EgoKinState { pose: scene.ego.pose, velocity: scene.ego.velocity, acceleration: scene.ego.acceleration, steering: 0.0 };
    let mut states = Vec::with_capacity(cfg.ticks() + 1);
    states.push(state);
    for tick in 0..cfg.ticks() {
        let t = tick as f64 * dt;
        let r = reference.pose(tick);
        let (sin_r, cos_r) = r.heading.sin_cos();
        let (dx, dy) = (state.pose.x - r.x, state.pose.y - r.y);
        let lateral = -sin_r * dx + cos_r * dy;
        let along = -(cos_r * dx + sin_r * dy);
        let heading_err = angle_diff(state.pose.heading, r.heading);

        let v_lin = state.velocity.max(1.0);
        let k = lateral_lqr_gain(v_lin, dt, &cfg.q_lat, cfg.r_lat);
        let yaw_rate_correction = -(k[0] * lateral + k[1] * heading_err);
        let curvature = reference.curvature(tick) + yaw_rate_correction / v_lin;
        let steering = (curvature * wheelbase).atan();

        let v_ref = reference.speed_at(t + lookahead) + cfg.k_position * along;
        let accel = cfg.k_speed * (v_ref - state.velocity);

        state = bicycle_step(&state, accel, steering, dt, wheelbase, &cfg.limits);
        states.push(state);
    }
    Ok(Rollout { dt, states })
}

/// Perfect controller: the rollout visits the proposal poses exactly, with
/// speeds and accelerations from finite differences.
pub fn replay_track(proposal: &[Pose2D], scene: &Scene, cfg: &SimConfig) -> Result<Rollout, SimError> {
    if cfg.mode != Mode::Bench2drive {
        return Err(SimError::WrongMode { op: "replay_track", expected: Mode::Bench2drive });
    }
    cfg.validate()?;
    check_proposal(proposal)?;
    Ok(replay_poses(proposal, scene, cfg))
}

pub(crate) fn replay_poses(proposal: &[Pose2D], scene: &Scene, cfg: &SimConfig) -> Rollout {
    let dt = cfg.dt();
    let poses = densify(proposal, scene, cfg.sim_hz).expect("validated proposal");
    let wheelbase = scene.ego_dims.wheelbase;
    let mut states: Vec<EgoKinState<f64>> = Vec::with_capacity(poses.len());
    for (i, pose) in poses.into_iter().take(cfg.ticks() + 1).enumerate() {
        if i == 0 {
            states.push(EgoKinState { pose, velocity: scene.ego.velocity, acceleration: scene.ego.acceleration, steering: 0.0 });
            continue;
        }
        let prev = states[i - 1];
        let ds = prev.pose.position().dist(pose.position());
        let velocity = ds / dt;
        let steering = if ds > 1e-9 { (angle_diff(pose.heading, prev.pose.heading) / ds * wheelbase).atan() } else { 0.0 };
        states.push(EgoKinState { pose, velocity, acceleration: (velocity - prev.velocity) / dt, steering });
    }
    Rollout { dt, states }
}

/// Rolls out with the controller matching `cfg.mode`.
pub fn simulate(proposal: &[Pose2D], scene: &Scene, cfg: &SimConfig) -> Result<Rollout, SimError> {
    match cfg.mode {
        Mode::Navsim => lqr_track(proposal, scene, cfg),
        Mode::Bench2drive => replay_track(proposal, scene, cfg),
    }
}

/// Finite-difference motion quantities, one entry per tick.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct KinematicProfile {
    pub speed: Vec<f64>,
    pub lon_acc: Vec<f64>,
    pub lat_acc: Vec<f64>,
    pub acc_magnitude: Vec<f64>,
    /// Time derivative of the acceleration magnitude.
    pub abs_jerk: Vec<f64>,
    pub lon_jerk: Vec<f64>,
    pub yaw_rate: Vec<f64>,
    pub yaw_acc: Vec<f64>,
}

/// Second-order finite-difference derivative: central inside, three-point
/// one-sided at the ends. Exact for quadratics.
pub fn gradient<T: Real>(f: &[T], dt: T) -> Vec<T> {
    let n = f.len();
    assert!(n >= 3, "gradient needs at least 3 samples");
    let two_dt = T::two() * dt;
    let three = T::lit(3.0);
    let four = T::lit(4.0);
    let mut out = Vec::with_capacity(n);
    out.push((-three * f[0] + four * f[1] - f[2]) / two_dt);
    for i in 1..n - 1 {
        out.push((f[i + 1] - f[i - 1]) / two_dt);
    }
    out.push((three * f[n - 1] - four * f[n - 2] + f[n - 3]) / two_dt);
    out
}

/// Accelerations, jerks and yaw derivatives of a rollout, all derived from its
/// poses. Lateral acceleration is speed times yaw rate.
pub fn kinematic_profile(r: &Rollout) -> Result<KinematicProfile, SimError> {
    let n = r.states.len();
    if n < 3 {
        return Err(SimError::TooFewStates(n));
    }
    let dt = r.dt;
    let xs: Vec<f64> = r.states.iter().map(|s| s.pose.x).collect();
    let ys: Vec<f64> = r.states.iter().map(|s| s.pose.y).collect();
    let mut heading = Vec::with_capacity(n);
    heading.push(r.states[0].pose.heading);
    for w in r.states.windows(2) {
        let last = *heading.last().expect("non-empty");
        heading.push(last + angle_diff(w[1].pose.heading, w[0].pose.heading));
    }
    let vx = gradient(&xs, dt);
    let vy = gradient(&ys, dt);
    let ax = gradient(&vx, dt);
    let ay = gradient(&vy, dt);
    let yaw_rate = gradient(&heading, dt);
    let yaw_acc = gradient(&yaw_rate, dt);
    let speed: Vec<f64> = vx.iter().zip(&vy).map(|(x, y)| x.hypot(*y)).collect();
    let lon_acc: Vec<f64> = (0..n).map(|i| {
        let (s, c) = heading[i].sin_cos();
        ax[i] * c + ay[i] * s
    }).collect();
    let lat_acc: Vec<f64> = speed.iter().zip(&yaw_rate).map(|(v, w)| v * w).collect();
    let acc_magnitude: Vec<f64> = lon_acc.iter().zip(&lat_acc).map(|(a, b)| a.hypot(*b)).collect();
    let abs_jerk = gradient(&acc_magnitude, dt);
    let lon_jerk = gradient(&lon_acc, dt);
    Ok(KinematicProfile { speed, lon_acc, lat_acc, acc_magnitude, abs_jerk, lon_jerk, yaw_rate, yaw_acc })
}

//! Sub-metrics and the aggregate PDM score of a simulated proposal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{box_corners, boxes_intersect, rear_axle_footprint, OrientedBox, Pose2};
use crate::proposals::ProposalSet;
use crate::scene::{agent_state_at, Mode, Scene, PLANNING_DT};
use crate::simulator::{kinematic_profile, replay_poses, simulate, KinematicProfile, Rollout, SimConfig, SimError};
use crate::Pose2D;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("bench2drive scoring needs an expert trajectory in the scene")]
    MissingExpert,
    #[error("scene has neither a progress upper bound nor an expert trajectory")]
    MissingProgressBound,
}

/// Comfort limits; a tick exceeding any of them fails the comfort metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComfortThresholds {
    /// m/s²
    pub lat_acc: f64,
    /// m/s²
    pub lon_acc: f64,
    /// m/s², magnitude of negative longitudinal acceleration
    pub lon_dec: f64,
    /// m/s³
    pub abs_jerk: f64,
    /// m/s³
    pub lon_jerk: f64,
    /// rad/s
    pub yaw_rate: f64,
    /// rad/s²
    pub yaw_acc: f64,
}

impl Default for ComfortThresholds {
    fn default() -> Self {
        Self { lat_acc: 4.89, lon_acc: 2.40, lon_dec: 4.05, abs_jerk: 8.37, lon_jerk: 4.13, yaw_rate: 0.95, yaw_acc: 1.93 }
    }
}

/// Tunables of the collision and progress rules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricParams {
    /// Below this speed (m/s) the ego counts as stationary.
    pub stationary_speed: f64,
    /// Time-to-collision bound (s).
    pub ttc_threshold: f64,
    /// Constant-velocity projection step (s).
    pub ttc_step: f64,
    /// Progress bounds below this (m) discard ego progress.
    pub min_progress_bound: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self { stationary_speed: 0.05, ttc_threshold: 1.0, ttc_step: 0.1, min_progress_bound: 5.0 }
    }
}

/// Everything needed to score a proposal against a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringConfig {
    pub sim: SimConfig,
    pub comfort: ComfortThresholds,
    pub metrics: MetricParams,
}

impl ScoringConfig {
    pub fn for_mode(mode: Mode) -> Self {
        Self { sim: SimConfig::for_mode(mode), comfort: ComfortThresholds::default(), metrics: MetricParams::default() }
    }

    pub fn mode(&self) -> Mode {
        self.sim.mode
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SubMetrics {
    pub nc: f64,
    pub dac: f64,
    pub ttc: f64,
    pub comfort: f64,
    pub ep: f64,
    pub ep_discarded: bool,
}

/// An agent blamed for a collision or TTC violation at a rollout tick.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Attribution {
    pub tick: usize,
    pub agent_id: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScoreCard {
    pub sub: SubMetrics,
    pub pdms: f64,
    pub first_at_fault: Option<Attribution>,
    pub first_ttc: Option<Attribution>,
}

/// `NC * DAC * (5 EP + 5 TTC + 2 Comfort) / 12`.
pub fn pdm_score(sub: &SubMetrics) -> f64 {
    sub.nc * sub.dac * (5.0 * sub.ep + 5.0 * sub.ttc + 2.0 * sub.comfort) / 12.0
}

fn ego_box(r: &Rollout, tick: usize, scene: &Scene) -> OrientedBox<f64> {
    r.footprint(tick, &scene.ego_dims)
}

fn first_of(a: Option<Attribution>, b: Attribution) -> Option<Attribution> {
    Some(match a {
        Some(a) if a <= b => a,
        _ => b,
    })
}

/// No-at-fault-collision gate.
///
/// In NAVSIM mode a moving ego touching a valid road user scores 0, touching
/// only static objects scores 0.5, and contacts while stationary are ignored.
/// Bench2Drive counts any contact with any object as 0. The attribution is the
/// earliest counted collision, smallest agent id first.
pub fn no_at_fault_collision(r: &Rollout, scene: &Scene, mode: Mode, params: &MetricParams) -> (f64, Option<Attribution>) {
    let mut agents: Vec<_> = scene.agents.iter().collect();
    agents.sort_by_key(|a| a.id);
    let mut value: f64 = 1.0;
    let mut first: Option<Attribution> = None;
    for (tick, state) in r.states.iter().enumerate() {
        let stationary = state.velocity.abs() < params.stationary_speed;
        if mode == Mode::Navsim && stationary {
            continue;
        }
        let t = r.time(tick);
        let ego = ego_box(r, tick, scene);
        for agent in &agents {
            let Some(s) = agent_state_at(agent, t) else { continue };
            if !s.valid || !boxes_intersect(&ego, &agent.footprint(s.pose)) {
                continue;
            }
            let penalty = match mode {
                Mode::Navsim if !agent.category.is_road_user() => 0.5,
                _ => 0.0,
            };
            value = value.min(penalty);
            first = first_of(first, Attribution { tick, agent_id: agent.id });
        }
    }
    (value, first)
}

/// True when all four footprint corners lie in the drivable union.
pub fn footprint_on_road(scene: &Scene, rear_axle: Pose2D) -> bool {
    let d = &scene.ego_dims;
    box_corners(&rear_axle_footprint(rear_axle, d.length, d.width, d.wheelbase)).into_iter().all(|c| scene.on_road(c))
}

/// True when the footprint center projects inside the route corridor.
pub fn footprint_on_route(scene: &Scene, rear_axle: Pose2D) -> bool {
    let d = &scene.ego_dims;
    let center = rear_axle_footprint(rear_axle, d.length, d.width, d.wheelbase).center.position();
    let proj = scene.route.centerline.project(center);
    !proj.clamped && proj.lateral.abs() <= scene.route.half_width
}

/// Drivable-area compliance: every corner on road at every tick; Bench2Drive
/// additionally fails when the footprint center is off-route at every tick.
pub fn drivable_area_compliance(r: &Rollout, scene: &Scene, mode: Mode) -> f64 {
    if !r.poses().all(|p| footprint_on_road(scene, p)) {
        return 0.0;
    }
    if mode == Mode::Bench2drive && !r.poses().any(|p| footprint_on_route(scene, p)) {
        return 0.0;
    }
    1.0
}

/// Time-to-collision gate. At each tick of a moving ego the footprint is
/// projected ahead at constant velocity and heading in `ttc_step` increments
/// strictly below `ttc_threshold`, against agents at the matching absolute
/// times. Any overlap scores 0, attributed to the earliest tick and smallest id.
pub fn time_to_collision_metric(r: &Rollout, scene: &Scene, params: &MetricParams) -> (f64, Option<Attribution>) {
    let mut agents: Vec<_> = scene.agents.iter().collect();
    agents.sort_by_key(|a| a.id);
    let steps = ((params.ttc_threshold / params.ttc_step) - 1e-9).ceil().max(0.0) as usize;
    for (tick, state) in r.states.iter().enumerate() {
        if state.velocity.abs() < params.stationary_speed {
            continue;
        }
        let t = r.time(tick);
        let ego = ego_box(r, tick, scene);
        let forward = ego.center.forward();
        for agent in &agents {
            for j in 0..steps {
                let dt = j as f64 * params.ttc_step;
                let Some(s) = agent_state_at(agent, t + dt) else { continue };
                if !s.valid {
                    continue;
                }
                let shift = forward.scale(state.velocity * dt);
                let projected = OrientedBox {
                    center: Pose2 { x: ego.center.x + shift.x, y: ego.center.y + shift.y, heading: ego.center.heading },
                    ..ego
                };
                if boxes_intersect(&projected, &agent.footprint(s.pose)) {
                    return (0.0, Some(Attribution { tick, agent_id: agent.id }));
                }
            }
        }
    }
    (1.0, None)
}

/// Per-threshold violation flags in declaration order: lateral acceleration,
/// longitudinal acceleration, deceleration, absolute jerk, longitudinal jerk,
/// yaw rate, yaw acceleration.
pub fn comfort_violations(p: &KinematicProfile, th: &ComfortThresholds) -> [bool; 7] {
    let any = |xs: &[f64], f: &dyn Fn(f64) -> bool| xs.iter().any(|&x| f(x));
    [
        any(&p.lat_acc, &|x| x.abs() > th.lat_acc),
        any(&p.lon_acc, &|x| x > th.lon_acc),
        any(&p.lon_acc, &|x| -x > th.lon_dec),
        any(&p.abs_jerk, &|x| x.abs() > th.abs_jerk),
        any(&p.lon_jerk, &|x| x.abs() > th.lon_jerk),
        any(&p.yaw_rate, &|x| x.abs() > th.yaw_rate),
        any(&p.yaw_acc, &|x| x.abs() > th.yaw_acc),
    ]
}

fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Comfort gate. NAVSIM checks the fixed thresholds; Bench2Drive compares peak
/// acceleration magnitude and yaw rate against the expert's peaks.
pub fn comfort_metric(
    r: &Rollout,
    th: &ComfortThresholds,
    mode: Mode,
    expert_profile: Option<&KinematicProfile>,
) -> Result<f64, MetricsError> {
    let p = kinematic_profile(r)?;
    let ok = match mode {
        Mode::Navsim => !comfort_violations(&p, th).iter().any(|&v| v),
        Mode::Bench2drive => {
            let e = expert_profile.ok_or(MetricsError::MissingExpert)?;
            max_abs(&p.acc_magnitude) <= max_abs(&e.acc_magnitude) && max_abs(&p.yaw_rate) <= max_abs(&e.yaw_rate)
        }
    };
    Ok(if ok { 1.0 } else { 0.0 })
}

fn route_progress(scene: &Scene, from: Pose2D, to: Pose2D) -> f64 {
    let line = &scene.route.centerline;
    line.project(to.position()).arclength - line.project(from.position()).arclength
}

/// Ego progress along the route centerline.
///
/// NAVSIM: progress over the progress bound, clipped to `[0, 1]`; discarded
/// (neutral 1, flagged) when the bound is under `min_progress_bound` or the
/// progress is negative. Bench2Drive: ratio to the expert's progress over the
/// same time span, reciprocal when above 1, and 0 unless `eligible`
/// (collision-free and on-road).
pub fn ego_progress(
    r: &Rollout,
    scene: &Scene,
    mode: Mode,
    expert: Option<&[Pose2D]>,
    eligible: bool,
    params: &MetricParams,
) -> Result<(f64, bool), MetricsError> {
    let start = r.states[0].pose;
    let end = r.states[r.states.len() - 1].pose;
    let progress = route_progress(scene, start, end);
    match mode {
        Mode::Navsim => {
            let bound = scene.progress_upper_bound().ok_or(MetricsError::MissingProgressBound)?;
            if bound < params.min_progress_bound || progress < 0.0 {
                return Ok((1.0, true));
            }
            Ok(((progress / bound).clamp(0.0, 1.0), false))
        }
        Mode::Bench2drive => {
            let expert = expert.ok_or(MetricsError::MissingExpert)?;
            if expert.is_empty() {
                return Err(MetricsError::MissingExpert);
            }
            if !eligible {
                return Ok((0.0, false));
            }
            let end_t = r.time(r.states.len() - 1);
            let idx = ((end_t / PLANNING_DT).round() as usize).clamp(1, expert.len()) - 1;
            let expert_progress = route_progress(scene, scene.ego.pose, expert[idx]);
            if expert_progress < 1e-6 {
                return Ok((1.0, true));
            }
            let ratio = progress / expert_progress;
            let value = if ratio > 1.0 { 1.0 / ratio } else { ratio.max(0.0) };
            Ok((value, false))
        }
    }
}

/// Context shared by every proposal of one scene.
pub struct SceneScorer<'a> {
    scene: &'a Scene,
    cfg: &'a ScoringConfig,
    expert_profile: Option<KinematicProfile>,
}

impl<'a> SceneScorer<'a> {
    pub fn new(scene: &'a Scene, cfg: &'a ScoringConfig) -> Result<Self, MetricsError> {
        cfg.sim.validate()?;
        let expert_profile = match cfg.mode() {
            Mode::Navsim => None,
            Mode::Bench2drive => {
                let expert = scene.expert.as_ref().ok_or(MetricsError::MissingExpert)?;
                if expert.is_empty() {
                    return Err(MetricsError::MissingExpert);
                }
                Some(kinematic_profile(&replay_poses(expert, scene, &cfg.sim))?)
            }
        };
        Ok(Self { scene, cfg, expert_profile })
    }

    /// Rolls out one proposal and evaluates every sub-metric.
    pub fn score(&self, proposal: &[Pose2D]) -> Result<(ScoreCard, Rollout), MetricsError> {
        let (scene, cfg, mode) = (self.scene, self.cfg, self.cfg.mode());
        let rollout = simulate(proposal, scene, &cfg.sim)?;
        let (nc, first_at_fault) = no_at_fault_collision(&rollout, scene, mode, &cfg.metrics);
        let dac = drivable_area_compliance(&rollout, scene, mode);
        let (ttc, first_ttc) = time_to_collision_metric(&rollout, scene, &cfg.metrics);
        let comfort = comfort_metric(&rollout, &cfg.comfort, mode, self.expert_profile.as_ref())?;
        let eligible = nc == 1.0 && rollout.poses().all(|p| footprint_on_road(scene, p));
        let (ep, ep_discarded) = ego_progress(&rollout, scene, mode, scene.expert.as_deref(), eligible, &cfg.metrics)?;
        let sub = SubMetrics { nc, dac, ttc, comfort, ep, ep_discarded };
        Ok((ScoreCard { sub, pdms: pdm_score(&sub), first_at_fault, first_ttc }, rollout))
    }
}

/// Scores every proposal of a set, in order.
pub fn score_proposals(proposals: &ProposalSet, scene: &Scene, cfg: &ScoringConfig) -> Result<Vec<ScoreCard>, MetricsError> {
    let scorer = SceneScorer::new(scene, cfg)?;
    proposals.iter().map(|p| scorer.score(p).map(|(card, _)| card)).collect()
}

/// Index of the highest score; ties go to the smallest index.
pub fn best_index(scores: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub(nc: f64, dac: f64, ep: f64, ttc: f64, comfort: f64) -> SubMetrics {
        SubMetrics { nc, dac, ttc, comfort, ep, ep_discarded: false }
    }

    #[test]
    fn pdms_examples() {
        assert_eq!(pdm_score(&sub(1.0, 1.0, 1.0, 1.0, 1.0)), 1.0);
        assert_eq!(pdm_score(&sub(0.0, 1.0, 1.0, 1.0, 1.0)), 0.0);
        assert!((pdm_score(&sub(1.0, 1.0, 0.8, 1.0, 1.0)) - 11.0 / 12.0).abs() < 1e-15);
        assert_eq!(pdm_score(&sub(0.5, 1.0, 1.0, 1.0, 1.0)), 0.5);
    }

    #[test]
    fn default_thresholds() {
        let th = ComfortThresholds::default();
        assert_eq!(
            [th.lat_acc, th.lon_acc, th.lon_dec, th.abs_jerk, th.lon_jerk, th.yaw_rate, th.yaw_acc],
            [4.89, 2.40, 4.05, 8.37, 4.13, 0.95, 1.93]
        );
    }

    #[test]
    fn best_index_prefers_first_on_ties() {
        assert_eq!(best_index([0.2, 0.9, 0.9, 0.1]), Some(1));
        assert_eq!(best_index(Vec::<f64>::new()), None);
    }
}

//! Scene data model, its JSON form, and time interpolation of tracks.
//!
//! Everything lives in one local metric frame: the ego rear axle sits at the
//! origin heading +x at `t = 0`, the planning instant. Ego poses (start,
//! expert, proposals) are rear-axle poses; agent poses are footprint centers.

use std::fmt;
use std::path::Path;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::camera::{det3, Camera};
use crate::geometry::{point_in_any, OrientedBox, Point2, Polygon, Polyline, Pose2};
use crate::num::{lerp, lerp_angle, Real};
use crate::{CameraModel, Pose2D};

/// Spacing of proposal and expert poses, in seconds.
pub const PLANNING_DT: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Parse(String),
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid scene: {0}")]
    Validation(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum ResampleError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample times must be strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("rate must be positive and finite")]
    BadRate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Navsim,
    Bench2drive,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Navsim => "navsim",
            Mode::Bench2drive => "bench2drive",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "navsim" => Ok(Mode::Navsim),
            "bench2drive" => Ok(Mode::Bench2drive),
            other => Err(format!("unknown mode `{other}` (expected navsim or bench2drive)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleDims {
    pub length: f64,
    pub width: f64,
    pub wheelbase: f64,
}

impl VehicleDims {
    pub fn validate(&self) -> Result<(), String> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.length) && ok(self.width) && ok(self.wheelbase)) {
            return Err(format!("dimensions must be positive, got {self:?}"));
        }
        if self.wheelbase > self.length {
            return Err(format!("wheelbase {} exceeds length {}", self.wheelbase, self.length));
        }
        Ok(())
    }
}

impl Default for VehicleDims {
    fn default() -> Self {
        Self { length: 4.6, width: 2.0, wheelbase: 2.8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentCategory {
    Vehicle,
    Pedestrian,
    Bicycle,
    StaticObject,
}

impl AgentCategory {
    /// Vehicles, pedestrians and bicycles.
    pub fn is_road_user(self) -> bool {
        !matches!(self, AgentCategory::StaticObject)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentSample {
    pub t: f64,
    pub pose: Pose2D,
    pub velocity: f64,
    pub valid: bool,
}

/// Interpolated agent state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentState {
    pub pose: Pose2D,
    pub velocity: f64,
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentTrack {
    pub id: u64,
    pub category: AgentCategory,
    pub dims: VehicleDims,
    pub states: Vec<AgentSample>,
}

impl AgentTrack {
    pub fn footprint(&self, pose: Pose2D) -> OrientedBox<f64> {
        OrientedBox { center: pose, length: self.dims.length, width: self.dims.width }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    pub centerline: Polyline<f64>,
    pub half_width: f64,
    /// Safe progress bound in meters; when absent the expert's progress is used.
    pub progress_upper_bound: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EgoStart {
    pub pose: Pose2D,
    pub velocity: f64,
    pub acceleration: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub mode: Mode,
    pub ego: EgoStart,
    pub ego_dims: VehicleDims,
    pub agents: Vec<AgentTrack>,
    pub drivable_area: Vec<Polygon<f64>>,
    pub route: Route,
    pub cameras: Vec<CameraModel>,
    pub expert: Option<Vec<Pose2D>>,
}

impl Scene {
    pub fn agent(&self, id: u64) -> Option<&AgentTrack> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn on_road(&self, p: Point2<f64>) -> bool {
        point_in_any(p, &self.drivable_area)
    }

    /// Expert poses paired with their planning timestamps.
    pub fn expert_samples(&self) -> Option<Vec<(f64, Pose2D)>> {
        self.expert.as_ref().map(|e| planning_timestamps(e))
    }

    /// Route progress bound: the explicit field, else the expert's progress.
    pub fn progress_upper_bound(&self) -> Option<f64> {
        self.route.progress_upper_bound.or_else(|| {
            let expert = self.expert.as_ref()?;
            let last = expert.last()?;
            let end = self.route.centerline.project(last.position()).arclength;
            let start = self.route.centerline.project(self.ego.pose.position()).arclength;
            Some(end - start)
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self, SceneError> {
        let mut de = serde_json::Deserializer::from_str(s);
        let file: SceneFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            match inner.classify() {
                serde_json::error::Category::Data => SceneError::Schema { path, message: inner.to_string() },
                _ => SceneError::Parse(inner.to_string()),
            }
        })?;
        de.end().map_err(|e| SceneError::Parse(e.to_string()))?;
        Scene::try_from(file)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&SceneFile::from(self)).expect("scene serializes")
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Validation(m));
        if !self.ego.pose.is_valid() {
            return bad(format!("ego pose {:?} not finite or heading outside (-pi, pi]", self.ego.pose));
        }
        if !self.ego.velocity.is_finite() || !self.ego.acceleration.is_finite() {
            return bad("ego velocity/acceleration must be finite".into());
        }
        self.ego_dims.validate().map_err(|m| SceneError::Validation(format!("ego dims: {m}")))?;
        let mut ids: Vec<u64> = self.agents.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("duplicate agent id {}", w[0]));
        }
        for a in &self.agents {
            validate_track(a).map_err(|m| SceneError::Validation(format!("agent {}: {m}", a.id)))?;
        }
        if self.drivable_area.is_empty() {
            return bad("drivable_area is empty".into());
        }
        for (i, poly) in self.drivable_area.iter().enumerate() {
            if poly.vertices().iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
                return bad(format!("drivable_area[{i}] has non-finite vertices"));
            }
            if !poly.is_simple() {
                return bad(format!("drivable_area[{i}] is self-intersecting"));
            }
        }
        if !self.on_road(self.ego.pose.position()) {
            return bad("ego start lies outside every drivable polygon".into());
        }
        let pts = self.route.centerline.points();
        if let Some(i) = pts.windows(2).position(|w| w[0] == w[1]) {
            return bad(format!("route centerline points {i} and {} coincide", i + 1));
        }
        if pts.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return bad("route centerline has non-finite points".into());
        }
        if !(self.route.half_width.is_finite() && self.route.half_width > 0.0) {
            return bad(format!("route half_width must be positive, got {}", self.route.half_width));
        }
        if let Some(b) = self.route.progress_upper_bound {
            if !(b.is_finite() && b >= 0.0) {
                return bad(format!("progress_upper_bound must be >= 0, got {b}"));
            }
        }
        for cam in &self.cameras {
            if det3(&cam.intrinsics).abs() < 1e-12 || cam.intrinsics.iter().flatten().any(|v| !v.is_finite()) {
                return bad(format!("camera {}: intrinsics not invertible", cam.view_id));
            }
            if !(cam.orthonormality_error() <= 1e-9) {
                return bad(format!("camera {}: rotation not orthonormal", cam.view_id));
            }
            if cam.translation.iter().any(|v| !v.is_finite()) || cam.image_size.0 == 0 || cam.image_size.1 == 0 {
                return bad(format!("camera {}: bad translation or image size", cam.view_id));
            }
        }
        if let Some(expert) = &self.expert {
            if expert.is_empty() {
                return bad("expert trajectory is empty".into());
            }
            if let Some(i) = expert.iter().position(|p| !p.is_valid()) {
                return bad(format!("expert pose {i} not finite or heading outside (-pi, pi]"));
            }
        }
        Ok(())
    }
}

fn validate_track(a: &AgentTrack) -> Result<(), String> {
    let d = a.dims;
    if !(d.length > 0.0 && d.width > 0.0 && d.length.is_finite() && d.width.is_finite()) {
        return Err(format!("dimensions must be positive, got {d:?}"));
    }
    if !(d.wheelbase > 0.0 && d.wheelbase <= d.length) {
        return Err(format!("wheelbase {} must be in (0, length]", d.wheelbase));
    }
    if a.states.is_empty() {
        return Err("no states".into());
    }
    if let Some(i) = a.states.windows(2).position(|w| !(w[0].t < w[1].t)) {
        return Err(format!("states not sorted strictly by time at index {}", i + 1));
    }
    if !a.states.iter().any(|s| s.valid) {
        return Err("no valid state".into());
    }
    if let Some(s) = a.states.iter().find(|s| !s.t.is_finite() || !s.pose.is_valid() || !s.velocity.is_finite()) {
        return Err(format!("non-finite state or heading outside (-pi, pi] at t={}", s.t));
    }
    if a.category == AgentCategory::StaticObject && (a.states.len() != 1 || !a.states[0].valid) {
        return Err("static objects carry exactly one valid state".into());
    }
    Ok(())
}

/// Pairs planning poses with their timestamps `0.5, 1.0, ...`.
pub fn planning_timestamps(poses: &[Pose2D]) -> Vec<(f64, Pose2D)> {
    poses.iter().enumerate().map(|(i, p)| ((i + 1) as f64 * PLANNING_DT, *p)).collect()
}

/// Log-replay lookup of an agent at time `t`.
///
/// Positions and speed interpolate linearly, heading along the shortest arc.
/// The result is valid only when both bracketing samples are. Static objects
/// hold their single state at all times; other tracks return `None` outside
/// their recorded span.
pub fn agent_state_at(track: &AgentTrack, t: f64) -> Option<AgentState> {
    let states = &track.states;
    let at = |s: &AgentSample| AgentState { pose: s.pose, velocity: s.velocity, valid: s.valid };
    if track.category == AgentCategory::StaticObject {
        return states.first().map(at);
    }
    let (first, last) = (states.first()?, states.last()?);
    if !(t >= first.t && t <= last.t) {
        return None;
    }
    let i = states.partition_point(|s| s.t < t);
    let hi = &states[i];
    if hi.t == t {
        return Some(at(hi));
    }
    let lo = &states[i - 1];
    let alpha = (t - lo.t) / (hi.t - lo.t);
    Some(AgentState {
        pose: Pose2 {
            x: lerp(lo.pose.x, hi.pose.x, alpha),
            y: lerp(lo.pose.y, hi.pose.y, alpha),
            heading: lerp_angle(lo.pose.heading, hi.pose.heading, alpha),
        },
        velocity: lerp(lo.velocity, hi.velocity, alpha),
        valid: lo.valid && hi.valid,
    })
}

/// Resamples a timed pose sequence at `hz`, covering the input span.
///
/// Output times are `t0 + i / hz`; a time within 1e-9 s of a knot reproduces
/// that knot exactly.
pub fn resample_trajectory<T: Real>(poses: &[(T, Pose2<T>)], hz: T) -> Result<Vec<(T, Pose2<T>)>, ResampleError> {
    if poses.len() < 2 {
        return Err(ResampleError::TooFewSamples(poses.len()));
    }
    if !(hz > T::zero() && hz.is_finite()) {
        return Err(ResampleError::BadRate);
    }
    if let Some(i) = poses.windows(2).position(|w| !(w[0].0 < w[1].0)) {
        return Err(ResampleError::NotIncreasing(i + 1));
    }
    let snap = T::lit(1e-9);
    let t0 = poses[0].0;
    let t_end = poses[poses.len() - 1].0;
    let count = ((t_end - t0) * hz + snap).floor().to_usize().unwrap_or(0);
    let mut out = Vec::with_capacity(count + 1);
    let mut seg = 0usize;
    for i in 0..=count {
        let t = t0 + T::from_usize(i).unwrap() / hz;
        while seg + 2 < poses.len() && poses[seg + 1].0 <= t + snap {
            seg += 1;
        }
        let (ta, a) = poses[seg];
        let (tb, b) = poses[seg + 1];
        let pose = if (t - ta).abs() <= snap {
            a
        } else if (t - tb).abs() <= snap {
            b
        } else {
            let alpha = ((t - ta) / (tb - ta)).min(T::one());
            Pose2 { x: lerp(a.x, b.x, alpha), y: lerp(a.y, b.y, alpha), heading: lerp_angle(a.heading, b.heading, alpha) }
        };
        out.push((t, pose));
    }
    Ok(out)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene, SceneError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io { path: path.display().to_string(), source })?;
    Scene::from_json_str(&text)
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let path = path.as_ref();
    let mut text = scene.to_json_string();
    text.push('\n');
    std::fs::write(path, text).map_err(|source| SceneError::Io { path: path.display().to_string(), source })
}

// ---------------------------------------------------------------------------
// Serialized form
// ---------------------------------------------------------------------------

/// Validity flag accepted as `true`/`false` or `1`/`0`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Flag(bool);

impl Serialize for Flag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_bool(self.0)
    }
}

impl<'de> Deserialize<'de> for Flag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Flag;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a boolean or 0/1")
            }
            fn visit_bool<E: de::Error>(self, v: bool) -> Result<Flag, E> {
                Ok(Flag(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Flag, E> {
                match v {
                    0 => Ok(Flag(false)),
                    1 => Ok(Flag(true)),
                    _ => Err(E::invalid_value(de::Unexpected::Unsigned(v), &V)),
                }
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Flag, E> {
                self.visit_u64(u64::try_from(v).map_err(|_| E::invalid_value(de::Unexpected::Signed(v), &V))?)
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Flag, E> {
                if v == 0.0 || v == 1.0 {
                    Ok(Flag(v == 1.0))
                } else {
                    Err(E::invalid_value(de::Unexpected::Float(v), &V))
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// Fixed-length JSON array of floats.
fn fixed<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[f64; N], D::Error> {
    struct V<const N: usize>;
    impl<'de, const N: usize> Visitor<'de> for V<N> {
        type Value = [f64; N];
        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            write!(f, "an array of {N} numbers")
        }
        fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<[f64; N], A::Error> {
            let mut out = [0.0; N];
            for (i, slot) in out.iter_mut().enumerate() {
                *slot = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(i, &self))?;
            }
            if seq.next_element::<de::IgnoredAny>()?.is_some() {
                return Err(de::Error::invalid_length(N + 1, &self));
            }
            Ok(out)
        }
    }
    d.deserialize_seq(V::<N>)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EgoFile {
    #[serde(deserialize_with = "fixed")]
    pose: [f64; 3],
    velocity: f64,
    acceleration: f64,
    dims: VehicleDims,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentFile {
    id: u64,
    category: AgentCategory,
    dims: VehicleDims,
    states: Vec<(f64, f64, f64, f64, f64, Flag)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RouteFile {
    centerline: Vec<[f64; 2]>,
    half_width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    progress_upper_bound: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraFile {
    view_id: String,
    #[serde(rename = "K", deserialize_with = "fixed")]
    k: [f64; 9],
    #[serde(rename = "R", deserialize_with = "fixed")]
    r: [f64; 9],
    #[serde(deserialize_with = "fixed")]
    t: [f64; 3],
    image_size: [u32; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    mode: Mode,
    ego: EgoFile,
    #[serde(default)]
    agents: Vec<AgentFile>,
    drivable_area: Vec<Vec<[f64; 2]>>,
    route: RouteFile,
    #[serde(default)]
    cameras: Vec<CameraFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expert: Option<Vec<[f64; 3]>>,
}

fn mat3(v: [f64; 9]) -> [[f64; 3]; 3] {
    [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]]
}

fn flat3(m: &[[f64; 3]; 3]) -> [f64; 9] {
    [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
}

fn pose(v: [f64; 3]) -> Pose2D {
    Pose2 { x: v[0], y: v[1], heading: v[2] }
}

impl TryFrom<SceneFile> for Scene {
    type Error = SceneError;

    fn try_from(f: SceneFile) -> Result<Self, SceneError> {
        let pt = |p: [f64; 2]| Point2::new(p[0], p[1]);
        let drivable_area = f
            .drivable_area
            .into_iter()
            .enumerate()
            .map(|(i, poly)| {
                Polygon::new(poly.into_iter().map(pt).collect())
                    .map_err(|e| SceneError::Validation(format!("drivable_area[{i}]: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let centerline = Polyline::new(f.route.centerline.into_iter().map(pt).collect())
            .map_err(|e| SceneError::Validation(format!("route centerline: {e}")))?;
        let scene = Scene {
            mode: f.mode,
            ego: EgoStart { pose: pose(f.ego.pose), velocity: f.ego.velocity, acceleration: f.ego.acceleration },
            ego_dims: f.ego.dims,
            agents: f
                .agents
                .into_iter()
                .map(|a| AgentTrack {
                    id: a.id,
                    category: a.category,
                    dims: a.dims,
                    states: a
                        .states
                        .into_iter()
                        .map(|(t, x, y, h, v, valid)| AgentSample { t, pose: Pose2 { x, y, heading: h }, velocity: v, valid: valid.0 })
                        .collect(),
                })
                .collect(),
            drivable_area,
            route: Route { centerline, half_width: f.route.half_width, progress_upper_bound: f.route.progress_upper_bound },
            cameras: f
                .cameras
                .into_iter()
                .map(|c| Camera {
                    view_id: c.view_id,
                    intrinsics: mat3(c.k),
                    rotation: mat3(c.r),
                    translation: c.t,
                    image_size: (c.image_size[0], c.image_size[1]),
                })
                .collect(),
            expert: f.expert.map(|e| e.into_iter().map(pose).collect()),
        };
        scene.validate()?;
        Ok(scene)
    }
}

impl From<&Scene> for SceneFile {
    fn from(s: &Scene) -> Self {
        let p3 = |p: &Pose2D| [p.x, p.y, p.heading];
        SceneFile {
            mode: s.mode,
            ego: EgoFile { pose: p3(&s.ego.pose), velocity: s.ego.velocity, acceleration: s.ego.acceleration, dims: s.ego_dims },
            agents: s
                .agents
                .iter()
                .map(|a| AgentFile {
                    id: a.id,
                    category: a.category,
                    dims: a.dims,
                    states: a.states.iter().map(|st| (st.t, st.pose.x, st.pose.y, st.pose.heading, st.velocity, Flag(st.valid))).collect(),
                })
                .collect(),
            drivable_area: s.drivable_area.iter().map(|poly| poly.vertices().iter().map(|v| [v.x, v.y]).collect()).collect(),
            route: RouteFile {
                centerline: s.route.centerline.points().iter().map(|p| [p.x, p.y]).collect(),
                half_width: s.route.half_width,
                progress_upper_bound: s.route.progress_upper_bound,
            },
            cameras: s
                .cameras
                .iter()
                .map(|c| CameraFile {
                    view_id: c.view_id.clone(),
                    k: flat3(&c.intrinsics),
                    r: flat3(&c.rotation),
                    t: c.translation,
                    image_size: [c.image_size.0, c.image_size.1],
                })
                .collect(),
            expert: s.expert.as_ref().map(|e| e.iter().map(p3).collect()),
        }
    }
}

//! Planar geometry: poses, oriented boxes, polygons and polylines.
//!
//! Boundary contact always counts as overlap or containment, so every test
//! here errs on the side of reporting a collision or an on-road point.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{wrap_angle, Real};

/// Distance under which a point counts as lying on a polygon edge.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate polygon: {0} distinct vertices, need at least 3")]
    DegeneratePolygon(usize),
    #[error("polyline needs at least 2 points, got {0}")]
    ShortPolyline(usize),
    #[error("box extents must be positive (length {length}, width {width})")]
    BadBox { length: f64, width: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Self) -> T {
        (self - o).norm()
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }

    /// Rotates counter-clockwise by `angle`.
    pub fn rotate(self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl<T: Real> std::ops::Add for Point2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Real> std::ops::Sub for Point2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

/// Planar pose; heading in `(-pi, pi]`, counter-clockwise from +x.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose2<T> {
    pub x: T,
    pub y: T,
    pub heading: T,
}

impl<T: Real> Pose2<T> {
    /// Builds a pose, wrapping the heading.
    pub fn new(x: T, y: T, heading: T) -> Self {
        Self { x, y, heading: wrap_angle(heading) }
    }

    pub fn position(&self) -> Point2<T> {
        Point2::new(self.x, self.y)
    }

    /// Unit vector along the heading.
    pub fn forward(&self) -> Point2<T> {
        let (s, c) = self.heading.sin_cos();
        Point2::new(c, s)
    }

    /// Maps a point given in this pose's body frame into the parent frame.
    pub fn transform_point(&self, local: Point2<T>) -> Point2<T> {
        local.rotate(self.heading) + self.position()
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.heading.is_finite()
            && self.heading > -T::PI()
            && self.heading <= T::PI()
    }
}

/// Rigid planar motion: rotate by `angle` about the origin, then translate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rigid2<T> {
    pub angle: T,
    pub translation: Point2<T>,
}

impl<T: Real> Rigid2<T> {
    pub fn new(angle: T, tx: T, ty: T) -> Self {
        Self { angle, translation: Point2::new(tx, ty) }
    }

    pub fn apply_point(&self, p: Point2<T>) -> Point2<T> {
        p.rotate(self.angle) + self.translation
    }

    pub fn apply_pose(&self, p: Pose2<T>) -> Pose2<T> {
        let q = self.apply_point(p.position());
        Pose2::new(q.x, q.y, p.heading + self.angle)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox<T> {
    pub center: Pose2<T>,
    pub length: T,
    pub width: T,
}

impl<T: Real> OrientedBox<T> {
    pub fn new(center: Pose2<T>, length: T, width: T) -> Result<Self, GeometryError> {
        if !(length > T::zero() && width > T::zero()) {
            return Err(GeometryError::BadBox { length: length.as_f64(), width: width.as_f64() });
        }
        Ok(Self { center, length, width })
    }

    /// Half-diagonal, i.e. the bounding-circle radius.
    pub fn radius(&self) -> T {
        (self.length * T::half()).hypot(self.width * T::half())
    }
}

/// Corners in the order front-left, front-right, rear-right, rear-left.
pub fn box_corners<T: Real>(b: &OrientedBox<T>) -> [Point2<T>; 4] {
    let hl = b.length * T::half();
    let hw = b.width * T::half();
    [
        Point2::new(hl, hw),
        Point2::new(hl, -hw),
        Point2::new(-hl, -hw),
        Point2::new(-hl, hw),
    ]
    .map(|c| b.center.transform_point(c))
}

/// Footprint of a vehicle whose pose is given at the rear axle.
///
/// The rear overhang is taken as `(length - wheelbase) / 2`, which puts the
/// footprint center `wheelbase / 2` ahead of the axle.
pub fn rear_axle_footprint<T: Real>(rear_axle: Pose2<T>, length: T, width: T, wheelbase: T) -> OrientedBox<T> {
    let c = rear_axle.transform_point(Point2::new(wheelbase * T::half(), T::zero()));
    OrientedBox { center: Pose2 { x: c.x, y: c.y, heading: rear_axle.heading }, length, width }
}

fn project_interval<T: Real>(corners: &[Point2<T>; 4], axis: Point2<T>) -> (T, T) {
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for c in corners {
        let d = c.dot(axis);
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

/// Closed-box overlap by the separating-axis test over both boxes' edge normals.
pub fn boxes_intersect<T: Real>(a: &OrientedBox<T>, b: &OrientedBox<T>) -> bool {
    let dx = a.center.x - b.center.x;
    let dy = a.center.y - b.center.y;
    let reach = a.radius() + b.radius();
    if dx * dx + dy * dy > reach * reach {
        return false;
    }
    let ca = box_corners(a);
    let cb = box_corners(b);
    let axes = [a.center.forward(), a.center.forward().rotate(T::FRAC_PI_2()), b.center.forward(), b.center.forward().rotate(T::FRAC_PI_2())];
    for axis in axes {
        let (alo, ahi) = project_interval(&ca, axis);
        let (blo, bhi) = project_interval(&cb, axis);
        if ahi < blo || bhi < alo {
            return false;
        }
    }
    true
}

/// Simple polygon with at least three distinct vertices; implicitly closed.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon<T> {
    vertices: Vec<Point2<T>>,
}

impl<T: Real> Polygon<T> {
    pub fn new(mut vertices: Vec<Point2<T>>) -> Result<Self, GeometryError> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        let mut distinct: Vec<Point2<T>> = Vec::new();
        for v in &vertices {
            if !distinct.contains(v) {
                distinct.push(*v);
            }
        }
        if distinct.len() < 3 {
            return Err(GeometryError::DegeneratePolygon(distinct.len()));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point2<T>] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2<T>, Point2<T>)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// True when no two non-adjacent edges touch.
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        let edges: Vec<_> = self.edges().collect();
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    // Adjacent edges may only share their common vertex.
                    let (a0, a1) = edges[i];
                    let (b0, b1) = edges[j];
                    let (shared, a_other, b_other) = if j == i + 1 { (a1, a0, b1) } else { (a0, a1, b0) };
                    let u = a_other - shared;
                    let v = b_other - shared;
                    if u.cross(v) == T::zero() && u.dot(v) > T::zero() {
                        return false;
                    }
                    continue;
                }
                if segments_touch(edges[i].0, edges[i].1, edges[j].0, edges[j].1) {
                    return false;
                }
            }
        }
        true
    }
}

fn orient<T: Real>(a: Point2<T>, b: Point2<T>, c: Point2<T>) -> T {
    (b - a).cross(c - a)
}

fn on_segment<T: Real>(a: Point2<T>, b: Point2<T>, p: Point2<T>) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test.
pub fn segments_touch<T: Real>(p1: Point2<T>, p2: Point2<T>, q1: Point2<T>, q2: Point2<T>) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    let z = T::zero();
    if ((d1 > z && d2 < z) || (d1 < z && d2 > z)) && ((d3 > z && d4 < z) || (d3 < z && d4 > z)) {
        return true;
    }
    (d1 == z && on_segment(q1, q2, p1))
        || (d2 == z && on_segment(q1, q2, p2))
        || (d3 == z && on_segment(p1, p2, q1))
        || (d4 == z && on_segment(p1, p2, q2))
}

/// Euclidean distance from `p` to the closed segment `a`–`b`.
pub fn point_segment_distance<T: Real>(p: Point2<T>, a: Point2<T>, b: Point2<T>) -> T {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == T::zero() {
        return p.dist(a);
    }
    let s = ((p - a).dot(ab) / len2).max(T::zero()).min(T::one());
    p.dist(a + ab.scale(s))
}

/// Even-odd containment; points within [`BOUNDARY_TOLERANCE`] of an edge are inside.
pub fn point_in_polygon<T: Real>(p: Point2<T>, poly: &Polygon<T>) -> bool {
    let tol = T::lit(BOUNDARY_TOLERANCE);
    let mut inside = false;
    for (a, b) in poly.edges() {
        if point_segment_distance(p, a, b) <= tol {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// True when `p` lies in any polygon of the union.
pub fn point_in_any<T: Real>(p: Point2<T>, polys: &[Polygon<T>]) -> bool {
    polys.iter().any(|poly| point_in_polygon(p, poly))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polyline<T> {
    points: Vec<Point2<T>>,
    cumulative: Vec<T>,
}

/// Closest-point query result against a [`Polyline`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolylineProjection<T> {
    /// Arclength of the foot point, in `[0, length]`.
    pub arclength: T,
    /// Signed distance to the foot point, positive left of travel.
    pub lateral: T,
    /// Foot point.
    pub foot: Point2<T>,
    /// The unclamped projection fell before the start or past the end.
    pub clamped: bool,
}

impl<T: Real> Polyline<T> {
    pub fn new(points: Vec<Point2<T>>) -> Result<Self, GeometryError> {
        if points.len() < 2 {
            return Err(GeometryError::ShortPolyline(points.len()));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(T::zero());
        for w in points.windows(2) {
            let last = *cumulative.last().expect("non-empty");
            cumulative.push(last + w[0].dist(w[1]));
        }
        Ok(Self { points, cumulative })
    }

    pub fn points(&self) -> &[Point2<T>] {
        &self.points
    }

    pub fn cumulative_arclength(&self) -> &[T] {
        &self.cumulative
    }

    pub fn length(&self) -> T {
        *self.cumulative.last().expect("non-empty")
    }

    /// Point at arclength `s`, clamped to the ends.
    pub fn point_at(&self, s: T) -> Point2<T> {
        let s = s.max(T::zero()).min(self.length());
        let i = self.cumulative.partition_point(|&c| c <= s).clamp(1, self.points.len() - 1);
        let (s0, s1) = (self.cumulative[i - 1], self.cumulative[i]);
        let (a, b) = (self.points[i - 1], self.points[i]);
        if s1 == s0 {
            return a;
        }
        a + (b - a).scale((s - s0) / (s1 - s0))
    }

    /// Closest point; ties resolve to the smallest arclength.
    pub fn project(&self, p: Point2<T>) -> PolylineProjection<T> {
        let last = self.points.len() - 2;
        let mut best: Option<(T, PolylineProjection<T>)> = None;
        for (i, w) in self.points.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let ab = b - a;
            let len2 = ab.dot(ab);
            let (raw, dir) = if len2 == T::zero() {
                (T::zero(), None)
            } else {
                ((p - a).dot(ab) / len2, Some(ab))
            };
            let s = raw.max(T::zero()).min(T::one());
            let foot = a + ab.scale(s);
            let dist = p.dist(foot);
            let clamped = (i == 0 && raw < T::zero()) || (i == last && raw > T::one());
            let side = match dir {
                Some(d) if d.cross(p - foot) < T::zero() => -T::one(),
                _ => T::one(),
            };
            let proj = PolylineProjection {
                arclength: self.cumulative[i] + (self.cumulative[i + 1] - self.cumulative[i]) * s,
                lateral: side * dist,
                foot,
                clamped,
            };
            match &best {
                Some((d, _)) if *d <= dist => {}
                _ => best = Some((dist, proj)),
            }
        }
        best.expect("at least one segment").1
    }
}

/// Arclength and signed lateral offset of `p` against `line`.
pub fn project_to_polyline<T: Real>(p: Point2<T>, line: &Polyline<T>) -> (T, T) {
    let r = line.project(p);
    (r.arclength, r.lateral)
}

//! Independent reference computations used by the integration tests. Nothing
//! here calls the routine it checks; shared inputs are plain data.
#![allow(dead_code)]

use proposal_scorer::camera::Camera;
use proposal_scorer::geometry::{OrientedBox, Point2, Polygon, Polyline};
use proposal_scorer::kernel::{DeformBlock, FeatureGrid, KernelConfig, KernelWeights, Linear, Mlp, Tensor};
use proposal_scorer::scene::{EgoStart, Mode, Scene, VehicleDims};
use proposal_scorer::simulator::{EgoKinState, Rollout};
use proposal_scorer::Pose2D;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- geometry

/// Coordinates of `p` in the box frame.
pub fn box_local(b: &OrientedBox<f64>, p: (f64, f64)) -> (f64, f64) {
    let (s, c) = b.center.heading.sin_cos();
    let (dx, dy) = (p.0 - b.center.x, p.1 - b.center.y);
    (c * dx + s * dy, -s * dx + c * dy)
}

pub fn in_box(b: &OrientedBox<f64>, p: (f64, f64), tol: f64) -> bool {
    let (u, w) = box_local(b, p);
    u.abs() <= b.length / 2.0 + tol && w.abs() <= b.width / 2.0 + tol
}

/// Corners by explicit rotation matrix, order FL, FR, RR, RL.
pub fn corners(b: &OrientedBox<f64>) -> [(f64, f64); 4] {
    let (s, c) = b.center.heading.sin_cos();
    let (hl, hw) = (b.length / 2.0, b.width / 2.0);
    [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)].map(|(u, w)| (b.center.x + c * u - s * w, b.center.y + s * u + c * w))
}

/// Samples an `n x n` lattice over each box (edges included) and tests the
/// samples against the other box.
pub fn sampled_intersect(a: &OrientedBox<f64>, b: &OrientedBox<f64>, n: usize) -> bool {
    let covers = |src: &OrientedBox<f64>, dst: &OrientedBox<f64>| {
        let (s, c) = src.center.heading.sin_cos();
        for i in 0..n {
            let u = -src.length / 2.0 + src.length * i as f64 / (n - 1) as f64;
            for j in 0..n {
                let w = -src.width / 2.0 + src.width * j as f64 / (n - 1) as f64;
                let p = (src.center.x + c * u - s * w, src.center.y + s * u + c * w);
                if in_box(dst, p, 1e-9) {
                    return true;
                }
            }
        }
        false
    };
    covers(a, b) || covers(b, a)
}

pub fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let l2 = abx * abx + aby * aby;
    let t = if l2 == 0.0 { 0.0 } else { (((p.0 - a.0) * abx + (p.1 - a.1) * aby) / l2).clamp(0.0, 1.0) };
    ((p.0 - a.0 - t * abx).powi(2) + (p.1 - a.1 - t * aby).powi(2)).sqrt()
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

pub fn segments_distance(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> f64 {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return 0.0;
    }
    seg_dist(a, c, d).min(seg_dist(b, c, d)).min(seg_dist(c, a, b)).min(seg_dist(d, a, b))
}

/// Smallest distance between the two boxes' boundaries.
pub fn boundary_gap(a: &OrientedBox<f64>, b: &OrientedBox<f64>) -> f64 {
    let (ca, cb) = (corners(a), corners(b));
    let mut best = f64::INFINITY;
    for i in 0..4 {
        for j in 0..4 {
            best = best.min(segments_distance(ca[i], ca[(i + 1) % 4], cb[j], cb[(j + 1) % 4]));
        }
    }
    best
}

/// Deepest penetration of any corner of one box into the other (negative when
/// no corner is inside).
pub fn corner_depth(a: &OrientedBox<f64>, b: &OrientedBox<f64>) -> f64 {
    let depth = |src: &OrientedBox<f64>, dst: &OrientedBox<f64>| {
        corners(src)
            .iter()
            .map(|&p| {
                let (u, w) = box_local(dst, p);
                (dst.length / 2.0 - u.abs()).min(dst.width / 2.0 - w.abs())
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    depth(a, b).max(depth(b, a))
}

pub fn random_box(r: &mut ChaCha8Rng, spread: f64) -> OrientedBox<f64> {
    OrientedBox::new(
        Pose2D::new(r.gen_range(-spread..spread), r.gen_range(-spread..spread), r.gen_range(-3.2..3.2)),
        r.gen_range(0.5..6.0),
        r.gen_range(0.5..3.0),
    )
    .unwrap()
}

/// Winding number of a closed vertex loop around `p`.
pub fn winding_number(p: (f64, f64), vs: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    for i in 0..vs.len() {
        let a = (vs[i].0 - p.0, vs[i].1 - p.1);
        let b = (vs[(i + 1) % vs.len()].0 - p.0, vs[(i + 1) % vs.len()].1 - p.1);
        total += (a.0 * b.1 - a.1 * b.0).atan2(a.0 * b.0 + a.1 * b.1);
    }
    total / std::f64::consts::TAU
}

pub fn boundary_distance(p: (f64, f64), vs: &[(f64, f64)]) -> f64 {
    (0..vs.len()).map(|i| seg_dist(p, vs[i], vs[(i + 1) % vs.len()])).fold(f64::INFINITY, f64::min)
}

/// Star-shaped, hence simple, polygon with 3 to 12 vertices.
pub fn random_star_polygon(r: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let n = r.gen_range(3..=12);
    let (cx, cy) = (r.gen_range(-10.0..10.0), r.gen_range(-10.0..10.0));
    let mut angles: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
    if angles.len() < 3 {
        angles = vec![0.0, 2.1, 4.2];
    }
    angles.iter().map(|&t| {
        let rad = r.gen_range(1.0..6.0);
        (cx + rad * t.cos(), cy + rad * t.sin())
    }).collect()
}

pub fn to_polygon(vs: &[(f64, f64)]) -> Polygon<f64> {
    Polygon::new(vs.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap()
}

/// Brute-force closest point over `samples` evenly spaced arclength samples.
/// Returns `(arclength, signed lateral, distance)`.
pub fn dense_projection(p: (f64, f64), pts: &[(f64, f64)], samples: usize) -> (f64, f64, f64) {
    let seg_len: Vec<f64> = pts.windows(2).map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt()).collect();
    let total: f64 = seg_len.iter().sum();
    let (mut best_s, mut best_d, mut best_side) = (0.0, f64::INFINITY, 1.0);
    let mut seg = 0;
    let mut start = 0.0;
    // Even samples plus every vertex, where the distance has kinks.
    let mut at: Vec<f64> = (0..=samples).map(|k| total * k as f64 / samples as f64).collect();
    at.extend(seg_len.iter().scan(0.0, |acc, l| {
        *acc += l;
        Some(*acc)
    }));
    at.sort_by(f64::total_cmp);
    for s in at {
        while seg + 1 < seg_len.len() && s > start + seg_len[seg] {
            start += seg_len[seg];
            seg += 1;
        }
        let f = if seg_len[seg] > 0.0 { ((s - start) / seg_len[seg]).min(1.0) } else { 0.0 };
        let (a, b) = (pts[seg], pts[seg + 1]);
        let q = (a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f);
        let d = ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
        if d < best_d {
            best_d = d;
            best_s = s;
            best_side = if (b.0 - a.0) * (p.1 - q.1) - (b.1 - a.1) * (p.0 - q.0) < 0.0 { -1.0 } else { 1.0 };
        }
    }
    (best_s, best_side * best_d, best_d)
}

pub fn random_polyline(r: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let n = r.gen_range(2..=6);
    let mut pts = vec![(r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0))];
    let mut heading: f64 = r.gen_range(-3.0..3.0);
    for _ in 1..n {
        heading += r.gen_range(-1.2..1.2);
        let len = r.gen_range(1.0..6.0);
        let last = *pts.last().unwrap();
        pts.push((last.0 + len * heading.cos(), last.1 + len * heading.sin()));
    }
    pts
}

pub fn to_polyline(pts: &[(f64, f64)]) -> Polyline<f64> {
    Polyline::new(pts.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap()
}

// --------------------------------------------------------------- simulator

/// Classic RK4 on the continuous rear-axle bicycle ODE with constant inputs.
/// State `[x, y, heading, v]`.
pub fn rk4_bicycle(s: [f64; 4], accel: f64, steer: f64, wheelbase: f64, dt: f64, steps: usize) -> [f64; 4] {
    let f = |s: [f64; 4]| [s[3] * s[2].cos(), s[3] * s[2].sin(), s[3] * steer.tan() / wheelbase, accel];
    let add = |a: [f64; 4], b: [f64; 4], k: f64| [a[0] + k * b[0], a[1] + k * b[1], a[2] + k * b[2], a[3] + k * b[3]];
    let mut s = s;
    for _ in 0..steps {
        let k1 = f(s);
        let k2 = f(add(s, k1, dt / 2.0));
        let k3 = f(add(s, k2, dt / 2.0));
        let k4 = f(add(s, k3, dt));
        for i in 0..4 {
            s[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    s
}

/// Large open road with the ego at the origin.
pub fn open_scene(mode: Mode, v0: f64) -> Scene {
    let rect = |x0: f64, x1: f64, y0: f64, y1: f64| {
        Polygon::new(vec![Point2::new(x0, y0), Point2::new(x1, y0), Point2::new(x1, y1), Point2::new(x0, y1)]).unwrap()
    };
    Scene {
        mode,
        ego: EgoStart { pose: Pose2D::new(0.0, 0.0, 0.0), velocity: v0, acceleration: 0.0 },
        ego_dims: VehicleDims::default(),
        agents: vec![],
        drivable_area: vec![rect(-200.0, 200.0, -200.0, 200.0)],
        route: proposal_scorer::scene::Route {
            centerline: Polyline::new(vec![Point2::new(-200.0, 0.0), Point2::new(200.0, 0.0)]).unwrap(),
            half_width: 1.75,
            progress_upper_bound: Some(30.0),
        },
        cameras: vec![],
        expert: None,
    }
}

/// A reference produced by integrating the bicycle model itself from the
/// scene start under piecewise-constant controls (changing every second).
/// Returns the 8 planning poses; the last is the exact pose at 4 s.
pub fn feasible_reference(r: &mut ChaCha8Rng, v0: f64, wheelbase: f64) -> Vec<Pose2D> {
    let controls: Vec<(f64, f64)> = (0..4).map(|_| (r.gen_range(-1.0..1.0), r.gen_range(-0.04..0.04))).collect();
    let mut s = [0.0, 0.0, 0.0, v0];
    (0..8)
        .map(|half| {
            let (a, d) = controls[half / 2];
            s = rk4_bicycle(s, a, d, wheelbase, 1e-3, 500);
            Pose2D::new(s[0], s[1], s[2])
        })
        .collect()
}

/// Rollout with poses given as a function of time, sampled every `dt`.
pub fn rollout_from(dt: f64, ticks: usize, f: impl Fn(f64) -> (f64, f64, f64)) -> Rollout {
    Rollout {
        dt,
        states: (0..=ticks)
            .map(|i| {
                let (x, y, h) = f(i as f64 * dt);
                EgoKinState { pose: Pose2D::new(x, y, h), velocity: 0.0, acceleration: 0.0, steering: 0.0 }
            })
            .collect(),
    }
}

/// Position of a constant-speed vehicle whose heading follows `psi`,
/// integrated with composite Simpson's rule.
pub fn integrate_heading(v: f64, psi: &dyn Fn(f64) -> f64, t: f64) -> (f64, f64) {
    let n = 2000;
    let h = t / n as f64;
    let (mut x, mut y) = (0.0, 0.0);
    for i in 0..=n {
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let a = psi(i as f64 * h);
        x += w * a.cos();
        y += w * a.sin();
    }
    (v * x * h / 3.0, v * y * h / 3.0)
}

pub const COMFORT_NAMES: [&str; 7] = ["lat_acc", "lon_acc", "lon_dec", "abs_jerk", "lon_jerk", "yaw_rate", "yaw_acc"];

/// Motion whose analytic value of comfort quantity `which` peaks at
/// `factor x threshold` while every other quantity stays well inside its
/// limit. Sampled at 10 Hz.
pub fn comfort_probe(which: usize, threshold: f64, factor: f64) -> Rollout {
    let target = threshold * factor;
    let dt = 0.1;
    match which {
        // circle: a_lat = v w with w fixed
        0 => {
            let w = 0.5;
            let v = target / w;
            let r = v / w;
            rollout_from(dt, 40, |t| (r * (w * t).sin(), r * (1.0 - (w * t).cos()), w * t))
        }
        1 => rollout_from(dt, 40, |t| (5.0 * t + 0.5 * target * t * t, 0.0, 0.0)),
        2 => rollout_from(dt, 40, |t| (20.0 * t - 0.5 * target * t * t, 0.0, 0.0)),
        // lateral acceleration ramping at `target` m/s^3: heading quadratic at fixed speed
        3 => {
            let v = 10.0;
            let psi = move |t: f64| 0.5 * target / v * t * t;
            rollout_from(dt, 5, |t| {
                let (x, y) = integrate_heading(v, &psi, t);
                (x, y, psi(t))
            })
        }
        // longitudinal acceleration a(t) = j (t - 0.4)
        4 => rollout_from(dt, 8, |t| {
            let u = t - 0.4;
            (5.0 * t + target * (u * u * u + 0.064) / 6.0 - target * 0.16 * t / 2.0, 0.0, 0.0)
        }),
        5 => {
            let v = 2.0;
            let r = v / target;
            rollout_from(dt, 40, |t| (r * (target * t).sin(), r * (1.0 - (target * t).cos()), target * t))
        }
        6 => {
            let v = 1.0;
            let psi = move |t: f64| 0.5 * target * (t - 0.4) * (t - 0.4);
            rollout_from(dt, 8, |t| {
                let (x, y) = integrate_heading(v, &psi, t);
                (x, y, psi(t))
            })
        }
        _ => panic!("no comfort quantity {which}"),
    }
}

// ------------------------------------------------------------------ kernel

/// Bilinear interpolation written from the four-neighbor formula. Outside the
/// texel rectangle the result is zero.
pub fn bilinear_oracle(t: &Tensor<f64>, x: f64, y: f64) -> Vec<f64> {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return vec![0.0; c];
    }
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |ch: usize, yy: usize, xx: usize| if xx < w && yy < h { t.data()[(ch * h + yy) * w + xx] } else { 0.0 };
    (0..c)
        .map(|ch| {
            (1.0 - fx) * (1.0 - fy) * at(ch, y0, x0)
                + fx * (1.0 - fy) * at(ch, y0, x0 + 1)
                + (1.0 - fx) * fy * at(ch, y0 + 1, x0)
                + fx * fy * at(ch, y0 + 1, x0 + 1)
        })
        .collect()
}

fn linear_oracle(l: &Linear<f64>, x: &[f64]) -> Vec<f64> {
    let (out, inp) = (l.weight.shape()[0], l.weight.shape()[1]);
    (0..out).map(|o| l.bias.data()[o] + (0..inp).map(|i| l.weight.data()[o * inp + i] * x[i]).sum::<f64>()).collect()
}

fn mlp_oracle(m: &Mlp<f64>, x: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = linear_oracle(&m.l0, x).into_iter().map(|v| if v > 0.0 { v } else { 0.0 }).collect();
    linear_oracle(&m.l1, &h)
}

/// Per-head softmax of the attention logits, ordered head, key.
pub fn softmax_oracle(q: &[f64], block: &DeformBlock<f64>) -> Vec<f64> {
    let heads = block.w_out.shape()[0];
    let logits = linear_oracle(&block.attn, q);
    let keys = logits.len() / heads;
    let mut out = Vec::with_capacity(logits.len());
    for i in 0..heads {
        let row = &logits[i * keys..(i + 1) * keys];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|l| (l - m).exp()).sum();
        out.extend(row.iter().map(|l| (l - m).exp() / z));
    }
    out
}

/// Per-head sums `sum_j A_ij x(p + dp_ij)` over a set of reference points,
/// each sampled through `sample`.
fn gather_oracle(q: &[f64], points: &[(f64, f64)], block: &DeformBlock<f64>, c: usize, sample: &dyn Fn(f64, f64) -> Vec<f64>) -> Vec<Vec<f64>> {
    let heads = block.w_out.shape()[0];
    let a = softmax_oracle(q, block);
    let keys = a.len() / heads;
    let off = linear_oracle(&block.offset, q);
    let mut acc = vec![vec![0.0; c]; heads];
    for &(px, py) in points {
        for i in 0..heads {
            for j in 0..keys {
                let k = i * keys + j;
                let s = sample(px + off[2 * k], py + off[2 * k + 1]);
                for ch in 0..c {
                    acc[i][ch] += a[k] * s[ch];
                }
            }
        }
    }
    acc
}

/// `sum_i W_i (W'_i v_i)` with explicit index arithmetic.
fn heads_oracle(v: &[Vec<f64>], block: &DeformBlock<f64>) -> Vec<f64> {
    let (heads, c, dh) = (block.w_out.shape()[0], block.w_out.shape()[1], block.w_out.shape()[2]);
    let mut out = vec![0.0; c];
    for i in 0..heads {
        let mut proj = vec![0.0; dh];
        for d in 0..dh {
            for ch in 0..c {
                proj[d] += block.w_val.data()[(i * dh + d) * c + ch] * v[i][ch];
            }
        }
        for o in 0..c {
            for d in 0..dh {
                out[o] += block.w_out.data()[(i * c + o) * dh + d] * proj[d];
            }
        }
    }
    out
}

pub fn deform_oracle(q: &[f64], p: (f64, f64), block: &DeformBlock<f64>, c: usize, sample: &dyn Fn(f64, f64) -> Vec<f64>) -> Vec<f64> {
    heads_oracle(&gather_oracle(q, &[p], block, c, sample), block)
}

/// Self-attention recomputed with a dense value grid.
pub fn self_attn_oracle(q: &Tensor<f64>, p: &Tensor<f64>, w: &KernelWeights<f64>) -> Vec<f64> {
    let cfg = &w.config;
    let (n, t, c) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let [x0, x1, y0, y1] = cfg.bev_extent;
    let res = cfg.bev_resolution;
    let (gw, gh) = (((x1 - x0) / res).round() as usize, ((y1 - y0) / res).round() as usize);
    let mut sum = vec![0.0; c * gh * gw];
    let mut count = vec![0usize; gh * gw];
    for i in 0..n * t {
        let (ax, ay) = (p.data()[i * 3], p.data()[i * 3 + 1]);
        let (fx, fy) = (((ax - x0) / res).floor(), ((ay - y0) / res).floor());
        if fx < 0.0 || fy < 0.0 || fx >= gw as f64 || fy >= gh as f64 {
            continue;
        }
        let cell = fy as usize * gw + fx as usize;
        count[cell] += 1;
        for ch in 0..c {
            sum[ch * gh * gw + cell] += q.data()[i * c + ch];
        }
    }
    for cell in 0..gh * gw {
        if count[cell] > 0 {
            for ch in 0..c {
                sum[ch * gh * gw + cell] /= count[cell] as f64;
            }
        }
    }
    let grid = Tensor::from_vec(&[c, gh, gw], sum).unwrap();
    let sample = |x: f64, y: f64| bilinear_oracle(&grid, x, y);
    let mut out = q.data().to_vec();
    for i in 0..n * t {
        let (ax, ay) = (p.data()[i * 3], p.data()[i * 3 + 1]);
        let lattice = ((ax - x0) / res - 0.5, (ay - y0) / res - 0.5);
        let d = deform_oracle(&q.data()[i * c..(i + 1) * c], lattice, &w.sa, c, &sample);
        for ch in 0..c {
            out[i * c + ch] += d[ch];
        }
    }
    out
}

/// Pinhole projection through the 3x4 matrix `K [R | t]` in homogeneous
/// coordinates. Returns `(u, v, hit)`.
pub fn project_oracle(cam: &Camera<f64>, x: [f64; 3]) -> (f64, f64, bool) {
    let mut p = [[0.0; 4]; 3];
    for r in 0..3 {
        for col in 0..4 {
            p[r][col] = (0..3)
                .map(|k| cam.intrinsics[r][k] * if col < 3 { cam.rotation[k][col] } else { cam.translation[k] })
                .sum();
        }
    }
    let h = [x[0], x[1], x[2], 1.0];
    let img: Vec<f64> = (0..3).map(|r| (0..4).map(|c| p[r][c] * h[c]).sum()).collect();
    let depth: f64 = (0..3).map(|k| cam.rotation[2][k] * x[k]).sum::<f64>() + cam.translation[2];
    let (u, v) = (img[0] / img[2], img[1] / img[2]);
    let hit = depth > 0.0 && u >= 0.0 && v >= 0.0 && u < cam.image_size.0 as f64 && v < cam.image_size.1 as f64;
    (u, v, hit)
}

/// Footprint corners of a rear-axle pose, by hand.
pub fn footprint_corners(x: f64, y: f64, h: f64, dims: &VehicleDims) -> [(f64, f64); 4] {
    let (s, c) = h.sin_cos();
    let (cx, cy) = (x + c * dims.wheelbase / 2.0, y + s * dims.wheelbase / 2.0);
    let (hl, hw) = (dims.length / 2.0, dims.width / 2.0);
    [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)].map(|(u, w)| (cx + c * u - s * w, cy + s * u + c * w))
}

pub fn pillar_heights(z: [f64; 2], n_ref: usize) -> Vec<f64> {
    if n_ref == 1 {
        return vec![(z[0] + z[1]) / 2.0];
    }
    (0..n_ref).map(|k| z[0] + (z[1] - z[0]) * k as f64 / (n_ref - 1) as f64).collect()
}

pub fn sca_oracle(q: &Tensor<f64>, p: &Tensor<f64>, f: &FeatureGrid<f64>, dims: &VehicleDims, w: &KernelWeights<f64>) -> Vec<f64> {
    let cfg = &w.config;
    let (n, t, c) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let heads = w.sca.w_out.shape()[0];
    let mut out = q.data().to_vec();
    for i in 0..n * t {
        let a = &p.data()[i * 3..i * 3 + 3];
        let qi = &q.data()[i * c..(i + 1) * c];
        let mut total = vec![vec![0.0; c]; heads];
        let mut hit_views = 0;
        for (view, cam) in f.views.iter().zip(&f.cameras) {
            let mut pts = Vec::new();
            for (cx, cy) in footprint_corners(a[0], a[1], a[2], dims) {
                for z in pillar_heights(cfg.z_range, cfg.n_ref) {
                    let (u, v, hit) = project_oracle(cam, [cx, cy, z]);
                    if hit {
                        pts.push((u / cfg.feature_stride, v / cfg.feature_stride));
                    }
                }
            }
            if pts.is_empty() {
                continue;
            }
            hit_views += 1;
            let g = gather_oracle(qi, &pts, &w.sca, c, &|x, y| bilinear_oracle(view, x, y));
            for h in 0..heads {
                for ch in 0..c {
                    total[h][ch] += g[h][ch];
                }
            }
        }
        if hit_views > 0 {
            let d = heads_oracle(&total, &w.sca);
            for ch in 0..c {
                out[i * c + ch] += d[ch] / hit_views as f64;
            }
        }
    }
    out
}

pub fn score_oracle(q: &Tensor<f64>, w: &KernelWeights<f64>) -> Vec<f64> {
    let (n, t, c) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    (0..n)
        .map(|i| {
            let pooled: Vec<f64> = (0..c)
                .map(|ch| (0..t).map(|s| q.data()[(i * t + s) * c + ch]).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let logit = mlp_oracle(&w.score_mlp, &pooled)[0];
            1.0 / (1.0 + (-logit).exp())
        })
        .collect()
}

/// A random small kernel problem: config, weights, queries and anchors.
pub struct KernelInstance {
    pub weights: KernelWeights<f64>,
    pub queries: Tensor<f64>,
    pub anchors: Tensor<f64>,
}

pub fn kernel_instance(r: &mut ChaCha8Rng) -> KernelInstance {
    let c = [4usize, 8][r.gen_range(0..2)];
    let heads = [1usize, 2, 4][r.gen_range(0..3)];
    let cfg = KernelConfig {
        n: r.gen_range(1..=4),
        t: r.gen_range(1..=3),
        k: 1,
        c,
        hidden: r.gen_range(2..=8),
        heads,
        keys: r.gen_range(1..=3),
        n_ref: r.gen_range(1..=4),
        feature_stride: 50.0,
        bev_extent: [-8.0, 24.0, -8.0, 8.0],
        ..KernelConfig::default()
    };
    let mut weights = KernelWeights::seeded(&cfg, r.gen()).unwrap();
    // Spread sampling offsets over several cells.
    let scale = r.gen_range(1.0..4.0);
    for v in weights.sa.offset.weight.data_mut().iter_mut().chain(weights.sca.offset.weight.data_mut()) {
        *v *= scale;
    }
    let nt = cfg.n * cfg.t;
    let queries = Tensor::from_vec(&[cfg.n, cfg.t, c], (0..nt * c).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
    let anchors = Tensor::from_vec(
        &[cfg.n, cfg.t, 3],
        (0..nt)
            .flat_map(|_| {
                // Half-meter snapping makes shared cells likely.
                let x = (r.gen_range(-2.0..20.0f64) * 2.0).round() / 2.0;
                let y = (r.gen_range(-5.0..5.0f64) * 2.0).round() / 2.0;
                [x, y, r.gen_range(-0.6..0.6)]
            })
            .collect(),
    )
    .unwrap();
    KernelInstance { weights, queries, anchors }
}

pub fn random_features(r: &mut ChaCha8Rng, cameras: Vec<Camera<f64>>, c: usize, stride: f64) -> FeatureGrid<f64> {
    let views = cameras
        .iter()
        .map(|cam| {
            let w = (cam.image_size.0 as f64 / stride).ceil() as usize;
            let h = (cam.image_size.1 as f64 / stride).ceil() as usize;
            Tensor::from_vec(&[c, h, w], (0..c * h * w).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
        })
        .collect();
    FeatureGrid::new(views, cameras).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ----------------------------------------------------------------- scoring

/// PDMS from exact integers: `nc2 / 2 * dac * (5 ep + 500 ttc + 200 comf) / 1200`
/// where EP is `ep / 100`.
pub fn pdms_rational(nc2: u64, dac: u64, ep: u64, ttc: u64, comf: u64) -> f64 {
    let num = nc2 * dac * (5 * ep + 500 * ttc + 200 * comf);
    let den = 2 * 1200;
    num as f64 / den as f64
}

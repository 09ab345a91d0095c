use std::collections::HashMap;

use super::weights::DeformBlock;
use super::{shape_err, KernelConfig, KernelError, KernelWeights, Tensor};
use crate::camera::Camera;
use crate::geometry::{box_corners, rear_axle_footprint, Point2, Pose2};
use crate::scene::VehicleDims;
use crate::Real;

/// A continuous `C`-channel field sampled by bilinear interpolation.
pub trait FeatureField<T: Real> {
    fn channels(&self) -> usize;
    /// Adds `weight * x(p)` to `acc`. Points outside the field add nothing.
    fn accumulate(&self, p: Point2<T>, weight: T, acc: &mut [T]);
}

/// Neighbor lattice indices and weights, or `None` outside `[0, w-1] x [0, h-1]`.
fn bilinear_taps<T: Real>(p: Point2<T>, w: usize, h: usize) -> Option<[((usize, usize), T); 4]> {
    let (wm, hm) = (T::lit((w - 1) as f64), T::lit((h - 1) as f64));
    if !(p.x >= T::zero() && p.x <= wm && p.y >= T::zero() && p.y <= hm) {
        return None;
    }
    let x0 = p.x.floor().to_usize().unwrap_or(0).min(w - 1);
    let y0 = p.y.floor().to_usize().unwrap_or(0).min(h - 1);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let fx = p.x - T::lit(x0 as f64);
    let fy = p.y - T::lit(y0 as f64);
    let (gx, gy) = (T::one() - fx, T::one() - fy);
    Some([((x0, y0), gx * gy), ((x1, y0), fx * gy), ((x0, y1), gx * fy), ((x1, y1), fx * fy)])
}

/// A `C x H x W` feature map indexed as `(x = column, y = row)`.
impl<T: Real> FeatureField<T> for Tensor<T> {
    fn channels(&self) -> usize {
        self.shape()[0]
    }

    fn accumulate(&self, p: Point2<T>, weight: T, acc: &mut [T]) {
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let Some(taps) = bilinear_taps(p, w, h) else { return };
        let data = self.data();
        for (ch, a) in acc.iter_mut().enumerate().take(c) {
            let plane = &data[ch * h * w..(ch + 1) * h * w];
            let v = taps.iter().fold(T::zero(), |s, &((x, y), k)| s + k * plane[y * w + x]);
            *a = *a + weight * v;
        }
    }
}

/// Bilinear sample of a `C x H x W` map; zero outside the texel rectangle.
pub fn bilinear_sample<T: Real>(view: &Tensor<T>, p: Point2<T>) -> Vec<T> {
    let mut out = vec![T::zero(); view.channels()];
    view.accumulate(p, T::one(), &mut out);
    out
}

/// Queries scattered onto a sparse BEV lattice, one lattice node per cell
/// center. Several queries in a cell are averaged; empty cells read as zero.
#[derive(Clone, Debug)]
pub struct BevValueGrid<T> {
    c: usize,
    res: T,
    x_min: T,
    y_min: T,
    width: usize,
    height: usize,
    cells: HashMap<(usize, usize), usize>,
    values: Vec<T>,
}

impl<T: Real> BevValueGrid<T> {
    /// `q` is `[N, T, C]` and `anchors` `[N, T, 3]`.
    pub fn build(q: &Tensor<T>, anchors: &Tensor<T>, cfg: &KernelConfig) -> Self {
        let c = q.shape()[2];
        let [x0, x1, y0, y1] = cfg.bev_extent;
        let mut grid = Self {
            c,
            res: T::lit(cfg.bev_resolution),
            x_min: T::lit(x0),
            y_min: T::lit(y0),
            width: ((x1 - x0) / cfg.bev_resolution).round() as usize,
            height: ((y1 - y0) / cfg.bev_resolution).round() as usize,
            cells: HashMap::new(),
            values: Vec::new(),
        };
        let mut counts: Vec<usize> = Vec::new();
        for i in 0..q.shape()[0] * q.shape()[1] {
            let a = anchors.block(i, 3);
            let cx = ((a[0] - grid.x_min) / grid.res).floor();
            let cy = ((a[1] - grid.y_min) / grid.res).floor();
            let (Some(ix), Some(iy)) = (cx.to_usize(), cy.to_usize()) else { continue };
            if cx < T::zero() || cy < T::zero() || ix >= grid.width || iy >= grid.height {
                continue;
            }
            let next = counts.len();
            let slot = *grid.cells.entry((ix, iy)).or_insert(next);
            if slot == next {
                counts.push(0);
                grid.values.extend(std::iter::repeat(T::zero()).take(c));
            }
            counts[slot] += 1;
            for (v, &x) in grid.values[slot * c..(slot + 1) * c].iter_mut().zip(q.block(i, c)) {
                *v = *v + x;
            }
        }
        for (slot, &n) in counts.iter().enumerate() {
            let n = T::lit(n as f64);
            for v in &mut grid.values[slot * c..(slot + 1) * c] {
                *v = *v / n;
            }
        }
        grid
    }

    /// Continuous lattice coordinates of a BEV point.
    pub fn to_lattice(&self, x: T, y: T) -> Point2<T> {
        Point2::new((x - self.x_min) / self.res - T::half(), (y - self.y_min) / self.res - T::half())
    }

    pub fn cell(&self, ix: usize, iy: usize) -> Option<&[T]> {
        self.cells.get(&(ix, iy)).map(|&s| &self.values[s * self.c..(s + 1) * self.c])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn occupied(&self) -> usize {
        self.cells.len()
    }
}

impl<T: Real> FeatureField<T> for BevValueGrid<T> {
    fn channels(&self) -> usize {
        self.c
    }

    fn accumulate(&self, p: Point2<T>, weight: T, acc: &mut [T]) {
        let Some(taps) = bilinear_taps(p, self.width, self.height) else { return };
        for ((x, y), k) in taps {
            if let Some(v) = self.cell(x, y) {
                let k = k * weight;
                for (a, &v) in acc.iter_mut().zip(v) {
                    *a = *a + k * v;
                }
            }
        }
    }
}

/// Offsets and normalized attention weights predicted from one query.
pub(crate) struct DeformPlan<T> {
    heads: usize,
    keys: usize,
    offsets: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> DeformPlan<T> {
    pub(crate) fn new(q: &[T], block: &DeformBlock<T>) -> Self {
        let (heads, keys) = (block.heads(), block.keys());
        let offsets = block.offset.apply(q);
        let mut weights = block.attn.apply(q);
        for h in weights.chunks_mut(keys) {
            let m = h.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in h.iter_mut() {
                *v = (*v - m).exp();
                z = z + *v;
            }
            for v in h.iter_mut() {
                *v = *v / z;
            }
        }
        Self { heads, keys, offsets, weights }
    }

    /// Adds `sum_j A_ij x(p + dp_ij)` for every head `i` into `acc`
    /// (`heads x C`).
    pub(crate) fn gather(&self, p: Point2<T>, field: &impl FeatureField<T>, acc: &mut [T]) {
        let c = field.channels();
        for i in 0..self.heads {
            let head_acc = &mut acc[i * c..(i + 1) * c];
            for j in 0..self.keys {
                let o = (i * self.keys + j) * 2;
                let at = Point2::new(p.x + self.offsets[o], p.y + self.offsets[o + 1]);
                field.accumulate(at, self.weights[i * self.keys + j], head_acc);
            }
        }
    }
}

/// Softmax-normalized attention weights of `q`, ordered head, key.
pub fn attention_weights<T: Real>(q: &[T], block: &DeformBlock<T>) -> Vec<T> {
    DeformPlan::new(q, block).weights
}

/// `sum_i W_i W'_i s_i` for per-head gathered samples `s` (`heads x C`).
pub(crate) fn project_heads<T: Real>(gathered: &[T], block: &DeformBlock<T>) -> Vec<T> {
    let (heads, c) = (block.heads(), block.channels());
    let dh = c / heads;
    let mut out = vec![T::zero(); c];
    let mut v = vec![T::zero(); dh];
    for i in 0..heads {
        let s = &gathered[i * c..(i + 1) * c];
        for (d, vd) in v.iter_mut().enumerate() {
            let row = block.w_val.block(i * dh + d, c);
            *vd = row.iter().zip(s).fold(T::zero(), |a, (&w, &x)| a + w * x);
        }
        for (o, out_o) in out.iter_mut().enumerate() {
            let row = block.w_out.block(i * c + o, dh);
            *out_o = row.iter().zip(&v).fold(*out_o, |a, (&w, &x)| a + w * x);
        }
    }
    out
}

/// Multi-head deformable attention of query `q` around point `p` of `field`.
pub fn deform_attn<T: Real>(q: &[T], p: Point2<T>, field: &impl FeatureField<T>, block: &DeformBlock<T>) -> Vec<T> {
    let plan = DeformPlan::new(q, block);
    let mut gathered = vec![T::zero(); block.heads() * field.channels()];
    plan.gather(p, field, &mut gathered);
    project_heads(&gathered, block)
}

fn check_queries<T: Real>(q: &Tensor<T>, p: &Tensor<T>, c: usize) -> Result<(usize, usize), KernelError> {
    let s = q.shape();
    if s.len() != 3 || s[2] != c {
        return Err(shape_err("queries", &[s.first().copied().unwrap_or(0), s.get(1).copied().unwrap_or(0), c], s));
    }
    p.expect_shape("proposals", &[s[0], s[1], 3])?;
    Ok((s[0], s[1]))
}

/// Proposal-anchored deformable self-attention with a residual connection.
/// Values come from the queries scattered onto a [`BevValueGrid`] at their
/// own proposal positions.
pub fn self_attn_step<T: Real>(q: &Tensor<T>, p: &Tensor<T>, w: &KernelWeights<T>) -> Result<Tensor<T>, KernelError> {
    let c = w.config.c;
    let (n, t) = check_queries(q, p, c)?;
    let grid = BevValueGrid::build(q, p, &w.config);
    let mut out = q.clone();
    for i in 0..n * t {
        let a = p.block(i, 3);
        let d = deform_attn(q.block(i, c), grid.to_lattice(a[0], a[1]), &grid, &w.sa);
        for (o, v) in out.block_mut(i, c).iter_mut().zip(d) {
            *o = *o + v;
        }
    }
    Ok(out)
}

/// Image pixels of `n_ref` pillar points above `corner`, heights evenly
/// spaced over `z_range`, each with its hit flag.
pub fn project_pillar_points<T: Real>(corner: Point2<T>, cam: &Camera<T>, z_range: [T; 2], n_ref: usize) -> Vec<(Point2<T>, bool)> {
    (0..n_ref)
        .map(|z| {
            let height = if n_ref == 1 {
                (z_range[0] + z_range[1]) * T::half()
            } else {
                z_range[0] + (z_range[1] - z_range[0]) * T::lit(z as f64 / (n_ref - 1) as f64)
            };
            let pr = cam.project([corner.x, corner.y, height]);
            (Point2::new(pr.u, pr.v), pr.hit)
        })
        .collect()
}

/// Per-view `C x H x W` feature maps with the camera each was taken from.
#[derive(Clone, Debug)]
pub struct FeatureGrid<T> {
    pub views: Vec<Tensor<T>>,
    pub cameras: Vec<Camera<T>>,
}

impl<T: Real> FeatureGrid<T> {
    pub fn new(views: Vec<Tensor<T>>, cameras: Vec<Camera<T>>) -> Result<Self, KernelError> {
        if views.len() != cameras.len() || views.is_empty() {
            return Err(shape_err("feature views vs cameras", &[cameras.len()], &[views.len()]));
        }
        let c = views[0].shape().first().copied().unwrap_or(0);
        for v in &views {
            let s = v.shape();
            if s.len() != 3 || s[0] != c || s[1] < 2 || s[2] < 2 {
                return Err(shape_err("feature view", &[c, 2, 2], s));
            }
        }
        Ok(Self { views, cameras })
    }

    pub fn channels(&self) -> usize {
        self.views[0].shape()[0]
    }
}

/// Pillar cross-attention from each proposal pose's footprint corners into
/// the camera feature maps. Contributions are summed over corners and pillar
/// points that hit a view and averaged over the hit views; queries with no
/// hit view keep only the residual.
pub fn spatial_cross_attn<T: Real>(
    q: &Tensor<T>,
    p: &Tensor<T>,
    features: &FeatureGrid<T>,
    dims: &VehicleDims,
    w: &KernelWeights<T>,
) -> Result<Tensor<T>, KernelError> {
    let cfg = &w.config;
    let c = cfg.c;
    let (n, t) = check_queries(q, p, c)?;
    if features.channels() != c {
        return Err(shape_err("feature channels", &[c], &[features.channels()]));
    }
    let z_range = cfg.z_range.map(T::lit);
    let stride = T::lit(cfg.feature_stride);
    let (len, wid, wb) = (T::lit(dims.length), T::lit(dims.width), T::lit(dims.wheelbase));
    let mut out = q.clone();
    let mut gathered = vec![T::zero(); w.sca.heads() * c];
    for i in 0..n * t {
        let a = p.block(i, 3);
        let corners = box_corners(&rear_axle_footprint(Pose2::new(a[0], a[1], a[2]), len, wid, wb));
        let plan = DeformPlan::new(q.block(i, c), &w.sca);
        gathered.iter_mut().for_each(|g| *g = T::zero());
        let mut hit_views = 0usize;
        for (view, cam) in features.views.iter().zip(&features.cameras) {
            let mut hit = false;
            for &corner in &corners {
                for (px, ok) in project_pillar_points(corner, cam, z_range, cfg.n_ref) {
                    if ok {
                        hit = true;
                        plan.gather(Point2::new(px.x / stride, px.y / stride), view, &mut gathered);
                    }
                }
            }
            hit_views += hit as usize;
        }
        if hit_views > 0 {
            let scale = T::one() / T::lit(hit_views as f64);
            for (o, v) in out.block_mut(i, c).iter_mut().zip(project_heads(&gathered, &w.sca)) {
                *o = *o + v * scale;
            }
        }
    }
    Ok(out)
}

/// Dense BEV baseline: one query per cell of a `side x side` grid over the
/// BEV extent, each cross-attending from a single pillar at its cell center.
/// `queries` is `[side * side, C]`, row-major with x fastest.
pub fn dense_grid_sca<T: Real>(side: usize, queries: &Tensor<T>, features: &FeatureGrid<T>, w: &KernelWeights<T>) -> Result<Tensor<T>, KernelError> {
    let cfg = &w.config;
    let c = cfg.c;
    queries.expect_shape("dense grid queries", &[side * side, c])?;
    let [x0, x1, y0, y1] = cfg.bev_extent.map(T::lit);
    let side_t = T::lit(side as f64);
    let (dx, dy) = ((x1 - x0) / side_t, (y1 - y0) / side_t);
    let z_range = cfg.z_range.map(T::lit);
    let stride = T::lit(cfg.feature_stride);
    let mut out = queries.clone();
    let mut gathered = vec![T::zero(); w.sca.heads() * c];
    for iy in 0..side {
        for ix in 0..side {
            let i = iy * side + ix;
            let center = Point2::new(x0 + dx * (T::lit(ix as f64) + T::half()), y0 + dy * (T::lit(iy as f64) + T::half()));
            let plan = DeformPlan::new(queries.block(i, c), &w.sca);
            gathered.iter_mut().for_each(|g| *g = T::zero());
            let mut hit_views = 0usize;
            for (view, cam) in features.views.iter().zip(&features.cameras) {
                let mut hit = false;
                for (px, ok) in project_pillar_points(center, cam, z_range, cfg.n_ref) {
                    if ok {
                        hit = true;
                        plan.gather(Point2::new(px.x / stride, px.y / stride), view, &mut gathered);
                    }
                }
                hit_views += hit as usize;
            }
            if hit_views > 0 {
                let scale = T::one() / T::lit(hit_views as f64);
                for (o, v) in out.block_mut(i, c).iter_mut().zip(project_heads(&gathered, &w.sca)) {
                    *o = *o + v * scale;
                }
            }
        }
    }
    Ok(out)
}

use super::attention::{self_attn_step, spatial_cross_attn, FeatureGrid};
use super::{shape_err, sigmoid, KernelError, KernelWeights, Tensor};
use crate::num::wrap_angle;
use crate::scene::{Scene, VehicleDims};
use crate::Real;

/// `[speed, longitudinal acceleration]` of the ego at the scene start.
pub fn ego_status<T: Real>(scene: &Scene) -> Vec<T> {
    vec![T::lit(scene.ego.velocity), T::lit(scene.ego.acceleration)]
}

/// Positional embedding plus the encoded ego status broadcast over `N x T`.
pub fn init_queries<T: Real>(status: &[T], w: &KernelWeights<T>) -> Result<Tensor<T>, KernelError> {
    let cfg = &w.config;
    if status.len() != cfg.status_dim {
        return Err(shape_err("ego status", &[cfg.status_dim], &[status.len()]));
    }
    let e = w.ego_encoder.apply(status);
    let mut q = w.positional_embedding.clone();
    for row in q.data_mut().chunks_mut(cfg.c) {
        for (v, &d) in row.iter_mut().zip(&e) {
            *v = *v + d;
        }
    }
    Ok(q)
}

/// Absolute `(x, y, heading)` per query; headings wrapped.
pub fn predict_proposals<T: Real>(q: &Tensor<T>, w: &KernelWeights<T>) -> Result<Tensor<T>, KernelError> {
    let c = w.config.c;
    let s = q.shape();
    if s.len() != 3 || s[2] != c {
        return Err(shape_err("queries", &[w.config.n, w.config.t, c], s));
    }
    let mut data = Vec::with_capacity(s[0] * s[1] * 3);
    for i in 0..s[0] * s[1] {
        let o = w.proposal_mlp.apply(q.block(i, c));
        data.extend_from_slice(&[o[0], o[1], wrap_angle(o[2])]);
    }
    Tensor::from_vec(&[s[0], s[1], 3], data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProformerOutput<T> {
    /// `P_0 .. P_{K-1}`, each `[N, T, 3]`.
    pub proposals: Vec<Tensor<T>>,
    /// Final queries `[N, T, C]`.
    pub queries: Tensor<T>,
}

/// One predict, self-attend, cross-attend, update cycle. Returns the
/// proposals predicted from `q` and the next queries.
pub fn proformer_step<T: Real>(
    q: &Tensor<T>,
    features: &FeatureGrid<T>,
    dims: &VehicleDims,
    w: &KernelWeights<T>,
) -> Result<(Tensor<T>, Tensor<T>), KernelError> {
    let c = w.config.c;
    let p = predict_proposals(q, w)?;
    let sa = self_attn_step(q, &p, w)?;
    let sca = spatial_cross_attn(&sa, &p, features, dims, w)?;
    let mut next = sca.clone();
    for i in 0..q.len() / c {
        w.query_update.apply_into(sca.block(i, c), next.block_mut(i, c));
    }
    Ok((p, next))
}

/// Runs `K` predict, self-attend, cross-attend, update cycles with shared
/// weights.
pub fn run_proformer<T: Real>(
    status: &[T],
    features: &FeatureGrid<T>,
    dims: &VehicleDims,
    w: &KernelWeights<T>,
) -> Result<ProformerOutput<T>, KernelError> {
    w.config.validate()?;
    let mut q = init_queries(status, w)?;
    let mut proposals = Vec::with_capacity(w.config.k);
    for _ in 0..w.config.k {
        let (p, next) = proformer_step(&q, features, dims, w)?;
        proposals.push(p);
        q = next;
    }
    Ok(ProformerOutput { proposals, queries: q })
}

/// Per-proposal score in `(0, 1)`: max over time per channel, MLP, logistic.
pub fn score_head<T: Real>(q: &Tensor<T>, w: &KernelWeights<T>) -> Result<Vec<T>, KernelError> {
    let c = w.config.c;
    let s = q.shape();
    if s.len() != 3 || s[2] != c || s[1] == 0 {
        return Err(shape_err("queries", &[w.config.n, w.config.t, c], s));
    }
    let (n, t) = (s[0], s[1]);
    let mut pooled = vec![T::zero(); c];
    Ok((0..n)
        .map(|i| {
            pooled.copy_from_slice(q.block(i * t, c));
            for step in 1..t {
                for (m, &v) in pooled.iter_mut().zip(q.block(i * t + step, c)) {
                    *m = m.max(v);
                }
            }
            sigmoid(w.score_mlp.apply(&pooled)[0])
        })
        .collect())
}

/// Index of the highest score; the smallest index wins ties and NaN never wins.
pub fn select_best<T: Real>(scores: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

//! Forward-only reference of the iterative proposal encoder: query
//! initialization, proposal-anchored deformable self-attention, pillar
//! cross-attention over camera feature maps, proposal regression and scoring.

mod attention;
mod model;
mod weights;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Real;

pub use attention::{
    attention_weights, bilinear_sample, deform_attn, dense_grid_sca, project_pillar_points, self_attn_step, spatial_cross_attn, BevValueGrid, FeatureField, FeatureGrid,
};
pub use model::{ego_status, init_queries, predict_proposals, proformer_step, run_proformer, score_head, select_best, ProformerOutput};
pub use weights::{DeformBlock, KernelWeights, Linear, Mlp, WEIGHTS_MAGIC};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    Shape { what: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("invalid kernel config: {0}")]
    Config(String),
    #[error("weights file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn shape_err(what: impl Into<String>, expected: &[usize], got: &[usize]) -> KernelError {
    KernelError::Shape { what: what.into(), expected: expected.to_vec(), got: got.to_vec() }
}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, KernelError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err("tensor data", &[n], &[data.len()]));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Contiguous block `i` of the given size.
    pub fn block(&self, i: usize, size: usize) -> &[T] {
        &self.data[i * size..(i + 1) * size]
    }

    pub fn block_mut(&mut self, i: usize, size: usize) -> &mut [T] {
        &mut self.data[i * size..(i + 1) * size]
    }

    pub fn expect_shape(&self, what: &str, expected: &[usize]) -> Result<(), KernelError> {
        if self.shape == expected {
            Ok(())
        } else {
            Err(shape_err(what, expected, &self.shape))
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|x| U::lit(x.as_f64())).collect() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    /// Proposals.
    pub n: usize,
    /// Poses per proposal.
    pub t: usize,
    /// Refinement iterations.
    pub k: usize,
    /// Channels.
    pub c: usize,
    /// MLP hidden width.
    pub hidden: usize,
    pub heads: usize,
    pub keys: usize,
    /// Reference points per pillar.
    pub n_ref: usize,
    pub z_range: [f64; 2],
    pub status_dim: usize,
    /// Image pixels per feature-map cell.
    pub feature_stride: f64,
    /// Self-attention value grid cell size in meters.
    pub bev_resolution: f64,
    /// `[x_min, x_max, y_min, y_max]` of the value grid in meters.
    pub bev_extent: [f64; 4],
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            n: 64,
            t: 8,
            k: 4,
            c: 256,
            hidden: 256,
            heads: 8,
            keys: 4,
            n_ref: 4,
            z_range: [-1.0, 3.0],
            status_dim: 2,
            feature_stride: 16.0,
            bev_resolution: 1.0,
            bev_extent: [-32.0, 96.0, -64.0, 64.0],
        }
    }
}

impl KernelConfig {
    pub fn head_dim(&self) -> usize {
        self.c / self.heads
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let bad = |m: &str| Err(KernelError::Config(m.to_string()));
        if [self.n, self.t, self.k, self.c, self.hidden, self.heads, self.keys, self.n_ref, self.status_dim].contains(&0) {
            return bad("sizes must be positive");
        }
        if self.c % self.heads != 0 {
            return bad("channels must divide evenly into heads");
        }
        let [z0, z1] = self.z_range;
        if !(z0.is_finite() && z1.is_finite() && z0 <= z1) {
            return bad("z_range must be ordered");
        }
        if !(self.feature_stride > 0.0 && self.bev_resolution > 0.0) {
            return bad("feature_stride and bev_resolution must be positive");
        }
        let [x0, x1, y0, y1] = self.bev_extent;
        if !(x0 < x1 && y0 < y1) {
            return bad("bev_extent must be ordered");
        }
        Ok(())
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_checks() {
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.block(1, 2), &[3.0, 4.0]);
        assert_eq!(t.cast::<f64>().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn config_validation() {
        assert!(KernelConfig::default().validate().is_ok());
        assert!(KernelConfig { heads: 3, ..KernelConfig::default() }.validate().is_err());
        assert!(KernelConfig { z_range: [2.0, 1.0], ..KernelConfig::default() }.validate().is_err());
    }
}

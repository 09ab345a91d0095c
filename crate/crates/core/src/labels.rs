//! Targets for the auxiliary mapping and prediction heads, evaluated at the
//! planning timestamps of each proposal's rollout.

use serde::Serialize;
use thiserror::Error;

use crate::geometry::box_corners;
use crate::metrics::{footprint_on_road, footprint_on_route, Attribution, ScoreCard};
use crate::proposals::ProposalSet;
use crate::scene::{agent_state_at, Scene, PLANNING_DT};
use crate::simulator::Rollout;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("expected {expected} rollouts or scorecards, got {got}")]
    Missing { expected: usize, got: usize },
    #[error("rollout {proposal} ends before planning step {step}")]
    RolloutTooShort { proposal: usize, step: usize },
    #[error("attribution refers to unknown agent {0}")]
    UnknownAgent(u64),
}

/// `N x T` pairs of `[on_road, on_route]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingLabels {
    pub n: usize,
    pub t: usize,
    values: Vec<[bool; 2]>,
}

impl MappingLabels {
    pub fn get(&self, n: usize, t: usize) -> [bool; 2] {
        self.values[n * self.t + t]
    }

    pub fn all(&self) -> bool {
        self.values.iter().all(|v| v[0] && v[1])
    }

    /// Row-major `N x T x 2` as 0/1 values.
    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| v.map(|b| if b { 1.0 } else { 0.0 })).collect()
    }
}

pub type Corners = [[f64; 2]; 4];

/// Agent boxes for two slots per step: 0 is the first at-fault collision
/// partner, 1 the first agent under the TTC threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionTargets {
    pub n: usize,
    pub t: usize,
    corners: Vec<Corners>,
    validity: Vec<bool>,
}

impl PredictionTargets {
    fn index(&self, n: usize, t: usize, slot: usize) -> usize {
        (n * self.t + t) * 2 + slot
    }

    pub fn corners(&self, n: usize, t: usize, slot: usize) -> &Corners {
        &self.corners[self.index(n, t, slot)]
    }

    pub fn valid(&self, n: usize, t: usize, slot: usize) -> bool {
        self.validity[self.index(n, t, slot)]
    }

    pub fn any_valid(&self) -> bool {
        self.validity.iter().any(|&v| v)
    }

    /// Row-major `N x T x 2 x 4 x 2`.
    pub fn corners_flat(&self) -> Vec<f64> {
        self.corners.iter().flat_map(|c| c.iter().flat_map(|p| *p)).collect()
    }

    /// Row-major `N x T x 2`.
    pub fn validity_flat(&self) -> Vec<bool> {
        self.validity.clone()
    }
}

pub fn mapping_labels(proposals: &ProposalSet, scene: &Scene, rollouts: &[Rollout]) -> Result<MappingLabels, LabelError> {
    if rollouts.len() != proposals.len() {
        return Err(LabelError::Missing { expected: proposals.len(), got: rollouts.len() });
    }
    let t_len = proposals.horizon();
    let mut values = Vec::with_capacity(proposals.len() * t_len);
    for (n, r) in rollouts.iter().enumerate() {
        for step in 0..t_len {
            let tick = r
                .tick_at((step + 1) as f64 * PLANNING_DT)
                .ok_or(LabelError::RolloutTooShort { proposal: n, step })?;
            let pose = r.states[tick].pose;
            values.push([footprint_on_road(scene, pose), footprint_on_route(scene, pose)]);
        }
    }
    Ok(MappingLabels { n: proposals.len(), t: t_len, values })
}

pub fn prediction_targets(proposals: &ProposalSet, scene: &Scene, cards: &[ScoreCard]) -> Result<PredictionTargets, LabelError> {
    if cards.len() != proposals.len() {
        return Err(LabelError::Missing { expected: proposals.len(), got: cards.len() });
    }
    let t_len = proposals.horizon();
    let mut out = PredictionTargets {
        n: proposals.len(),
        t: t_len,
        corners: vec![[[0.0; 2]; 4]; proposals.len() * t_len * 2],
        validity: vec![false; proposals.len() * t_len * 2],
    };
    for (n, card) in cards.iter().enumerate() {
        let slots: [Option<Attribution>; 2] = [card.first_at_fault, card.first_ttc];
        for (slot, attr) in slots.iter().enumerate() {
            let Some(attr) = attr else { continue };
            let track = scene.agent(attr.agent_id).ok_or(LabelError::UnknownAgent(attr.agent_id))?;
            for step in 0..t_len {
                let t = (step + 1) as f64 * PLANNING_DT;
                if let Some(state) = agent_state_at(track, t).filter(|s| s.valid) {
                    let i = out.index(n, step, slot);
                    out.corners[i] = box_corners(&track.footprint(state.pose)).map(|c| [c.x, c.y]);
                    out.validity[i] = true;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct ProposalLabels {
    pub proposal: usize,
    pub on_road: Vec<bool>,
    pub on_route: Vec<bool>,
    /// `T x 2 x 4 x 2`.
    pub corners: Vec<[Corners; 2]>,
    /// `T x 2`.
    pub validity: Vec<[bool; 2]>,
}

/// Per-proposal export, ordered by proposal index.
pub fn export_labels(map: &MappingLabels, pred: &PredictionTargets) -> Vec<ProposalLabels> {
    (0..map.n)
        .map(|n| ProposalLabels {
            proposal: n,
            on_road: (0..map.t).map(|t| map.get(n, t)[0]).collect(),
            on_route: (0..map.t).map(|t| map.get(n, t)[1]).collect(),
            corners: (0..pred.t).map(|t| [*pred.corners(n, t, 0), *pred.corners(n, t, 1)]).collect(),
            validity: (0..pred.t).map(|t| [pred.valid(n, t, 0), pred.valid(n, t, 1)]).collect(),
        })
        .collect()
}

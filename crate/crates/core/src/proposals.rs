//! Candidate plans: `N` proposals of `T` rear-axle poses at the planning step.
//!
//! On disk a proposal set is a JSON array of `N` arrays of `T` `[x, y, heading]`
//! triples.

use std::path::Path;

use thiserror::Error;

use crate::geometry::Pose2;
use crate::Pose2D;

#[derive(Debug, Error)]
pub enum ProposalError {
    #[error("proposal set is empty")]
    Empty,
    #[error("proposal {index} has {got} poses, expected {expected}")]
    Ragged { index: usize, got: usize, expected: usize },
    #[error("proposal {0} has no poses")]
    NoPoses(usize),
    #[error("proposal {proposal} pose {step} is not finite")]
    NonFinite { proposal: usize, step: usize },
    #[error("{path}: {message}")]
    Load { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProposalSet {
    proposals: Vec<Vec<Pose2D>>,
}

impl ProposalSet {
    /// Validates an `N x T` set; headings are wrapped into `(-pi, pi]`.
    pub fn new(proposals: Vec<Vec<Pose2D>>) -> Result<Self, ProposalError> {
        let first = proposals.first().ok_or(ProposalError::Empty)?;
        let t = first.len();
        if t == 0 {
            return Err(ProposalError::NoPoses(0));
        }
        for (index, p) in proposals.iter().enumerate() {
            if p.len() != t {
                return Err(ProposalError::Ragged { index, got: p.len(), expected: t });
            }
            if let Some(step) = p.iter().position(|q| !(q.x.is_finite() && q.y.is_finite() && q.heading.is_finite())) {
                return Err(ProposalError::NonFinite { proposal: index, step });
            }
        }
        let proposals = proposals.into_iter().map(|p| p.into_iter().map(|q| Pose2::new(q.x, q.y, q.heading)).collect()).collect();
        Ok(Self { proposals })
    }

    pub fn single(proposal: Vec<Pose2D>) -> Result<Self, ProposalError> {
        Self::new(vec![proposal])
    }

    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }

    /// Poses per proposal.
    pub fn horizon(&self) -> usize {
        self.proposals[0].len()
    }

    pub fn get(&self, n: usize) -> &[Pose2D] {
        &self.proposals[n]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[Pose2D]> {
        self.proposals.iter().map(Vec::as_slice)
    }

    pub fn from_json_str(s: &str) -> Result<Self, ProposalError> {
        let raw: Vec<Vec<[f64; 3]>> =
            serde_json::from_str(s).map_err(|e| ProposalError::Load { path: "<string>".into(), message: e.to_string() })?;
        Self::new(raw.into_iter().map(|p| p.into_iter().map(|[x, y, h]| Pose2 { x, y, heading: h }).collect()).collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProposalError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProposalError::Load { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json_str(&text).map_err(|e| match e {
            ProposalError::Load { message, .. } => ProposalError::Load { path: path.display().to_string(), message },
            other => ProposalError::Load { path: path.display().to_string(), message: other.to_string() },
        })
    }

    pub fn to_json_string(&self) -> String {
        let raw: Vec<Vec<[f64; 3]>> = self.proposals.iter().map(|p| p.iter().map(|q| [q.x, q.y, q.heading]).collect()).collect();
        serde_json::to_string(&raw).expect("proposals serialize")
    }
}

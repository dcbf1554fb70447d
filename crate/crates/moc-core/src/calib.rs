//! Affine calibration from normalized image coordinates to the robot
//! workspace, fitted by least squares on point correspondences.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Action;

/// One `(image, workspace)` point pair.
pub type Correspondence = ((f64, f64), (f64, f64));

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("need at least 3 correspondences, got {0}")]
    TooFewPairs(usize),
    #[error("image points are collinear or otherwise degenerate")]
    Degenerate,
}

/// `workspace = A * image + b`, with `A` invertible.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
}

/// An action mapped into workspace units. The rotation passes through
/// unchanged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorkspaceAction {
    pub u: f64,
    pub v: f64,
    pub theta: f64,
}

/// Inverts a symmetric 3x3 via the adjugate. Returns None when the
/// determinant vanishes (collinear inputs).
fn invert_sym3(m: [[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv_det = 1.0 / det;
    let mut inv = [[0.0; 3]; 3];
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    inv[1][0] = inv[0][1];
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    inv[2][0] = inv[0][2];
    inv[2][1] = inv[1][2];
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    Some(inv)
}

impl CalibrationMap {
    /// Least-squares affine fit minimizing `sum ||A*p + b - q||^2` over
    /// `(image, workspace)` pairs, via the 3x3 normal equations. Exact on
    /// three non-degenerate pairs.
    pub fn fit(pairs: &[Correspondence]) -> Result<Self, CalibError> {
        if pairs.len() < 3 {
            return Err(CalibError::TooFewPairs(pairs.len()));
        }
        // Normal matrix of the design rows [px, py, 1], shared by both
        // output coordinates.
        let mut m = [[0.0f64; 3]; 3];
        let mut rhs_u = [0.0f64; 3];
        let mut rhs_v = [0.0f64; 3];
        for &((px, py), (qu, qv)) in pairs {
            let row = [px, py, 1.0];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += row[i] * row[j];
                }
                rhs_u[i] += qu * row[i];
                rhs_v[i] += qv * row[i];
            }
        }
        let inv = invert_sym3(m).ok_or(CalibError::Degenerate)?;
        let solve = |rhs: [f64; 3]| {
            let mut out = [0.0f64; 3];
            for i in 0..3 {
                for j in 0..3 {
                    out[i] += inv[i][j] * rhs[j];
                }
            }
            out
        };
        let u = solve(rhs_u);
        let v = solve(rhs_v);
        let map = Self {
            a: [[u[0], u[1]], [v[0], v[1]]],
            b: [u[2], v[2]],
        };
        let det_a = map.a[0][0] * map.a[1][1] - map.a[0][1] * map.a[1][0];
        if det_a.abs() <= 1e-12 {
            return Err(CalibError::Degenerate);
        }
        Ok(map)
    }

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        (
            self.a[0][0] * p.0 + self.a[0][1] * p.1 + self.b[0],
            self.a[1][0] * p.0 + self.a[1][1] * p.1 + self.b[1],
        )
    }

    pub fn apply_action(&self, action: &Action) -> WorkspaceAction {
        let (u, v) = self.apply((action.x, action.y));
        WorkspaceAction {
            u,
            v,
            theta: action.theta,
        }
    }

    /// Sum of squared residuals of this map over `pairs`.
    pub fn residual(&self, pairs: &[Correspondence]) -> f64 {
        pairs
            .iter()
            .map(|&(p, q)| {
                let (u, v) = self.apply(p);
                (u - q.0).powi(2) + (v - q.1).powi(2)
            })
            .sum()
    }
}

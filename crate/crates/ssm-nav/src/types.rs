//! Domain primitives shared by the environment, the scene memory, and the
//! planner.

use serde::{Deserialize, Serialize};

/// Identifier of a place. The environment assigns these; the scene memory
/// reuses them as node names once a place has been visited.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// A located place: identifier plus metric coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub id: NodeId,
    pub coords: [f64; 3],
}

pub fn euclid(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Cell of the discretized panorama: heading band x elevation band.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct ViewIndex {
    pub heading: u8,
    pub elevation: u8,
}

/// Direction feature `(cos theta, sin theta, cos phi, sin phi)`.
///
/// The stored raw vector is in the environment frame. A zero raw vector is
/// reserved for synthetic stop candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationFeature {
    pub raw: [f64; 4],
    pub tiling: usize,
}

impl OrientationFeature {
    pub fn from_angles(theta: f64, phi: f64, tiling: usize) -> Self {
        Self {
            raw: [theta.cos(), theta.sin(), phi.cos(), phi.sin()],
            tiling,
        }
    }

    /// All-zero feature used by synthetic stop candidates.
    pub fn zero(tiling: usize) -> Self {
        Self {
            raw: [0.0; 4],
            tiling,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.raw.iter().all(|v| *v == 0.0)
    }

    /// The raw 4-vector repeated `tiling` times.
    pub fn tiled(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(4 * self.tiling);
        for _ in 0..self.tiling {
            out.extend_from_slice(&self.raw);
        }
        out
    }

    pub fn dim(&self) -> usize {
        4 * self.tiling
    }

    /// Unit-circle checks on both angle pairs (or an all-zero stop feature).
    pub fn validate(&self) -> bool {
        if self.is_zero() {
            return true;
        }
        let h = self.raw[0] * self.raw[0] + self.raw[1] * self.raw[1];
        let e = self.raw[2] * self.raw[2] + self.raw[3] * self.raw[3];
        (h - 1.0).abs() <= 1e-9 && (e - 1.0).abs() <= 1e-9
    }
}

/// An observed-but-unvisited navigable viewpoint hanging off a visited node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubNode {
    pub parent: NodeId,
    pub view: ViewIndex,
    pub target_coords: [f64; 3],
    pub visual: Vec<f64>,
    pub orientation: OrientationFeature,
    pub is_stop: bool,
}

impl SubNode {
    /// Deterministic ordering key: view cell, then target coordinates.
    pub fn order_key(&self) -> (ViewIndex, [u64; 3]) {
        let bits = |f: f64| {
            let b = f.to_bits();
            // Flip for total order on finite floats (negative values sort first).
            if b >> 63 == 1 {
                !b
            } else {
                b | (1 << 63)
            }
        };
        (
            self.view,
            [
                bits(self.target_coords[0]),
                bits(self.target_coords[1]),
                bits(self.target_coords[2]),
            ],
        )
    }
}

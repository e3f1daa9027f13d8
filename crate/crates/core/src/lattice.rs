//! Periodic lattice geometry: Chebyshev neighborhoods and A/B/C tripartitions.
//!
//! Sites are indexed `0..n_sites` (row-major for the 2-D torus). All
//! distances are Chebyshev under periodic wraparound, so a radius-`r`
//! neighborhood is the square window of side `2r+1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lattice shape. Boundaries are always periodic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "topology", rename_all = "kebab-case")]
pub enum LatticeSpec {
    Ring1d { len: usize },
    Torus2d { height: usize, width: usize },
}

impl LatticeSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LatticeSpec::Ring1d { len } => {
                if len < 3 {
                    return Err(Error::Config(format!("ring length {len} < 3")));
                }
            }
            LatticeSpec::Torus2d { height, width } => {
                if height < 3 || width < 3 {
                    return Err(Error::Config(format!(
                        "torus extents {height}x{width} must both be >= 3"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_sites(&self) -> usize {
        match *self {
            LatticeSpec::Ring1d { len } => len,
            LatticeSpec::Torus2d { height, width } => height * width,
        }
    }

    /// Largest Chebyshev distance between any two sites.
    pub fn diameter(&self) -> usize {
        match *self {
            LatticeSpec::Ring1d { len } => len / 2,
            LatticeSpec::Torus2d { height, width } => (height / 2).max(width / 2),
        }
    }

    /// Nearest-neighbour adjacency used by the graph Laplacian
    /// (2 neighbours on the ring, 4 on the torus).
    pub fn neighbors(&self, site: usize) -> Vec<usize> {
        match *self {
            LatticeSpec::Ring1d { len } => {
                vec![(site + len - 1) % len, (site + 1) % len]
            }
            LatticeSpec::Torus2d { height, width } => {
                let (row, col) = (site / width, site % width);
                vec![
                    ((row + height - 1) % height) * width + col,
                    ((row + 1) % height) * width + col,
                    row * width + (col + width - 1) % width,
                    row * width + (col + 1) % width,
                ]
            }
        }
    }

    pub fn degree(&self) -> usize {
        match self {
            LatticeSpec::Ring1d { .. } => 2,
            LatticeSpec::Torus2d { .. } => 4,
        }
    }

    /// Shift `site` by the displacement that carries site 0 to `offset`.
    pub fn translate(&self, site: usize, offset: usize) -> usize {
        match *self {
            LatticeSpec::Ring1d { len } => (site + offset) % len,
            LatticeSpec::Torus2d { height, width } => {
                let (sr, sc) = (site / width, site % width);
                let (or, oc) = (offset / width, offset % width);
                ((sr + or) % height) * width + (sc + oc) % width
            }
        }
    }

    fn check_sites(&self, sites: &[usize]) -> Result<()> {
        let n = self.n_sites();
        for &s in sites {
            if s >= n {
                return Err(Error::InvalidInput(format!(
                    "site index {s} out of range for lattice with {n} sites"
                )));
            }
        }
        Ok(())
    }
}

/// Positions within distance `r` of `center` along one periodic axis.
fn axis_window(center: usize, r: usize, extent: usize) -> Vec<usize> {
    if 2 * r + 1 >= extent {
        (0..extent).collect()
    } else {
        (0..=2 * r).map(|d| (center + extent - r + d) % extent).collect()
    }
}

/// All sites within Chebyshev distance `r` of any center (centers included),
/// under periodic boundary. Output is sorted and duplicate-free.
pub fn neighborhood(spec: &LatticeSpec, centers: &[usize], r: usize) -> Result<Vec<usize>> {
    spec.check_sites(centers)?;
    let n = spec.n_sites();
    let mut hit = vec![false; n];
    match *spec {
        LatticeSpec::Ring1d { len } => {
            for &c in centers {
                for p in axis_window(c, r, len) {
                    hit[p] = true;
                }
            }
        }
        LatticeSpec::Torus2d { height, width } => {
            for &c in centers {
                for rr in axis_window(c / width, r, height) {
                    for &cc in &axis_window(c % width, r, width) {
                        hit[rr * width + cc] = true;
                    }
                }
            }
        }
    }
    Ok((0..n).filter(|&i| hit[i]).collect())
}

/// Target patch A, buffer annulus B of Chebyshev radius `r`, remainder C.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tripartition {
    pub a_sites: Vec<usize>,
    pub b_sites: Vec<usize>,
    pub c_sites: Vec<usize>,
    pub radius: usize,
}

impl Tripartition {
    pub fn n_total(&self) -> usize {
        self.a_sites.len() + self.b_sites.len() + self.c_sites.len()
    }
}

/// Partition the lattice into `A`, `B = ball(A, r) \ A`, `C = rest`.
pub fn tripartition(spec: &LatticeSpec, a_sites: &[usize], r: usize) -> Result<Tripartition> {
    if a_sites.is_empty() {
        return Err(Error::InvalidInput("tripartition needs a nonempty A".into()));
    }
    spec.check_sites(a_sites)?;
    let mut a: Vec<usize> = a_sites.to_vec();
    a.sort_unstable();
    a.dedup();
    let ball = neighborhood(spec, &a, r)?;
    let in_a = |s: usize| a.binary_search(&s).is_ok();
    let b: Vec<usize> = ball.iter().copied().filter(|&s| !in_a(s)).collect();
    let in_ball = |s: usize| ball.binary_search(&s).is_ok();
    let c: Vec<usize> = (0..spec.n_sites()).filter(|&s| !in_ball(s)).collect();
    Ok(Tripartition { a_sites: a, b_sites: b, c_sites: c, radius: r })
}

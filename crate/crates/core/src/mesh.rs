//! Temporal meshes on `[0, T]`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Strictly increasing node set `0 = t_0 < t_1 < ... < t_N = T`.
///
/// Elements are indexed `0..N` here; element `n` is `(t_n, t_{n+1})` with
/// size `k_n = t_{n+1} - t_n`. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalMesh {
    nodes: Vec<f64>,
}

impl TemporalMesh {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::invalid("mesh needs at least two nodes"));
        }
        if nodes[0] != 0.0 {
            return Err(Error::invalid("first mesh node must be exactly 0"));
        }
        if !nodes.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::invalid("mesh nodes must be strictly increasing"));
        }
        Ok(TemporalMesh { nodes })
    }

    /// Uniform mesh with `n` elements, nodes `t_j = j T / n`.
    pub fn uniform(t_end: f64, n: usize) -> Result<Self> {
        if !(t_end > 0.0) {
            return Err(Error::invalid("horizon T must be positive"));
        }
        if n == 0 {
            return Err(Error::invalid("element count must be positive"));
        }
        let nodes = (0..=n).map(|j| j as f64 * t_end / n as f64).collect();
        TemporalMesh::new(nodes)
    }

    /// `n_inner` nodes drawn i.i.d. uniformly on `(0, T)`, sorted, merged
    /// when closer than `T * 1e-12`, with `0` and `T` appended. The seed
    /// fully determines the mesh (ChaCha8 generator).
    pub fn random(t_end: f64, n_inner: usize, seed: u64) -> Result<Self> {
        if !(t_end > 0.0) {
            return Err(Error::invalid("horizon T must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inner: Vec<f64> = (0..n_inner).map(|_| rng.random::<f64>() * t_end).collect();
        inner.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let tol = t_end * 1e-12;
        let mut nodes = vec![0.0];
        for t in inner {
            if t - nodes.last().unwrap() > tol && t_end - t > tol {
                nodes.push(t);
            }
        }
        nodes.push(t_end);
        TemporalMesh::new(nodes)
    }

    /// Bisects over-long elements until the backward ratio `k_n / k_{n+1}`
    /// is at most `sigma_max` everywhere. Original nodes are kept.
    pub fn refine_to_ratio(&self, sigma_max: f64) -> Result<Self> {
        if !(sigma_max >= 1.0) {
            return Err(Error::invalid("sigma_max must be at least 1"));
        }
        let mut nodes = self.nodes.clone();
        loop {
            let mut split = None;
            for i in 0..nodes.len() - 2 {
                let k0 = nodes[i + 1] - nodes[i];
                let k1 = nodes[i + 2] - nodes[i + 1];
                if k0 / k1 > sigma_max {
                    split = Some(i);
                    break;
                }
            }
            match split {
                // halving the long element halves the violating ratio
                Some(i) => nodes.insert(i + 1, 0.5 * (nodes[i] + nodes[i + 1])),
                None => break,
            }
        }
        TemporalMesh::new(nodes)
    }

    /// Backward successive element ratio `sigma = max_n k_n / k_{n+1}`,
    /// defined as 1 for a single-element mesh.
    pub fn backward_ratio(&self) -> f64 {
        let s = self.sizes();
        s.windows(2).map(|w| w[0] / w[1]).fold(1.0, f64::max)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn num_elements(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Element `n` as `(t_n, t_{n+1})`, 0-based.
    pub fn element(&self, n: usize) -> (f64, f64) {
        (self.nodes[n], self.nodes[n + 1])
    }

    pub fn size(&self, n: usize) -> f64 {
        self.nodes[n + 1] - self.nodes[n]
    }

    pub fn sizes(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// CSV with a single column `t`, one node per row, 17 significant digits.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "t")?;
        for t in &self.nodes {
            writeln!(w, "{}", crate::io::fmt_g17(*t))?;
        }
        Ok(())
    }
}

//! 4-connected grid graph over the patch grid, plus the row-major
//! flatten/unflatten pair that maps a score map to a node vector.

use crate::error::{Result, ScmError};
use crate::linalg::DenseMatrix;
use crate::maps::ScoreMap;
use crate::scalar::Real;

/// Node `i = r * width + c`; edges join horizontally and vertically adjacent
/// cells. Neighbour lists are kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGraph {
    height: usize,
    width: usize,
    neighbors: Vec<Vec<usize>>,
}

impl PatchGraph {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_nodes(&self) -> usize {
        self.height * self.width
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Dense `D - A`.
    pub fn laplacian<T: Real>(&self) -> DenseMatrix<T> {
        let n = self.num_nodes();
        let mut m = DenseMatrix::zeros(n, n);
        for (i, nb) in self.neighbors.iter().enumerate() {
            m[(i, i)] = T::from_f64(nb.len() as f64);
            for &j in nb {
                m[(i, j)] = T::from_f64(-1.0);
            }
        }
        m
    }

    /// Number of connected components, by breadth-first search.
    pub fn component_count(&self) -> usize {
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        let mut count = 0;
        let mut queue = std::collections::VecDeque::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for &v in &self.neighbors[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        count
    }
}

pub fn build_grid_graph(height: usize, width: usize) -> Result<PatchGraph> {
    if height == 0 || width == 0 {
        return Err(ScmError::Argument(format!(
            "grid dimensions must be positive, got {height}x{width}"
        )));
    }
    let mut neighbors = vec![Vec::with_capacity(4); height * width];
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            let nb = &mut neighbors[i];
            if r > 0 {
                nb.push(i - width);
            }
            if c > 0 {
                nb.push(i - 1);
            }
            if c + 1 < width {
                nb.push(i + 1);
            }
            if r + 1 < height {
                nb.push(i + width);
            }
        }
    }
    Ok(PatchGraph {
        height,
        width,
        neighbors,
    })
}

pub fn flatten<T: Real>(m: &ScoreMap<T>) -> Vec<T> {
    m.as_slice().to_vec()
}

pub fn unflatten<T: Real>(v: Vec<T>, height: usize, width: usize) -> Result<ScoreMap<T>> {
    ScoreMap::new(height, width, v)
}

//! Plane-to-node distribution model for a distributed cyclic reduction.

use crate::{BenchError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ParallelPlan {
    pub planes: usize,
    pub nodes: usize,
    /// `planes_per_node[r][q]`: planes node `q` still holds at level `r`.
    pub planes_per_node: Vec<Vec<usize>>,
    /// Surviving (1-based) plane indices at each level.
    pub surviving: Vec<Vec<usize>>,
    /// Level at which every node holds exactly one plane.
    pub c_level: usize,
    /// Neighbour exchanges between different nodes at each level.
    pub messages: Vec<usize>,
}

impl ParallelPlan {
    pub fn levels(&self) -> usize {
        self.surviving.len()
    }

    pub fn owner(&self, plane: usize) -> usize {
        (plane - 1) / (self.planes / self.nodes)
    }

    pub fn idle_nodes(&self, level: usize) -> usize {
        self.planes_per_node[level].iter().filter(|&&c| c == 0).count()
    }

    /// Communication volume model for rank `k`, see [`comm_volume`].
    pub fn volume(&self, k: usize) -> f64 {
        comm_volume(self.planes, self.nodes, k)
    }
}

/// Split `n` planes into contiguous blocks over `p` nodes and follow the
/// surviving planes through every elimination level. Planes at odd 1-based
/// positions of the current level are eliminated.
pub fn plane_assignment(n: usize, p: usize) -> Result<ParallelPlan> {
    if !n.is_power_of_two() || !p.is_power_of_two() {
        return Err(BenchError::Invalid(format!("planes ({n}) and nodes ({p}) must be powers of two")));
    }
    if p > n {
        return Err(BenchError::Invalid(format!("more nodes ({p}) than planes ({n})")));
    }
    let block = n / p;
    let mut surviving = vec![(1..=n).collect::<Vec<_>>()];
    while surviving.last().unwrap().len() > 1 {
        let next = surviving.last().unwrap().iter().skip(1).step_by(2).copied().collect();
        surviving.push(next);
    }
    let planes_per_node = surviving
        .iter()
        .map(|s| {
            let mut c = vec![0; p];
            for &i in s {
                c[(i - 1) / block] += 1;
            }
            c
        })
        .collect();
    let messages =
        surviving.iter().map(|s| s.windows(2).filter(|w| (w[0] - 1) / block != (w[1] - 1) / block).count()).collect();
    Ok(ParallelPlan {
        planes: n,
        nodes: p,
        planes_per_node,
        surviving,
        c_level: block.trailing_zeros() as usize,
        messages,
    })
}

/// `k p n^2 log2(n) (log2(n/p) + 1)`: the asymptotic communication volume
/// with all constants set to one. A model, not a measurement.
pub fn comm_volume(n: usize, p: usize, k: usize) -> f64 {
    let (n, p, k) = (n as f64, p as f64, k as f64);
    k * p * n * n * n.log2() * ((n / p).log2() + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_planes_four_nodes() {
        let plan = plane_assignment(16, 4).unwrap();
        assert_eq!(plan.planes_per_node[0], vec![4; 4]);
        assert_eq!(plan.c_level, 2);
        assert_eq!(plan.planes_per_node[2], vec![1; 4]);
        assert_eq!(plan.idle_nodes(3), 2);
        assert_eq!(plan.idle_nodes(4), 3);
        assert_eq!(plan.levels(), 5);
    }

    #[test]
    fn schedule_for_32_planes() {
        let plan = plane_assignment(32, 4).unwrap();
        let per: Vec<usize> = plan.planes_per_node.iter().map(|c| c[3]).collect();
        assert_eq!(per, vec![8, 4, 2, 1, 1, 1]);
        assert_eq!(plan.planes_per_node[4], vec![0, 1, 0, 1]);
        assert_eq!(plan.c_level, 3);
    }

    #[test]
    fn one_plane_per_node() {
        let plan = plane_assignment(8, 8).unwrap();
        assert_eq!(plan.c_level, 0);
        assert_eq!(plan.messages[0], 7);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(plane_assignment(12, 4).is_err());
        assert!(plane_assignment(16, 3).is_err());
        assert!(plane_assignment(4, 8).is_err());
    }

    #[test]
    fn volume_examples() {
        assert_eq!(comm_volume(128, 16, 16), 117_440_512.0);
        assert_eq!(comm_volume(64, 64, 3), 3.0 * 64f64.powi(3) * 6.0);
        assert_eq!(comm_volume(64, 8, 6), 2.0 * comm_volume(64, 8, 3));
    }
}

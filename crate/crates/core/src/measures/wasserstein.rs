//! Exact Wasserstein-1 distance between finitely supported measures.
//!
//! The transport problem is solved as a min-cost flow on the complete
//! bipartite graph by successive shortest paths with Johnson potentials.
//! Every augmentation exhausts a supply, a demand or a reverse residual, so
//! the result is an optimal vertex of the transport polytope.

use crate::error::{Error, Result};
use crate::measures::discrete::DiscreteMeasure;

/// Default cap on `|supp(a)| * |supp(b)|`.
pub const DEFAULT_SUPPORT_CAP: usize = 4096;

/// Residual masses below this are treated as exhausted.
const MASS_EPS: f64 = 1e-15;

/// Ground metric on path space: `sum_t |y_t - y'_t|`.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn wasserstein1(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    wasserstein1_with_cap(a, b, DEFAULT_SUPPORT_CAP)
}

pub fn wasserstein1_with_cap(a: &DiscreteMeasure, b: &DiscreteMeasure, cap: usize) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    let pairs = a.len() * b.len();
    if pairs > cap {
        return Err(Error::Size { pairs, cap });
    }
    if a == b {
        return Ok(0.0);
    }
    let supply: Vec<f64> = a.atoms().iter().map(|x| x.weight).collect();
    let demand: Vec<f64> = b.atoms().iter().map(|x| x.weight).collect();
    let cost: Vec<Vec<f64>> =
        a.atoms().iter().map(|x| b.atoms().iter().map(|y| l1_distance(&x.point, &y.point)).collect()).collect();
    Ok(TransportProblem::new(supply, demand, cost).solve().cost)
}

/// Dense balanced transportation problem.
#[derive(Debug, Clone)]
pub struct TransportProblem {
    supply: Vec<f64>,
    demand: Vec<f64>,
    cost: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub flow: Vec<Vec<f64>>,
    pub cost: f64,
    /// Dual potentials `(u, v)` with `u_i + v_j <= c_ij`, tight on the support of `flow`.
    pub potentials: (Vec<f64>, Vec<f64>),
}

impl TransportProblem {
    /// `cost[i][j] >= 0` is the price of moving a unit from source `i` to sink `j`.
    pub fn new(supply: Vec<f64>, demand: Vec<f64>, cost: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(cost.len(), supply.len());
        debug_assert!(cost.iter().all(|row| row.len() == demand.len()));
        TransportProblem { supply, demand, cost }
    }

    pub fn solve(&self) -> TransportPlan {
        let m = self.supply.len();
        let n = self.demand.len();
        let nodes = m + n;
        let mut supply = self.supply.clone();
        let mut demand = self.demand.clone();
        let mut flow = vec![vec![0.0; n]; m];
        // Node i < m is a source, node m + j a sink.
        let mut potential = vec![0.0; nodes];

        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev = vec![usize::MAX; nodes];
        let mut done = vec![false; nodes];

        loop {
            if supply.iter().all(|&s| s <= MASS_EPS) || demand.iter().all(|&d| d <= MASS_EPS) {
                break;
            }
            dist.fill(f64::INFINITY);
            prev.fill(usize::MAX);
            done.fill(false);
            for i in 0..m {
                if supply[i] > MASS_EPS {
                    dist[i] = 0.0;
                }
            }

            let mut target = None;
            loop {
                let mut best = usize::MAX;
                let mut best_d = f64::INFINITY;
                for v in 0..nodes {
                    if !done[v] && dist[v] < best_d {
                        best_d = dist[v];
                        best = v;
                    }
                }
                if best == usize::MAX {
                    break;
                }
                done[best] = true;
                if best >= m && demand[best - m] > MASS_EPS {
                    target = Some(best);
                    break;
                }
                if best < m {
                    let i = best;
                    for j in 0..n {
                        let v = m + j;
                        if done[v] {
                            continue;
                        }
                        let reduced = (self.cost[i][j] + potential[i] - potential[v]).max(0.0);
                        if best_d + reduced < dist[v] {
                            dist[v] = best_d + reduced;
                            prev[v] = i;
                        }
                    }
                } else {
                    let j = best - m;
                    for i in 0..m {
                        if done[i] || flow[i][j] <= MASS_EPS {
                            continue;
                        }
                        let reduced = (-self.cost[i][j] + potential[best] - potential[i]).max(0.0);
                        if best_d + reduced < dist[i] {
                            dist[i] = best_d + reduced;
                            prev[i] = best;
                        }
                    }
                }
            }

            let Some(target) = target else { break };
            let reach = dist[target];
            for v in 0..nodes {
                potential[v] += dist[v].min(reach);
            }

            // Bottleneck along the path back to a source.
            let mut amount = demand[target - m];
            let mut v = target;
            while prev[v] != usize::MAX {
                let u = prev[v];
                if u >= m {
                    // Reverse edge sink u -> source v cancels flow[v][u - m].
                    amount = amount.min(flow[v][u - m]);
                }
                v = u;
            }
            amount = amount.min(supply[v]);

            let source = v;
            let mut v = target;
            while prev[v] != usize::MAX {
                let u = prev[v];
                if u < m {
                    flow[u][v - m] += amount;
                } else {
                    flow[v][u - m] -= amount;
                }
                v = u;
            }
            supply[source] -= amount;
            demand[target - m] -= amount;
        }

        let cost = flow.iter().zip(&self.cost).flat_map(|(f, c)| f.iter().zip(c).map(|(f, c)| f.max(0.0) * c)).sum();
        let u = potential[..m].iter().map(|p| -p).collect();
        let v = potential[m..].to_vec();
        TransportPlan { flow, cost, potentials: (u, v) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::discrete::DiscreteMeasure;

    fn line(points: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::from_pairs(1, points.iter().map(|&(x, w)| (vec![x], w))).unwrap()
    }

    #[test]
    fn distance_to_self_is_zero() {
        let m = line(&[(0.0, 0.2), (1.0, 0.5), (3.0, 0.3)]);
        assert_eq!(wasserstein1(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn point_masses_use_l1_ground_metric() {
        let a = DiscreteMeasure::dirac(vec![0.0, 1.0, -2.0]).unwrap();
        let b = DiscreteMeasure::dirac(vec![1.5, -1.0, 0.0]).unwrap();
        assert!((wasserstein1(&a, &b).unwrap() - 5.5).abs() < 1e-15);
    }

    #[test]
    fn split_mass_to_midpoint() {
        let a = line(&[(0.0, 0.5), (2.0, 0.5)]);
        let b = line(&[(1.0, 1.0)]);
        assert!((wasserstein1(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn refuses_oversized_supports() {
        let a = line(&[(0.0, 0.5), (2.0, 0.5)]);
        let b = line(&[(1.0, 0.5), (3.0, 0.5)]);
        assert!(matches!(wasserstein1_with_cap(&a, &b, 3), Err(Error::Size { pairs: 4, cap: 3 })));
    }

    #[test]
    fn plan_is_feasible_and_dual_certified() {
        let problem = TransportProblem::new(
            vec![0.1, 0.4, 0.5],
            vec![0.3, 0.3, 0.4],
            vec![vec![3.0, 1.0, 4.0], vec![1.0, 5.0, 9.0], vec![2.0, 6.0, 5.0]],
        );
        let plan = problem.solve();
        for (i, row) in plan.flow.iter().enumerate() {
            assert!((row.iter().sum::<f64>() - problem.supply[i]).abs() < 1e-14);
        }
        for j in 0..3 {
            let col: f64 = plan.flow.iter().map(|r| r[j]).sum();
            assert!((col - problem.demand[j]).abs() < 1e-14);
        }
        let (u, v) = &plan.potentials;
        let dual: f64 = u.iter().zip(&problem.supply).map(|(u, a)| u * a).sum::<f64>()
            + v.iter().zip(&problem.demand).map(|(v, b)| v * b).sum::<f64>();
        for (ui, row) in u.iter().zip(&problem.cost) {
            for (vj, c) in v.iter().zip(row) {
                assert!(ui + vj <= c + 1e-12);
            }
        }
        assert!((dual - plan.cost).abs() < 1e-12);
    }
}

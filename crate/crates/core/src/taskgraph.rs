//! Complete weighted task graph and its Laplacian powers.

use numcore::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CapamError, Result};
use crate::instance::{ProblemInstance, TaskNode};

/// Which per-task quantities enter the node feature vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// `[x, y, deadline]`
    #[default]
    LocationDeadline,
    /// `[x, y, deadline, workload]`
    WithWorkload,
}

impl FeatureSet {
    pub fn width(self) -> usize {
        match self {
            FeatureSet::LocationDeadline => 3,
            FeatureSet::WithWorkload => 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TaskGraph {
    pub features: Tensor,
    pub adjacency: Tensor,
    pub degree: Tensor,
    pub laplacian: Tensor,
    /// `[I, L, L^2, ..., L^K]`
    pub laplacian_powers: Vec<Tensor>,
}

impl TaskGraph {
    pub fn build(inst: &ProblemInstance, features: FeatureSet, k: usize) -> Result<Self> {
        let mut x = normalize_features(&inst.tasks, inst.grid, inst.max_deadline())?;
        if features == FeatureSet::WithWorkload {
            let w_max = inst.tasks.iter().map(|t| t.workload).fold(0.0, f64::max);
            let rows: Vec<Vec<f64>> = inst
                .tasks
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let mut r = x.row_slice(i).to_vec();
                    r.push(t.workload / w_max);
                    r
                })
                .collect();
            x = Tensor::from_rows(&rows)?;
        }
        Ok(Self::from_features(x, k))
    }

    pub fn from_features(features: Tensor, k: usize) -> Self {
        let adjacency = adjacency(&features);
        let n = adjacency.rows();
        let mut degree = Tensor::zeros(n, n);
        for i in 0..n {
            degree.set(i, i, adjacency.row_slice(i).iter().sum());
        }
        let laplacian = laplacian(&adjacency);
        let laplacian_powers = laplacian_powers(&laplacian, k);
        TaskGraph {
            features,
            adjacency,
            degree,
            laplacian,
            laplacian_powers,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn filter_degree(&self) -> usize {
        self.laplacian_powers.len() - 1
    }
}

/// Rows `[x / grid, y / grid, d / d_max]`.
pub fn normalize_features(tasks: &[TaskNode], grid: f64, d_max: f64) -> Result<Tensor> {
    if !(grid > 0.0) || !(d_max > 0.0) {
        return Err(CapamError::Validation(format!(
            "grid ({grid}) and d_max ({d_max}) must be positive"
        )));
    }
    let mut rows = Vec::with_capacity(tasks.len());
    for (i, t) in tasks.iter().enumerate() {
        if !(0.0..=grid).contains(&t.x) || !(0.0..=grid).contains(&t.y) {
            return Err(CapamError::Validation(format!(
                "task {i} lies outside the grid"
            )));
        }
        if !(t.deadline > 0.0 && t.deadline <= d_max) {
            return Err(CapamError::Validation(format!(
                "task {i} deadline {} outside (0, {d_max}]",
                t.deadline
            )));
        }
        rows.push(vec![t.x / grid, t.y / grid, t.deadline / d_max]);
    }
    Ok(Tensor::from_rows(&rows)?)
}

/// `a_ij = 1 / (1 + ||x_i - x_j||)` off the diagonal, zero on it.
pub fn adjacency(x: &Tensor) -> Tensor {
    let n = x.rows();
    let mut a = Tensor::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = x
                .row_slice(i)
                .iter()
                .zip(x.row_slice(j))
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            let w = 1.0 / (1.0 + d2.sqrt());
            a.set(i, j, w);
            a.set(j, i, w);
        }
    }
    a
}

/// `L = D - A`.
pub fn laplacian(a: &Tensor) -> Tensor {
    let n = a.rows();
    let mut l = a.map(|v| -v);
    for i in 0..n {
        let deg: f64 = a.row_slice(i).iter().sum();
        l.set(i, i, deg - a.get(i, i));
    }
    l
}

pub fn laplacian_powers(l: &Tensor, k: usize) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(k + 1);
    out.push(Tensor::eye(l.rows()));
    for p in 1..=k {
        let next = out[p - 1].matmul(l).expect("square laplacian");
        out.push(next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::generate_instance;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn task(x: f64, y: f64, d: f64) -> TaskNode {
        TaskNode {
            x,
            y,
            deadline: d,
            workload: 10.0,
        }
    }

    #[test]
    fn normalization_examples() {
        let x = normalize_features(&[task(0.0, 0.0, 600.0)], 100.0, 600.0).unwrap();
        assert_eq!(x.data(), &[0.0, 0.0, 1.0]);
        let x = normalize_features(&[task(50.0, 50.0, 300.0)], 100.0, 600.0).unwrap();
        assert_eq!(x.data(), &[0.5, 0.5, 0.5]);
        assert!(normalize_features(&[task(50.0, 50.0, 700.0)], 100.0, 600.0).is_err());
        assert!(normalize_features(&[task(150.0, 50.0, 70.0)], 100.0, 600.0).is_err());
    }

    #[test]
    fn generated_features_in_unit_cube() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = generate_instance(100, 3, &mut rng).unwrap();
        let g = TaskGraph::build(&inst, FeatureSet::LocationDeadline, 2).unwrap();
        assert!(g.features.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn adjacency_examples() {
        let x = Tensor::from_rows(&[vec![0.2, 0.3, 0.4], vec![0.2, 0.3, 0.4]]).unwrap();
        assert_eq!(adjacency(&x).get(0, 1), 1.0);
        let x = Tensor::from_rows(&[vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let a = adjacency(&x);
        assert_eq!(a.get(0, 1), 0.5);
        assert_eq!(a.get(0, 0), 0.0);
    }

    #[test]
    fn two_node_laplacian_powers() {
        let x = Tensor::from_rows(&[vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let g = TaskGraph::from_features(x, 2);
        let l = [0.5, -0.5, -0.5, 0.5];
        assert_eq!(g.laplacian.data(), &l);
        // by hand: 0.5*0.5 + (-0.5)(-0.5) = 0.5; 0.5*(-0.5) + (-0.5)*0.5 = -0.5
        assert_eq!(g.laplacian_powers[2].data(), &l);
        assert_eq!(g.laplacian_powers[0], Tensor::eye(2));
        assert_eq!(g.degree.data(), &[0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn zero_degree_filter_is_identity_only() {
        let x = Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![0.5, 0.5, 0.5]]).unwrap();
        let g = TaskGraph::from_features(x, 0);
        assert_eq!(g.laplacian_powers, vec![Tensor::eye(2)]);
    }

    #[test]
    fn structural_invariants_on_generated_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in [1, 2, 7, 40] {
            let inst = generate_instance(n, 2, &mut rng).unwrap();
            let g = TaskGraph::build(&inst, FeatureSet::LocationDeadline, 3).unwrap();
            assert_eq!(g.adjacency, g.adjacency.transpose());
            for i in 0..n {
                assert_eq!(g.adjacency.get(i, i), 0.0);
                for j in 0..n {
                    if i != j {
                        let a = g.adjacency.get(i, j);
                        assert!(a > 0.0 && a <= 1.0);
                    }
                }
            }
            for (k, lk) in g.laplacian_powers.iter().enumerate().skip(1) {
                let scale = lk.max_abs().max(1.0);
                for i in 0..n {
                    let s: f64 = lk.row_slice(i).iter().sum();
                    assert!(s.abs() < 1e-10 * scale, "L^{k} row {i} sums to {s}");
                }
            }
        }
    }

    #[test]
    fn adjacency_decreases_with_distance() {
        let base = [0.5, 0.5, 0.5];
        let mut last = f64::INFINITY;
        for step in 0..10 {
            let d = step as f64 * 0.05;
            let x = Tensor::from_rows(&[base.to_vec(), vec![0.5 + d, 0.5, 0.5]]).unwrap();
            let a = adjacency(&x).get(0, 1);
            assert!(a < last);
            last = a;
        }
    }

    #[test]
    fn construction_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let inst = generate_instance(9, 2, &mut rng).unwrap();
            let mut perm: Vec<usize> = (0..9).collect();
            perm.shuffle(&mut rng);
            let g = TaskGraph::build(&inst, FeatureSet::LocationDeadline, 2).unwrap();
            let gp = TaskGraph::build(&inst.permute_tasks(&perm), FeatureSet::LocationDeadline, 2)
                .unwrap();
            let permute = |t: &Tensor| {
                let mut out = Tensor::zeros(9, 9);
                for i in 0..9 {
                    for j in 0..9 {
                        out.set(i, j, t.get(perm[i], perm[j]));
                    }
                }
                out
            };
            assert_eq!(gp.adjacency, permute(&g.adjacency));
            assert!(gp.laplacian.max_abs_diff(&permute(&g.laplacian)) < 1e-14);
            for k in 0..3 {
                let a = &gp.laplacian_powers[k];
                let b = permute(&g.laplacian_powers[k]);
                assert!(a.max_abs_diff(&b) < 1e-12 * b.max_abs().max(1.0));
            }
        }
    }

    #[test]
    fn workload_feature_switch_adds_a_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = generate_instance(6, 2, &mut rng).unwrap();
        let g = TaskGraph::build(&inst, FeatureSet::WithWorkload, 1).unwrap();
        assert_eq!(g.features.cols(), 4);
        assert!(g.features.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

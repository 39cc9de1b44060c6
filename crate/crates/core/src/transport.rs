//! Wasserstein-1 on finite metric spaces.
//!
//! [`w1_solve`] runs the transportation simplex (stepping-stone pivots with
//! MODI potentials) on the `n × n` transport polytope. The row and column
//! potentials of the final basis give the Kantorovich potential after one
//! c-transform.

use rand::Rng;

use crate::error::{PfdError, Result};
use crate::functional::{InfluenceVector, ProbabilityFunctional};
use crate::space::{compensated_sum, ProbVector};

const METRIC_TOLERANCE: f64 = 1e-12;
const MAX_PIVOTS: usize = 100_000;

/// A finite metric space given by its distance table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSpace {
    n: usize,
    d: Vec<f64>,
}

impl MetricSpace {
    /// Validates symmetry, zero diagonal, nonnegativity and the triangle
    /// inequality.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(PfdError::Domain("metric space needs at least one point".into()));
        }
        let mut d = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(PfdError::Domain(format!("distance row {i} has {} entries, expected {n}", row.len())));
            }
            d.extend_from_slice(row);
        }
        let m = Self { n, d };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n;
        let scale = self.d.iter().fold(1.0_f64, |a, b| a.max(b.abs()));
        let tol = METRIC_TOLERANCE * scale;
        for i in 0..n {
            if self.dist(i, i) != 0.0 {
                return Err(PfdError::Domain(format!("d({i},{i}) = {} is not zero", self.dist(i, i))));
            }
            for j in 0..n {
                let dij = self.dist(i, j);
                if !dij.is_finite() || dij < 0.0 {
                    return Err(PfdError::Domain(format!("d({i},{j}) = {dij} is not a finite nonnegative distance")));
                }
                if (dij - self.dist(j, i)).abs() > tol {
                    return Err(PfdError::Domain(format!("distance table is not symmetric at ({i},{j})")));
                }
                for k in 0..n {
                    if dij > self.dist(i, k) + self.dist(k, j) + tol {
                        return Err(PfdError::Domain(format!(
                            "triangle inequality fails for ({i},{j}) through {k}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Points `0..n` on a line, `d(i,j) = |i − j|`.
    pub fn line(n: usize) -> Self {
        let d = (0..n).flat_map(|i| (0..n).map(move |j| (i as f64 - j as f64).abs())).collect();
        Self { n, d }
    }

    /// The discrete metric, 1 between distinct points.
    pub fn discrete(n: usize) -> Self {
        let d = (0..n).flat_map(|i| (0..n).map(move |j| if i == j { 0.0 } else { 1.0 })).collect();
        Self { n, d }
    }

    /// Euclidean distances between points in the plane.
    pub fn planar(points: &[(f64, f64)]) -> Result<Self> {
        let rows = points
            .iter()
            .map(|a| points.iter().map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()).collect())
            .collect();
        Self::new(rows)
    }

    /// Points drawn uniformly in the unit square.
    pub fn random_planar<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect();
        Self::planar(&pts).expect("euclidean distances form a metric")
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.d.chunks(self.n).map(|r| r.to_vec()).collect()
    }
}

/// A coupling of μ and ν stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    n: usize,
    pi: Vec<f64>,
}

impl TransportPlan {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pi[i * self.n + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.pi.chunks(self.n).map(|r| compensated_sum(r.iter().copied())).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.n).map(|j| compensated_sum((0..self.n).map(|i| self.get(i, j)))).collect()
    }

    pub fn cost(&self, m: &MetricSpace) -> f64 {
        compensated_sum((0..self.n).flat_map(|i| (0..self.n).map(move |j| (i, j))).map(|(i, j)| {
            self.get(i, j) * m.dist(i, j)
        }))
    }
}

/// A 1-Lipschitz function on the metric space.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential(pub Vec<f64>);

impl Potential {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct W1Solution {
    pub value: f64,
    pub plan: TransportPlan,
    /// Kantorovich potential, gauged so that `φ_0 = 0`.
    pub potential: Potential,
    /// MODI potentials of the final basis: `u_i + v_j = d_ij` on basic cells.
    pub row_duals: Vec<f64>,
    pub col_duals: Vec<f64>,
    pub pivots: usize,
}

/// The largest 1-Lipschitz minorant: `x ↦ min_y [φ(y) + d(x, y)]`.
pub fn c_transform(phi: &[f64], m: &MetricSpace) -> Potential {
    let n = m.len();
    Potential(
        (0..n)
            .map(|x| (0..n).map(|y| phi[y] + m.dist(x, y)).fold(f64::INFINITY, f64::min))
            .collect(),
    )
}

/// `max_{i≠j} |φ_i − φ_j| / d_ij`, infinite when a zero-distance pair disagrees.
pub fn lipschitz_constant(phi: &[f64], m: &MetricSpace) -> f64 {
    let n = m.len();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let diff = (phi[i] - phi[j]).abs();
            let d = m.dist(i, j);
            if d == 0.0 {
                if diff > 0.0 {
                    return f64::INFINITY;
                }
            } else {
                worst = worst.max(diff / d);
            }
        }
    }
    worst
}

/// Euclidean projection onto `{φ : φ_i − φ_j ≤ d_ij}` by Dykstra's
/// alternating projections over the pairwise half-spaces.
///
/// Returns the projected point and the number of sweeps used.
pub fn lipschitz_projection(psi: &[f64], m: &MetricSpace, max_sweeps: usize, tol: f64) -> (Vec<f64>, usize) {
    let n = m.len();
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let mut x = psi.to_vec();
    // Dykstra increments live along e_i − e_j, so one scalar per pair suffices.
    let mut incr = vec![0.0; pairs.len()];
    for sweep in 1..=max_sweeps {
        let mut moved = 0.0_f64;
        for (k, &(i, j)) in pairs.iter().enumerate() {
            let yi = x[i] + incr[k];
            let yj = x[j] - incr[k];
            let excess = yi - yj - m.dist(i, j);
            let shift = if excess > 0.0 { 0.5 * excess } else { 0.0 };
            let (ni, nj) = (yi - shift, yj + shift);
            moved = moved.max((ni - x[i]).abs()).max((nj - x[j]).abs());
            x[i] = ni;
            x[j] = nj;
            incr[k] = shift;
        }
        if moved <= tol {
            return (x, sweep);
        }
    }
    (x, max_sweeps)
}

fn same_len(a: &ProbVector, b: &ProbVector, m: &MetricSpace) -> Result<()> {
    if a.len() != m.len() {
        return Err(PfdError::DimensionMismatch { expected: m.len(), got: a.len() });
    }
    if b.len() != m.len() {
        return Err(PfdError::DimensionMismatch { expected: m.len(), got: b.len() });
    }
    Ok(())
}

/// Basic cell of the transportation tableau.
#[derive(Debug, Clone, Copy)]
struct Cell {
    i: usize,
    j: usize,
    flow: f64,
}

/// North-west corner rule; always yields `2n − 1` basic cells forming a tree.
fn northwest_corner(mu: &[f64], nu: &[f64]) -> Vec<Cell> {
    let n = mu.len();
    let mut supply = mu.to_vec();
    let mut demand = nu.to_vec();
    let (mut i, mut j) = (0, 0);
    let mut basis = Vec::with_capacity(2 * n - 1);
    loop {
        if i == n - 1 && j == n - 1 {
            // remaining supply and demand agree up to rounding
            basis.push(Cell { i, j, flow: supply[i].min(demand[j]).max(0.0) });
            break;
        }
        if j == n - 1 || (i < n - 1 && supply[i] <= demand[j]) {
            let flow = supply[i].max(0.0);
            basis.push(Cell { i, j, flow });
            demand[j] -= flow;
            supply[i] = 0.0;
            i += 1;
        } else {
            let flow = demand[j].max(0.0);
            basis.push(Cell { i, j, flow });
            supply[i] -= flow;
            demand[j] = 0.0;
            j += 1;
        }
    }
    basis
}

/// MODI potentials: `u_i + v_j = c_ij` on basic cells, `u_0 = 0`.
fn modi_potentials(basis: &[Cell], m: &MetricSpace) -> (Vec<f64>, Vec<f64>) {
    let n = m.len();
    let mut u = vec![f64::NAN; n];
    let mut v = vec![f64::NAN; n];
    u[0] = 0.0;
    let mut assigned = 1;
    while assigned < 2 * n {
        let mut progress = false;
        for c in basis {
            match (u[c.i].is_nan(), v[c.j].is_nan()) {
                (false, true) => {
                    v[c.j] = m.dist(c.i, c.j) - u[c.i];
                    assigned += 1;
                    progress = true;
                }
                (true, false) => {
                    u[c.i] = m.dist(c.i, c.j) - v[c.j];
                    assigned += 1;
                    progress = true;
                }
                _ => {}
            }
        }
        assert!(progress, "transportation basis is not a spanning tree");
    }
    (u, v)
}

/// Path of basis indices from row node `row` to column node `col` in the
/// basis tree. Row nodes are `0..n`, column nodes `n..2n`.
fn tree_path(basis: &[Cell], n: usize, row: usize, col: usize) -> Vec<usize> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); 2 * n];
    for (k, c) in basis.iter().enumerate() {
        adj[c.i].push((n + c.j, k));
        adj[n + c.j].push((c.i, k));
    }
    let target = n + col;
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; 2 * n];
    let mut seen = vec![false; 2 * n];
    let mut queue = std::collections::VecDeque::from([row]);
    seen[row] = true;
    while let Some(node) = queue.pop_front() {
        if node == target {
            break;
        }
        for &(next, k) in &adj[node] {
            if !seen[next] {
                seen[next] = true;
                parent[next] = Some((node, k));
                queue.push_back(next);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = target;
    while node != row {
        let (prev, k) = parent[node].expect("basis tree is connected");
        path.push(k);
        node = prev;
    }
    // path[0] touches the column node, as the cycle walk expects
    path
}

/// Exact Wasserstein-1 distance, optimal plan, and Kantorovich potential.
pub fn w1_solve(mu: &ProbVector, nu: &ProbVector, m: &MetricSpace) -> Result<W1Solution> {
    same_len(mu, nu, m)?;
    let n = m.len();
    let cost_scale = m.d.iter().fold(1.0_f64, |a, b| a.max(*b));
    let tol = 1e-12 * cost_scale;

    let mut basis = northwest_corner(mu.as_slice(), nu.as_slice());
    let mut pivots = 0;
    let (u, v) = loop {
        let (u, v) = modi_potentials(&basis, m);
        let mut in_basis = vec![false; n * n];
        for c in &basis {
            in_basis[c.i * n + c.j] = true;
        }
        // Bland: first improving non-basic cell in row-major order.
        let entering = (0..n * n).find(|&k| {
            let (i, j) = (k / n, k % n);
            !in_basis[k] && m.dist(i, j) - u[i] - v[j] < -tol
        });
        let Some(k) = entering else { break (u, v) };
        let (ei, ej) = (k / n, k % n);

        pivots += 1;
        if pivots > MAX_PIVOTS {
            return Err(PfdError::Numerical("transportation simplex exceeded its pivot budget".into()));
        }

        let path = tree_path(&basis, n, ei, ej);
        // Cycle: entering cell gains, then path edges alternate lose/gain.
        let losing: Vec<usize> = path.iter().copied().step_by(2).collect();
        let gaining: Vec<usize> = path.iter().copied().skip(1).step_by(2).collect();
        let theta = losing.iter().map(|&b| basis[b].flow).fold(f64::INFINITY, f64::min);
        let leaving = losing
            .iter()
            .copied()
            .filter(|&b| basis[b].flow == theta)
            .min_by_key(|&b| (basis[b].i, basis[b].j))
            .expect("cycle has a losing cell");
        for &b in &losing {
            basis[b].flow = (basis[b].flow - theta).max(0.0);
        }
        for &b in &gaining {
            basis[b].flow += theta;
        }
        basis[leaving] = Cell { i: ei, j: ej, flow: theta };
    };

    let mut pi = vec![0.0; n * n];
    for c in &basis {
        pi[c.i * n + c.j] += c.flow;
    }
    let plan = TransportPlan { n, pi };
    let value = plan.cost(m);

    let neg_v: Vec<f64> = v.iter().map(|x| -x).collect();
    let mut phi = c_transform(&neg_v, m).0;
    let shift = phi[0];
    phi.iter_mut().for_each(|p| *p -= shift);

    Ok(W1Solution { value, plan, potential: Potential(phi), row_duals: u, col_duals: v, pivots })
}

pub fn w1_distance(mu: &ProbVector, nu: &ProbVector, m: &MetricSpace) -> Result<f64> {
    Ok(w1_solve(mu, nu, m)?.value)
}

/// `μ ↦ W₁(μ, ν)` on a fixed metric space.
#[derive(Debug, Clone)]
pub struct Wasserstein {
    pub target: ProbVector,
    pub metric: MetricSpace,
}

impl ProbabilityFunctional for Wasserstein {
    fn name(&self) -> &str {
        "wasserstein"
    }
    fn dim(&self) -> usize {
        self.target.len()
    }
    fn value(&self, mu: &ProbVector) -> f64 {
        w1_distance(mu, &self.target, &self.metric).unwrap_or(f64::NAN)
    }
    fn has_influence(&self) -> bool {
        true
    }
    fn influence(&self, mu: &ProbVector) -> Result<InfluenceVector> {
        Ok(InfluenceVector(w1_solve(mu, &self.target, &self.metric)?.potential.0))
    }
    fn is_convex(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{random_dirichlet, rng_from_seed};

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn assert_feasible(sol: &W1Solution, mu: &ProbVector, nu: &ProbVector, m: &MetricSpace) {
        for (a, b) in sol.plan.row_sums().iter().zip(mu.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in sol.plan.col_sums().iter().zip(nu.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
        let dual = mu.expect(sol.potential.as_slice()) - nu.expect(sol.potential.as_slice());
        assert!((dual - sol.value).abs() <= 1e-8, "gap {}", dual - sol.value);
        assert!(lipschitz_constant(sol.potential.as_slice(), m) <= 1.0 + 1e-9);
        assert_eq!(sol.potential.0[0], 0.0);
    }

    #[test]
    fn identical_measures_cost_nothing() {
        let m = MetricSpace::line(4);
        let mu = pv(&[0.1, 0.2, 0.3, 0.4]);
        let sol = w1_solve(&mu, &mu, &m).unwrap();
        assert!(sol.value.abs() < 1e-15);
        for i in 0..4 {
            assert!((sol.plan.get(i, i) - mu[i]).abs() < 1e-15);
        }
        assert_feasible(&sol, &mu, &mu, &m);
    }

    #[test]
    fn two_point_example() {
        let m = MetricSpace::line(2);
        let mu = pv(&[0.7, 0.3]);
        let nu = pv(&[0.4, 0.6]);
        let sol = w1_solve(&mu, &nu, &m).unwrap();
        assert!((sol.value - 0.3).abs() < 1e-15);
        assert!((sol.potential.0[0] - sol.potential.0[1] - 1.0).abs() < 1e-15);
        assert_feasible(&sol, &mu, &nu, &m);
    }

    #[test]
    fn three_point_chain() {
        let m = MetricSpace::line(3);
        let mu = ProbVector::point_mass(3, 0);
        let nu = ProbVector::point_mass(3, 2);
        let sol = w1_solve(&mu, &nu, &m).unwrap();
        assert!((sol.value - 2.0).abs() < 1e-15);
        assert_eq!(sol.potential.0, vec![0.0, -1.0, -2.0]);
    }

    #[test]
    fn random_instances_satisfy_duality() {
        let mut rng = rng_from_seed(3);
        for _ in 0..200 {
            let n = rng.gen_range(1..=8);
            let m = MetricSpace::random_planar(n, &mut rng);
            let mu = random_dirichlet(n, &mut rng);
            let nu = random_dirichlet(n, &mut rng);
            let sol = w1_solve(&mu, &nu, &m).unwrap();
            assert_feasible(&sol, &mu, &nu, &m);
        }
    }

    #[test]
    fn degenerate_instances_terminate() {
        // point masses and repeated masses produce many zero-flow basic cells
        let mut rng = rng_from_seed(10);
        for _ in 0..100 {
            let n = rng.gen_range(2..=6);
            let m = MetricSpace::discrete(n);
            let a = ProbVector::point_mass(n, rng.gen_range(0..n));
            let b = ProbVector::uniform(n);
            for (mu, nu) in [(&a, &b), (&b, &a), (&b, &b), (&a, &a)] {
                let sol = w1_solve(mu, nu, &m).unwrap();
                assert_feasible(&sol, mu, nu, &m);
            }
        }
    }

    #[test]
    fn rejects_bad_metrics() {
        assert!(MetricSpace::new(vec![vec![0.0, 1.0], vec![2.0, 0.0]]).is_err());
        assert!(MetricSpace::new(vec![vec![1.0, 1.0], vec![1.0, 0.0]]).is_err());
        assert!(MetricSpace::new(vec![vec![0.0, -1.0], vec![-1.0, 0.0]]).is_err());
        let broken = vec![vec![0.0, 1.0, 5.0], vec![1.0, 0.0, 1.0], vec![5.0, 1.0, 0.0]];
        assert!(MetricSpace::new(broken).is_err());
        assert!(MetricSpace::new(MetricSpace::line(4).rows()).is_ok());
    }

    #[test]
    fn c_transform_properties() {
        let m = MetricSpace::line(3);
        let lip = [0.0, -1.0, -2.0];
        assert_eq!(c_transform(&lip, &m).0, lip.to_vec());

        let mut rng = rng_from_seed(6);
        for _ in 0..50 {
            let m = MetricSpace::random_planar(6, &mut rng);
            let phi: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let once = c_transform(&phi, &m);
            assert!(lipschitz_constant(once.as_slice(), &m) <= 1.0 + 1e-9);
            let twice = c_transform(once.as_slice(), &m);
            for (a, b) in once.0.iter().zip(&twice.0) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lipschitz_constant_examples() {
        let m = MetricSpace::line(3);
        assert_eq!(lipschitz_constant(&[4.0, 4.0, 4.0], &m), 0.0);
        assert_eq!(lipschitz_constant(&[0.0, -1.0, -2.0], &m), 1.0);
        let mut rng = rng_from_seed(2);
        let m = MetricSpace::random_planar(5, &mut rng);
        let phi: Vec<f64> = (0..5).map(|x| 2.0 * m.dist(x, 0)).collect();
        assert!((lipschitz_constant(&phi, &m) - 2.0).abs() < 1e-12);
        let collapsed = MetricSpace { n: 2, d: vec![0.0, 0.0, 0.0, 0.0] };
        assert_eq!(lipschitz_constant(&[0.0, 1.0], &collapsed), f64::INFINITY);
    }

    #[test]
    fn projection_is_identity_on_feasible_and_feasible_otherwise() {
        let mut rng = rng_from_seed(14);
        let m = MetricSpace::random_planar(5, &mut rng);
        let feasible = c_transform(&[0.3, -0.2, 0.9, 0.0, 0.1], &m).0;
        let (same, _) = lipschitz_projection(&feasible, &m, 1000, 1e-14);
        for (a, b) in same.iter().zip(&feasible) {
            assert!((a - b).abs() < 1e-12);
        }
        let wild: Vec<f64> = (0..5).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let (proj, _) = lipschitz_projection(&wild, &m, 100_000, 1e-14);
        assert!(lipschitz_constant(&proj, &m) <= 1.0 + 1e-9);
        // projection optimality: ⟨ψ − P(ψ), φ − P(ψ)⟩ ≤ 0 for feasible φ
        for _ in 0..50 {
            let raw: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let phi = c_transform(&raw, &m).0;
            let inner: f64 = (0..5).map(|k| (wild[k] - proj[k]) * (phi[k] - proj[k])).sum();
            assert!(inner <= 1e-8, "variational inequality violated by {inner}");
        }
    }
}

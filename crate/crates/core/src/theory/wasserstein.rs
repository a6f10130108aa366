//! Exact Wasserstein-1 distances between finitely supported distributions.

use nalgebra::{DMatrix, DVector};

use super::TheoryError;

const MASS_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-12;

fn check_marginal(which: &'static str, mu: &[f64]) -> Result<(), TheoryError> {
    if let Some(&bad) = mu.iter().find(|&&x| !(x >= -MASS_TOL) || !x.is_finite()) {
        return Err(TheoryError::NotDistribution { which, detail: format!("entry {bad}") });
    }
    let total: f64 = mu.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(TheoryError::NotDistribution { which, detail: format!("sums to {total}") });
    }
    Ok(())
}

pub fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Pairwise Euclidean cost between two point lists.
pub fn euclidean_cost(from: &[Vec<f64>], to: &[Vec<f64>]) -> Vec<Vec<f64>> {
    from.iter().map(|x| to.iter().map(|y| euclidean(x, y)).collect()).collect()
}

/// Optimal transport cost `min Σ c_ij x_ij` over couplings of `mu1` (rows) and `mu2` (columns).
///
/// Solved exactly by the transportation simplex (MODI potentials) on the
/// positive-mass part of each marginal.
pub fn wasserstein_discrete(mu1: &[f64], mu2: &[f64], cost: &[Vec<f64>]) -> Result<f64, TheoryError> {
    check_marginal("mu1", mu1)?;
    check_marginal("mu2", mu2)?;
    if cost.len() != mu1.len() || cost.iter().any(|row| row.len() != mu2.len()) {
        return Err(TheoryError::Dimension(format!(
            "cost matrix must be {}x{}",
            mu1.len(),
            mu2.len()
        )));
    }
    let rows: Vec<usize> = (0..mu1.len()).filter(|&i| mu1[i] > 0.0).collect();
    let cols: Vec<usize> = (0..mu2.len()).filter(|&j| mu2[j] > 0.0).collect();
    let supply: Vec<f64> = rows.iter().map(|&i| mu1[i]).collect();
    let demand: Vec<f64> = cols.iter().map(|&j| mu2[j]).collect();
    let c: Vec<Vec<f64>> = rows.iter().map(|&i| cols.iter().map(|&j| cost[i][j]).collect()).collect();
    Ok(Transport::solve(&supply, &demand, &c))
}

/// Spanning-tree basis of a balanced transportation problem.
struct Transport<'a> {
    cost: &'a [Vec<f64>],
    n: usize,
    m: usize,
    flow: Vec<Vec<f64>>,
    basic: Vec<Vec<bool>>,
}

impl<'a> Transport<'a> {
    fn solve(supply: &[f64], demand: &[f64], cost: &'a [Vec<f64>]) -> f64 {
        let (n, m) = (supply.len(), demand.len());
        let mut t = Transport { cost, n, m, flow: vec![vec![0.0; m]; n], basic: vec![vec![false; m]; n] };
        t.northwest_corner(supply, demand);
        // Degenerate cycling is guarded by the iteration cap; with n, m ≤ 64 the
        // simplex typically converges in a few dozen pivots.
        for _ in 0..100 * (n + m) * (n + m) {
            let (u, v) = t.potentials();
            let mut entering = None;
            let mut best = -PIVOT_TOL;
            for i in 0..n {
                for j in 0..m {
                    if !t.basic[i][j] {
                        let reduced = cost[i][j] - u[i] - v[j];
                        if reduced < best {
                            best = reduced;
                            entering = Some((i, j));
                        }
                    }
                }
            }
            match entering {
                Some((i, j)) => t.pivot(i, j),
                None => break,
            }
        }
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..m {
                total += t.flow[i][j] * cost[i][j];
            }
        }
        total
    }

    /// Initial basis with exactly n + m − 1 cells (zeros included when degenerate).
    fn northwest_corner(&mut self, supply: &[f64], demand: &[f64]) {
        let (mut a, mut b) = (supply.to_vec(), demand.to_vec());
        let (mut i, mut j) = (0, 0);
        loop {
            let x = a[i].min(b[j]);
            self.flow[i][j] = x;
            self.basic[i][j] = true;
            a[i] -= x;
            b[j] -= x;
            if i == self.n - 1 && j == self.m - 1 {
                break;
            }
            if i == self.n - 1 {
                j += 1;
            } else if j == self.m - 1 || a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    /// Dual potentials with u_0 = 0, solved over the basis tree.
    fn potentials(&self) -> (Vec<f64>, Vec<f64>) {
        let mut u = vec![f64::NAN; self.n];
        let mut v = vec![f64::NAN; self.m];
        u[0] = 0.0;
        let mut stack = vec![(true, 0usize)];
        while let Some((is_row, k)) = stack.pop() {
            if is_row {
                for j in 0..self.m {
                    if self.basic[k][j] && v[j].is_nan() {
                        v[j] = self.cost[k][j] - u[k];
                        stack.push((false, j));
                    }
                }
            } else {
                for i in 0..self.n {
                    if self.basic[i][k] && u[i].is_nan() {
                        u[i] = self.cost[i][k] - v[k];
                        stack.push((true, i));
                    }
                }
            }
        }
        (u, v)
    }

    /// Tree path from column `j` to row `i` as a list of basic cells.
    fn tree_path(&self, i: usize, j: usize) -> Vec<(usize, usize)> {
        // nodes: rows 0..n, columns n..n+m
        let total = self.n + self.m;
        let mut parent = vec![usize::MAX; total];
        let start = self.n + j;
        parent[start] = start;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == i {
                break;
            }
            if node < self.n {
                for jj in 0..self.m {
                    let next = self.n + jj;
                    if self.basic[node][jj] && parent[next] == usize::MAX {
                        parent[next] = node;
                        queue.push_back(next);
                    }
                }
            } else {
                let col = node - self.n;
                for ii in 0..self.n {
                    if self.basic[ii][col] && parent[ii] == usize::MAX {
                        parent[ii] = node;
                        queue.push_back(ii);
                    }
                }
            }
        }
        let mut path = Vec::new();
        let mut node = i;
        while node != start {
            let p = parent[node];
            let cell = if node < self.n { (node, p - self.n) } else { (p, node - self.n) };
            path.push(cell);
            node = p;
        }
        // path runs row i → column j; reverse so it starts at column j
        path.reverse();
        path
    }

    fn pivot(&mut self, i: usize, j: usize) {
        let path = self.tree_path(i, j);
        // cells alternate −, +, −, … starting from the one sharing column j
        let mut theta = f64::INFINITY;
        let mut leaving = None;
        for (idx, &(r, c)) in path.iter().enumerate() {
            if idx % 2 == 0 && self.flow[r][c] < theta {
                theta = self.flow[r][c];
                leaving = Some((r, c));
            }
        }
        let (lr, lc) = leaving.expect("cycle has a decreasing cell");
        self.flow[i][j] = theta;
        self.basic[i][j] = true;
        for (idx, &(r, c)) in path.iter().enumerate() {
            if idx % 2 == 0 {
                self.flow[r][c] = (self.flow[r][c] - theta).max(0.0);
            } else {
                self.flow[r][c] += theta;
            }
        }
        self.flow[lr][lc] = 0.0;
        self.basic[lr][lc] = false;
    }
}

/// Kantorovich–Rubinstein dual over a finite point set:
/// `max Σ f(x)(μ₁ − μ₂)(x)` subject to `f(x) − f(y) ≤ ‖x − y‖` for all pairs.
///
/// Returns the optimal value and a maximizing 1-Lipschitz witness `f`
/// (zero at the first positive-mass point). Solved with a dense dictionary
/// simplex under Bland's rule on the union of the two supports.
pub fn wasserstein_dual(mu1: &[f64], mu2: &[f64], points: &[Vec<f64>]) -> Result<(f64, Vec<f64>), TheoryError> {
    check_marginal("mu1", mu1)?;
    check_marginal("mu2", mu2)?;
    if mu1.len() != points.len() || mu2.len() != points.len() {
        return Err(TheoryError::Dimension("marginals and support differ in length".into()));
    }
    let support: Vec<usize> = (0..points.len()).filter(|&i| mu1[i] > 0.0 || mu2[i] > 0.0).collect();
    let mut witness = vec![0.0; points.len()];
    if support.len() < 2 {
        return Ok((0.0, witness));
    }
    let anchor = support[0];
    let rest = &support[1..];
    let d = |a: usize, b: usize| euclidean(&points[a], &points[b]);
    // f(anchor) = 0 and g_i = f_i + d(i, anchor) ≥ 0 for the remaining points,
    // so every constraint has a nonnegative right-hand side (triangle inequality).
    let nvar = rest.len();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (p, &i) in rest.iter().enumerate() {
        let mut row = vec![0.0; nvar];
        row[p] = 1.0;
        a.push(row);
        b.push(2.0 * d(i, anchor));
        for (q, &j) in rest.iter().enumerate() {
            if p != q {
                let mut row = vec![0.0; nvar];
                row[p] = 1.0;
                row[q] = -1.0;
                a.push(row);
                b.push((d(i, j) + d(i, anchor) - d(j, anchor)).max(0.0));
            }
        }
    }
    let diff = |i: usize| mu1[i] - mu2[i];
    let c: Vec<f64> = rest.iter().map(|&i| diff(i)).collect();
    let offset: f64 = rest.iter().map(|&i| diff(i) * d(i, anchor)).sum();
    let (value, g) = simplex_max(a, b, c)?;
    for (p, &i) in rest.iter().enumerate() {
        witness[i] = g[p] - d(i, anchor);
    }
    Ok((value - offset, witness))
}

/// `max cᵀx s.t. Ax ≤ b, x ≥ 0` with `b ≥ 0` (origin feasible), Bland's rule.
pub fn simplex_max(a: Vec<Vec<f64>>, b: Vec<f64>, c: Vec<f64>) -> Result<(f64, Vec<f64>), TheoryError> {
    let rows = a.len();
    let cols = c.len();
    // dictionary: x_B = rhs − T x_N ; z = z0 + obj · x_N
    let mut t = a;
    let mut rhs = b;
    let mut obj = c;
    let mut z0 = 0.0;
    let mut nonbasic: Vec<usize> = (0..cols).collect();
    let mut basic: Vec<usize> = (cols..cols + rows).collect();
    loop {
        // Bland: entering = smallest variable index with positive reduced cost
        let entering = (0..cols).filter(|&j| obj[j] > PIVOT_TOL).min_by_key(|&j| nonbasic[j]);
        let Some(e) = entering else { break };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..rows {
            if t[i][e] > PIVOT_TOL {
                let ratio = rhs[i] / t[i][e];
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - PIVOT_TOL || (ratio <= lr + PIVOT_TOL && basic[i] < basic[li]) {
                            Some((i, ratio))
                        } else {
                            Some((li, lr))
                        }
                    }
                };
            }
        }
        let Some((r, _)) = leave else { return Err(TheoryError::Unbounded) };
        let piv = t[r][e];
        // express entering variable from row r
        let row_r: Vec<f64> = t[r].iter().map(|x| x / piv).collect();
        let rhs_r = rhs[r] / piv;
        let mut new_row = row_r.clone();
        new_row[e] = 1.0 / piv;
        for i in 0..rows {
            if i == r {
                continue;
            }
            let f = t[i][e];
            if f != 0.0 {
                for j in 0..cols {
                    t[i][j] -= f * row_r[j];
                }
                t[i][e] = -f / piv;
                rhs[i] -= f * rhs_r;
                if rhs[i] < 0.0 && rhs[i] > -1e-12 {
                    rhs[i] = 0.0;
                }
            }
        }
        let f = obj[e];
        for j in 0..cols {
            obj[j] -= f * row_r[j];
        }
        obj[e] = -f / piv;
        z0 += f * rhs_r;
        t[r] = new_row;
        rhs[r] = rhs_r;
        std::mem::swap(&mut basic[r], &mut nonbasic[e]);
    }
    let mut x = vec![0.0; cols];
    for (i, &var) in basic.iter().enumerate() {
        if var < cols {
            x[var] = rhs[i];
        }
    }
    Ok((z0, x))
}

/// Brute-force optimum over every vertex of the transportation polytope.
///
/// Enumerates all bases of size n + m − 1, solves the marginal equations
/// restricted to each, and keeps the cheapest feasible one. Exponential;
/// intended for supports of a handful of points.
pub fn wasserstein_vertex_enumeration(mu1: &[f64], mu2: &[f64], cost: &[Vec<f64>]) -> Result<f64, TheoryError> {
    check_marginal("mu1", mu1)?;
    check_marginal("mu2", mu2)?;
    let (n, m) = (mu1.len(), mu2.len());
    if n * m > 16 {
        return Err(TheoryError::Dimension(format!("{n}x{m} is too large to enumerate")));
    }
    // equality system: row sums then column sums (one column dropped as redundant)
    let eqs = n + m - 1;
    let mut a = DMatrix::<f64>::zeros(eqs, n * m);
    let mut b = DVector::<f64>::zeros(eqs);
    for i in 0..n {
        for j in 0..m {
            a[(i, i * m + j)] = 1.0;
        }
        b[i] = mu1[i];
    }
    for j in 0..m - 1 {
        for i in 0..n {
            a[(n + j, i * m + j)] = 1.0;
        }
        b[n + j] = mu2[j];
    }
    let mut best = f64::INFINITY;
    let vars = n * m;
    for mask in 0u32..(1 << vars) {
        if mask.count_ones() as usize != eqs {
            continue;
        }
        let cols: Vec<usize> = (0..vars).filter(|&k| mask & (1 << k) != 0).collect();
        let sub = DMatrix::from_fn(eqs, eqs, |r, c| a[(r, cols[c])]);
        let Some(x) = sub.lu().solve(&b) else { continue };
        if x.iter().any(|&v| v < -1e-12) {
            continue;
        }
        let value: f64 = cols.iter().zip(x.iter()).map(|(&k, &v)| v * cost[k / m][k % m]).sum();
        best = best.min(value);
    }
    Ok(best)
}

/// W1 between two distributions on a common embedded point set.
pub fn w1_on_points(mu1: &[f64], mu2: &[f64], points: &[Vec<f64>]) -> Result<f64, TheoryError> {
    if mu1.len() != points.len() || mu2.len() != points.len() {
        return Err(TheoryError::Dimension("marginals and support differ in length".into()));
    }
    // transport only between points that carry mass
    let rows: Vec<usize> = (0..points.len()).filter(|&i| mu1[i] > 0.0).collect();
    let cols: Vec<usize> = (0..points.len()).filter(|&j| mu2[j] > 0.0).collect();
    let a: Vec<f64> = rows.iter().map(|&i| mu1[i]).collect();
    let b: Vec<f64> = cols.iter().map(|&j| mu2[j]).collect();
    let cost: Vec<Vec<f64>> = rows
        .iter()
        .map(|&i| cols.iter().map(|&j| euclidean(&points[i], &points[j])).collect())
        .collect();
    wasserstein_discrete(&a, &b, &cost)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn point_masses() {
        let pts = line(&[0.0, 1.5, 4.0]);
        let cost = euclidean_cost(&pts, &pts);
        let a = [1.0, 0.0, 0.0];
        let b = [0.0, 0.0, 1.0];
        assert!((wasserstein_discrete(&a, &b, &cost).unwrap() - 4.0).abs() < 1e-12);
        let (dual, f) = wasserstein_dual(&a, &b, &pts).unwrap();
        assert!((dual - 4.0).abs() < 1e-12);
        assert!((f[0] - f[2] - 4.0).abs() < 1e-12);
        assert_eq!(wasserstein_discrete(&a, &a, &cost).unwrap(), 0.0);
        assert_eq!(wasserstein_dual(&b, &b, &pts).unwrap().0, 0.0);
    }

    #[test]
    fn line_matches_cdf_formula() {
        // on the line W1 = ∫|F₁ − F₂|
        let xs = [0.0, 0.3, 1.0, 2.5, 2.7];
        let pts = line(&xs);
        let a = [0.1, 0.4, 0.0, 0.3, 0.2];
        let b = [0.25, 0.05, 0.3, 0.1, 0.3];
        let mut cdf = 0.0f64;
        let mut expected = 0.0;
        for i in 0..4 {
            cdf += a[i] - b[i];
            expected += cdf.abs() * (xs[i + 1] - xs[i]);
        }
        let cost = euclidean_cost(&pts, &pts);
        assert!((wasserstein_discrete(&a, &b, &cost).unwrap() - expected).abs() < 1e-12);
        assert!((wasserstein_dual(&a, &b, &pts).unwrap().0 - expected).abs() < 1e-12);
        let two = [vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!((wasserstein_vertex_enumeration(&[0.2, 0.8], &[0.5, 0.5], &two).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn rejects_unnormalized() {
        let cost = vec![vec![0.0; 2]; 2];
        assert!(matches!(
            wasserstein_discrete(&[0.5, 0.4], &[0.5, 0.5], &cost),
            Err(TheoryError::NotDistribution { which: "mu1", .. })
        ));
        assert!(wasserstein_discrete(&[1.1, -0.1], &[0.5, 0.5], &cost).is_err());
    }
}

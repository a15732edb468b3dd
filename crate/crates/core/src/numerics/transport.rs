use super::linalg::{symmetric_eigen, Matrix};
use super::{NumericsError, Result};
use std::cmp::Ordering;

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Exact optimal-transport cost between the uniform measures over the rows
/// of `xa` and `xb`, with Euclidean ground cost.
///
/// Masses are scaled to integers (`|b|/g` per source row, `|a|/g` per sink
/// row) and the transportation problem is solved by successive shortest
/// augmenting paths with Dijkstra potentials. Arguments are put in a
/// canonical order first, so the result is bit-for-bit symmetric.
pub fn wasserstein_ot(xa: &Matrix, xb: &Matrix) -> Result<f64> {
    if xa.rows() == 0 || xb.rows() == 0 {
        return Err(NumericsError::EmptySeries);
    }
    if xa.cols() != xb.cols() {
        return Err(NumericsError::ShapeMismatch(format!(
            "point clouds of dimension {} and {}",
            xa.cols(),
            xb.cols()
        )));
    }
    let (src, dst) = match lexicographic(xa.as_slice(), xb.as_slice()) {
        Ordering::Equal if xa.shape() == xb.shape() => return Ok(0.0),
        Ordering::Greater => (xb, xa),
        _ => (xa, xb),
    };
    let m = src.rows();
    let n = dst.rows();
    let cost: Vec<f64> = src
        .row_iter()
        .flat_map(|u| {
            dst.row_iter().map(move |v| {
                u.iter()
                    .zip(v)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
        })
        .collect();
    let g = gcd(m as u64, n as u64);
    let supply_unit = n as u64 / g;
    let demand_unit = m as u64 / g;
    let flow = transport_plan(&cost, m, n, supply_unit, demand_unit);
    let total_mass = (m as u64 * supply_unit) as f64;
    let mut acc = 0.0;
    for (f, c) in flow.iter().zip(&cost) {
        if *f > 0 {
            acc += *f as f64 * c;
        }
    }
    Ok(acc / total_mass)
}

/// Min-cost flow on the complete bipartite graph `m -> n` with uniform
/// integer supplies and demands. Returns the row-major flow matrix.
fn transport_plan(cost: &[f64], m: usize, n: usize, supply: u64, demand: u64) -> Vec<u64> {
    let mut flow = vec![0u64; m * n];
    let mut left = vec![supply; m];
    let mut need = vec![demand; n];
    // Node layout: sources 0..m, sinks m..m+n.
    let mut potential = vec![0.0f64; m + n];
    for j in 0..n {
        potential[m + j] = (0..m).map(|i| cost[i * n + j]).fold(f64::INFINITY, f64::min);
    }
    let mut dist = vec![f64::INFINITY; m + n];
    let mut parent = vec![usize::MAX; m + n];
    let mut done = vec![false; m + n];
    let mut remaining: u64 = supply * m as u64;

    while remaining > 0 {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        parent.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        for i in 0..m {
            if left[i] > 0 {
                dist[i] = 0.0;
            }
        }
        let mut target = usize::MAX;
        loop {
            let mut node = usize::MAX;
            let mut best = f64::INFINITY;
            for (v, &d) in dist.iter().enumerate() {
                if !done[v] && d < best {
                    best = d;
                    node = v;
                }
            }
            if node == usize::MAX {
                break;
            }
            done[node] = true;
            if node >= m && need[node - m] > 0 {
                target = node;
                break;
            }
            if node < m {
                let i = node;
                for j in 0..n {
                    let v = m + j;
                    if done[v] {
                        continue;
                    }
                    let reduced = (cost[i * n + j] + potential[i] - potential[v]).max(0.0);
                    if best + reduced < dist[v] {
                        dist[v] = best + reduced;
                        parent[v] = i;
                    }
                }
            } else {
                let j = node - m;
                for i in 0..m {
                    if done[i] || flow[i * n + j] == 0 {
                        continue;
                    }
                    let reduced = (-cost[i * n + j] + potential[node] - potential[i]).max(0.0);
                    if best + reduced < dist[i] {
                        dist[i] = best + reduced;
                        parent[i] = node;
                    }
                }
            }
        }
        assert!(target != usize::MAX, "transport problem is always feasible");
        let reach = dist[target];
        for v in 0..m + n {
            potential[v] += dist[v].min(reach);
        }

        // Walk back to the originating source, collecting the bottleneck.
        let mut amount = need[target - m];
        let mut v = target;
        while parent[v] != usize::MAX {
            let u = parent[v];
            if u >= m {
                // backward arc: sink u -> source v cancels flow on (v, u)
                amount = amount.min(flow[v * n + (u - m)]);
            }
            v = u;
        }
        amount = amount.min(left[v]);
        let origin = v;

        let mut v = target;
        while parent[v] != usize::MAX {
            let u = parent[v];
            if u < m {
                flow[u * n + (v - m)] += amount;
            } else {
                flow[v * n + (u - m)] -= amount;
            }
            v = u;
        }
        left[origin] -= amount;
        need[target - m] -= amount;
        remaining -= amount;
    }
    flow
}

/// Squared Fréchet distance between Gaussians,
/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`.
///
/// Matrix square roots come from symmetric eigendecompositions with negative
/// eigenvalues clamped to zero. Arguments are canonically ordered so the
/// result is exactly symmetric.
pub fn frechet_gaussian(mu_a: &[f64], cov_a: &Matrix, mu_b: &[f64], cov_b: &Matrix) -> Result<f64> {
    let d = mu_a.len();
    if mu_b.len() != d || cov_a.shape() != (d, d) || cov_b.shape() != (d, d) {
        return Err(NumericsError::ShapeMismatch(format!(
            "moments of dimension {d} / {} with covariances {:?} / {:?}",
            mu_b.len(),
            cov_a.shape(),
            cov_b.shape()
        )));
    }
    for c in [cov_a, cov_b] {
        let asym = c.max_asymmetry();
        if asym > 1e-8 {
            return Err(NumericsError::NotSymmetric(asym));
        }
    }
    let order = lexicographic(mu_a, mu_b)
        .then_with(|| lexicographic(cov_a.as_slice(), cov_b.as_slice()));
    let (mu_a, cov_a, mu_b, cov_b) = match order {
        Ordering::Equal => return Ok(0.0),
        Ordering::Greater => (mu_b, cov_b, mu_a, cov_a),
        Ordering::Less => (mu_a, cov_a, mu_b, cov_b),
    };

    let mean_term: f64 = mu_a.iter().zip(mu_b).map(|(a, b)| (a - b) * (a - b)).sum();
    let root_a = sqrt_psd(cov_a)?;
    let na = root_a.to_nalgebra();
    let inner = &na * cov_b.to_nalgebra() * &na;
    let inner = (&inner + inner.transpose()) * 0.5;
    let (inner_vals, _) = symmetric_eigen(&Matrix::from_nalgebra(&inner))?;
    let cross: f64 = inner_vals.iter().map(|v| v.max(0.0).sqrt()).sum();
    let trace_a: f64 = (0..d).map(|i| cov_a.get(i, i)).sum();
    let trace_b: f64 = (0..d).map(|i| cov_b.get(i, i)).sum();
    Ok((mean_term + trace_a + trace_b - 2.0 * cross).max(0.0))
}

fn sqrt_psd(a: &Matrix) -> Result<Matrix> {
    let (vals, vecs) = symmetric_eigen(a)?;
    let d = a.rows();
    let mut out = Matrix::zeros(d, d);
    for (lambda, v) in vals.iter().zip(vecs.row_iter()) {
        let s = lambda.max(0.0).sqrt();
        if s == 0.0 {
            continue;
        }
        for i in 0..d {
            for j in 0..d {
                out.set(i, j, out.get(i, j) + s * v[i] * v[j]);
            }
        }
    }
    Ok(out)
}

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Minimum-cost one-to-one assignment (linear sum assignment problem).
///
/// Shortest-augmenting-path variant of the Jonker-Volgenant algorithm with dual
/// potentials. Rectangular matrices are allowed; exactly `min(rows, cols)` pairs
/// are returned, sorted by row. Among columns tied on reduced cost the lowest
/// index that is still free wins, so results are deterministic.
pub fn solve_assignment<T: Real>(cost: &DMatrix<T>) -> Result<Vec<(usize, usize)>> {
    let (nr, nc) = cost.shape();
    if nr == 0 || nc == 0 {
        return Ok(Vec::new());
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("assignment costs must be finite".into()));
    }
    if nr > nc {
        let t = cost.transpose();
        let mut pairs: Vec<(usize, usize)> = solve_wide(&t).into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        return Ok(pairs);
    }
    Ok(solve_wide(cost))
}

/// Sum of `cost[r, c]` over the pairs, accumulated in pair order.
pub fn assignment_cost<T: Real>(cost: &DMatrix<T>, pairs: &[(usize, usize)]) -> T {
    pairs.iter().fold(T::zero(), |acc, &(r, c)| acc + cost[(r, c)])
}

/// Requires `rows <= cols`.
fn solve_wide<T: Real>(cost: &DMatrix<T>) -> Vec<(usize, usize)> {
    let (nr, nc) = cost.shape();
    let inf = T::infinity();
    let mut u = vec![T::zero(); nr];
    let mut v = vec![T::zero(); nc];
    let mut shortest = vec![inf; nc];
    let mut path = vec![usize::MAX; nc];
    let mut col4row = vec![usize::MAX; nr];
    let mut row4col = vec![usize::MAX; nc];
    let mut sr = vec![false; nr];
    let mut sc = vec![false; nc];
    let mut remaining: Vec<usize> = Vec::with_capacity(nc);

    for cur_row in 0..nr {
        shortest.fill(inf);
        sr.fill(false);
        sc.fill(false);
        remaining.clear();
        remaining.extend(0..nc);

        let mut min_val = T::zero();
        let mut i = cur_row;
        let sink = loop {
            sr[i] = true;
            let mut lowest = inf;
            let mut best = usize::MAX;
            let mut best_free = false;
            for (k, &j) in remaining.iter().enumerate() {
                let r = min_val + cost[(i, j)] - u[i] - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                // Ascending scan: the first tied column wins unless a later one is free.
                let free = row4col[j] == usize::MAX;
                if shortest[j] < lowest || (shortest[j] == lowest && free && !best_free) {
                    lowest = shortest[j];
                    best = k;
                    best_free = free;
                }
            }
            min_val = lowest;
            // `remove` keeps the remaining columns in ascending order.
            let j = remaining.remove(best);
            sc[j] = true;
            if row4col[j] == usize::MAX {
                break j;
            }
            i = row4col[j];
        };

        u[cur_row] = u[cur_row] + min_val;
        for r in 0..nr {
            if sr[r] && r != cur_row {
                u[r] = u[r] + min_val - shortest[col4row[r]];
            }
        }
        for c in 0..nc {
            if sc[c] {
                v[c] = v[c] - (min_val - shortest[c]);
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = r;
            std::mem::swap(&mut col4row[r], &mut j);
            if r == cur_row {
                break;
            }
        }
    }
    col4row.into_iter().enumerate().collect()
}

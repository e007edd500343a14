//! Exact linear assignment (Kuhn–Munkres with potentials, O(n³)) plus a
//! deterministic tie-break among optimal assignments.

/// Minimum-cost perfect assignment of a square cost matrix.
///
/// Returns `assign` with `assign[row] = col`. Among all optimal assignments
/// the one chosen is lexicographically smallest when rows are visited in
/// `row_order`.
pub fn min_cost_assignment(cost: &[Vec<f64>], row_order: &[usize]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let (assign, u, v) = solve(cost);
    let scale = cost
        .iter()
        .flatten()
        .fold(1.0f64, |acc, c| acc.max(c.abs()));
    let tol = 1e-12 * scale;
    let tight = |i: usize, j: usize| cost[i][j] - u[i] - v[j] <= tol;
    lexicographic_matching(n, assign, &tight, row_order)
}

/// Returns `(assignment, row potentials, column potentials)` with
/// `cost[i][j] ≥ u[i] + v[j]` and equality on the assignment.
fn solve(cost: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.len();
    // 1-based arrays with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[owner[j] - 1] = j - 1;
    }
    (assign, u[1..].to_vec(), v[1..].to_vec())
}

/// Walks rows in `row_order`, giving each the smallest column that still
/// admits a perfect matching on tight edges for the remaining rows.
fn lexicographic_matching(
    n: usize,
    mut assign: Vec<usize>,
    tight: &dyn Fn(usize, usize) -> bool,
    row_order: &[usize],
) -> Vec<usize> {
    let mut owner = vec![0; n];
    for (i, &j) in assign.iter().enumerate() {
        owner[j] = i;
    }
    let mut fixed_row = vec![false; n];
    let mut fixed_col = vec![false; n];
    for &i in row_order {
        for j in 0..n {
            if fixed_col[j] || !tight(i, j) {
                continue;
            }
            if assign[i] == j {
                break;
            }
            // free column assign[i] by rerouting the current owner of j
            let target = assign[i];
            let start = owner[j];
            let mut visited = vec![false; n];
            visited[j] = true;
            let mut path = Vec::new();
            if reroute(start, target, tight, &fixed_col, &mut visited, &assign, &owner, &mut path) {
                // path holds (row, new column) pairs
                for &(r, c) in &path {
                    assign[r] = c;
                    owner[c] = r;
                }
                assign[i] = j;
                owner[j] = i;
                break;
            }
        }
        fixed_row[i] = true;
        fixed_col[assign[i]] = true;
    }
    debug_assert!(fixed_row.iter().all(|&f| f));
    assign
}

#[allow(clippy::too_many_arguments)]
fn reroute(
    row: usize,
    target: usize,
    tight: &dyn Fn(usize, usize) -> bool,
    fixed_col: &[bool],
    visited: &mut [bool],
    assign: &[usize],
    owner: &[usize],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    for c in 0..assign.len() {
        if visited[c] || fixed_col[c] || !tight(row, c) {
            continue;
        }
        visited[c] = true;
        if c == target {
            path.push((row, c));
            return true;
        }
        let next = owner[c];
        if reroute(next, target, tight, fixed_col, visited, assign, owner, path) {
            path.push((row, c));
            return true;
        }
    }
    false
}

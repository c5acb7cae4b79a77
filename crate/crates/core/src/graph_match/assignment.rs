//! Linear assignment: a Hungarian solver with potentials for rectangular
//! problems and a Jonker-Volgenant solver for square ones.

/// Hungarian method with potentials, `O(n^2 m)`: minimum-cost assignment
/// of each of `rows` rows to a distinct column of a
/// row-major `rows x cols` cost matrix (`rows <= cols`). Returns the column of
/// each row.
pub fn min_cost_assignment(cost: &[f64], rows: usize, cols: usize) -> Vec<usize> {
    assert!(rows <= cols, "assignment needs rows <= cols");
    assert_eq!(cost.len(), rows * cols);
    if rows == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    // 1-based internals; index 0 is the virtual source column.
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    let mut minv = vec![inf; cols + 1];
    let mut used = vec![false; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = inf);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = &cost[(i0 - 1) * cols..i0 * cols];
            let ui = u[i0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - ui - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
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
    let mut out = vec![0usize; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            out[owner[j] - 1] = j - 1;
        }
    }
    out
}

/// Minimum-cost perfect assignment on a square `n x n` matrix by the
/// Jonker-Volgenant method: column reduction with reduction transfer, two
/// rounds of augmenting row reduction, then shortest augmenting paths.
/// Returns the column of each row.
pub fn lapjv(cost: &[f64], n: usize) -> Vec<usize> {
    let mut v = Vec::new();
    lapjv_with_potentials(cost, n, &mut v)
}

const NONE: usize = usize::MAX;

/// [`lapjv`] with reusable column potentials. When `v` holds the potentials
/// of an earlier, similar problem (length `n`), the initialization phases
/// are replaced by assigning each row to its cheapest reduced-cost column
/// where that column is still free, and only the conflicting rows are
/// augmented. `v` is overwritten with the final potentials.
pub fn lapjv_with_potentials(cost: &[f64], n: usize, v: &mut Vec<f64>) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        *v = vec![cost[0]];
        return vec![0];
    }
    let c = |i: usize, j: usize| cost[i * n + j];
    let mut x = vec![NONE; n];
    let mut y = vec![NONE; n];
    if v.len() == n && v.iter().all(|p| p.is_finite()) {
        let mut free = Vec::new();
        for i in 0..n {
            let mut best = (f64::INFINITY, 0usize);
            for j in 0..n {
                let r = c(i, j) - v[j];
                if r < best.0 {
                    best = (r, j);
                }
            }
            if y[best.1] == NONE {
                x[i] = best.1;
                y[best.1] = i;
            } else {
                free.push(i);
            }
        }
        augment(cost, n, &free, &mut x, &mut y, v);
        return x;
    }
    *v = vec![f64::INFINITY; n];

    // Column reduction.
    for i in 0..n {
        for j in 0..n {
            if c(i, j) < v[j] {
                v[j] = c(i, j);
                y[j] = i;
            }
        }
    }
    let mut unique = vec![true; n];
    for j in (0..n).rev() {
        let i = y[j];
        if x[i] == NONE {
            x[i] = j;
        } else {
            unique[i] = false;
            y[j] = NONE;
        }
    }
    let mut free = Vec::new();
    for i in 0..n {
        if x[i] == NONE {
            free.push(i);
        } else if unique[i] {
            // Reduction transfer.
            let j = x[i];
            let min = (0..n)
                .filter(|&j2| j2 != j)
                .map(|j2| c(i, j2) - v[j2])
                .fold(f64::INFINITY, f64::min);
            v[j] -= min;
        }
    }

    // Augmenting row reduction, twice.
    for _ in 0..2 {
        if free.is_empty() {
            break;
        }
        let n_free = free.len();
        let mut current = 0usize;
        let mut new_free = 0usize;
        let mut rr_cnt = 0usize;
        while current < n_free {
            rr_cnt += 1;
            let free_i = free[current];
            current += 1;
            let (mut j1, mut v1) = (0usize, c(free_i, 0) - v[0]);
            let (mut j2, mut v2) = (NONE, f64::INFINITY);
            for j in 1..n {
                let h = c(free_i, j) - v[j];
                if h < v2 {
                    if h >= v1 {
                        v2 = h;
                        j2 = j;
                    } else {
                        v2 = v1;
                        v1 = h;
                        j2 = j1;
                        j1 = j;
                    }
                }
            }
            let mut i0 = y[j1];
            let v1_new = v[j1] - (v2 - v1);
            let v1_lowers = v1_new < v[j1];
            if rr_cnt < current * n {
                if v1_lowers {
                    v[j1] = v1_new;
                } else if i0 != NONE && j2 != NONE {
                    j1 = j2;
                    i0 = y[j2];
                }
                if i0 != NONE {
                    if v1_lowers {
                        current -= 1;
                        free[current] = i0;
                    } else {
                        free[new_free] = i0;
                        new_free += 1;
                    }
                }
            } else if i0 != NONE {
                free[new_free] = i0;
                new_free += 1;
            }
            x[free_i] = j1;
            y[j1] = free_i;
        }
        free.truncate(new_free);
    }

    augment(cost, n, &free, &mut x, &mut y, v);
    x
}

/// Shortest augmenting paths for `free` rows; assigned rows must sit at
/// their minimum reduced cost.
fn augment(cost: &[f64], n: usize, free: &[usize], x: &mut [usize], y: &mut [usize], v: &mut [f64]) {
    let c = |i: usize, j: usize| cost[i * n + j];
    let mut pred = vec![0usize; n];
    let mut cols: Vec<usize> = (0..n).collect();
    let mut d = vec![0.0f64; n];
    for &start in free {
        for j in 0..n {
            cols[j] = j;
            pred[j] = start;
            d[j] = c(start, j) - v[j];
        }
        let (mut lo, mut hi) = (0usize, 0usize);
        let mut n_ready = 0usize;
        let mut final_j = NONE;
        while final_j == NONE {
            if lo == hi {
                // Collect the columns at minimum distance into cols[lo..hi].
                n_ready = lo;
                hi = lo + 1;
                let mut mind = d[cols[lo]];
                for k in lo + 1..n {
                    let j = cols[k];
                    if d[j] <= mind {
                        if d[j] < mind {
                            hi = lo;
                            mind = d[j];
                        }
                        cols[k] = cols[hi];
                        cols[hi] = j;
                        hi += 1;
                    }
                }
                for &j in &cols[lo..hi] {
                    if y[j] == NONE {
                        final_j = j;
                        break;
                    }
                }
            }
            if final_j == NONE {
                // Scan the ready columns.
                'scan: while lo != hi {
                    let j = cols[lo];
                    lo += 1;
                    let i = y[j];
                    let mind = d[j];
                    let h = c(i, j) - v[j] - mind;
                    let mut k = hi;
                    while k < n {
                        let j = cols[k];
                        let cred = c(i, j) - v[j] - h;
                        if cred < d[j] {
                            d[j] = cred;
                            pred[j] = i;
                            if cred == mind {
                                if y[j] == NONE {
                                    final_j = j;
                                    break 'scan;
                                }
                                cols[k] = cols[hi];
                                cols[hi] = j;
                                hi += 1;
                            }
                        }
                        k += 1;
                    }
                }
            }
        }
        let mind = d[cols[lo]];
        for &j in &cols[..n_ready] {
            v[j] += d[j] - mind;
        }
        // Augment along the predecessor chain.
        let mut j = final_j;
        loop {
            let i = pred[j];
            y[j] = i;
            let prev = x[i];
            x[i] = j;
            if i == start {
                break;
            }
            j = prev;
        }
    }
}

/// Maximum-weight perfect assignment on a square `n x n` matrix.
pub fn max_weight_assignment(weight: &[f64], n: usize) -> Vec<usize> {
    let cost: Vec<f64> = weight.iter().map(|w| -w).collect();
    lapjv(&cost, n)
}

/// Minimum-cost perfect assignment on a square cost matrix (row-major,
/// `n * n`) via the Hungarian method with potentials. Returns the column
/// assigned to each row.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n*n");
    if n == 0 {
        return Vec::new();
    }
    let c = |i: usize, j: usize| cost[(i - 1) * n + (j - 1)];
    // 1-based potentials and matching; column 0 is a virtual sink.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c(i0, j) - u[i0] - v[j];
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
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[row_of[j] - 1] = j - 1;
    }
    assign
}

/// Result of the auction solver: an assignment, its cost and a dual lower bound.
#[derive(Clone, Debug)]
pub struct AuctionResult {
    pub assignment: Vec<usize>,
    pub primal: f64,
    pub dual: f64,
}

/// Forward auction with epsilon scaling for minimum-cost assignment.
pub fn auction(cost: &[f64], n: usize) -> AuctionResult {
    assert_eq!(cost.len(), n * n, "cost matrix must be n*n");
    if n == 0 {
        return AuctionResult {
            assignment: vec![],
            primal: 0.0,
            dual: 0.0,
        };
    }
    let max_cost = cost.iter().copied().fold(0.0, f64::max);
    let mean_cost = cost.iter().sum::<f64>() / cost.len() as f64;
    let eps_final = (1e-4 * mean_cost / n as f64).max(1e-12);
    let mut eps = (max_cost / 4.0).max(eps_final);
    let mut price = vec![0.0; n];
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    loop {
        owner.iter_mut().for_each(|o| *o = None);
        assigned.iter_mut().for_each(|a| *a = None);
        let mut queue: Vec<usize> = (0..n).rev().collect();
        while let Some(i) = queue.pop() {
            let row = &cost[i * n..(i + 1) * n];
            let (mut best_j, mut best, mut second) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (j, c) in row.iter().enumerate() {
                let value = -c - price[j];
                if value > best {
                    second = best;
                    best = value;
                    best_j = j;
                } else if value > second {
                    second = value;
                }
            }
            let increment = if second.is_finite() { best - second } else { 0.0 };
            price[best_j] += increment + eps;
            if let Some(prev) = owner[best_j] {
                assigned[prev] = None;
                queue.push(prev);
            }
            owner[best_j] = Some(i);
            assigned[i] = Some(best_j);
        }
        if eps <= eps_final {
            break;
        }
        eps = (eps / 5.0).max(eps_final);
    }
    let assignment: Vec<usize> = assigned.into_iter().map(|a| a.expect("complete")).collect();
    let primal = assignment.iter().enumerate().map(|(i, j)| cost[i * n + j]).sum();
    let dual = (0..n)
        .map(|i| {
            cost[i * n..(i + 1) * n]
                .iter()
                .zip(&price)
                .map(|(c, p)| c + p)
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        - price.iter().sum::<f64>();
    AuctionResult {
        assignment,
        primal,
        dual,
    }
}

use crate::error::{Error, Result};

/// Optimal one-to-one matching of every ground truth to a distinct prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    /// `(pred_index, gt_index)`, one per ground truth, ordered by `gt_index`.
    pub pairs: Vec<(usize, usize)>,
    pub num_preds: usize,
}

impl Assignment {
    /// Ground-truth index matched to each prediction, if any.
    pub fn gt_for_pred(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.num_preds];
        for &(p, g) in &self.pairs {
            out[p] = Some(g);
        }
        out
    }

    /// Sum of `cost[gt][pred]` over the pairs, in ground-truth order.
    pub fn total(&self, cost: &[Vec<f64>]) -> f64 {
        self.pairs.iter().map(|&(p, g)| cost[g][p]).sum()
    }
}

/// Minimum-cost assignment for an `M × J` cost matrix (`cost[gt][pred]`)
/// with `M ≤ J`, using shortest augmenting paths with row/column potentials.
pub fn hungarian(cost: &[Vec<f64>], num_preds: usize) -> Result<Assignment> {
    let m = cost.len();
    let n = num_preds;
    if m > n {
        return Err(Error::Invalid(format!("{m} ground-truth objects exceed {n} predictions")));
    }
    for row in cost {
        if row.len() != n {
            return Err(Error::shape("hungarian", format!("row of {} costs, expected {n}", row.len())));
        }
        if row.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("hungarian cost matrix".into()));
        }
    }
    if m == 0 {
        return Ok(Assignment { pairs: vec![], num_preds: n });
    }

    // 1-based indices; column 0 is a virtual start node.
    let mut u = vec![0.0; m + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=m {
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
    let mut pairs: Vec<(usize, usize)> = (1..=n).filter(|&j| owner[j] != 0).map(|j| (j - 1, owner[j] - 1)).collect();
    pairs.sort_by_key(|&(_, g)| g);
    Ok(Assignment { pairs, num_preds: n })
}

/// Exhaustive minimum over all injective maps; exponential, for testing.
pub fn brute_force_assignment(cost: &[Vec<f64>], num_preds: usize) -> Option<(f64, Vec<usize>)> {
    fn go(
        cost: &[Vec<f64>],
        g: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if g == cost.len() {
            let total: f64 = cur.iter().enumerate().map(|(g, &p)| cost[g][p]).sum();
            if best.as_ref().is_none_or(|(b, _)| total < *b) {
                *best = Some((total, cur.clone()));
            }
            return;
        }
        for p in 0..used.len() {
            if !used[p] {
                used[p] = true;
                cur.push(p);
                go(cost, g + 1, used, cur, best);
                cur.pop();
                used[p] = false;
            }
        }
    }
    if cost.len() > num_preds {
        return None;
    }
    let mut best = None;
    go(cost, 0, &mut vec![false; num_preds], &mut vec![], &mut best);
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn single_entry() {
        let a = hungarian(&[vec![3.5]], 1).unwrap();
        assert_eq!(a.pairs, vec![(0, 0)]);
    }

    #[test]
    fn two_by_two() {
        let c = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let a = hungarian(&c, 2).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total(&c), 2.0);
    }

    #[test]
    fn more_gt_than_preds_is_an_error() {
        assert!(hungarian(&[vec![1.0], vec![2.0]], 1).is_err());
    }

    #[test]
    fn empty_ground_truth() {
        let a = hungarian(&[], 4).unwrap();
        assert!(a.pairs.is_empty());
        assert_eq!(a.gt_for_pred(), vec![None; 4]);
    }

    #[test]
    fn matches_brute_force_on_rectangular_matrices() {
        let mut rng = crate::seed::rng_for(5, "hungarian-test");
        for _ in 0..100 {
            let c: Vec<Vec<f64>> = (0..5).map(|_| (0..7).map(|_| rng.gen_range(-3.0..10.0)).collect()).collect();
            let a = hungarian(&c, 7).unwrap();
            let (best, _) = brute_force_assignment(&c, 7).unwrap();
            assert_eq!(a.total(&c), best);
            let mut preds: Vec<usize> = a.pairs.iter().map(|p| p.0).collect();
            preds.sort();
            preds.dedup();
            assert_eq!(preds.len(), 5);
        }
    }

    #[test]
    fn tied_costs() {
        let c = vec![vec![1.0; 4]; 3];
        let a = hungarian(&c, 4).unwrap();
        assert_eq!(a.total(&c), 3.0);
    }
}

//! Progressive Edge Growth.
//!
//! Variables are processed in increasing degree order. The first edge of a
//! variable goes to the least-loaded check; every further edge goes to the
//! check that is farthest from the variable in the current graph (unreachable
//! counts as infinitely far), ties broken by lowest current degree and then
//! lowest index. Each check has a target degree from the check-side
//! distribution and stops accepting edges once it reaches it, which makes
//! regular profiles come out exactly regular.
//!
//! Capacities can leave the final variable or two with only nearby checks;
//! a closing pass swaps such edges with distant ones, keeping all degrees.
//!
//! Check target degrees: node counts per degree by largest remainder, listed
//! ascending over check indices; any difference against the variable-side
//! edge count is then spread one edge at a time over checks in index order
//! (added to the lowest-degree checks, removed from the highest).

use rand::seq::SliceRandom;

use super::{DegreeDistribution, LdpcError, SparseParityMatrix};
use crate::bits::SeededRng;

const UNREACHED: u32 = u32::MAX;

struct Graph {
    var_adj: Vec<Vec<u32>>,
    chk_adj: Vec<Vec<u32>>,
    chk_target: Vec<usize>,
    // BFS scratch, reused across edges.
    chk_depth: Vec<u32>,
    var_seen: Vec<u32>,
    stamp: u32,
    frontier: Vec<u32>,
    next: Vec<u32>,
}

impl Graph {
    fn full(&self, c: usize) -> bool {
        self.chk_adj[c].len() >= self.chk_target[c]
    }

    /// Depth of every check reachable from `v` (0 = already adjacent).
    fn expand(&mut self, v: usize) {
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.var_seen.fill(0);
            self.stamp = 1;
        }
        self.chk_depth.fill(UNREACHED);
        self.var_seen[v] = self.stamp;
        self.frontier.clear();
        for &c in &self.var_adj[v] {
            self.chk_depth[c as usize] = 0;
            self.frontier.push(c);
        }
        let mut depth = 0;
        while !self.frontier.is_empty() {
            depth += 1;
            self.next.clear();
            for &c in &self.frontier {
                for &u in &self.chk_adj[c as usize] {
                    if self.var_seen[u as usize] == self.stamp {
                        continue;
                    }
                    self.var_seen[u as usize] = self.stamp;
                    for &c2 in &self.var_adj[u as usize] {
                        if self.chk_depth[c2 as usize] == UNREACHED {
                            self.chk_depth[c2 as usize] = depth;
                            self.next.push(c2);
                        }
                    }
                }
            }
            std::mem::swap(&mut self.frontier, &mut self.next);
        }
    }

    /// Whether edge `(v, c)` closes a length-4 cycle.
    fn in_four_cycle(&self, v: usize, c: u32) -> bool {
        self.chk_adj[c as usize].iter().any(|&u| {
            u as usize != v && self.var_adj[u as usize].iter().any(|&c2| c2 != c && self.var_adj[v].contains(&c2))
        })
    }

    fn swap(&mut self, v: usize, c: u32, u: usize, c2: u32) {
        let replace = |list: &mut Vec<u32>, from: u32, to: u32| {
            let at = list.iter().position(|&x| x == from).expect("edge present");
            list[at] = to;
        };
        replace(&mut self.var_adj[v], c, c2);
        replace(&mut self.var_adj[u], c2, c);
        replace(&mut self.chk_adj[c as usize], v as u32, u as u32);
        replace(&mut self.chk_adj[c2 as usize], u as u32, v as u32);
    }

    /// Trades edge endpoints to break the 4-cycles the hard check capacities
    /// force on the last few variables. Degrees are unchanged.
    fn repair_four_cycles(&mut self) {
        let n = self.var_adj.len();
        for v in 0..n {
            let mut k = 0;
            while k < self.var_adj[v].len() {
                let c = self.var_adj[v][k];
                if self.in_four_cycle(v, c) {
                    self.swap_out(v, c);
                }
                k += 1;
            }
        }
    }

    fn swap_out(&mut self, v: usize, c: u32) {
        for u in 0..self.var_adj.len() {
            if u == v || self.var_adj[u].contains(&c) {
                continue;
            }
            for j in 0..self.var_adj[u].len() {
                let c2 = self.var_adj[u][j];
                if self.var_adj[v].contains(&c2) {
                    continue;
                }
                self.swap(v, c, u, c2);
                if !self.in_four_cycle(v, c2) && !self.in_four_cycle(u, c) {
                    return;
                }
                self.swap(v, c2, u, c);
            }
        }
    }

    fn pick(&self, v: usize, use_depth: bool) -> Option<usize> {
        let mut best: Option<(u32, usize, usize)> = None;
        for c in 0..self.chk_adj.len() {
            if self.full(c) || self.var_adj[v].contains(&(c as u32)) {
                continue;
            }
            let depth = if use_depth { self.chk_depth[c] } else { UNREACHED };
            let deg = self.chk_adj[c].len();
            let better = match best {
                None => true,
                Some((bd, bdeg, _)) => depth > bd || (depth == bd && deg < bdeg),
            };
            if better {
                best = Some((depth, deg, c));
            }
        }
        best.map(|b| b.2)
    }
}

fn check_targets(dist: &DegreeDistribution, n_rows: usize, n_edges: usize, n_cols: usize) -> Result<Vec<usize>, LdpcError> {
    let mut targets = DegreeDistribution::node_degrees(&dist.check_degrees, n_rows);
    let mut total: usize = targets.iter().sum();
    let limit = n_rows * n_cols;
    if n_edges > limit {
        return Err(LdpcError::Infeasible(format!("{n_edges} edges exceed check capacity {limit}")));
    }
    let mut i = 0usize;
    let mut stalled = 0usize;
    while total != n_edges {
        if total < n_edges {
            // Smallest degree first.
            let c = (0..n_rows).map(|k| (i + k) % n_rows).min_by_key(|&c| targets[c]).expect("rows > 0");
            if targets[c] >= n_cols {
                return Err(LdpcError::Infeasible("cannot raise check degrees further".into()));
            }
            targets[c] += 1;
            total += 1;
        } else {
            let c = (0..n_rows).map(|k| (i + k) % n_rows).max_by_key(|&c| (targets[c], usize::MAX - c)).expect("rows > 0");
            if targets[c] <= 1 {
                return Err(LdpcError::Infeasible("check degrees would drop below 1".into()));
            }
            targets[c] -= 1;
            total -= 1;
        }
        i += 1;
        stalled += 1;
        if stalled > limit {
            return Err(LdpcError::Infeasible("could not balance check degrees".into()));
        }
    }
    Ok(targets)
}

/// Builds an `n_block (1 - R_c) x n_block` parity-check matrix.
///
/// `rng` only draws the column labelling; every edge choice is deterministic.
pub fn peg_construct(
    n_block: usize,
    code_rate: f64,
    dist: &DegreeDistribution,
    rng: &mut SeededRng,
) -> Result<SparseParityMatrix, LdpcError> {
    if n_block < 4 {
        return Err(LdpcError::BadParameters(format!("n_block = {n_block} < 4")));
    }
    if !(code_rate > 0.0 && code_rate < 1.0) {
        return Err(LdpcError::BadParameters(format!("code rate {code_rate} not in (0, 1)")));
    }
    dist.validate()?;
    if (dist.design_rate() - code_rate).abs() > 1e-3 {
        return Err(LdpcError::BadDistribution(format!(
            "design rate {} inconsistent with declared rate {code_rate}",
            dist.design_rate()
        )));
    }
    let n_rows = (n_block as f64 * (1.0 - code_rate)).round() as usize;
    if n_rows == 0 {
        return Err(LdpcError::BadParameters("code has no parity checks".into()));
    }
    let var_degrees = DegreeDistribution::node_degrees(&dist.variable_degrees, n_block);
    if let Some(&dmax) = var_degrees.last() {
        if dmax > n_rows {
            return Err(LdpcError::Infeasible(format!("variable degree {dmax} exceeds {n_rows} checks")));
        }
    }
    let n_edges: usize = var_degrees.iter().sum();
    let chk_target = check_targets(dist, n_rows, n_edges, n_block)?;

    let mut g = Graph {
        var_adj: vec![Vec::new(); n_block],
        chk_adj: vec![Vec::new(); n_rows],
        chk_target,
        chk_depth: vec![UNREACHED; n_rows],
        var_seen: vec![0; n_block],
        stamp: 0,
        frontier: Vec::new(),
        next: Vec::new(),
    };
    for (v, &deg) in var_degrees.iter().enumerate() {
        for edge in 0..deg {
            let c = if edge == 0 {
                g.pick(v, false)
            } else {
                g.expand(v);
                g.pick(v, true)
            }
            .ok_or_else(|| LdpcError::Infeasible(format!("no free check left for variable {v}")))?;
            g.var_adj[v].push(c as u32);
            g.chk_adj[c].push(v as u32);
        }
    }

    g.repair_four_cycles();

    let mut labels: Vec<u32> = (0..n_block as u32).collect();
    labels.shuffle(rng);
    let rows = g.chk_adj.iter().map(|vars| vars.iter().map(|&v| labels[v as usize]).collect()).collect();
    let mut h = SparseParityMatrix::from_rows(n_block, rows, code_rate)?;
    h.seed = rng.seed();
    h.distribution = Some(dist.clone());
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_regular_code() {
        let h = peg_construct(8, 0.5, &DegreeDistribution::regular(3, 6), &mut SeededRng::new(1)).unwrap();
        assert_eq!((h.n_rows(), h.n_cols()), (4, 8));
        assert!(h.col_weights().iter().all(|&w| w == 3));
        assert!(h.row_weights().iter().all(|&w| w == 6));
    }

    #[test]
    fn deterministic_per_seed() {
        let d = DegreeDistribution::default_rate_half();
        let a = peg_construct(500, 0.5, &d, &mut SeededRng::new(7)).unwrap();
        let b = peg_construct(500, 0.5, &d, &mut SeededRng::new(7)).unwrap();
        assert_eq!(a, b);
        let c = peg_construct(500, 0.5, &d, &mut SeededRng::new(8)).unwrap();
        assert_ne!(a.rows(), c.rows());
    }

    #[test]
    fn regular_profile_is_exact_and_four_cycle_free() {
        let h = peg_construct(2000, 0.5, &DegreeDistribution::default_rate_half(), &mut SeededRng::new(3)).unwrap();
        assert!(h.col_weights().iter().all(|&w| w == 3));
        assert!(h.row_weights().iter().all(|&w| w == 6));
        assert!(!h.has_four_cycle());
    }

    #[test]
    fn irregular_profile_histograms() {
        // lambda(x) = 0.3 x + 0.7 x^2 (degrees 2, 3); rho(x) = x^5 (degree 6); rate 1 - (1/6)/(0.15 + 0.2333).
        let dist = DegreeDistribution { variable_degrees: vec![(2, 0.3), (3, 0.7)], check_degrees: vec![(6, 1.0)] };
        let rate = dist.design_rate();
        let n = 1200;
        let h = peg_construct(n, rate, &dist, &mut SeededRng::new(4)).unwrap();
        let mut expected = DegreeDistribution::node_degrees(&dist.variable_degrees, n);
        let mut got = h.col_weights();
        expected.sort_unstable();
        got.sort_unstable();
        assert_eq!(got, expected);
        assert_eq!(h.n_edges(), expected.iter().sum::<usize>());
        let rows = h.row_weights();
        assert!(rows.iter().all(|&w| (5..=7).contains(&w)));
    }

    #[test]
    fn rejects_bad_inputs() {
        let d = DegreeDistribution::regular(3, 6);
        let mut rng = SeededRng::new(0);
        assert!(peg_construct(3, 0.5, &d, &mut rng).is_err());
        assert!(peg_construct(100, 1.0, &d, &mut rng).is_err());
        assert!(peg_construct(100, 0.7, &d, &mut rng).is_err());
        // Variable degree larger than the number of checks.
        let wide = DegreeDistribution::regular(6, 12);
        assert!(matches!(peg_construct(8, 0.5, &wide, &mut rng), Err(LdpcError::Infeasible(_))));
    }
}

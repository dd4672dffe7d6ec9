//! Integer version of the dual: pick equal-sized treated and control
//! subsets minimizing `(2 lambda)^-1 s'Qs - 1's`.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::QMatrix;

pub const DEFAULT_EXACT_CAP: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QipSolution {
    pub selection: Vec<bool>,
    pub objective: f64,
    pub exact: bool,
    pub elapsed: Duration,
}

impl QipSolution {
    pub fn selected(&self) -> usize {
        self.selection.iter().filter(|&&s| s).count()
    }
}

/// Objective of a 0/1 selection.
pub fn qip_objective(q: &QMatrix, selection: &[bool], lambda: f64) -> f64 {
    let s: Vec<f64> = selection.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    q.quad_form(&s) / (2.0 * lambda) - s.iter().sum::<f64>()
}

fn check(q: &QMatrix, w: &[f64], lambda: f64) -> Result<()> {
    if q.n() != w.len() {
        return Err(Error::Dimension(format!("Q is {0}x{0}, W has {1}", q.n(), w.len())));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

struct Enumerator<'a> {
    q: &'a QMatrix,
    /// `Q s` for the current partial selection.
    v: Vec<f64>,
    quad: f64,
    chosen: Vec<usize>,
    best_quad: f64,
    best: Vec<usize>,
}

impl Enumerator<'_> {
    fn add(&mut self, i: usize) {
        self.quad += 2.0 * self.v[i] + self.q.get(i, i);
        let col = self.q.matrix().column(i);
        for (vk, c) in self.v.iter_mut().zip(col.iter()) {
            *vk += c;
        }
        self.chosen.push(i);
    }

    fn remove(&mut self, i: usize) {
        let col = self.q.matrix().column(i);
        for (vk, c) in self.v.iter_mut().zip(col.iter()) {
            *vk -= c;
        }
        self.quad -= 2.0 * self.v[i] + self.q.get(i, i);
        self.chosen.pop();
    }

    /// Chooses `k` more units from `pool[from..]`, then continues with
    /// `next` (the control pool) or records a leaf.
    fn dfs(&mut self, pool: &[usize], from: usize, k: usize, next: Option<(&[usize], usize)>) {
        if k == 0 {
            match next {
                Some((p2, k2)) => self.dfs(p2, 0, k2, None),
                None => {
                    if self.quad < self.best_quad {
                        self.best_quad = self.quad;
                        self.best.clone_from(&self.chosen);
                    }
                }
            }
            return;
        }
        for idx in from..=pool.len() - k {
            self.add(pool[idx]);
            self.dfs(pool, idx + 1, k - 1, next);
            self.remove(pool[idx]);
        }
    }
}

/// Global optimum by enumerating every equal-count subset, largest
/// counts first. Refuses `N > max_n`.
pub fn solve_qip_exact(q: &QMatrix, w: &[f64], lambda: f64, max_n: usize) -> Result<QipSolution> {
    check(q, w, lambda)?;
    let n = w.len();
    if n > max_n {
        return Err(Error::TooLarge { n, cap: max_n });
    }
    let start = Instant::now();
    let treated: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
    let controls: Vec<usize> = (0..n).filter(|&i| w[i] < 0.0).collect();
    let mut best_obj = 0.0;
    let mut best_sel: Vec<usize> = Vec::new();
    for k in (1..=treated.len().min(controls.len())).rev() {
        // s'Qs >= 0, so size k cannot beat -2k
        if -2.0 * k as f64 >= best_obj {
            break;
        }
        let mut e = Enumerator {
            q,
            v: vec![0.0; n],
            quad: 0.0,
            chosen: Vec::with_capacity(2 * k),
            best_quad: f64::INFINITY,
            best: Vec::new(),
        };
        e.dfs(&treated, 0, k, Some((&controls, k)));
        let obj = e.best_quad / (2.0 * lambda) - 2.0 * k as f64;
        if obj < best_obj {
            best_obj = obj;
            best_sel = e.best;
        }
    }
    let mut selection = vec![false; n];
    for i in best_sel {
        selection[i] = true;
    }
    let objective = qip_objective(q, &selection, lambda);
    Ok(QipSolution { selection, objective, exact: true, elapsed: start.elapsed() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicOptions {
    /// Wall-clock cap; zero returns the greedy solution.
    pub time_budget: Duration,
    /// Annealing moves per restart.
    pub iterations: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for HeuristicOptions {
    fn default() -> Self {
        Self { time_budget: Duration::from_secs(5), iterations: 20_000, restarts: 8, seed: 0 }
    }
}

#[derive(Clone)]
struct Local<'a> {
    q: &'a QMatrix,
    lambda: f64,
    sel: Vec<bool>,
    v: Vec<f64>,
    quad: f64,
    count: usize,
}

impl<'a> Local<'a> {
    fn new(q: &'a QMatrix, lambda: f64) -> Self {
        let n = q.n();
        Self { q, lambda, sel: vec![false; n], v: vec![0.0; n], quad: 0.0, count: 0 }
    }

    fn objective(&self) -> f64 {
        self.quad / (2.0 * self.lambda) - self.count as f64
    }

    fn toggle(&mut self, i: usize) {
        let sign = if self.sel[i] { -1.0 } else { 1.0 };
        if sign < 0.0 {
            self.quad += -2.0 * self.v[i] + self.q.get(i, i);
        } else {
            self.quad += 2.0 * self.v[i] + self.q.get(i, i);
        }
        let col = self.q.matrix().column(i);
        for (vk, c) in self.v.iter_mut().zip(col.iter()) {
            *vk += sign * c;
        }
        self.sel[i] = !self.sel[i];
        if sign > 0.0 {
            self.count += 1;
        } else {
            self.count -= 1;
        }
    }

    /// Objective change from flipping `a` and `b` together.
    fn delta2(&self, a: usize, b: usize) -> f64 {
        let sa = if self.sel[a] { -1.0 } else { 1.0 };
        let sb = if self.sel[b] { -1.0 } else { 1.0 };
        let dq = sa * 2.0 * self.v[a] + self.q.get(a, a) + sb * 2.0 * self.v[b] + self.q.get(b, b)
            + 2.0 * sa * sb * self.q.get(a, b);
        dq / (2.0 * self.lambda) - (sa + sb)
    }
}

fn greedy<'a>(q: &'a QMatrix, w: &[f64], lambda: f64) -> Local<'a> {
    let n = w.len();
    let mut st = Local::new(q, lambda);
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for t in (0..n).filter(|&i| w[i] > 0.0 && !st.sel[i]) {
            for c in (0..n).filter(|&i| w[i] < 0.0 && !st.sel[i]) {
                let d = st.delta2(t, c);
                if d < -1e-12 && best.is_none_or(|b| d < b.0) {
                    best = Some((d, t, c));
                }
            }
        }
        match best {
            Some((_, t, c)) => {
                st.toggle(t);
                st.toggle(c);
            }
            None => return st,
        }
    }
}

fn anneal<'a>(start: &Local<'a>, w: &[f64], iterations: usize, seed: u64, deadline: Instant) -> Local<'a> {
    let n = w.len();
    let treated: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
    let controls: Vec<usize> = (0..n).filter(|&i| w[i] < 0.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cur = start.clone();
    let mut best = start.clone();
    let (t0, t1) = (1.0f64, 1e-4f64);
    for it in 0..iterations {
        if it % 256 == 0 && Instant::now() >= deadline {
            break;
        }
        let temp = t0 * (t1 / t0).powf(it as f64 / iterations.max(1) as f64);
        let mv = rng.random_range(0..3);
        let (a, b) = match mv {
            // swap within one group
            0 => {
                let g = if rng.random::<bool>() { &treated } else { &controls };
                let a = g[rng.random_range(0..g.len())];
                let b = g[rng.random_range(0..g.len())];
                if cur.sel[a] == cur.sel[b] {
                    continue;
                }
                (a, b)
            }
            // add or drop a balanced pair
            _ => {
                let a = treated[rng.random_range(0..treated.len())];
                let b = controls[rng.random_range(0..controls.len())];
                if cur.sel[a] != cur.sel[b] {
                    continue;
                }
                (a, b)
            }
        };
        let d = cur.delta2(a, b);
        if d <= 0.0 || rng.random::<f64>() < (-d / temp).exp() {
            cur.toggle(a);
            cur.toggle(b);
            if cur.objective() < best.objective() - 1e-12 {
                best = cur.clone();
            }
        }
    }
    best
}

/// Greedy pair insertion followed by seeded simulated annealing restarts.
/// Never worse than the greedy start.
pub fn solve_qip_heuristic(q: &QMatrix, w: &[f64], lambda: f64, opts: &HeuristicOptions) -> Result<QipSolution> {
    check(q, w, lambda)?;
    let start = Instant::now();
    let deadline = start + opts.time_budget;
    let g = greedy(q, w, lambda);
    let has_both = w.iter().any(|&v| v > 0.0) && w.iter().any(|&v| v < 0.0);
    let best = if opts.time_budget.is_zero() || !has_both || opts.iterations == 0 {
        g
    } else {
        let runs: Vec<Local> = (0..opts.restarts.max(1))
            .into_par_iter()
            .map(|r| anneal(&g, w, opts.iterations, opts.seed.wrapping_add(r as u64), deadline))
            .collect();
        runs.into_iter()
            .fold(g, |b, r| {
                let (ob, or) = (b.objective(), r.objective());
                if or < ob - 1e-12 || ((or - ob).abs() <= 1e-12 && r.sel > b.sel) {
                    r
                } else {
                    b
                }
            })
    };
    let objective = qip_objective(q, &best.sel, lambda);
    Ok(QipSolution { selection: best.sel, objective, exact: false, elapsed: start.elapsed() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::kernels::{gram, q_matrix, Gamma, KernelSpec};
    use crate::qp::solve_dual;
    use nalgebra::DMatrix;
    use rand_distr::{Distribution, StandardNormal};

    fn random(seed: u64, n: usize, n_t: usize, spec: KernelSpec) -> (QMatrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..n).map(|i| if i < n_t { 1.0 } else { -1.0 }).collect();
        let x = DMatrix::from_fn(n, 2, |i, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z + if i < n_t { 0.7 } else { 0.0 }
        });
        (q_matrix(&gram(&x, &spec).unwrap(), &w).unwrap(), w)
    }

    #[test]
    fn identical_pair_is_selected() {
        let q = q_matrix(&DMatrix::from_element(2, 2, 1.0), &[1.0, -1.0]).unwrap();
        let s = solve_qip_exact(&q, &[1.0, -1.0], 100.0, 24).unwrap();
        assert_eq!(s.selection, vec![true, true]);
        assert!((s.objective + 2.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_lambda_selects_nothing() {
        let (q, w) = random(1, 8, 4, KernelSpec::Linear);
        let s = solve_qip_exact(&q, &w, 1e-9, 24).unwrap();
        assert_eq!(s.selected(), 0);
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn two_by_two_matches_hand_enumeration() {
        let (q, w) = random(2, 4, 2, KernelSpec::Rbf { gamma: Gamma::Fixed(1.0) });
        let lambda = 0.3;
        // equal counts leave 1 + 4 + 1 feasible subsets
        let mut subsets = vec![vec![false; 4], vec![true; 4]];
        for t in 0..2 {
            for c in 2..4 {
                let mut s = vec![false; 4];
                s[t] = true;
                s[c] = true;
                subsets.push(s);
            }
        }
        assert_eq!(subsets.len(), 6);
        let best = subsets.iter().map(|s| qip_objective(&q, s, lambda)).fold(f64::INFINITY, f64::min);
        let s = solve_qip_exact(&q, &w, lambda, 24).unwrap();
        assert!((s.objective - best).abs() < 1e-12);
    }

    #[test]
    fn size_cap_is_enforced() {
        let (q, w) = random(3, 26, 13, KernelSpec::Linear);
        assert!(matches!(solve_qip_exact(&q, &w, 1.0, 24), Err(Error::TooLarge { n: 26, cap: 24 })));
    }

    #[test]
    fn relaxation_bounds_integer_optimum() {
        for seed in 0..20 {
            let spec = [KernelSpec::Linear, KernelSpec::Polynomial { degree: 2, scale_c: 1.0 }][seed as usize % 2];
            let (q, w) = random(10 + seed, 12, 5, spec);
            for lambda in [0.05, 0.5, 5.0] {
                let dual = solve_dual(&q, &w, lambda).unwrap().objective;
                let int = solve_qip_exact(&q, &w, lambda, 24).unwrap().objective;
                assert!(dual <= int + 1e-9, "{dual} > {int}");
            }
        }
    }

    #[test]
    fn heuristic_usually_finds_optimum() {
        let mut hits = 0;
        for seed in 0..100 {
            let (q, w) = random(100 + seed, 16, 7, KernelSpec::Rbf { gamma: Gamma::Median });
            let lambda = 0.2;
            let exact = solve_qip_exact(&q, &w, lambda, 24).unwrap();
            let opts = HeuristicOptions { seed, ..HeuristicOptions::default() };
            let h = solve_qip_heuristic(&q, &w, lambda, &opts).unwrap();
            assert!(h.objective >= exact.objective - 1e-9);
            if h.objective <= exact.objective + 1e-6 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn zero_budget_is_greedy() {
        let (q, w) = random(5, 14, 6, KernelSpec::Linear);
        let opts = HeuristicOptions { time_budget: Duration::ZERO, ..HeuristicOptions::default() };
        let h0 = solve_qip_heuristic(&q, &w, 0.5, &opts).unwrap();
        let g = greedy(&q, &w, 0.5);
        assert_eq!(h0.selection, g.sel);
        let h = solve_qip_heuristic(&q, &w, 0.5, &HeuristicOptions::default()).unwrap();
        assert!(h.objective <= h0.objective + 1e-12);
    }

    #[test]
    fn overlapping_pairs_are_chosen() {
        // two matched pairs, plus one far-off unit per group
        let x = DMatrix::from_row_slice(6, 1, &[0.0, 1.0, 10.0, 0.0, 1.0, -10.0]);
        let w = [1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
        let q = q_matrix(&gram(&x, &KernelSpec::Rbf { gamma: Gamma::Fixed(1.0) }).unwrap(), &w).unwrap();
        let want = vec![true, true, false, true, true, false];
        assert_eq!(solve_qip_exact(&q, &w, 0.1, 24).unwrap().selection, want);
        let h = solve_qip_heuristic(&q, &w, 0.1, &HeuristicOptions::default()).unwrap();
        assert_eq!(h.selection, want);
    }


    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn random_instances_respect_both_bounds(seed in any::<u64>(), n in 4usize..13, n_t in 2usize..6, lambda in 0.05f64..20.0) {
            let n_t = n_t.min(n - 2);
            let (q, w) = random(seed, n, n_t, KernelSpec::Linear);
            let exact = solve_qip_exact(&q, &w, lambda, 24).unwrap();
            let treated = exact.selection.iter().zip(&w).filter(|(s, wi)| **s && **wi > 0.0).count();
            prop_assert_eq!(2 * treated, exact.selected());
            prop_assert!(solve_dual(&q, &w, lambda).unwrap().objective <= exact.objective + 1e-9 * exact.objective.abs().max(1.0));
            let opts = HeuristicOptions { iterations: 2_000, restarts: 2, seed, ..Default::default() };
            let h = solve_qip_heuristic(&q, &w, lambda, &opts).unwrap();
            prop_assert!(exact.objective <= h.objective + 1e-12);
        }
    }
}

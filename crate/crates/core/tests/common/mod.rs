//! Shared test oracles and synthetic-data helpers. Everything here is kept
//! independent of the library implementations it checks: the transport LP
//! is a min-cost-flow solver, DTW is a full path enumeration, and the λ
//! search is exhaustive.

#![allow(dead_code)]

use std::path::PathBuf;

use chrono::NaiveDate;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fincast_core::data::{to_csv_string, PriceSeries};

/// 1-Wasserstein distance via an exact min-cost-flow transportation LP:
/// every `a_i` supplies `m` integer units, every `b_j` demands `n`, unit
/// cost `|a_i - b_j|`; the optimum divided by `n·m` is W1.
pub fn wasserstein_lp(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let m = b.len();
    // Nodes: 0 = source, 1..=n = a, n+1..=n+m = b, n+m+1 = sink.
    let nodes = n + m + 2;
    let sink = n + m + 1;
    let mut graph = MinCostFlow::new(nodes);
    for (i, &av) in a.iter().enumerate() {
        graph.add_edge(0, 1 + i, m as i64, 0.0);
        for (j, &bv) in b.iter().enumerate() {
            graph.add_edge(1 + i, 1 + n + j, m as i64, (av - bv).abs());
        }
    }
    for j in 0..m {
        graph.add_edge(1 + n + j, sink, n as i64, 0.0);
    }
    let total_flow = (n * m) as i64;
    let cost = graph.run(0, sink, total_flow);
    cost / total_flow as f64
}

struct Edge {
    to: usize,
    cap: i64,
    cost: f64,
    flow: i64,
}

struct MinCostFlow {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl MinCostFlow {
    fn new(nodes: usize) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap, cost, flow: 0 });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge {
            to: from,
            cap: 0,
            cost: -cost,
            flow: 0,
        });
    }

    /// Successive shortest augmenting paths (Bellman-Ford works with the
    /// negative reverse-edge costs). Panics if the demanded flow is
    /// infeasible, which cannot happen for a transportation instance.
    fn run(&mut self, source: usize, sink: usize, mut need: i64) -> f64 {
        let n = self.adj.len();
        let mut total_cost = 0.0;
        while need > 0 {
            let mut dist = vec![f64::INFINITY; n];
            let mut pre: Vec<Option<usize>> = vec![None; n];
            dist[source] = 0.0;
            for _ in 0..n {
                let mut changed = false;
                for node in 0..n {
                    if !dist[node].is_finite() {
                        continue;
                    }
                    for &eid in &self.adj[node] {
                        let e = &self.edges[eid];
                        if e.cap - e.flow > 0 && dist[node] + e.cost < dist[e.to] - 1e-15 {
                            dist[e.to] = dist[node] + e.cost;
                            pre[e.to] = Some(eid);
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            assert!(dist[sink].is_finite(), "transportation LP infeasible");

            let mut push = need;
            let mut node = sink;
            while let Some(eid) = pre[node] {
                let e = &self.edges[eid];
                push = push.min(e.cap - e.flow);
                node = self.edges[eid ^ 1].to;
            }
            let mut node = sink;
            while let Some(eid) = pre[node] {
                self.edges[eid].flow += push;
                self.edges[eid ^ 1].flow -= push;
                total_cost += self.edges[eid].cost * push as f64;
                node = self.edges[eid ^ 1].to;
            }
            need -= push;
        }
        total_cost
    }
}

/// Brute-force DTW: minimum cost over every monotone warping path.
pub fn dtw_brute(a: &[f64], b: &[f64]) -> f64 {
    fn go(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
        let cost = (a[i] - b[j]).abs();
        if i == a.len() - 1 && j == b.len() - 1 {
            return cost;
        }
        let mut best = f64::INFINITY;
        if i + 1 < a.len() {
            best = best.min(go(a, b, i + 1, j));
        }
        if j + 1 < b.len() {
            best = best.min(go(a, b, i, j + 1));
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            best = best.min(go(a, b, i + 1, j + 1));
        }
        cost + best
    }
    go(a, b, 0, 0)
}

/// Exhaustive search over the 5ⁿ λ grid: minimum validation MSE of the
/// λ-normalized combination, skipping the all-zero point.
pub fn exhaustive_lambda_optimum(rows: &[Vec<f64>], targets: &[f64], grid: &[f64]) -> f64 {
    let n = rows.len();
    let k = grid.len();
    let combos = k.pow(n as u32);
    let mut best = f64::INFINITY;
    for mut code in 0..combos {
        let mut lambda = vec![0.0; n];
        for slot in lambda.iter_mut() {
            *slot = grid[code % k];
            code /= k;
        }
        let total: f64 = lambda.iter().sum();
        if total == 0.0 {
            continue;
        }
        let mut mse = 0.0;
        for (s, &t) in targets.iter().enumerate() {
            let mut acc = 0.0;
            for (r, &l) in lambda.iter().enumerate() {
                acc += l * rows[r][s];
            }
            let diff = acc / total - t;
            mse += diff * diff;
        }
        mse /= targets.len() as f64;
        best = best.min(mse);
    }
    best
}

/// Stable AR(1) driven by uniform noise, mapped into a safely positive
/// price range, with an optional linear trend.
pub fn ar_price_series(seed: u64, len: usize, phi: f64, noise: f64, trend: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = 0.0_f64;
    (0..len)
        .map(|t| {
            x = phi * x + rng.random_range(-noise..noise);
            100.0 + 5.0 * x + trend * t as f64
        })
        .collect()
}

pub fn series_from_values(symbol: &str, values: &[f64]) -> PriceSeries {
    let start = NaiveDate::parse_from_str("2018-01-02", "%Y-%m-%d").unwrap();
    let obs = values
        .iter()
        .enumerate()
        .map(|(i, &v)| (start + chrono::Days::new(i as u64), v))
        .collect();
    PriceSeries::new(symbol, obs).unwrap()
}

/// Writes a Yahoo-format CSV for `values` and returns its path.
pub fn write_yahoo_csv(dir: &std::path::Path, symbol: &str, values: &[f64]) -> PathBuf {
    let series = series_from_values(symbol, values);
    let path = dir.join(format!("{}.csv", symbol.to_ascii_lowercase()));
    std::fs::write(&path, to_csv_string(&series)).unwrap();
    path
}

pub fn rng_vec(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

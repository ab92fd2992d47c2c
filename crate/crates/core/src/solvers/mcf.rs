//! Min-cost flow by successive shortest paths with node potentials.
//! Lower bounds are removed by the usual node-balance transformation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use crate::error::{integrity, Error, Result};

use super::SolveStats;

#[derive(Clone, Debug, PartialEq)]
pub struct FlowArc {
    pub from: usize,
    pub to: usize,
    pub cap: i64,
    pub lower: i64,
    pub cost: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowNetwork {
    pub nodes: usize,
    pub arcs: Vec<FlowArc>,
    /// Net supply per node (positive = source); sums to zero.
    pub supply: Vec<i64>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        Self {
            nodes,
            arcs: Vec::new(),
            supply: vec![0; nodes],
        }
    }

    pub fn add_arc(&mut self, from: usize, to: usize, lower: i64, cap: i64, cost: f64) -> usize {
        self.arcs.push(FlowArc {
            from,
            to,
            cap,
            lower,
            cost,
        });
        self.arcs.len() - 1
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Residual {
    /// Arc `2k` is original arc `k`; `2k + 1` is its reverse.
    to: Vec<usize>,
    res: Vec<i64>,
    cost: Vec<f64>,
    first: Vec<usize>,
    adj: Vec<usize>,
}

impl Residual {
    fn out(&self, u: usize) -> &[usize] {
        &self.adj[self.first[u]..self.first[u + 1]]
    }

    fn push(&mut self, e: usize, amount: i64) {
        self.res[e] -= amount;
        self.res[e ^ 1] += amount;
    }
}

/// Returns the flow on every arc (lower bounds included).
pub fn solve_mcf(net: &FlowNetwork) -> Result<(Vec<i64>, SolveStats)> {
    let t0 = Instant::now();
    let nn = net.nodes;
    let mut balance = net.supply.clone();
    if balance.iter().sum::<i64>() != 0 {
        return integrity("network supplies do not balance");
    }
    let na = net.arcs.len();
    let mut to = vec![0; 2 * na];
    let mut res = vec![0; 2 * na];
    let mut cost = vec![0.0; 2 * na];
    let mut deg = vec![0usize; nn + 1];
    for (k, a) in net.arcs.iter().enumerate() {
        if a.lower < 0 || a.cap < a.lower {
            return integrity(format!("arc {k} has bounds [{}, {}]", a.lower, a.cap));
        }
        to[2 * k] = a.to;
        to[2 * k + 1] = a.from;
        res[2 * k] = a.cap - a.lower;
        cost[2 * k] = a.cost;
        cost[2 * k + 1] = -a.cost;
        balance[a.from] -= a.lower;
        balance[a.to] += a.lower;
        deg[a.from] += 1;
        deg[a.to] += 1;
    }
    let mut first = vec![0usize; nn + 1];
    for u in 0..nn {
        first[u + 1] = first[u] + deg[u];
    }
    let mut fill = first.clone();
    let mut adj = vec![0usize; 2 * na];
    for (k, a) in net.arcs.iter().enumerate() {
        adj[fill[a.from]] = 2 * k;
        fill[a.from] += 1;
        adj[fill[a.to]] = 2 * k + 1;
        fill[a.to] += 1;
    }
    let mut g = Residual {
        to,
        res,
        cost,
        first,
        adj,
    };
    let mut iterations = 0usize;

    greedy_zero_cost(&mut g, &mut balance, &mut iterations);

    let mut pi = vec![0.0f64; nn];
    let mut dist = vec![f64::INFINITY; nn];
    let mut pred = vec![usize::MAX; nn];
    let mut settled = vec![false; nn];
    let mut touched: Vec<usize> = Vec::new();
    let mut popped: Vec<usize> = Vec::new();
    let mut heap = BinaryHeap::new();
    let mut next_source = 0usize;
    loop {
        while next_source < nn && balance[next_source] <= 0 {
            next_source += 1;
        }
        if next_source == nn {
            break;
        }
        let s = next_source;
        for &v in &touched {
            dist[v] = f64::INFINITY;
            pred[v] = usize::MAX;
            settled[v] = false;
        }
        touched.clear();
        popped.clear();
        heap.clear();
        dist[s] = 0.0;
        touched.push(s);
        heap.push(Entry(0.0, s));
        let mut target = None;
        while let Some(Entry(d, u)) = heap.pop() {
            if settled[u] || d > dist[u] {
                continue;
            }
            settled[u] = true;
            popped.push(u);
            if balance[u] < 0 {
                target = Some(u);
                break;
            }
            for &e in g.out(u) {
                if g.res[e] <= 0 {
                    continue;
                }
                let v = g.to[e];
                if settled[v] {
                    continue;
                }
                let rc = g.cost[e] + pi[u] - pi[v];
                debug_assert!(rc > -1e-6, "negative reduced cost {rc}");
                let nd = d + rc.max(0.0);
                if nd < dist[v] {
                    if dist[v].is_infinite() {
                        touched.push(v);
                    }
                    dist[v] = nd;
                    pred[v] = e;
                    heap.push(Entry(nd, v));
                }
            }
        }
        let Some(t) = target else {
            return Err(Error::Infeasible(format!("no augmenting path from node {s}")));
        };
        let dt = dist[t];
        for &v in &popped {
            pi[v] += dist[v] - dt;
        }
        let mut amount = balance[s].min(-balance[t]);
        let mut v = t;
        while v != s {
            let e = pred[v];
            amount = amount.min(g.res[e]);
            v = g.to[e ^ 1];
        }
        let mut v = t;
        while v != s {
            let e = pred[v];
            g.push(e, amount);
            v = g.to[e ^ 1];
        }
        balance[s] -= amount;
        balance[t] += amount;
        iterations += 1;
    }

    let flows: Vec<i64> = net
        .arcs
        .iter()
        .enumerate()
        .map(|(k, a)| a.lower + g.res[2 * k + 1])
        .collect();
    let objective = flows.iter().zip(&net.arcs).map(|(&f, a)| f as f64 * a.cost).sum();
    Ok((
        flows,
        SolveStats {
            objective,
            integral: true,
            iterations,
            wall_time: t0.elapsed(),
        },
    ))
}

/// Routes excess along zero-cost forward arcs first. This keeps every
/// reduced cost nonnegative under zero potentials.
fn greedy_zero_cost(g: &mut Residual, balance: &mut [i64], iterations: &mut usize) {
    let nn = balance.len();
    let mut cur: Vec<usize> = (0..nn).map(|u| g.first[u]).collect();
    let mut dead = vec![false; nn];
    let mut on_stack = vec![false; nn];
    let mut stack: Vec<usize> = Vec::new();
    let mut via: Vec<usize> = Vec::new();
    for s in 0..nn {
        while balance[s] > 0 && !dead[s] {
            stack.clear();
            via.clear();
            stack.push(s);
            on_stack[s] = true;
            let mut found = false;
            while let Some(&x) = stack.last() {
                if x != s && balance[x] < 0 {
                    found = true;
                    break;
                }
                let mut advanced = false;
                while cur[x] < g.first[x + 1] {
                    let e = g.adj[cur[x]];
                    let v = g.to[e];
                    if e & 1 == 0 && g.res[e] > 0 && g.cost[e] == 0.0 && !dead[v] && !on_stack[v] {
                        stack.push(v);
                        via.push(e);
                        on_stack[v] = true;
                        advanced = true;
                        break;
                    }
                    cur[x] += 1;
                }
                if !advanced {
                    dead[x] = true;
                    on_stack[x] = false;
                    stack.pop();
                    via.pop();
                }
            }
            for &x in &stack {
                on_stack[x] = false;
            }
            if !found {
                break;
            }
            let t = *stack.last().expect("path");
            let amount = via
                .iter()
                .map(|&e| g.res[e])
                .min()
                .unwrap_or(0)
                .min(balance[s])
                .min(-balance[t]);
            for &e in &via {
                g.push(e, amount);
            }
            balance[s] -= amount;
            balance[t] += amount;
            *iterations += 1;
        }
    }
}

//! Reference computations that share no code with the library.
#![allow(dead_code)]

use ndarray::Array3;
use poroviz::patching::{extract_patches_from, Patch, PatchSpec};
use rand::Rng;

/// Exact 1-D optimal transport between two mass vectors with ground cost
/// `|i - j| / bins`, by successive shortest paths on the full bipartite
/// transport network. Exhaustive: it never assumes the monotone coupling.
pub fn transport_cost(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    assert_eq!(n, b.len());
    let bins = n as f64;
    // nodes: 0 source, 1..=n supply bins, n+1..=2n demand bins, 2n+1 sink
    let nodes = 2 * n + 2;
    let (src, sink) = (0, 2 * n + 1);
    struct Edge {
        to: usize,
        cap: f64,
        cost: f64,
    }
    let mut edges: Vec<Edge> = Vec::new();
    let mut adj = vec![Vec::new(); nodes];
    let add = |edges: &mut Vec<Edge>, adj: &mut Vec<Vec<usize>>, u: usize, v: usize, cap: f64, cost: f64| {
        adj[u].push(edges.len());
        edges.push(Edge { to: v, cap, cost });
        adj[v].push(edges.len());
        edges.push(Edge { to: u, cap: 0.0, cost: -cost });
    };
    for i in 0..n {
        add(&mut edges, &mut adj, src, 1 + i, a[i], 0.0);
        add(&mut edges, &mut adj, 1 + n + i, sink, b[i], 0.0);
        for j in 0..n {
            let c = (i as f64 - j as f64).abs() / bins;
            add(&mut edges, &mut adj, 1 + i, 1 + n + j, f64::INFINITY, c);
        }
    }
    let eps = 1e-15;
    let mut total = 0.0;
    loop {
        // Bellman-Ford over the residual graph
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev = vec![usize::MAX; nodes];
        dist[src] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                if dist[u].is_infinite() {
                    continue;
                }
                for &e in &adj[u] {
                    let edge = &edges[e];
                    if edge.cap > eps && dist[u] + edge.cost < dist[edge.to] - 1e-15 {
                        dist[edge.to] = dist[u] + edge.cost;
                        prev[edge.to] = e;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[sink].is_infinite() {
            break;
        }
        let mut push = f64::INFINITY;
        let mut v = sink;
        while v != src {
            let e = prev[v];
            push = push.min(edges[e].cap);
            v = edges[e ^ 1].to;
        }
        let mut v = sink;
        while v != src {
            let e = prev[v];
            edges[e].cap -= push;
            edges[e ^ 1].cap += push;
            total += push * edges[e].cost;
            v = edges[e ^ 1].to;
        }
    }
    total
}

/// Least-squares residual after optimally translating, rotating and
/// reflecting `b` onto `a`, relative to the spread of `a`.
pub fn procrustes_residual(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let n = a.len() as f64;
    let mean = |p: &[[f64; 2]]| {
        let s = p.iter().fold([0.0, 0.0], |acc, q| [acc[0] + q[0], acc[1] + q[1]]);
        [s[0] / n, s[1] / n]
    };
    let (ma, mb) = (mean(a), mean(b));
    let ca: Vec<[f64; 2]> = a.iter().map(|p| [p[0] - ma[0], p[1] - ma[1]]).collect();
    let cb: Vec<[f64; 2]> = b.iter().map(|p| [p[0] - mb[0], p[1] - mb[1]]).collect();
    let mut best = f64::INFINITY;
    for reflect in [1.0, -1.0] {
        let cbr: Vec<[f64; 2]> = cb.iter().map(|p| [p[0], reflect * p[1]]).collect();
        // optimal angle for 2-D rotation
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for (p, q) in ca.iter().zip(&cbr) {
            sxx += p[0] * q[0] + p[1] * q[1];
            sxy += p[1] * q[0] - p[0] * q[1];
        }
        let th = sxy.atan2(sxx);
        let (s, c) = th.sin_cos();
        let r: f64 = ca
            .iter()
            .zip(&cbr)
            .map(|(p, q)| {
                let x = c * q[0] - s * q[1];
                let y = s * q[0] + c * q[1];
                (p[0] - x).powi(2) + (p[1] - y).powi(2)
            })
            .sum();
        best = best.min(r);
    }
    let spread: f64 = ca.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum();
    (best / spread).sqrt()
}

/// Mean silhouette of 2-D points under the given labels.
pub fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> f64 {
    let d = |i: usize, j: usize| ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2)).sqrt();
    let n = points.len();
    let clusters: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    let mut total = 0.0;
    for i in 0..n {
        let mean_to = |c: usize| {
            let members: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == c).collect();
            members.iter().map(|&j| d(i, j)).sum::<f64>() / members.len() as f64
        };
        let a = mean_to(labels[i]);
        let b = clusters
            .iter()
            .filter(|&&c| c != labels[i])
            .map(|&c| mean_to(c))
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

/// One random patch of shape `(3, ny, nx)`.
pub fn random_patch(rng: &mut impl Rng, run: &str, ny: usize, nx: usize) -> Patch {
    let sat = Array3::from_shape_fn((3, ny, nx), |_| if rng.random_bool(0.4) { rng.random::<f32>() } else { 0.0 });
    let con = Array3::from_shape_fn((3, ny, nx), |_| if rng.random_bool(0.5) { 2.0 * rng.random::<f32>() } else { 0.0 });
    extract_patches_from(run, sat.view(), con.view(), &PatchSpec::default())
        .unwrap()
        .remove(0)
}

pub fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

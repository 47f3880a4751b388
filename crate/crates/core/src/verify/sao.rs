//! Local consistency of matches from the cyclic angular order of their
//! nearest matched neighbors in both images.

use std::collections::HashMap;
use std::f64::consts::TAU;

use delaunator::{triangulate, Point};

use super::VerifyError;

/// Neighbor lists per point; `fallback` is set when plain Euclidean kNN had to
/// stand in for the triangulation (fewer than three distinct points, all
/// collinear, or points the triangulation could not place).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    pub neighbors: Vec<Vec<usize>>,
    pub fallback: bool,
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn euclidean_knn(points: &[[f64; 2]], i: usize, n: usize) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = (0..points.len())
        .filter(|&j| j != i)
        .map(|j| (dist2(points[i], points[j]), j))
        .filter(|&(d, _)| d > 0.0)
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.into_iter().take(n).map(|x| x.1).collect()
}

/// Up to `n` neighbors per point, gathered ring by ring outward over the
/// Delaunay graph; inside a ring by distance, then index. Points sharing the
/// exact position of the center are never its neighbors.
pub fn knn_from_delaunay(points: &[[f64; 2]], n: usize) -> NeighborGraph {
    // distinct positions, in first-seen order
    let mut node_of = Vec::with_capacity(points.len());
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut sites: Vec<Point> = Vec::new();
    let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        let key = (p[0].to_bits(), p[1].to_bits());
        let node = *seen.entry(key).or_insert_with(|| {
            sites.push(Point { x: p[0], y: p[1] });
            members.push(Vec::new());
            sites.len() - 1
        });
        members[node].push(i);
        node_of.push(node);
    }

    let triangles = if sites.len() >= 3 {
        triangulate(&sites).triangles
    } else {
        Vec::new()
    };
    if triangles.is_empty() {
        return NeighborGraph {
            neighbors: (0..points.len())
                .map(|i| euclidean_knn(points, i, n))
                .collect(),
            fallback: true,
        };
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); sites.len()];
    for t in triangles.chunks_exact(3) {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }

    let mut fallback = false;
    let mut out = Vec::with_capacity(points.len());
    let mut mark = vec![usize::MAX; sites.len()];
    for (i, &start) in node_of.iter().enumerate() {
        if adj[start].is_empty() {
            fallback = true;
            out.push(euclidean_knn(points, i, n));
            continue;
        }
        mark[start] = i;
        let mut found: Vec<usize> = Vec::with_capacity(n);
        let mut frontier = vec![start];
        while found.len() < n && !frontier.is_empty() {
            let mut ring_nodes = Vec::new();
            for &u in &frontier {
                for &v in &adj[u] {
                    if mark[v] != i {
                        mark[v] = i;
                        ring_nodes.push(v);
                    }
                }
            }
            let mut ring: Vec<(f64, usize)> = ring_nodes
                .iter()
                .flat_map(|&v| members[v].iter().map(|&j| (dist2(points[i], points[j]), j)))
                .collect();
            ring.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            found.extend(ring.into_iter().take(n - found.len()).map(|x| x.1));
            frontier = ring_nodes;
        }
        out.push(found);
    }
    NeighborGraph {
        neighbors: out,
        fallback,
    }
}

/// Indices into `neighbors`, sorted by angle from the +x axis in `[0, 2π)`;
/// equal angles by distance, then index.
pub fn angular_order(center: [f64; 2], neighbors: &[[f64; 2]]) -> Result<Vec<usize>, VerifyError> {
    let mut keyed = Vec::with_capacity(neighbors.len());
    for (k, p) in neighbors.iter().enumerate() {
        let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
        if dx == 0.0 && dy == 0.0 {
            return Err(VerifyError::CoincidentPoint(k));
        }
        let mut a = dy.atan2(dx);
        if a < 0.0 {
            a += TAU;
        }
        if a >= TAU {
            a -= TAU;
        }
        keyed.push((a, dx * dx + dy * dy, k));
    }
    keyed.sort_by(|x, y| {
        x.0.total_cmp(&y.0)
            .then(x.1.total_cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });
    Ok(keyed.into_iter().map(|x| x.2).collect())
}

fn levenshtein<T: PartialEq>(
    a: &[T],
    b: impl Iterator<Item = T> + Clone,
    row: &mut Vec<usize>,
) -> usize {
    let m = b.clone().count();
    row.clear();
    row.extend(0..=m);
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.clone().enumerate() {
            let up = row[j + 1];
            row[j + 1] = (up + 1).min(row[j] + 1).min(diag + usize::from(*x != y));
            diag = up;
        }
    }
    row[m]
}

/// Cyclic edit distance: the smallest unit-cost edit distance between `a` and
/// any rotation of `b`.
pub fn ced<T: PartialEq + Copy>(a: &[T], b: &[T]) -> usize {
    if b.is_empty() {
        return a.len();
    }
    let mut row = Vec::with_capacity(b.len() + 1);
    (0..b.len())
        .map(|r| levenshtein(a, b[r..].iter().chain(&b[..r]).copied(), &mut row))
        .min()
        .unwrap()
}

/// Cyclic neighbor sequence of one match, as match indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborOrder {
    pub center: usize,
    pub ring: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaoScore {
    pub index: usize,
    pub score: f64,
}

pub(crate) fn rings(points: &[[f64; 2]], n: usize) -> (Vec<NeighborOrder>, bool) {
    let g = knn_from_delaunay(points, n);
    let orders = g
        .neighbors
        .iter()
        .enumerate()
        .map(|(i, ns)| {
            let pos: Vec<[f64; 2]> = ns.iter().map(|&j| points[j]).collect();
            let order = angular_order(points[i], &pos).expect("coincident points are excluded");
            NeighborOrder {
                center: i,
                ring: order.into_iter().map(|k| ns[k]).collect(),
            }
        })
        .collect();
    (orders, g.fallback)
}

/// Scores `ced(ring1, ring2) / n` for matched positions `p1[i] <-> p2[i]`.
/// The boolean reports a Euclidean fallback in either image.
pub fn sao_scores(p1: &[[f64; 2]], p2: &[[f64; 2]], n: usize) -> (Vec<SaoScore>, bool) {
    assert_eq!(p1.len(), p2.len());
    let (r1, f1) = rings(p1, n);
    let (r2, f2) = rings(p2, n);
    let scores = r1
        .iter()
        .zip(&r2)
        .enumerate()
        .map(|(i, (a, b))| SaoScore {
            index: i,
            score: ced(&a.ring, &b.ring) as f64 / n as f64,
        })
        .collect();
    (scores, f1 || f2)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SaoOutcome {
    /// Indices into the input correspondences, ascending.
    pub kept: Vec<usize>,
    /// Fewer than `n + 1` correspondences: nothing was filtered.
    pub passed_through: bool,
    pub fallback: bool,
    pub rounds: usize,
}

/// Single pass: keeps correspondences whose score is at most `threshold`.
pub fn sao_filter(p1: &[[f64; 2]], p2: &[[f64; 2]], n: usize, threshold: f64) -> SaoOutcome {
    if p1.len() < n + 1 {
        return SaoOutcome {
            kept: (0..p1.len()).collect(),
            passed_through: true,
            fallback: false,
            rounds: 0,
        };
    }
    let (scores, fallback) = sao_scores(p1, p2, n);
    SaoOutcome {
        kept: scores
            .iter()
            .filter(|s| s.score <= threshold)
            .map(|s| s.index)
            .collect(),
        passed_through: false,
        fallback,
        rounds: 1,
    }
}

/// Repeats scoring on the surviving set, each round dropping only the
/// correspondences at the current worst score, until every score is at most
/// `threshold` or fewer than `n + 1` remain.
pub fn sao_filter_iterative(
    p1: &[[f64; 2]],
    p2: &[[f64; 2]],
    n: usize,
    threshold: f64,
) -> SaoOutcome {
    let mut alive: Vec<usize> = (0..p1.len()).collect();
    let mut fallback = false;
    let mut rounds = 0;
    while alive.len() > n {
        let a: Vec<[f64; 2]> = alive.iter().map(|&i| p1[i]).collect();
        let b: Vec<[f64; 2]> = alive.iter().map(|&i| p2[i]).collect();
        let (scores, fb) = sao_scores(&a, &b, n);
        fallback |= fb;
        rounds += 1;
        let worst = scores.iter().map(|s| s.score).fold(0.0, f64::max);
        if worst <= threshold {
            break;
        }
        alive = scores
            .iter()
            .filter(|s| s.score < worst)
            .map(|s| alive[s.index])
            .collect();
    }
    SaoOutcome {
        kept: alive,
        passed_through: rounds == 0,
        fallback,
        rounds,
    }
}

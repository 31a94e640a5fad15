//! Honest causal trees.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{OrfHyperparams, MIN_DENOMINATOR};
use crate::matrix::Matrix;

const MAX_BINS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    /// Estimation-half rows that reached this leaf.
    Leaf { samples: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalTree {
    pub nodes: Vec<Node>,
    pub split_half: Vec<u32>,
    pub estimate_half: Vec<u32>,
}

impl CausalTree {
    pub fn leaf(&self, x: &[f64]) -> &[u32] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split { feature, threshold, left, right } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { samples } => return samples,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &[u32]> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { samples } => Some(samples.as_slice()),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub score: f64,
}

/// Inputs shared by every node of one tree.
struct Ctx<'a> {
    x: &'a Matrix,
    t: &'a [f64],
    ry: &'a [f64],
    rt: &'a [f64],
    min_leaf: usize,
}

/// Candidate thresholds: midpoints between adjacent distinct values at up to
/// 64 quantile cut positions of the sorted sample.
fn thresholds(sorted: &[f64]) -> Vec<f64> {
    let m = sorted.len();
    let mut out = Vec::new();
    if m < 2 {
        return out;
    }
    let push = |out: &mut Vec<f64>, i: usize| {
        let (a, b) = (sorted[i - 1], sorted[i]);
        if a < b {
            let mid = a + (b - a) / 2.0;
            if out.last() != Some(&mid) {
                out.push(mid);
            }
        }
    };
    let distinct = 1 + sorted.windows(2).filter(|p| p[0] < p[1]).count();
    if distinct <= MAX_BINS {
        for i in 1..m {
            push(&mut out, i);
        }
    } else {
        for b in 1..MAX_BINS {
            let i = (b * m / MAX_BINS).max(1);
            push(&mut out, i);
        }
    }
    out
}

/// Best split of a node by the heterogeneity criterion
/// `nL*nR/(nL+nR) * (thetaL - thetaR)^2`, where theta is the residual slope
/// on the split-half rows. Both children must keep `min_leaf` rows and at
/// least one treated and one control row in each half. Ties keep the lowest
/// feature index, then the lowest threshold.
pub fn best_split(
    x: &Matrix,
    t: &[f64],
    ry: &[f64],
    rt: &[f64],
    split_rows: &[u32],
    est_rows: &[u32],
    min_leaf: usize,
) -> Option<SplitCandidate> {
    let ctx = Ctx { x, t, ry, rt, min_leaf };
    best_split_ctx(&ctx, split_rows, est_rows)
}

fn best_split_ctx(ctx: &Ctx, split_rows: &[u32], est_rows: &[u32]) -> Option<SplitCandidate> {
    let n = split_rows.len();
    let ne = est_rows.len();
    if n < 2 * ctx.min_leaf || ne < 2 * ctx.min_leaf {
        return None;
    }
    let total_treated = split_rows.iter().filter(|&&i| ctx.t[i as usize] > 0.5).count();
    let total_treated_e = est_rows.iter().filter(|&&i| ctx.t[i as usize] > 0.5).count();
    let mut best: Option<SplitCandidate> = None;
    let mut order: Vec<u32> = split_rows.to_vec();
    let mut est: Vec<(f64, bool)> = Vec::with_capacity(ne);

    for j in 0..ctx.x.cols() {
        let xv = |i: u32| ctx.x.get(i as usize, j);
        order.sort_by(|a, b| xv(*a).total_cmp(&xv(*b)).then(a.cmp(b)));
        let vals: Vec<f64> = order.iter().map(|&i| xv(i)).collect();
        if vals[0] == vals[n - 1] {
            continue;
        }
        est.clear();
        est.extend(est_rows.iter().map(|&i| (xv(i), ctx.t[i as usize] > 0.5)));
        est.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut est_treated_prefix = Vec::with_capacity(ne + 1);
        est_treated_prefix.push(0usize);
        for (_, tr) in &est {
            est_treated_prefix.push(est_treated_prefix.last().unwrap() + *tr as usize);
        }

        // Prefix sums over the sorted split-half rows.
        let mut treated = Vec::with_capacity(n + 1);
        let mut syt = Vec::with_capacity(n + 1);
        let mut stt = Vec::with_capacity(n + 1);
        treated.push(0usize);
        syt.push(0.0);
        stt.push(0.0);
        for &i in &order {
            let i = i as usize;
            treated.push(treated.last().unwrap() + (ctx.t[i] > 0.5) as usize);
            syt.push(syt.last().unwrap() + ctx.ry[i] * ctx.rt[i]);
            stt.push(stt.last().unwrap() + ctx.rt[i] * ctx.rt[i]);
        }
        let total_yt = syt[n];
        let total_tt = stt[n];

        for th in thresholds(&vals) {
            let nl = vals.partition_point(|v| *v <= th);
            let nr = n - nl;
            if nl < ctx.min_leaf || nr < ctx.min_leaf {
                continue;
            }
            let (tl, tr) = (treated[nl], total_treated - treated[nl]);
            if tl == 0 || tl == nl || tr == 0 || tr == nr {
                continue;
            }
            let el = est.partition_point(|(v, _)| *v <= th);
            let er = ne - el;
            if el < ctx.min_leaf || er < ctx.min_leaf {
                continue;
            }
            let (etl, etr) = (est_treated_prefix[el], total_treated_e - est_treated_prefix[el]);
            if etl == 0 || etl == el || etr == 0 || etr == er {
                continue;
            }
            let (dl, dr) = (stt[nl], total_tt - stt[nl]);
            if dl < MIN_DENOMINATOR || dr < MIN_DENOMINATOR {
                continue;
            }
            let theta_l = syt[nl] / dl;
            let theta_r = (total_yt - syt[nl]) / dr;
            let score = (nl * nr) as f64 / n as f64 * (theta_l - theta_r).powi(2);
            if score > best.map_or(0.0, |b| b.score) {
                best = Some(SplitCandidate { feature: j, threshold: th, score });
            }
        }
    }
    best
}

/// Grows one tree on a fresh subsample. `rng` must be the tree's own stream.
pub fn fit_tree<R: Rng>(x: &Matrix, t: &[f64], ry: &[f64], rt: &[f64], hp: &OrfHyperparams, rng: &mut R) -> CausalTree {
    let n = x.rows();
    let draw = ((hp.subsample_ratio * n as f64).floor() as usize).clamp(2, n);
    let sample: Vec<u32> = index::sample(rng, n, draw).into_iter().map(|i| i as u32).collect();
    let (mut split_half, mut estimate_half) = if hp.honest {
        let (a, b) = sample.split_at(draw / 2);
        (a.to_vec(), b.to_vec())
    } else {
        (sample.clone(), sample)
    };
    split_half.sort_unstable();
    estimate_half.sort_unstable();

    let ctx = Ctx { x, t, ry, rt, min_leaf: hp.min_leaf_size };
    let mut nodes = vec![Node::Leaf { samples: Vec::new() }];
    // (node index, split rows, estimate rows, depth)
    let mut stack = vec![(0usize, split_half.clone(), estimate_half.clone(), 0usize)];
    while let Some((at, srows, erows, depth)) = stack.pop() {
        let cand = if depth < hp.max_depth { best_split_ctx(&ctx, &srows, &erows) } else { None };
        match cand {
            None => nodes[at] = Node::Leaf { samples: erows },
            Some(c) => {
                let goes_left = |i: &u32| x.get(*i as usize, c.feature) <= c.threshold;
                let (sl, sr): (Vec<u32>, Vec<u32>) = srows.iter().partition(|i| goes_left(i));
                let (el, er): (Vec<u32>, Vec<u32>) = erows.iter().partition(|i| goes_left(i));
                let left = nodes.len();
                nodes.push(Node::Leaf { samples: Vec::new() });
                nodes.push(Node::Leaf { samples: Vec::new() });
                nodes[at] = Node::Split { feature: c.feature, threshold: c.threshold, left, right: left + 1 };
                stack.push((left + 1, sr, er, depth + 1));
                stack.push((left, sl, el, depth + 1));
            }
        }
    }
    CausalTree { nodes, split_half, estimate_half }
}

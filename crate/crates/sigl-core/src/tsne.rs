//! Exact (non-Barnes-Hut) t-SNE to 2-D, plus the convex-hull area of the
//! layout. The hull area is the quantitative stand-in for "how much of the
//! conditioning manifold did training explore": a trace of interpolated
//! embeddings fills a region, a trace of a few discrete captions does not.
//!
//! The optimizer is gradient descent with momentum, early exaggeration, and
//! a backtracking guard: once exaggeration ends, any step that increases the
//! KL objective is reverted and the learning rate halved, so the reported KL
//! trace is non-increasing from there on by construction.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    pub exaggeration_iters: usize,
    pub exaggeration: f64,
    pub learning_rate: f64,
    pub momentum_early: f64,
    pub momentum_late: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iters: 1000,
            exaggeration_iters: 250,
            exaggeration: 12.0,
            learning_rate: 200.0,
            momentum_early: 0.5,
            momentum_late: 0.8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TsneResult {
    /// [n, 2] row-major layout.
    pub coords: Vec<f64>,
    /// KL(P‖Q) after every iteration.
    pub kl_trace: Vec<f64>,
    /// Inputs were all identical; the layout is meaningless jitter.
    pub degenerate: bool,
}

fn pairwise_sq_dists(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]);
            let mut acc = 0.0;
            for (&u, &v) in a.iter().zip(b) {
                let t = u - v;
                acc += t * t;
            }
            out[i * n + j] = acc;
            out[j * n + i] = acc;
        }
    }
    out
}

/// Binary-search the Gaussian precision for row i until the conditional
/// distribution hits the target entropy ln(perplexity).
fn conditional_probs(dists: &[f64], n: usize, i: usize, perplexity: f64, row: &mut [f64]) {
    let target = libm::log(perplexity);
    let mut beta = 1.0;
    let (mut beta_min, mut beta_max) = (f64::NEG_INFINITY, f64::INFINITY);
    for _ in 0..50 {
        let mut sum = 0.0;
        let mut dot = 0.0; // Σ p·d, for the entropy identity H = ln Z + β·Σp·d
        for j in 0..n {
            if j == i {
                row[j] = 0.0;
                continue;
            }
            let p = libm::exp(-beta * dists[i * n + j]);
            row[j] = p;
            sum += p;
            dot += p * dists[i * n + j];
        }
        if sum <= 0.0 {
            // All mass underflowed; soften and retry.
            beta_max = beta;
            beta = if beta_min.is_finite() { 0.5 * (beta + beta_min) } else { beta * 0.5 };
            continue;
        }
        let entropy = libm::log(sum) + beta * dot / sum;
        let diff = entropy - target;
        if libm::fabs(diff) < 1e-5 {
            break;
        }
        if diff > 0.0 {
            beta_min = beta;
            beta = if beta_max.is_finite() { 0.5 * (beta + beta_max) } else { beta * 2.0 };
        } else {
            beta_max = beta;
            beta = if beta_min.is_finite() { 0.5 * (beta + beta_min) } else { beta * 0.5 };
        }
    }
    let mut sum = 0.0;
    for j in 0..n {
        sum += row[j];
    }
    if sum > 0.0 {
        for p in row.iter_mut() {
            *p /= sum;
        }
    }
}

const P_FLOOR: f64 = 1e-12;

/// Project [n, d] features to 2-D.
pub fn tsne_2d(x: &[f64], n: usize, d: usize, cfg: &TsneConfig, rng: &mut StreamRng) -> Result<TsneResult> {
    if n < 5 {
        return Err(Error::Dim {
            op: "tsne",
            detail: alloc::format!("need at least 5 points, got {n}"),
        });
    }
    if cfg.perplexity * 3.0 >= n as f64 {
        return Err(Error::Dim {
            op: "tsne",
            detail: alloc::format!("perplexity {} too large for {n} points", cfg.perplexity),
        });
    }
    if x.len() != n * d {
        return Err(Error::Dim {
            op: "tsne",
            detail: alloc::format!("{} values for {n}x{d}", x.len()),
        });
    }

    let dists = pairwise_sq_dists(x, n, d);
    let degenerate = dists.iter().all(|&v| v == 0.0);
    let mut coords: Vec<f64> = (0..2 * n).map(|_| rng.normal() * 1e-4).collect();
    if degenerate {
        // No geometry to recover; hand back the jitter with a warning flag.
        return Ok(TsneResult {
            coords,
            kl_trace: Vec::new(),
            degenerate: true,
        });
    }

    // Symmetrized joint distribution with a floor that keeps KL finite.
    let mut p = vec![0.0; n * n];
    {
        let mut row = vec![0.0; n];
        for i in 0..n {
            conditional_probs(&dists, n, i, cfg.perplexity, &mut row);
            for j in 0..n {
                p[i * n + j] = row[j];
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (p[i * n + j] + p[j * n + i]) / (2.0 * n as f64);
            let v = v.max(P_FLOOR);
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
        p[i * n + i] = P_FLOOR;
    }

    let kl_of = |p_eff: &[f64], coords: &[f64]| -> f64 {
        let mut z = 0.0;
        let mut kl = 0.0;
        let mut qnum = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = coords[2 * i] - coords[2 * j];
                let dy = coords[2 * i + 1] - coords[2 * j + 1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                qnum[i * n + j] = q;
                z += 2.0 * q;
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let q = (qnum[i * n + j] / z).max(P_FLOOR);
                let pij = p_eff[i * n + j];
                kl += 2.0 * pij * libm::log(pij / q);
            }
        }
        kl
    };

    let mut velocity = vec![0.0; 2 * n];
    let mut lr = cfg.learning_rate;
    let mut kl_trace = Vec::with_capacity(cfg.iters);
    let mut grad = vec![0.0; 2 * n];
    let mut qnum = vec![0.0; n * n];
    let mut prev_kl = f64::INFINITY;

    for iter in 0..cfg.iters {
        let exaggerating = iter < cfg.exaggeration_iters;
        let ex = if exaggerating { cfg.exaggeration } else { 1.0 };
        let momentum = if exaggerating { cfg.momentum_early } else { cfg.momentum_late };

        // Student-t affinities in the embedding.
        let mut z = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = coords[2 * i] - coords[2 * j];
                let dy = coords[2 * i + 1] - coords[2 * j + 1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                qnum[i * n + j] = q;
                qnum[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        // dKL/dy_i = 4 Σ_j (ex·p_ij − q_ij)·q_num_ij·(y_i − y_j)
        for g in grad.iter_mut() {
            *g = 0.0;
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let qn = qnum[i * n + j];
                let coeff = 4.0 * (ex * p[i * n + j] - qn / z) * qn;
                grad[2 * i] += coeff * (coords[2 * i] - coords[2 * j]);
                grad[2 * i + 1] += coeff * (coords[2 * i + 1] - coords[2 * j + 1]);
            }
        }

        let saved = coords.clone();
        for k in 0..2 * n {
            velocity[k] = momentum * velocity[k] - lr * grad[k];
            coords[k] += velocity[k];
        }

        let kl = kl_of(&p, &coords);
        if !exaggerating && kl > prev_kl {
            // Backtrack: undo the step, kill momentum, halve the rate. KL is
            // re-measured at the reverted coordinates so the trace never rises.
            coords = saved;
            for v in &mut velocity {
                *v = 0.0;
            }
            lr *= 0.5;
            kl_trace.push(prev_kl);
        } else {
            if !exaggerating {
                prev_kl = kl;
            }
            kl_trace.push(kl);
        }
    }

    Ok(TsneResult {
        coords,
        kl_trace,
        degenerate: false,
    })
}

/// Area of the convex hull of 2-D points (Andrew's monotone chain + the
/// shoelace formula). Fewer than 3 distinct points — or a collinear set —
/// has zero area.
pub fn convex_hull_area(points: &[f64]) -> f64 {
    let n = points.len() / 2;
    if n < 3 {
        return 0.0;
    }
    let mut pts: Vec<(f64, f64)> = (0..n).map(|i| (points[2 * i], points[2 * i + 1])).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    pts.dedup();
    if pts.len() < 3 {
        return 0.0;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| -> f64 {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev() {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    if hull.len() < 3 {
        return 0.0;
    }
    let mut area2 = 0.0;
    for i in 0..hull.len() {
        let (x1, y1) = hull[i];
        let (x2, y2) = hull[(i + 1) % hull.len()];
        area2 += x1 * y2 - x2 * y1;
    }
    libm::fabs(area2) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Domain;

    #[test]
    fn hull_area_of_unit_square_is_one() {
        // Includes an interior point and a duplicate corner; neither affects
        // the hull.
        let pts = [0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.5, 0.5, 1.0, 1.0];
        assert!((convex_hull_area(&pts) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hull_area_of_degenerate_sets_is_zero() {
        assert_eq!(convex_hull_area(&[0.0, 0.0, 1.0, 1.0]), 0.0);
        // collinear
        assert_eq!(convex_hull_area(&[0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]), 0.0);
    }

    #[test]
    fn rejects_too_few_points_and_oversized_perplexity() {
        let mut rng = StreamRng::new(1, Domain::Tsne, 0);
        let x = [0.0; 8];
        assert!(tsne_2d(&x, 4, 2, &TsneConfig::default(), &mut rng).is_err());
        let x = vec![0.0; 20 * 2];
        let cfg = TsneConfig {
            perplexity: 10.0,
            ..TsneConfig::default()
        };
        assert!(tsne_2d(&x, 20, 2, &cfg, &mut rng).is_err());
    }

    #[test]
    fn identical_inputs_degenerate_with_flag() {
        let mut rng = StreamRng::new(2, Domain::Tsne, 0);
        let x = vec![1.5; 30 * 4];
        let cfg = TsneConfig {
            perplexity: 5.0,
            iters: 50,
            ..TsneConfig::default()
        };
        let r = tsne_2d(&x, 30, 4, &cfg, &mut rng).unwrap();
        assert!(r.degenerate);
        // jitter, not a blow-up
        assert!(r.coords.iter().all(|v| v.abs() < 1e-2));
    }

    fn two_cluster_data(rng: &mut StreamRng) -> (Vec<f64>, usize, usize) {
        let (per, d) = (20usize, 10usize);
        let mut x = Vec::with_capacity(2 * per * d);
        for c in 0..2 {
            let center = if c == 0 { 0.0 } else { 100.0 };
            for _ in 0..per {
                for _ in 0..d {
                    x.push(center + rng.normal());
                }
            }
        }
        (x, 2 * per, d)
    }

    #[test]
    fn well_separated_clusters_stay_linearly_separable_in_2d() {
        let mut rng = StreamRng::new(3, Domain::Tsne, 0);
        let (x, n, d) = two_cluster_data(&mut rng);
        let cfg = TsneConfig {
            perplexity: 10.0,
            iters: 500,
            exaggeration_iters: 100,
            ..TsneConfig::default()
        };
        let r = tsne_2d(&x, n, d, &cfg, &mut rng).unwrap();
        // Project every point onto the line between the class centroids; the
        // classes must not overlap along it.
        let half = n / 2;
        let centroid = |range: core::ops::Range<usize>| -> (f64, f64) {
            let mut cx = 0.0;
            let mut cy = 0.0;
            for i in range.clone() {
                cx += r.coords[2 * i];
                cy += r.coords[2 * i + 1];
            }
            (cx / range.len() as f64, cy / range.len() as f64)
        };
        let (ax, ay) = centroid(0..half);
        let (bx, by) = centroid(half..n);
        let (dx, dy) = (bx - ax, by - ay);
        let proj = |i: usize| (r.coords[2 * i] - ax) * dx + (r.coords[2 * i + 1] - ay) * dy;
        let max_a = (0..half).map(proj).fold(f64::NEG_INFINITY, f64::max);
        let min_b = (half..n).map(proj).fold(f64::INFINITY, f64::min);
        assert!(
            max_a < min_b,
            "clusters overlap: max_a {max_a} vs min_b {min_b}"
        );
    }

    #[test]
    fn kl_trace_is_non_increasing_after_exaggeration() {
        let mut rng = StreamRng::new(4, Domain::Tsne, 0);
        let (x, n, d) = two_cluster_data(&mut rng);
        let cfg = TsneConfig {
            perplexity: 10.0,
            iters: 400,
            exaggeration_iters: 100,
            ..TsneConfig::default()
        };
        let r = tsne_2d(&x, n, d, &cfg, &mut rng).unwrap();
        assert_eq!(r.kl_trace.len(), 400);
        let start = 200; // final 50%
        for w in r.kl_trace[start..].windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "KL rose: {} -> {}", w[0], w[1]);
        }
        // and the optimizer actually made progress
        assert!(r.kl_trace[399] < r.kl_trace[100]);
    }

    #[test]
    fn layout_is_deterministic_for_a_fixed_seed() {
        let mut rng1 = StreamRng::new(5, Domain::Tsne, 0);
        let (x, n, d) = two_cluster_data(&mut rng1);
        let cfg = TsneConfig {
            perplexity: 8.0,
            iters: 120,
            exaggeration_iters: 50,
            ..TsneConfig::default()
        };
        let mut ra = StreamRng::new(9, Domain::Tsne, 1);
        let mut rb = StreamRng::new(9, Domain::Tsne, 1);
        let a = tsne_2d(&x, n, d, &cfg, &mut ra).unwrap();
        let b = tsne_2d(&x, n, d, &cfg, &mut rb).unwrap();
        assert_eq!(a.coords, b.coords);
        assert_eq!(a.kl_trace, b.kl_trace);
    }
}

//! Seeded Lloyd k-means with k-means++ initialization.

use rand::Rng;

use crate::linalg::sq_l2;
use crate::scalar::Scalar;

/// Index of the nearest centroid (lowest index on ties) and its distance.
pub fn nearest<S: Scalar>(x: &[S], centroids: &[S], dim: usize) -> (usize, S) {
    let mut best = (0, S::infinity());
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_l2(x, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp<S: Scalar, R: Rng>(data: &[S], dim: usize, k: usize, rng: &mut R) -> Vec<S> {
    let n = data.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(&data[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = data
        .chunks_exact(dim)
        .map(|x| sq_l2(x, &centroids[..dim]).to_f64_lossless())
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // Never land on a zero-weight point through rounding.
            if d2[chosen] == 0.0 {
                chosen = d2
                    .iter()
                    .rposition(|&w| w > 0.0)
                    .unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = &data[pick * dim..(pick + 1) * dim];
        centroids.extend_from_slice(c);
        for (w, x) in d2.iter_mut().zip(data.chunks_exact(dim)) {
            let d = sq_l2(x, c).to_f64_lossless();
            if d < *w {
                *w = d;
            }
        }
    }
    centroids
}

/// Returns `k * dim` centroids. Requires `1 <= k <= n`.
///
/// Empty clusters are re-seeded from the points farthest from their assigned
/// centroid. Iteration stops early once assignments are stable.
pub fn kmeans<S: Scalar, R: Rng>(
    data: &[S],
    dim: usize,
    k: usize,
    iters: usize,
    rng: &mut R,
) -> Vec<S> {
    let n = data.len() / dim;
    assert!(k >= 1 && k <= n, "k-means needs 1 <= k <= n (k = {k}, n = {n})");
    let mut centroids = kmeans_pp(data, dim, k, rng);
    let mut assign = vec![usize::MAX; n];
    let mut dist = vec![0.0f64; n];
    for _ in 0..iters {
        let mut changed = false;
        for (i, x) in data.chunks_exact(dim).enumerate() {
            let (c, d) = nearest(x, &centroids, dim);
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
            dist[i] = d.to_f64_lossless();
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        // Clusters whose members are all identical take that point exactly.
        let mut first: Vec<Option<usize>> = vec![None; k];
        let mut uniform = vec![true; k];
        for (i, x) in data.chunks_exact(dim).enumerate() {
            let c = assign[i];
            counts[c] += 1;
            match first[c] {
                None => first[c] = Some(i),
                Some(f) => uniform[c] = uniform[c] && &data[f * dim..(f + 1) * dim] == x,
            }
            for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                *s += v.to_f64_lossless();
            }
        }
        let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empty.is_empty() {
            let mut by_dist: Vec<usize> = (0..n).collect();
            by_dist.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
            for (&c, &p) in empty.iter().zip(&by_dist) {
                let x = &data[p * dim..(p + 1) * dim];
                for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                    *s = v.to_f64_lossless();
                }
                counts[c] = 1;
                first[c] = Some(p);
                uniform[c] = true;
            }
        }
        for c in 0..k {
            if uniform[c] {
                if let Some(f) = first[c] {
                    centroids[c * dim..(c + 1) * dim].copy_from_slice(&data[f * dim..(f + 1) * dim]);
                    continue;
                }
            }
            let inv = counts[c] as f64;
            for j in 0..dim {
                centroids[c * dim + j] = S::of(sums[c * dim + j] / inv);
            }
        }
    }
    centroids
}

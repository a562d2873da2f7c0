//! Supervised clustering quality of point sets, and a deterministic 2-D PCA.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::EvalError;

/// Silhouette, Davies-Bouldin and Calinski-Harabasz scores under Euclidean geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterScores {
    pub silhouette: f64,
    pub dbi: f64,
    pub chi: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Groups point indices by label; labels must be `0..k` with every label present.
fn groups(points: &[Vec<f64>], labels: &[usize]) -> Result<Vec<Vec<usize>>, EvalError> {
    if points.len() != labels.len() {
        return Err(EvalError::Input(format!("{} points but {} labels", points.len(), labels.len())));
    }
    if let Some(first) = points.first() {
        if points.iter().any(|p| p.len() != first.len()) {
            return Err(EvalError::Input("points differ in dimension".into()));
        }
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut g = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        g[l].push(i);
    }
    if g.iter().any(Vec::is_empty) {
        return Err(EvalError::Input("cluster labels must be contiguous from 0".into()));
    }
    if k < 2 {
        return Err(EvalError::Input(format!("need at least 2 clusters, got {k}")));
    }
    if k >= points.len() {
        return Err(EvalError::Input("need more points than clusters".into()));
    }
    Ok(g)
}

fn centroid(points: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; points[members[0]].len()];
    for &i in members {
        for (c, x) in c.iter_mut().zip(&points[i]) {
            *c += x;
        }
    }
    c.iter_mut().for_each(|c| *c /= members.len() as f64);
    c
}

/// Scores with cluster identity `labels[i]` for `points[i]`.
///
/// Conventions for degenerate geometry: a point alone in its cluster has
/// silhouette 0; coincident centroids contribute 0 to DBI; zero
/// within-cluster dispersion gives CHI 1.
pub fn cluster_scores(points: &[Vec<f64>], labels: &[usize]) -> Result<ClusterScores, EvalError> {
    let g = groups(points, labels)?;
    let n = points.len();
    let k = g.len();

    let mut silhouette = 0.0;
    for i in 0..n {
        let own = labels[i];
        if g[own].len() == 1 {
            continue;
        }
        let mean_to = |members: &[usize]| members.iter().map(|&j| dist(&points[i], &points[j])).sum::<f64>();
        let a = mean_to(&g[own]) / (g[own].len() - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| mean_to(&g[c]) / g[c].len() as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            silhouette += (b - a) / denom;
        }
    }
    silhouette /= n as f64;

    let centroids: Vec<Vec<f64>> = g.iter().map(|m| centroid(points, m)).collect();
    let scatter: Vec<f64> = g
        .iter()
        .zip(&centroids)
        .map(|(m, c)| m.iter().map(|&i| dist(&points[i], c)).sum::<f64>() / m.len() as f64)
        .collect();
    let mut dbi = 0.0;
    for i in 0..k {
        let mut worst: f64 = 0.0;
        for j in 0..k {
            if i != j {
                let d = dist(&centroids[i], &centroids[j]);
                if d > 0.0 {
                    worst = worst.max((scatter[i] + scatter[j]) / d);
                }
            }
        }
        dbi += worst;
    }
    dbi /= k as f64;

    let all: Vec<usize> = (0..n).collect();
    let overall = centroid(points, &all);
    let between: f64 = g
        .iter()
        .zip(&centroids)
        .map(|(m, c)| m.len() as f64 * sq_dist(c, &overall))
        .sum();
    let within: f64 = g
        .iter()
        .zip(&centroids)
        .map(|(m, c)| m.iter().map(|&i| sq_dist(&points[i], c)).sum::<f64>())
        .sum();
    let chi = if within == 0.0 {
        1.0
    } else {
        between * (n - k) as f64 / (within * (k - 1) as f64)
    };
    Ok(ClusterScores { silhouette, dbi, chi })
}

/// Rows scaled to unit norm; zero rows are left as they are.
pub fn l2_normalize(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|p| {
            let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                p.iter().map(|x| x / n).collect()
            } else {
                p.clone()
            }
        })
        .collect()
}

/// First two principal-component scores of each point.
///
/// Computed from the eigen-decomposition of the centered Gram matrix, which
/// stays small when points are high-dimensional. Each axis is oriented so its
/// largest-magnitude score is positive.
pub fn pca_2d(points: &[Vec<f64>]) -> Result<Vec<[f64; 2]>, EvalError> {
    let n = points.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let d = points[0].len();
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let gram = &centered * centered.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut coords = vec![[0.0; 2]; n];
    for (axis, &idx) in order.iter().take(2).enumerate() {
        let scale = eig.eigenvalues[idx].max(0.0).sqrt();
        let v = eig.eigenvectors.column(idx);
        let pivot = (0..n).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a))).unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            coords[i][axis] = sign * v[i] * scale;
        }
    }
    Ok(coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook definitions evaluated with explicit loops over all pairs.
    fn oracle(points: &[Vec<f64>], labels: &[usize]) -> (f64, f64, f64) {
        let n = points.len();
        let k = labels.iter().max().unwrap() + 1;
        let d = |i: usize, j: usize| -> f64 {
            points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let size = |c: usize| labels.iter().filter(|&&l| l == c).count();
        let mut sil = Vec::new();
        for i in 0..n {
            if size(labels[i]) == 1 {
                sil.push(0.0);
                continue;
            }
            let mut a = 0.0;
            for j in 0..n {
                if j != i && labels[j] == labels[i] {
                    a += d(i, j);
                }
            }
            a /= (size(labels[i]) - 1) as f64;
            let mut b = f64::MAX;
            for c in 0..k {
                if c == labels[i] {
                    continue;
                }
                let mut s = 0.0;
                for j in 0..n {
                    if labels[j] == c {
                        s += d(i, j);
                    }
                }
                b = b.min(s / size(c) as f64);
            }
            sil.push((b - a) / a.max(b));
        }
        let silhouette = sil.iter().sum::<f64>() / n as f64;

        let dim = points[0].len();
        let cent: Vec<Vec<f64>> = (0..k)
            .map(|c| {
                (0..dim)
                    .map(|t| (0..n).filter(|&i| labels[i] == c).map(|i| points[i][t]).sum::<f64>() / size(c) as f64)
                    .collect()
            })
            .collect();
        let cd = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let s: Vec<f64> = (0..k)
            .map(|c| (0..n).filter(|&i| labels[i] == c).map(|i| cd(&points[i], &cent[c])).sum::<f64>() / size(c) as f64)
            .collect();
        let dbi = (0..k)
            .map(|i| (0..k).filter(|&j| j != i).map(|j| (s[i] + s[j]) / cd(&cent[i], &cent[j])).fold(0.0, f64::max))
            .sum::<f64>()
            / k as f64;

        let all: Vec<f64> = (0..dim).map(|t| points.iter().map(|p| p[t]).sum::<f64>() / n as f64).collect();
        let bss: f64 = (0..k).map(|c| size(c) as f64 * cd(&cent[c], &all).powi(2)).sum();
        let wss: f64 = (0..n).map(|i| cd(&points[i], &cent[labels[i]]).powi(2)).sum();
        let chi = (bss / (k - 1) as f64) / (wss / (n - k) as f64);
        (silhouette, dbi, chi)
    }

    fn check(points: &[Vec<f64>], labels: &[usize]) {
        let got = cluster_scores(points, labels).unwrap();
        let (s, d, c) = oracle(points, labels);
        assert!((got.silhouette - s).abs() <= 1e-9, "{} vs {s}", got.silhouette);
        assert!((got.dbi - d).abs() <= 1e-9, "{} vs {d}", got.dbi);
        assert!((got.chi - c).abs() <= 1e-9 * c.abs().max(1.0), "{} vs {c}", got.chi);
    }

    #[test]
    fn fixed_two_cluster_sets() {
        let four = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]];
        check(&four, &[0, 0, 1, 1]);
        let six = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 2.0],
            vec![10.0, 0.0],
            vec![10.0, 1.0],
            vec![10.0, 2.0],
        ];
        check(&six, &[0, 0, 0, 1, 1, 1]);
        // By hand for the four-point set: a = 1, b = (10 + √101)/2,
        // s_i = 0.5, centroid gap 10, BSS = 100, WSS = 1.
        let got = cluster_scores(&four, &[0, 0, 1, 1]).unwrap();
        let b = (10.0 + 101f64.sqrt()) / 2.0;
        assert!((got.silhouette - (b - 1.0) / b).abs() < 1e-12);
        assert!((got.dbi - 0.1).abs() < 1e-12);
        assert!((got.chi - 200.0).abs() < 1e-9);
        assert!(got.silhouette >= 0.9);
    }

    proptest! {
        #[test]
        fn matches_oracle_on_random_sets(
            raw in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 6..50),
            k in 2usize..5,
        ) {
            let labels: Vec<usize> = (0..raw.len()).map(|i| i % k).collect();
            let scores = cluster_scores(&raw, &labels).unwrap();
            prop_assert!((-1.0..=1.0).contains(&scores.silhouette));
            prop_assert!(scores.dbi >= 0.0 && scores.chi >= 0.0);
            check(&raw, &labels);
        }
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert!(cluster_scores(&pts, &[0, 0, 0]).is_err());
        assert!(cluster_scores(&pts, &[0, 2, 2]).is_err());
        assert!(cluster_scores(&pts, &[0, 1, 2]).is_err());
        assert!(cluster_scores(&pts, &[0, 1]).is_err());
    }

    #[test]
    fn pca_recovers_dominant_axis() {
        let pts: Vec<Vec<f64>> = [0.0, 1.0, 2.0, 3.0, 4.0, 10.0].iter().enumerate().map(|(i, &x)| vec![x, 0.1 * ((i % 2) as f64), 0.0]).collect();
        let c = pca_2d(&pts).unwrap();
        let xs: Vec<f64> = c.iter().map(|p| p[0]).collect();
        assert!((xs[5] - xs[0] - 10.0).abs() < 0.05);
        assert!(xs[5] > 0.0);
        assert_eq!(c, pca_2d(&pts).unwrap());
    }

    #[test]
    fn normalization() {
        let n = l2_normalize(&[vec![3.0, 4.0], vec![0.0, 0.0]]);
        assert_eq!(n, vec![vec![0.6, 0.8], vec![0.0, 0.0]]);
    }
}

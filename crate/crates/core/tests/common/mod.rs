#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slash_core::attnops::{AttentionTensor, AttnMap, TensorMeta};
use slash_core::headscan::BinaryMask;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Causal row-stochastic map; some rows put most of their mass on column 0.
pub fn random_map<R: Rng>(n: usize, rng: &mut R) -> AttnMap {
    let mut m = AttnMap::zeros(n);
    for i in 0..n {
        let heavy = rng.random_bool(0.5);
        let row = m.row_mut(i);
        for x in row[..=i].iter_mut() {
            *x = rng.random_range(0.0..1.0);
        }
        if heavy {
            row[0] += 3.0 * (i + 1) as f64;
        }
        let s: f64 = row[..=i].iter().sum();
        row[..=i].iter_mut().for_each(|x| *x /= s);
    }
    m
}

pub fn random_tensor<R: Rng>(layers: usize, heads: usize, n: usize, rng: &mut R) -> AttentionTensor {
    let maps = (0..layers * heads).map(|_| random_map(n, rng)).collect();
    AttentionTensor::new(
        layers,
        heads,
        maps,
        TensorMeta {
            span_start: 0,
            span_end: n,
            label: String::new(),
        },
    )
    .unwrap()
}

pub fn random_mask<R: Rng>(rows: usize, cols: usize, density: f64, rng: &mut R) -> BinaryMask {
    let mut b = BinaryMask::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            b.set(i, j, rng.random_bool(density));
        }
    }
    b
}

/// Dilation then erosion with a 3x3 window, written pixel by pixel.
pub fn close_oracle(b: &BinaryMask) -> BinaryMask {
    let (r, c) = (b.rows() as i64, b.cols() as i64);
    let around = |i: i64, j: i64| {
        (-1..=1)
            .flat_map(move |di| (-1..=1).map(move |dj| (i + di, j + dj)))
            .filter(move |&(y, x)| y >= 0 && x >= 0 && y < r && x < c)
    };
    let mut dilated = BinaryMask::zeros(b.rows(), b.cols());
    for i in 0..r {
        for j in 0..c {
            let hit = around(i, j).any(|(y, x)| b.get(y as usize, x as usize));
            dilated.set(i as usize, j as usize, hit);
        }
    }
    let mut out = BinaryMask::zeros(b.rows(), b.cols());
    for i in 0..r {
        for j in 0..c {
            let all = around(i, j).all(|(y, x)| dilated.get(y as usize, x as usize));
            out.set(i as usize, j as usize, all);
        }
    }
    out
}

/// Best split by trying every cut between consecutive sorted values.
/// Returns the size of the lower class.
pub fn exhaustive_otsu_cut(values: &[f64]) -> usize {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let total: f64 = v.iter().sum();
    let n = v.len();
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut s0 = 0.0;
    for cut in 1..n {
        s0 += v[cut - 1];
        if v[cut] == v[cut - 1] {
            continue;
        }
        let m0 = s0 / cut as f64;
        let m1 = (total - s0) / (n - cut) as f64;
        let var = (cut * (n - cut)) as f64 * (m0 - m1).powi(2);
        if var > best.1 {
            best = (cut, var);
        }
    }
    best.0
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Entropy of the normalized squared singular values, via eigenvalues of A^T A.
pub fn entropy_oracle(map: &AttnMap) -> f64 {
    let n = map.n();
    let ata: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| map.get(k, i) * map.get(k, j)).sum())
                .collect()
        })
        .collect();
    let eig: Vec<f64> = jacobi_eigenvalues(ata).into_iter().map(|e| e.max(0.0)).collect();
    let total: f64 = eig.iter().sum();
    -eig.iter()
        .map(|e| e / total)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// `sum over edges (u,v) of |h_u - h_v|^2`.
pub fn edgewise_energy(edges: &[(usize, usize)], h: &nalgebra::DMatrix<f64>) -> f64 {
    edges
        .iter()
        .map(|&(u, v)| (h.row(u) - h.row(v)).norm_squared())
        .sum()
}

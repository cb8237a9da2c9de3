//! Small symmetric eigen-solvers used by the diagnostics.

use super::Matrix;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted descending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    debug_assert_eq!(n, a.cols());
    let mut m = a.data().to_vec();
    let idx = |i: usize, j: usize| i * n + j;
    let scale: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    if scale == 0.0 {
        return vec![0.0; n];
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[idx(i, j)] * m[idx(i, j)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[idx(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[idx(p, p)];
                let aqq = m[idx(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[idx(k, p)];
                    let akq = m[idx(k, q)];
                    m[idx(k, p)] = c * akp - s * akq;
                    m[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[idx(p, k)];
                    let aqk = m[idx(q, k)];
                    m[idx(p, k)] = c * apk - s * aqk;
                    m[idx(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[idx(i, i)]).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig
}

fn mat_vec(a: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..a.rows())
        .map(|r| a.row(r).iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Deterministic start vectors: canonical basis first, then fixed dense patterns.
fn start_vector(dim: usize, component: usize, attempt: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    if attempt == 0 {
        v[component % dim] = 1.0;
    } else {
        for (i, x) in v.iter_mut().enumerate() {
            // low-discrepancy pattern, distinct for each attempt
            let phase = (i as f64 + 1.0) * (attempt as f64 * 0.618_033_988_749_895 + 0.5);
            *x = (phase * std::f64::consts::PI).sin() + 1e-3 * (i as f64 + 1.0);
        }
    }
    v
}

/// Top-`k` eigenpairs of a symmetric positive semi-definite matrix by power
/// iteration with Hotelling deflation. Returns `(eigenvalue, unit eigenvector)`;
/// each eigenvector's largest-magnitude entry is made positive.
pub fn top_eigenpairs(a: &Matrix, k: usize, tol: f64, max_iter: usize) -> Vec<(f64, Vec<f64>)> {
    let n = a.rows();
    let mut work = a.clone();
    let scale = a.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out: Vec<(f64, Vec<f64>)> = Vec::with_capacity(k);
    for comp in 0..k.min(n) {
        let mut result = (0.0, start_vector(n, comp, 0));
        for attempt in 0..4 {
            let mut v = start_vector(n, comp, attempt);
            for (_, prev) in &out {
                orthogonalize(&mut v, prev);
            }
            if normalize(&mut v) == 0.0 {
                continue;
            }
            let mut lambda = 0.0;
            let mut broke_down = false;
            for _ in 0..max_iter {
                let mut w = mat_vec(&work, &v);
                for (_, prev) in &out {
                    orthogonalize(&mut w, prev);
                }
                let norm = normalize(&mut w);
                if norm <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
                    broke_down = true;
                    break;
                }
                lambda = norm;
                let diff = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                v = w;
                if diff < tol {
                    break;
                }
            }
            if broke_down {
                continue;
            }
            result = (lambda, v);
            break;
        }
        let (lambda, mut v) = result;
        let (imax, _) = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (i, &x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) });
        if v[imax] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..n {
            for j in 0..n {
                let val = work.get(i, j) - lambda * v[i] * v[j];
                work.set(i, j, val);
            }
        }
        out.push((lambda, v));
    }
    out
}

fn orthogonalize(v: &mut [f64], against: &[f64]) {
    let d: f64 = v.iter().zip(against).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(against).for_each(|(a, b)| *a -= d * b);
}

//! Dense eigenvalue routines.
//!
//! General real matrices go through Householder reduction to upper Hessenberg
//! form followed by Francis double-shift QR (the classic EISPACK `orthes`/`hqr`
//! pair). Symmetric matrices use cyclic Jacobi rotations, which is plenty for
//! the covariance matrices handled here (a few hundred rows at most).

use num_complex::Complex64;

use super::matrix::Matrix;
use crate::error::{dim_err, Error, Result};

const MAX_ITERS_PER_ROOT: usize = 60;

/// Eigenvalues of a square real matrix, sorted by descending modulus.
///
/// Complex eigenvalues come out as exact conjugate pairs.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex64>> {
    if !m.is_square() {
        return dim_err(format!("eigenvalues need a square matrix, got {}x{}", m.rows(), m.cols()));
    }
    m.ensure_finite("eigenvalue input")?;
    let n = m.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut h: Vec<Vec<f64>> = m.to_rows();
    balance(&mut h);
    hessenberg(&mut h);
    let (re, im) = hqr(&mut h)?;
    let mut out: Vec<Complex64> = re.into_iter().zip(im).map(|(r, i)| Complex64::new(r, i)).collect();
    sort_by_modulus(&mut out);
    Ok(out)
}

pub(crate) fn sort_by_modulus(v: &mut [Complex64]) {
    v.sort_by(|a, b| {
        b.norm()
            .total_cmp(&a.norm())
            .then(b.re.total_cmp(&a.re))
            .then(b.im.total_cmp(&a.im))
    });
}

/// Diagonal similarity scaling by powers of two so that row and column norms
/// are comparable (Parlett–Reinsch); leaves the spectrum unchanged.
fn balance(a: &mut [Vec<f64>]) {
    const RADIX: f64 = 2.0;
    let n = a.len();
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let (mut r, mut c) = (0.0, 0.0);
            for j in 0..n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let mut g = r / RADIX;
            let mut f = 1.0;
            let s = c + r;
            while c < g {
                f *= RADIX;
                c *= sqrdx;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= sqrdx;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                let g = 1.0 / f;
                for v in a[i].iter_mut() {
                    *v *= g;
                }
                for row in a.iter_mut() {
                    row[i] *= f;
                }
            }
        }
    }
}

/// Householder reduction to upper Hessenberg form, in place.
fn hessenberg(h: &mut [Vec<f64>]) {
    let n = h.len();
    if n < 3 {
        return;
    }
    let high = n - 1;
    let mut ort = vec![0.0; n];
    for m in 1..high {
        let scale: f64 = (m..=high).map(|i| h[i][m - 1].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h[i][m - 1] / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;

        for j in m..n {
            let mut f = 0.0;
            for i in (m..=high).rev() {
                f += ort[i] * h[i][j];
            }
            f /= hh;
            for i in m..=high {
                h[i][j] -= f * ort[i];
            }
        }
        for row in h.iter_mut().take(high + 1) {
            let mut f = 0.0;
            for j in (m..=high).rev() {
                f += ort[j] * row[j];
            }
            f /= hh;
            for j in m..=high {
                row[j] -= f * ort[j];
            }
        }
        ort[m] *= scale;
        h[m][m - 1] = scale * g;
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix; eigenvalues only.
fn hqr(h: &mut [Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let nn = h.len();
    let mut d = vec![0.0; nn];
    let mut e = vec![0.0; nn];
    let eps = f64::EPSILON;
    let mut exshift = 0.0;

    let mut norm = 0.0;
    for (i, row) in h.iter().enumerate() {
        for v in row.iter().skip(i.saturating_sub(1)) {
            norm += v.abs();
        }
    }

    let mut n = nn as isize - 1;
    let mut iter = 0usize;
    let mut total = 0usize;
    let (mut p, mut q, mut r, mut s, mut z);
    let (mut w, mut x, mut y);
    while n >= 0 {
        let nu = n as usize;
        let mut l = nu;
        while l > 0 {
            s = h[l - 1][l - 1].abs() + h[l][l].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[l][l - 1].abs() <= eps * s {
                break;
            }
            l -= 1;
        }

        if l == nu {
            d[nu] = h[nu][nu] + exshift;
            e[nu] = 0.0;
            n -= 1;
            iter = 0;
        } else if l + 1 == nu {
            w = h[nu][nu - 1] * h[nu - 1][nu];
            p = (h[nu - 1][nu - 1] - h[nu][nu]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            x = h[nu][nu] + exshift;
            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                d[nu - 1] = x + z;
                d[nu] = if z != 0.0 { x - w / z } else { d[nu - 1] };
                e[nu - 1] = 0.0;
                e[nu] = 0.0;
            } else {
                d[nu - 1] = x + p;
                d[nu] = x + p;
                e[nu - 1] = z;
                e[nu] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            x = h[nu][nu];
            y = h[nu - 1][nu - 1];
            w = h[nu][nu - 1] * h[nu - 1][nu];

            if iter == 10 {
                exshift += x;
                for i in 0..=nu {
                    h[i][i] -= x;
                }
                s = h[nu][nu - 1].abs() + h[nu - 1][nu - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in 0..=nu {
                        h[i][i] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }
            iter += 1;
            total += 1;
            if iter > MAX_ITERS_PER_ROOT {
                return Err(Error::NoConvergence { iterations: total });
            }

            let mut m = nu - 2;
            loop {
                z = h[m][m];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[m + 1][m] + h[m][m + 1];
                q = h[m + 1][m + 1] - z - r - s;
                r = h[m + 2][m + 1];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if h[m][m - 1].abs() * (q.abs() + r.abs())
                    < eps * (p.abs() * (h[m - 1][m - 1].abs() + z.abs() + h[m + 1][m + 1].abs()))
                {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nu {
                h[i][i - 2] = 0.0;
                if i > m + 2 {
                    h[i][i - 3] = 0.0;
                }
            }

            for k in m..nu {
                let notlast = k != nu - 1;
                if k != m {
                    p = h[k][k - 1];
                    q = h[k + 1][k - 1];
                    r = if notlast { h[k + 2][k - 1] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        h[k][k - 1] = -s * x;
                    } else if l != m {
                        h[k][k - 1] = -h[k][k - 1];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;

                    for j in k..nn {
                        p = h[k][j] + q * h[k + 1][j];
                        if notlast {
                            p += r * h[k + 2][j];
                            h[k + 2][j] -= p * z;
                        }
                        h[k][j] -= p * x;
                        h[k + 1][j] -= p * y;
                    }
                    for row in h.iter_mut().take(nu.min(k + 3) + 1) {
                        p = x * row[k] + y * row[k + 1];
                        if notlast {
                            p += z * row[k + 2];
                            row[k + 2] -= p * r;
                        }
                        row[k] -= p;
                        row[k + 1] -= p * q;
                    }
                }
            }
        }
    }
    Ok((d, e))
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit eigenvectors
/// as the rows of the returned matrix.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !m.is_square() {
        return dim_err(format!("symmetric eigen needs a square matrix, got {}x{}", m.rows(), m.cols()));
    }
    m.ensure_finite("symmetric eigen input")?;
    let n = m.rows();
    let mut a = m.clone();
    // v holds eigenvectors as columns during the sweep
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut sweeps = 0;
    loop {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        sweeps += 1;
        if sweeps > 100 {
            return Err(Error::NoConvergence { iterations: sweeps });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, k| v[(k, order[r])]);
    Ok((values, vectors))
}

//! Dense real eigenvalues: balancing, Hessenberg reduction by stabilised
//! elementary similarity transforms, then Francis double-shift QR.
//!
//! Only the spectrum is computed; eigenvectors are never needed downstream.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{MarketError, Result};

const MAX_ITS_PER_EIGENVALUE: usize = 60;

/// Full spectrum of a square real matrix, sorted by descending real part
/// (ties broken by descending imaginary part).
pub fn eigenvalues(matrix: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if !matrix.is_square() {
        return Err(MarketError::InvalidArgument("eigenvalues of a non-square matrix".into()));
    }
    if matrix.iter().any(|x| !x.is_finite()) {
        return Err(MarketError::InvalidArgument("matrix has non-finite entries".into()));
    }
    let n = matrix.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut a = Work::from(matrix);
    a.balance();
    a.reduce_to_hessenberg();
    let mut out = a.hqr()?;
    out.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
    Ok(out)
}

/// Row-major scratch buffer indexed from 1, which keeps the classic
/// EISPACK-style index arithmetic readable.
struct Work {
    n: usize,
    d: Vec<f64>,
}

impl From<&DMatrix<f64>> for Work {
    fn from(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut d = vec![0.0; (n + 1) * (n + 1)];
        for i in 0..n {
            for j in 0..n {
                d[(i + 1) * (n + 1) + j + 1] = m[(i, j)];
            }
        }
        Work { n, d }
    }
}

impl Work {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.d[i * (self.n + 1) + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let n = self.n;
        self.d[i * (n + 1) + j] = v;
    }

    #[inline]
    fn add(&mut self, i: usize, j: usize, v: f64) {
        let n = self.n;
        self.d[i * (n + 1) + j] += v;
    }

    fn swap(&mut self, a: (usize, usize), b: (usize, usize)) {
        let n = self.n;
        self.d.swap(a.0 * (n + 1) + a.1, b.0 * (n + 1) + b.1);
    }

    /// Diagonal similarity scaling by powers of two so row and column norms match.
    fn balance(&mut self) {
        const RADIX: f64 = 2.0;
        let sqrdx = RADIX * RADIX;
        let n = self.n;
        let mut done = false;
        while !done {
            done = true;
            for i in 1..=n {
                let mut r = 0.0;
                let mut c = 0.0;
                for j in 1..=n {
                    if j != i {
                        c += self.at(j, i).abs();
                        r += self.at(i, j).abs();
                    }
                }
                if c != 0.0 && r != 0.0 {
                    let s = c + r;
                    let mut f = 1.0;
                    let mut g = r / RADIX;
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
                        for j in 1..=n {
                            let v = self.at(i, j) * g;
                            self.set(i, j, v);
                        }
                        for j in 1..=n {
                            let v = self.at(j, i) * f;
                            self.set(j, i, v);
                        }
                    }
                }
            }
        }
    }

    /// Gaussian elimination with partial pivoting, applied as a similarity.
    fn reduce_to_hessenberg(&mut self) {
        let n = self.n;
        for m in 2..n {
            let mut x: f64 = 0.0;
            let mut piv = m;
            for j in m..=n {
                if self.at(j, m - 1).abs() > x.abs() {
                    x = self.at(j, m - 1);
                    piv = j;
                }
            }
            if piv != m {
                for j in (m - 1)..=n {
                    self.swap((piv, j), (m, j));
                }
                for j in 1..=n {
                    self.swap((j, piv), (j, m));
                }
            }
            if x != 0.0 {
                for i in (m + 1)..=n {
                    let mut y = self.at(i, m - 1);
                    if y != 0.0 {
                        y /= x;
                        self.set(i, m - 1, y);
                        for j in m..=n {
                            let v = y * self.at(m, j);
                            self.add(i, j, -v);
                        }
                        for j in 1..=n {
                            let v = y * self.at(j, i);
                            self.add(j, m, v);
                        }
                    }
                }
            }
        }
        // the multipliers stored below the subdiagonal are not part of H
        for i in 3..=n {
            for j in 1..(i - 1) {
                self.set(i, j, 0.0);
            }
        }
    }

    /// Eigenvalues of the upper Hessenberg matrix held in `self`.
    fn hqr(&mut self) -> Result<Vec<Complex64>> {
        let n = self.n;
        let mut wr = vec![0.0; n + 1];
        let mut wi = vec![0.0; n + 1];

        let mut anorm = 0.0;
        for i in 1..=n {
            for j in i.saturating_sub(1).max(1)..=n {
                anorm += self.at(i, j).abs();
            }
        }

        let mut nn = n;
        let mut t = 0.0;
        while nn >= 1 {
            let mut its = 0;
            loop {
                // look for a single small subdiagonal element
                let mut l = nn;
                while l >= 2 {
                    let mut s = self.at(l - 1, l - 1).abs() + self.at(l, l).abs();
                    if s == 0.0 {
                        s = anorm;
                    }
                    if self.at(l, l - 1).abs() <= f64::EPSILON * s {
                        self.set(l, l - 1, 0.0);
                        break;
                    }
                    l -= 1;
                }
                let l = l.max(1);

                let mut x = self.at(nn, nn);
                if l == nn {
                    // one root found
                    wr[nn] = x + t;
                    wi[nn] = 0.0;
                    nn -= 1;
                    break;
                }
                let mut y = self.at(nn - 1, nn - 1);
                let mut w = self.at(nn, nn - 1) * self.at(nn - 1, nn);
                if l == nn - 1 {
                    // two roots found
                    let p = 0.5 * (y - x);
                    let q = p * p + w;
                    let z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        let z = p + z.copysign(p);
                        wr[nn - 1] = x + z;
                        wr[nn] = x + z;
                        if z != 0.0 {
                            wr[nn] = x - w / z;
                        }
                        wi[nn - 1] = 0.0;
                        wi[nn] = 0.0;
                    } else {
                        wr[nn - 1] = x + p;
                        wr[nn] = x + p;
                        wi[nn - 1] = -z;
                        wi[nn] = z;
                    }
                    nn = nn.saturating_sub(2);
                    break;
                }

                if its == MAX_ITS_PER_EIGENVALUE {
                    return Err(MarketError::EigensolverStalled);
                }
                if its == 10 || its == 20 || its == 40 {
                    // exceptional shift
                    t += x;
                    for i in 1..=nn {
                        self.add(i, i, -x);
                    }
                    let s = self.at(nn, nn - 1).abs() + self.at(nn - 1, nn - 2).abs();
                    x = 0.75 * s;
                    y = x;
                    w = -0.4375 * s * s;
                }
                its += 1;

                // form the shift and look for two consecutive small subdiagonals
                let (mut p, mut q, mut r);
                let mut m = nn - 2;
                loop {
                    let z = self.at(m, m);
                    let rr = x - z;
                    let ss = y - z;
                    p = (rr * ss - w) / self.at(m + 1, m) + self.at(m, m + 1);
                    q = self.at(m + 1, m + 1) - z - rr - ss;
                    r = self.at(m + 2, m + 1);
                    let s = p.abs() + q.abs() + r.abs();
                    p /= s;
                    q /= s;
                    r /= s;
                    if m == l {
                        break;
                    }
                    let u = self.at(m, m - 1).abs() * (q.abs() + r.abs());
                    let v = p.abs()
                        * (self.at(m - 1, m - 1).abs() + z.abs() + self.at(m + 1, m + 1).abs());
                    if u <= f64::EPSILON * v {
                        break;
                    }
                    m -= 1;
                }
                for i in (m + 2)..=nn {
                    self.set(i, i - 2, 0.0);
                    if i != m + 2 {
                        self.set(i, i - 3, 0.0);
                    }
                }

                // double QR step on rows l..nn, columns m..nn
                let mut k = m;
                while k < nn {
                    if k != m {
                        p = self.at(k, k - 1);
                        q = self.at(k + 1, k - 1);
                        r = if k != nn - 1 { self.at(k + 2, k - 1) } else { 0.0 };
                        x = p.abs() + q.abs() + r.abs();
                        if x != 0.0 {
                            p /= x;
                            q /= x;
                            r /= x;
                        }
                    }
                    let s = (p * p + q * q + r * r).sqrt().copysign(p);
                    if s != 0.0 {
                        if k == m {
                            if l != m {
                                let v = -self.at(k, k - 1);
                                self.set(k, k - 1, v);
                            }
                        } else {
                            self.set(k, k - 1, -s * x);
                        }
                        p += s;
                        x = p / s;
                        y = q / s;
                        let z = r / s;
                        q /= p;
                        r /= p;
                        for j in k..=nn {
                            let mut pp = self.at(k, j) + q * self.at(k + 1, j);
                            if k != nn - 1 {
                                pp += r * self.at(k + 2, j);
                                self.add(k + 2, j, -pp * z);
                            }
                            self.add(k + 1, j, -pp * y);
                            self.add(k, j, -pp * x);
                        }
                        let mmin = nn.min(k + 3);
                        for i in l..=mmin {
                            let mut pp = x * self.at(i, k) + y * self.at(i, k + 1);
                            if k != nn - 1 {
                                pp += z * self.at(i, k + 2);
                                self.add(i, k + 2, -pp * r);
                            }
                            self.add(i, k + 1, -pp * q);
                            self.add(i, k, -pp);
                        }
                    }
                    k += 1;
                }
            }
        }

        Ok((1..=n).map(|i| Complex64::new(wr[i], wi[i])).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -2.0, -3.0]));
        let ev = eigenvalues(&m).unwrap();
        let re: Vec<f64> = ev.iter().map(|z| z.re).collect();
        assert_eq!(re, vec![-1.0, -2.0, -3.0]);
        assert!(ev.iter().all(|z| z.im == 0.0));
    }

    #[test]
    fn rotation() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let ev = eigenvalues(&m).unwrap();
        assert!(ev[0].re.abs() < 1e-15 && (ev[0].im - 1.0).abs() < 1e-15);
        assert!(ev[1].re.abs() < 1e-15 && (ev[1].im + 1.0).abs() < 1e-15);
    }

    #[test]
    fn scalar_and_empty() {
        assert!(eigenvalues(&DMatrix::zeros(0, 0)).unwrap().is_empty());
        let ev = eigenvalues(&DMatrix::from_element(1, 1, 4.5)).unwrap();
        assert_eq!(ev, vec![Complex64::new(4.5, 0.0)]);
    }

    #[test]
    fn companion_matrix_roots() {
        // x³ − 6x² + 11x − 6 = (x−1)(x−2)(x−3)
        let m = DMatrix::from_row_slice(3, 3, &[6.0, -11.0, 6.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let ev = eigenvalues(&m).unwrap();
        for (z, want) in ev.iter().zip([3.0, 2.0, 1.0]) {
            assert!((z.re - want).abs() < 1e-10 && z.im.abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_non_square() {
        assert!(eigenvalues(&DMatrix::zeros(2, 3)).is_err());
    }
}

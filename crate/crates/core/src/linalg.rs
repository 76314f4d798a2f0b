//! Banded LU with partial pivoting, plus a single border row/column.
//!
//! The flow Jacobian is banded once cells are numbered z-fastest; the injector
//! bottom-hole pressure couples a whole column and is kept as a border unknown
//! eliminated through a Schur complement.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Singular;

/// `n × n` matrix with `kl` sub- and `ku` super-diagonals.
///
/// Each row stores columns `i - kl ..= i + kl + ku`; the extra `kl` columns on
/// the right absorb fill-in from row interchanges.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku, "({i},{j}) outside band");
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i + self.ku, "({i},{j}) outside declared band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    #[cfg(test)]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.kl + self.ku {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// `y = A x`, valid before factorisation.
    #[cfg(test)]
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            *yi = (lo..=hi).map(|j| self.data[self.slot(i, j)] * x[j]).sum();
        }
        y
    }

    /// In-place factorisation `P A = L U`.
    pub fn factor(mut self) -> Result<BandLu, Singular> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.slot(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > 0.0) || !best.is_finite() {
                return Err(Singular);
            }
            piv[k] = p;
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let a = self.slot(k, j);
                    let b = self.slot(p, j);
                    self.data.swap(a, b);
                }
            }
            let rk = self.slot(k, k);
            let pivot = self.data[rk];
            let len = last_col - k;
            for i in k + 1..=last_row {
                let ri = self.slot(i, k);
                let l = self.data[ri] / pivot;
                self.data[ri] = l;
                if l != 0.0 {
                    // rows are stored consecutively, so row k precedes row i
                    let (head, tail) = self.data.split_at_mut(ri + 1);
                    let src = &head[rk + 1..rk + 1 + len];
                    for (d, s) in tail[..len].iter_mut().zip(src) {
                        *d -= l * s;
                    }
                }
            }
        }
        Ok(BandLu { a: self, piv })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    a: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, b: &mut [f64]) {
        let a = &self.a;
        let n = a.n;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + a.kl).min(n - 1) {
                    b[i] -= a.data[a.slot(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let last = (k + a.kl + a.ku).min(n - 1);
            let base = a.slot(k, k);
            let mut s = b[k];
            for off in 1..=(last - k) {
                s -= a.data[base + off] * b[k + off];
            }
            b[k] = s / a.data[base];
        }
    }

    pub fn solve_transpose(&self, b: &mut [f64]) {
        let a = &self.a;
        let n = a.n;
        // Uᵀ w = b
        for k in 0..n {
            let base = a.slot(k, k);
            b[k] /= a.data[base];
            let wk = b[k];
            let last = (k + a.kl + a.ku).min(n - 1);
            for off in 1..=(last - k) {
                b[k + off] -= a.data[base + off] * wk;
            }
        }
        // apply Gᵀ = P0 M0ᵀ ... P(n-1) M(n-1)ᵀ
        for k in (0..n).rev() {
            let mut s = 0.0;
            for i in k + 1..=(k + a.kl).min(n - 1) {
                s += a.data[a.slot(i, k)] * b[i];
            }
            b[k] -= s;
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
        }
    }
}

/// `[A c; rᵀ d]` with banded `A`.
#[derive(Debug, Clone)]
pub struct Bordered {
    pub band: BandMatrix,
    pub col: Vec<f64>,
    pub row: Vec<f64>,
    pub corner: f64,
}

pub struct BorderedLu {
    lu: BandLu,
    col: Vec<f64>,
    row: Vec<f64>,
    /// A⁻¹ c
    ainv_col: Vec<f64>,
    /// A⁻ᵀ r
    ainvt_row: Vec<f64>,
    schur: f64,
}

impl Bordered {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        Self { band: BandMatrix::zeros(n, kl, ku), col: vec![0.0; n], row: vec![0.0; n], corner: 0.0 }
    }

    pub fn clear(&mut self) {
        self.band.clear();
        self.col.iter_mut().for_each(|v| *v = 0.0);
        self.row.iter_mut().for_each(|v| *v = 0.0);
        self.corner = 0.0;
    }

    #[cfg(test)]
    pub fn mul_vec(&self, x: &[f64], y: f64) -> (Vec<f64>, f64) {
        let mut top = self.band.mul_vec(x);
        for (t, c) in top.iter_mut().zip(&self.col) {
            *t += c * y;
        }
        let bottom = self.row.iter().zip(x).map(|(r, x)| r * x).sum::<f64>() + self.corner * y;
        (top, bottom)
    }

    pub fn factor(self) -> Result<BorderedLu, Singular> {
        let lu = self.band.factor()?;
        let mut ainv_col = self.col.clone();
        lu.solve(&mut ainv_col);
        let mut ainvt_row = self.row.clone();
        lu.solve_transpose(&mut ainvt_row);
        let schur = self.corner - dot(&self.row, &ainv_col);
        if !(schur.abs() > 0.0) || !schur.is_finite() {
            return Err(Singular);
        }
        Ok(BorderedLu { lu, col: self.col, row: self.row, ainv_col, ainvt_row, schur })
    }
}

impl BorderedLu {
    /// Solves `[A c; rᵀ d] [x; y] = [b; e]` in place.
    pub fn solve(&self, b: &mut [f64], e: f64) -> f64 {
        self.lu.solve(b);
        let y = (e - dot(&self.row, b)) / self.schur;
        for (bi, v) in b.iter_mut().zip(&self.ainv_col) {
            *bi -= v * y;
        }
        y
    }

    /// Solves `[Aᵀ r; cᵀ d] [x; y] = [b; e]` in place.
    pub fn solve_transpose(&self, b: &mut [f64], e: f64) -> f64 {
        self.lu.solve_transpose(b);
        let y = (e - dot(&self.col, b)) / self.schur;
        for (bi, v) in b.iter_mut().zip(&self.ainvt_row) {
            *bi -= v * y;
        }
        y
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, kl: usize, ku: usize, rng: &mut ChaCha8Rng) -> (BandMatrix, Vec<Vec<f64>>) {
        let mut m = BandMatrix::zeros(n, kl, ku);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                // weak diagonal so pivoting actually happens
                let v = if i == j { rng.random_range(-0.1..0.1) } else { rng.random_range(-1.0..1.0) };
                m.add(i, j, v);
                dense[i][j] = v;
            }
        }
        (m, dense)
    }

    fn dense_mul(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter().map(|row| dot(row, x)).collect()
    }

    fn dense_mul_t(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        (0..a.len()).map(|j| (0..a.len()).map(|i| a[i][j] * x[i]).sum()).collect()
    }

    #[test]
    fn band_solve_and_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(n, kl, ku) in &[(1, 0, 0), (7, 2, 3), (40, 5, 5), (33, 9, 1)] {
            let (m, dense) = random_band(n, kl, ku, &mut rng);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = dense_mul(&dense, &x);
            let bt = dense_mul_t(&dense, &x);
            assert_eq!(m.mul_vec(&x).len(), n);
            let lu = m.factor().unwrap();
            let mut s = b.clone();
            lu.solve(&mut s);
            let mut st = bt.clone();
            lu.solve_transpose(&mut st);
            for i in 0..n {
                assert!((s[i] - x[i]).abs() < 1e-8, "n={n} i={i}: {} vs {}", s[i], x[i]);
                assert!((st[i] - x[i]).abs() < 1e-8, "transpose n={n} i={i}");
            }
        }
    }

    #[test]
    fn bordered_solve_and_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 30;
        let (band, dense) = random_band(n, 4, 4, &mut rng);
        let mut sys = Bordered { band, col: vec![0.0; n], row: vec![0.0; n], corner: 1.3 };
        for i in 0..n {
            sys.col[i] = rng.random_range(-1.0..1.0);
            sys.row[i] = rng.random_range(-1.0..1.0);
        }
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = 0.7;
        let (mut b, e) = sys.mul_vec(&x, y);
        let mut bt = dense_mul_t(&dense, &x);
        for i in 0..n {
            bt[i] += sys.row[i] * y;
        }
        let et = dot(&sys.col, &x) + sys.corner * y;
        let lu = sys.factor().unwrap();
        let ys = lu.solve(&mut b, e);
        let yt = lu.solve_transpose(&mut bt, et);
        assert!((ys - y).abs() < 1e-9 && (yt - y).abs() < 1e-9);
        for i in 0..n {
            assert!((b[i] - x[i]).abs() < 1e-9);
            assert!((bt[i] - x[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_is_reported() {
        let m = BandMatrix::zeros(3, 1, 1);
        assert!(m.factor().is_err());
    }
}

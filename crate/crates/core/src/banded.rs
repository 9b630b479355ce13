//! Banded LU factorization with partial pivoting.
//!
//! Storage follows the usual scheme for pivoted band solvers: row `i` keeps
//! columns `i - kl ..= i + kl + ku`, so the upper factor has room for the
//! fill-in created by row interchanges.

use crate::error::{Error, Result};

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

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + j + self.kl - i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i}, {j}) outside the band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// Factors in place. Fails when the smallest pivot is negligible relative
    /// to the largest one.
    pub fn factor(mut self) -> Result<BandLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut piv = vec![0usize; n];
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0f64;
        for i in 0..n {
            let last_row = (i + kl).min(n - 1);
            let last_col = (i + kl + ku).min(n - 1);
            let mut p = i;
            let mut best = self.get(i, i).abs();
            for r in i + 1..=last_row {
                let v = self.get(r, i).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            piv[i] = p;
            if p != i {
                for c in i..=last_col {
                    let a = self.idx(i, c);
                    let b = self.idx(p, c);
                    self.data.swap(a, b);
                }
            }
            let d = self.get(i, i);
            min_pivot = min_pivot.min(d.abs());
            max_pivot = max_pivot.max(d.abs());
            if d == 0.0 {
                return Err(Error::NearEigenfrequency { min_pivot: 0.0, max_pivot });
            }
            for r in i + 1..=last_row {
                let k = self.idx(r, i);
                let l = self.data[k] / d;
                self.data[k] = l;
                if l != 0.0 {
                    for c in i + 1..=last_col {
                        let u = self.data[self.idx(i, c)];
                        let t = self.idx(r, c);
                        self.data[t] -= l * u;
                    }
                }
            }
        }
        if n > 0 && min_pivot <= PIVOT_RTOL * max_pivot {
            return Err(Error::NearEigenfrequency { min_pivot, max_pivot });
        }
        Ok(BandLu { lu: self, piv, min_pivot, max_pivot })
    }
}

const PIVOT_RTOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct BandLu {
    lu: BandMatrix,
    piv: Vec<usize>,
    min_pivot: f64,
    max_pivot: f64,
}

impl BandLu {
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    pub fn max_pivot(&self) -> f64 {
        self.max_pivot
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let a = &self.lu;
        let (n, kl, ku) = (a.n, a.kl, a.ku);
        assert_eq!(b.len(), n);
        for i in 0..n {
            let p = self.piv[i];
            if p != i {
                b.swap(i, p);
            }
            let bi = b[i];
            if bi != 0.0 {
                for r in i + 1..=(i + kl).min(n - 1) {
                    b[r] -= a.get(r, i) * bi;
                }
            }
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for c in i + 1..=(i + kl + ku).min(n - 1) {
                s -= a.get(i, c) * b[c];
            }
            b[i] = s / a.get(i, i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_dense_solve_on_random_band() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (n, kl, ku) = (40, 3, 5);
        let mut band = BandMatrix::zeros(n, kl, ku);
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                let v: f64 = rng.gen_range(-1.0..1.0);
                band.add(i, j, v);
                dense[(i, j)] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lu = band.factor().unwrap();
        let mut x = b.clone();
        lu.solve_in_place(&mut x);
        let xr = dense.lu().solve(&DVector::from_vec(b)).unwrap();
        for i in 0..n {
            assert!((x[i] - xr[i]).abs() < 1e-10, "{i}: {} vs {}", x[i], xr[i]);
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        // [[0, 1], [1, 0]]
        let mut band = BandMatrix::zeros(2, 1, 1);
        band.add(0, 1, 1.0);
        band.add(1, 0, 1.0);
        let lu = band.factor().unwrap();
        let mut b = vec![2.0, 3.0];
        lu.solve_in_place(&mut b);
        assert_eq!(b, vec![3.0, 2.0]);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut band = BandMatrix::zeros(2, 1, 1);
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            band.add(i, j, 1.0);
        }
        assert!(matches!(band.factor(), Err(Error::NearEigenfrequency { .. })));
    }
}

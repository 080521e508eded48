use crate::error::{Error, Result};

/// Square band matrix with `kl` sub- and `ku` super-diagonals, stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// Row `i` holds columns `i-kl ..= i+ku` at offsets `0 ..= kl+ku`.
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    fn offset(&self, i: usize, j: usize) -> Option<usize> {
        if j + self.kl < i || j > i + self.ku {
            return None;
        }
        Some(i * (self.kl + self.ku + 1) + (j + self.kl - i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.offset(i, j).map_or(0.0, |o| self.data[o])
    }

    /// Adds `v` to entry `(i, j)`; panics outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let o = self.offset(i, j).unwrap_or_else(|| panic!("entry ({i}, {j}) outside the band"));
        self.data[o] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// Solves `A x = b` by band LU without pivoting.
    ///
    /// Intended for diagonally dominant (M-matrix) systems; a vanishing
    /// pivot is reported as singular.
    pub fn solve(mut self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: b.len(), context: "right-hand side" });
        }
        let n = self.n;
        let w = self.kl + self.ku + 1;
        let scale = self.data.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        for k in 0..n {
            let pivot = self.data[k * w + self.kl];
            if !(pivot.abs() > 1e-14 * scale) {
                return Err(Error::Singular(format!("pivot {pivot:e} at row {k}")));
            }
            let last_row = (k + self.kl).min(n - 1);
            let last_col = (k + self.ku).min(n - 1);
            for i in k + 1..=last_row {
                let oik = i * w + (k + self.kl - i);
                let l = self.data[oik] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[oik] = l;
                for j in k + 1..=last_col {
                    let okj = k * w + (j + self.kl - k);
                    let oij = i * w + (j + self.kl - i);
                    self.data[oij] -= l * self.data[okj];
                }
            }
        }
        let mut x = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(self.kl);
            let mut acc = x[i];
            for (j, xj) in x.iter().enumerate().take(i).skip(lo) {
                acc -= self.data[i * w + (j + self.kl - i)] * xj;
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let hi = (i + self.ku).min(n - 1);
            let mut acc = x[i];
            for j in i + 1..=hi {
                acc -= self.data[i * w + (j + self.kl - i)] * x[j];
            }
            x[i] = acc / self.data[i * w + self.kl];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("solution is not finite".into()));
        }
        Ok(x)
    }
}

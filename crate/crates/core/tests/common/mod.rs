//! Independent dense reference implementation used as a test oracle.
#![allow(dead_code)]

use adasgd::SparseDataset;

pub struct Dense {
    pub z: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub lambda: f64,
}

impl Dense {
    pub fn new(data: &SparseDataset, lambda: f64) -> Self {
        let z = data.rows().iter().map(|r| r.to_dense(data.n_features())).collect();
        Self {
            z,
            y: data.labels().to_vec(),
            lambda,
        }
    }

    fn margin(&self, i: usize, w: &[f64]) -> f64 {
        self.y[i] * self.z[i].iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        let n = self.z.len() as f64;
        let data: f64 = (0..self.z.len())
            .map(|i| {
                let m = self.margin(i, w);
                // log(1 + exp(-m)) without overflow
                if m > 0.0 {
                    (-m).exp().ln_1p()
                } else {
                    -m + m.exp().ln_1p()
                }
            })
            .sum();
        data / n + 0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let n = self.z.len() as f64;
        let mut g: Vec<f64> = w.iter().map(|v| self.lambda * v).collect();
        for i in 0..self.z.len() {
            let c = -self.y[i] / (1.0 + self.margin(i, w).exp()) / n;
            for (gj, zj) in g.iter_mut().zip(&self.z[i]) {
                *gj += c * zj;
            }
        }
        g
    }

    pub fn hessian(&self, w: &[f64]) -> Vec<Vec<f64>> {
        let d = w.len();
        let n = self.z.len() as f64;
        let mut h = vec![vec![0.0; d]; d];
        for (i, zi) in self.z.iter().enumerate() {
            let s = 1.0 / (1.0 + (-self.margin(i, w)).exp());
            let c = s * (1.0 - s) / n;
            for a in 0..d {
                for b in 0..d {
                    h[a][b] += c * zi[a] * zi[b];
                }
            }
        }
        for (a, row) in h.iter_mut().enumerate() {
            row[a] += self.lambda;
        }
        h
    }

    /// Damped Newton to machine precision; returns `(w*, F*)`.
    pub fn optimum(&self) -> (Vec<f64>, f64) {
        let d = self.z[0].len();
        let mut w = vec![0.0; d];
        for _ in 0..100 {
            let g = self.gradient(&w);
            let step = solve(self.hessian(&w), g.clone());
            let f0 = self.objective(&w);
            let slope: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = w.iter().zip(&step).map(|(a, b)| a - t * b).collect();
                if self.objective(&trial) <= f0 - 1e-4 * t * slope || t < 1e-10 {
                    w = trial;
                    break;
                }
                t *= 0.5;
            }
            if norm(&self.gradient(&w)) < 1e-14 {
                break;
            }
        }
        let f = self.objective(&w);
        (w, f)
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

pub fn ionosphere() -> SparseDataset {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/ionosphere.libsvm");
    let file = std::fs::File::open(path).expect("ionosphere fixture");
    adasgd::parse_libsvm(std::io::BufReader::new(file), None).expect("valid LIBSVM")
}

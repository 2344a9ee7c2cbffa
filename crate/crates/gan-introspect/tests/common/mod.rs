//! Shared test utilities: a brute-force CCA oracle built from the
//! generalized-eigenvalue formulation, written with its own hand-rolled
//! linear algebra so it shares no code path with the implementation under
//! test.

#![allow(dead_code)]

/// Row-major square/rectangular matrix helpers; everything tiny, clarity
/// over speed.
pub fn mat_mul(a: &[f64], ar: usize, ac: usize, b: &[f64], bc: usize) -> Vec<f64> {
    let mut c = vec![0.0; ar * bc];
    for i in 0..ar {
        for k in 0..ac {
            let av = a[i * ac + k];
            if av == 0.0 {
                continue;
            }
            for j in 0..bc {
                c[i * bc + j] += av * b[k * bc + j];
            }
        }
    }
    c
}

pub fn mat_transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut t = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = a[i * c + j];
        }
    }
    t
}

/// In-place Gauss-Jordan inverse with partial pivoting.
pub fn mat_inverse(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if m[r * n + col].abs() > m[pivot * n + col].abs() {
                pivot = r;
            }
        }
        assert!(
            m[pivot * n + col].abs() > 1e-300,
            "oracle: singular matrix"
        );
        if pivot != col {
            for j in 0..n {
                m.swap(col * n + j, pivot * n + j);
                inv.swap(col * n + j, pivot * n + j);
            }
        }
        let d = m[col * n + col];
        for j in 0..n {
            m[col * n + j] /= d;
            inv[col * n + j] /= d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[r * n + col];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                m[r * n + j] -= f * m[col * n + j];
                inv[r * n + j] -= f * inv[col * n + j];
            }
        }
    }
    inv
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                assert!(sum > 0.0, "oracle: matrix not positive definite");
                l[i * n + j] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    l
}

/// Solve L X = B for X with lower-triangular L; B is n x c.
pub fn forward_solve(l: &[f64], n: usize, b: &[f64], c: usize) -> Vec<f64> {
    let mut x = vec![0.0; n * c];
    for col in 0..c {
        for i in 0..n {
            let mut sum = b[i * c + col];
            for k in 0..i {
                sum -= l[i * n + k] * x[k * c + col];
            }
            x[i * c + col] = sum / l[i * n + i];
        }
    }
    x
}

/// Eigenvalues of a symmetric matrix via cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i * n + i]).collect()
}

/// Brute-force canonical correlations straight from the covariance
/// definitions: the squared coefficients are the generalized eigenvalues of
/// `Sxy Syy^{-1} Syx v = rho^2 Sxx v`, symmetrized through the Cholesky
/// factor of `Sxx` and solved with Jacobi rotations.
///
/// `x` and `y` are row-major (rows x cols) with shared `cols` datapoints;
/// rows are centered internally.
pub fn cca_oracle(
    x: &[f64],
    x_rows: usize,
    y: &[f64],
    y_rows: usize,
    cols: usize,
    ridge: f64,
) -> Vec<f64> {
    let center = |data: &[f64], rows: usize| -> Vec<f64> {
        let mut out = data.to_vec();
        for r in 0..rows {
            let mean = out[r * cols..(r + 1) * cols].iter().sum::<f64>() / cols as f64;
            out[r * cols..(r + 1) * cols]
                .iter_mut()
                .for_each(|v| *v -= mean);
        }
        out
    };
    let xc = center(x, x_rows);
    let yc = center(y, y_rows);
    let scale = 1.0 / (cols as f64 - 1.0);

    let cov = |a: &[f64], ar: usize, b: &[f64], br: usize| -> Vec<f64> {
        let bt = mat_transpose(b, br, cols);
        let mut c = mat_mul(a, ar, cols, &bt, br);
        c.iter_mut().for_each(|v| *v *= scale);
        c
    };
    let mut sxx = cov(&xc, x_rows, &xc, x_rows);
    let mut syy = cov(&yc, y_rows, &yc, y_rows);
    let sxy = cov(&xc, x_rows, &yc, y_rows);
    for i in 0..x_rows {
        sxx[i * x_rows + i] += ridge;
    }
    for i in 0..y_rows {
        syy[i * y_rows + i] += ridge;
    }

    // B = Sxy Syy^{-1} Syx
    let syy_inv = mat_inverse(&syy, y_rows);
    let tmp = mat_mul(&sxy, x_rows, y_rows, &syy_inv, y_rows);
    let syx = mat_transpose(&sxy, x_rows, y_rows);
    let b = mat_mul(&tmp, x_rows, y_rows, &syx, x_rows);

    // S = L^{-1} B L^{-T} shares the eigenvalues of Sxx^{-1} B
    let l = cholesky(&sxx, x_rows);
    let w = forward_solve(&l, x_rows, &b, x_rows);
    let wt = mat_transpose(&w, x_rows, x_rows);
    let s = forward_solve(&l, x_rows, &wt, x_rows);

    let mut rho: Vec<f64> = jacobi_eigenvalues(&s, x_rows)
        .into_iter()
        .map(|ev| ev.clamp(0.0, 1.0).sqrt())
        .collect();
    rho.sort_by(|a, b| b.partial_cmp(a).unwrap());
    rho.truncate(x_rows.min(y_rows));
    rho
}

/// Deterministic standard-normal stream for test data, independent of the
/// crate's RNG stack (xorshift + Box-Muller).
pub struct TestRng {
    state: u64,
    spare: Option<f64>,
}

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng {
            state: seed.max(1).wrapping_mul(0x9e3779b97f4a7c15),
            spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.state = x;
        x
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let (mut u1, u2) = (self.uniform(), self.uniform());
        if u1 < 1e-300 {
            u1 = 1e-300;
        }
        let r = (-2.0 * u1.ln()).sqrt();
        let th = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * th.sin());
        r * th.cos()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() as usize) % (hi - lo)
    }
}

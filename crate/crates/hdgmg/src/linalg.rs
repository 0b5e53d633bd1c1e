//! Compressed sparse rows, small dense factorizations, and preconditioned
//! conjugate gradients with Lanczos spectrum estimates.

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("triplet ({row}, {col}) outside a {nrows}x{ncols} matrix")]
    IndexOutOfRange { row: usize, col: usize, nrows: usize, ncols: usize },
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("matrix is singular at column {0}")]
    Singular(usize),
    #[error("preconditioner is not positive definite (r.z = {value:e} at iteration {iteration})")]
    IndefinitePreconditioner { iteration: usize, value: f64 },
    #[error("operator is not positive definite (p.Ap = {value:e} at iteration {iteration})")]
    IndefiniteOperator { iteration: usize, value: f64 },
    #[error("need at least two conjugate gradient iterations for a condition estimate, got {0}")]
    TooFewIterations(usize),
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Accumulates `(row, col, value)` entries; duplicates are summed.
#[derive(Clone, Debug)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    rows: Vec<u32>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> TripletBuilder {
        TripletBuilder {
            nrows,
            ncols,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> TripletBuilder {
        TripletBuilder {
            nrows,
            ncols,
            rows: Vec::with_capacity(cap),
            cols: Vec::with_capacity(cap),
            vals: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        self.rows.push(row as u32);
        self.cols.push(col as u32);
        self.vals.push(val);
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    /// Sums duplicates in row, column, insertion order, so the result is
    /// independent of hashing or thread scheduling.
    pub fn build(self) -> Result<CsrMatrix, LinalgError> {
        let (nrows, ncols) = (self.nrows, self.ncols);
        for k in 0..self.vals.len() {
            let (r, c) = (self.rows[k] as usize, self.cols[k] as usize);
            if r >= nrows || c >= ncols {
                return Err(LinalgError::IndexOutOfRange { row: r, col: c, nrows, ncols });
            }
        }
        let mut count = vec![0usize; nrows + 1];
        for &r in &self.rows {
            count[r as usize + 1] += 1;
        }
        for i in 0..nrows {
            count[i + 1] += count[i];
        }
        let mut next = count.clone();
        let mut order = vec![0u32; self.vals.len()];
        for (k, &r) in self.rows.iter().enumerate() {
            order[next[r as usize]] = k as u32;
            next[r as usize] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut scratch: Vec<(u32, f64)> = Vec::new();
        for i in 0..nrows {
            scratch.clear();
            scratch.extend(order[count[i]..count[i + 1]].iter().map(|&k| (self.cols[k as usize], self.vals[k as usize])));
            scratch.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < scratch.len() {
                let c = scratch[k].0;
                let mut v = 0.0;
                while k < scratch.len() && scratch[k].0 == c {
                    v += scratch[k].1;
                    k += 1;
                }
                col_idx.push(c as usize);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }
}

/// Sparse matrix in compressed sparse row form with sorted column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<CsrMatrix, LinalgError> {
        let mut b = TripletBuilder::with_capacity(nrows, ncols, triplets.len());
        for &(r, c, v) in triplets {
            b.push(r, c, v);
        }
        b.build()
    }

    pub fn identity(n: usize) -> CsrMatrix {
        CsrMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.nrows {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    /// `y += A^T x`.
    pub fn transpose_matvec_add(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.nrows {
            let xi = x[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k]] += self.values[k] * xi;
            }
        }
    }

    /// `r = b - A x`.
    pub fn residual(&self, b: &[f64], x: &[f64]) -> Vec<f64> {
        let mut r = self.mul_vec(x);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        r
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut count = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            count[c + 1] += 1;
        }
        for j in 0..self.ncols {
            count[j + 1] += count[j];
        }
        let mut next = count.clone();
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let c = self.col_idx[k];
                col_idx[next[c]] = i;
                values[next[c]] = self.values[k];
                next[c] += 1;
            }
        }
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr: count,
            col_idx,
            values,
        }
    }

    /// Largest `|A_ij - A_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for i in 0..self.nrows {
            let (c1, v1) = self.row(i);
            let (c2, v2) = t.row(i);
            let (mut a, mut b) = (0, 0);
            while a < c1.len() || b < c2.len() {
                let ca = c1.get(a).copied().unwrap_or(usize::MAX);
                let cb = c2.get(b).copied().unwrap_or(usize::MAX);
                let diff = if ca == cb {
                    a += 1;
                    b += 1;
                    v1[a - 1] - v2[b - 1]
                } else if ca < cb {
                    a += 1;
                    v1[a - 1]
                } else {
                    b += 1;
                    v2[b - 1]
                };
                worst = worst.max(diff.abs());
            }
        }
        worst / scale
    }

    /// Dense copy of the submatrix with the given rows and columns.
    pub fn dense_block(&self, rows: &[usize], cols: &[usize]) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(rows.len(), cols.len());
        let sorted = cols.windows(2).all(|w| w[0] < w[1]);
        for (a, &i) in rows.iter().enumerate() {
            let (rc, rv) = self.row(i);
            if sorted {
                let (mut p, mut q) = (0, 0);
                while p < rc.len() && q < cols.len() {
                    if rc[p] == cols[q] {
                        m[(a, q)] = rv[p];
                        p += 1;
                        q += 1;
                    } else if rc[p] < cols[q] {
                        p += 1;
                    } else {
                        q += 1;
                    }
                }
            } else {
                for (b, &j) in cols.iter().enumerate() {
                    m[(a, b)] = self.get(i, j);
                }
            }
        }
        m
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                m[(i, j)] += x;
            }
        }
        m
    }

    /// Sparse product `A B`.
    pub fn mul(&self, b: &CsrMatrix) -> CsrMatrix {
        let mut out = TripletBuilder::new(self.nrows, b.ncols);
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&k, &a) in c.iter().zip(v) {
                let (bc, bv) = b.row(k);
                for (&j, &x) in bc.iter().zip(bv) {
                    out.push(i, j, a * x);
                }
            }
        }
        out.build().expect("indices in range")
    }

    /// Copy with every entry scaled.
    pub fn scaled(&self, s: f64) -> CsrMatrix {
        let mut m = self.clone();
        for v in &mut m.values {
            *v *= s;
        }
        m
    }

    /// `self + other` for matrices of equal shape.
    pub fn add(&self, other: &CsrMatrix) -> CsrMatrix {
        let mut out = TripletBuilder::with_capacity(self.nrows, self.ncols, self.nnz() + other.nnz());
        for m in [self, other] {
            for i in 0..m.nrows {
                let (c, v) = m.row(i);
                for (&j, &x) in c.iter().zip(v) {
                    out.push(i, j, x);
                }
            }
        }
        out.build().expect("shapes agree")
    }

    /// Rebuilds the matrix with the listed rows replaced.
    pub fn with_rows_replaced(&self, replacements: &[(usize, Vec<(usize, f64)>)]) -> CsrMatrix {
        let mut new_rows: Vec<Option<&Vec<(usize, f64)>>> = vec![None; self.nrows];
        for (i, r) in replacements {
            new_rows[*i] = Some(r);
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            match new_rows[i] {
                Some(r) => {
                    let mut r = r.clone();
                    r.sort_by_key(|&(c, _)| c);
                    for (c, v) in r {
                        if col_idx.len() > row_ptr[i] && *col_idx.last().unwrap() == c {
                            *values.last_mut().unwrap() += v;
                        } else {
                            col_idx.push(c);
                            values.push(v);
                        }
                    }
                }
                None => {
                    let (c, v) = self.row(i);
                    col_idx.extend_from_slice(c);
                    values.extend_from_slice(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.ncols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.ncols + j]
    }
}

impl DenseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> DenseMatrix {
        DenseMatrix {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| dot(&self.data[i * self.ncols..(i + 1) * self.ncols], x))
            .collect()
    }

    pub fn cholesky(&self) -> Result<Cholesky, LinalgError> {
        Cholesky::factor(self.nrows, |i, j| self[(i, j)])
    }

    pub fn lu(&self) -> Result<Lu, LinalgError> {
        Lu::factor(self.clone())
    }
}

/// Cholesky factor `A = L L^T` with `L` stored packed by rows.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors the symmetric matrix whose lower triangle is given by `entry`.
    pub fn factor(n: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Cholesky, LinalgError> {
        let mut l = vec![0.0; n * (n + 1) / 2];
        for i in 0..n {
            let ri = i * (i + 1) / 2;
            for j in 0..=i {
                let rj = j * (j + 1) / 2;
                let mut s = entry(i, j);
                s -= dot(&l[ri..ri + j], &l[rj..rj + j]);
                if i == j {
                    if !(s > 0.0) {
                        return Err(LinalgError::NotPositiveDefinite { row: i, pivot: s });
                    }
                    l[ri + i] = s.sqrt();
                } else {
                    l[ri + j] = s / l[rj + j];
                }
            }
        }
        Ok(Cholesky { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let ri = i * (i + 1) / 2;
            let s = b[i] - dot(&self.l[ri..ri + i], &b[..i]);
            b[i] = s / self.l[ri + i];
        }
        for i in (0..n).rev() {
            let ri = i * (i + 1) / 2;
            let xi = b[i] / self.l[ri + i];
            b[i] = xi;
            for k in 0..i {
                b[k] -= self.l[ri + k] * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// LU factorization with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu {
    a: DenseMatrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(mut a: DenseMatrix) -> Result<Lu, LinalgError> {
        let n = a.nrows;
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs())).unwrap();
            if a[(p, k)].abs() <= 1e-14 * scale {
                return Err(LinalgError::Singular(k));
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let piv = a[(k, k)];
            for i in k + 1..n {
                let f = a[(i, k)] / piv;
                a[(i, k)] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        let akj = a[(k, j)];
                        a[(i, j)] -= f * akj;
                    }
                }
            }
        }
        Ok(Lu { a, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.a.nrows;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.a[(i, k)] * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                x[i] -= self.a[(i, k)] * x[k];
            }
            x[i] /= self.a[(i, i)];
        }
        x
    }
}

/// A linear map `y = A x` on vectors of length `dim()`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y)
    }
}

/// Approximate inverse `z = B r`.
pub trait Preconditioner {
    fn precondition(&self, r: &[f64], z: &mut [f64]);
}

/// No preconditioning.
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PcgOptions {
    pub rtol: f64,
    pub max_iter: usize,
}

impl Default for PcgOptions {
    fn default() -> Self {
        PcgOptions {
            rtol: 1e-8,
            max_iter: 500,
        }
    }
}

/// Step lengths and direction updates of a conjugate gradient run; they
/// define the Lanczos tridiagonal matrix of the preconditioned operator.
#[derive(Clone, Debug, Default)]
pub struct LanczosCoefficients {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl LanczosCoefficients {
    /// Diagonal and off-diagonal of the tridiagonal matrix.
    pub fn tridiagonal(&self) -> (Vec<f64>, Vec<f64>) {
        let k = self.alphas.len();
        let mut diag = Vec::with_capacity(k);
        let mut off = Vec::with_capacity(k.saturating_sub(1));
        for j in 0..k {
            let mut d = 1.0 / self.alphas[j];
            if j > 0 {
                d += self.betas[j - 1] / self.alphas[j - 1];
            }
            diag.push(d);
            if j + 1 < k {
                off.push(self.betas[j].sqrt() / self.alphas[j]);
            }
        }
        (diag, off)
    }
}

#[derive(Clone, Debug)]
pub struct PcgReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub relative_residual: f64,
    pub lanczos: LanczosCoefficients,
}

/// Preconditioned conjugate gradients from a zero initial guess. Stops when
/// `|b - A x| <= rtol |b|`.
pub fn pcg(a: &dyn LinearOperator, b: &[f64], m: &dyn Preconditioner, opts: &PcgOptions) -> Result<PcgReport, LinalgError> {
    let n = a.dim();
    let mut x = vec![0.0; n];
    let bnorm = norm2(b);
    let mut lanczos = LanczosCoefficients::default();
    if bnorm == 0.0 {
        return Ok(PcgReport {
            solution: x,
            iterations: 0,
            converged: true,
            relative_residual: 0.0,
            lanczos,
        });
    }
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    m.precondition(&r, &mut z);
    let mut rz = dot(&r, &z);
    if rz < 0.0 {
        return Err(LinalgError::IndefinitePreconditioner { iteration: 0, value: rz });
    }
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rel = 1.0;
    for it in 1..=opts.max_iter {
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(LinalgError::IndefiniteOperator { iteration: it, value: pap });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        lanczos.alphas.push(alpha);
        rel = norm2(&r) / bnorm;
        if rel <= opts.rtol {
            return Ok(PcgReport {
                solution: x,
                iterations: it,
                converged: true,
                relative_residual: rel,
                lanczos,
            });
        }
        m.precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        if rz_new < 0.0 {
            return Err(LinalgError::IndefinitePreconditioner { iteration: it, value: rz_new });
        }
        let beta = rz_new / rz;
        lanczos.betas.push(beta);
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(PcgReport {
        solution: x,
        iterations: opts.max_iter,
        converged: false,
        relative_residual: rel,
        lanczos,
    })
}

/// Number of eigenvalues of the symmetric tridiagonal matrix below `x`.
fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..diag.len() {
        let b2 = if i > 0 { off[i - 1] * off[i - 1] } else { 0.0 };
        q = diag[i] - x - if i > 0 { b2 / q } else { 0.0 };
        if q == 0.0 {
            q = -f64::EPSILON * (diag[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Smallest and largest eigenvalue of a symmetric tridiagonal matrix, by bisection.
pub fn tridiagonal_extreme_eigenvalues(diag: &[f64], off: &[f64]) -> (f64, f64) {
    let n = diag.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < n { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    let kth = |k: usize| {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if sturm_count(diag, off, mid) > k {
                b = mid;
            } else {
                a = mid;
            }
        }
        0.5 * (a + b)
    };
    (kth(0), kth(n - 1))
}

/// Ratio of the extreme Ritz values from a conjugate gradient run.
pub fn estimate_condition_number(l: &LanczosCoefficients) -> Result<f64, LinalgError> {
    if l.alphas.len() < 2 {
        return Err(LinalgError::TooFewIterations(l.alphas.len()));
    }
    let (diag, off) = l.tridiagonal();
    let (lo, hi) = tridiagonal_extreme_eigenvalues(&diag, &off);
    Ok(hi / lo)
}

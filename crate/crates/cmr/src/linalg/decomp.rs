use crate::linalg::matrix::{vec_dot, vec_norm, Matrix};
use crate::{CmrError, Result, Scalar};

/// Relative off-diagonal threshold for Jacobi convergence.
const JACOBI_TOL: f64 = 1e-13;
const JACOBI_MAX_SWEEPS: usize = 60;
const TQL2_MAX_ITERS: usize = 80;

/// Singular value decomposition `W = U diag(sigma) V^T`.
///
/// Stored with singular vectors as rows (`left_t` is r x m, `right_t` is
/// r x n) so that extremal vectors are contiguous slices and the gradient
/// formulas reduce to row-major products.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition<T> {
    singular_values: Vec<T>,
    left_t: Matrix<T>,
    right_t: Matrix<T>,
}

impl<T: Scalar> SpectralDecomposition<T> {
    /// Singular values in descending order, length `r = min(m, n)`.
    pub fn singular_values(&self) -> &[T] {
        &self.singular_values
    }

    pub fn rank_bound(&self) -> usize {
        self.singular_values.len()
    }

    /// Original matrix row count `m`.
    pub fn rows(&self) -> usize {
        self.left_t.cols()
    }

    /// Original matrix column count `n`.
    pub fn cols(&self) -> usize {
        self.right_t.cols()
    }

    pub fn sigma_max(&self) -> T {
        self.singular_values[0]
    }

    pub fn sigma_min(&self) -> T {
        *self.singular_values.last().unwrap()
    }

    /// i-th left singular vector (length m).
    pub fn left_vector(&self, i: usize) -> &[T] {
        self.left_t.row(i)
    }

    /// i-th right singular vector (length n).
    pub fn right_vector(&self, i: usize) -> &[T] {
        self.right_t.row(i)
    }

    /// Left singular vectors as the m x r column matrix U.
    pub fn left(&self) -> Matrix<T> {
        self.left_t.transpose()
    }

    /// Right singular vectors as the n x r column matrix V.
    pub fn right(&self) -> Matrix<T> {
        self.right_t.transpose()
    }

    /// Row view of V^T (r x n), rows are right singular vectors.
    pub fn right_t(&self) -> &Matrix<T> {
        &self.right_t
    }

    /// Row view of U^T (r x m), rows are left singular vectors.
    pub fn left_t(&self) -> &Matrix<T> {
        &self.left_t
    }

    /// The square r x r side of the factor pair (V^T when m >= n, U^T when
    /// m < n). Useful as a warm start when the same matrix is re-decomposed
    /// after a small update.
    pub fn square_basis_t(&self) -> &Matrix<T> {
        if self.rows() < self.cols() {
            &self.left_t
        } else {
            &self.right_t
        }
    }

    /// `U diag(sigma) V^T`, for reconstruction tests.
    pub fn reconstruct(&self) -> Matrix<T> {
        let scaled = scale_rows(&self.left_t, &self.singular_values);
        scaled.matmul_transpose_self(&self.right_t)
    }

    /// `||U diag(sigma) V^T - W||_F`.
    pub fn reconstruction_error(&self, w: &Matrix<T>) -> T {
        self.reconstruct().sub(w).frobenius_norm()
    }

    /// `max(||U^T U - I||_F, ||V^T V - I||_F)`.
    pub fn orthonormality_error(&self) -> T {
        let eu = gram_identity_error(&self.left_t);
        let ev = gram_identity_error(&self.right_t);
        eu.max(ev)
    }

    /// Eigenvalues of the n x n Gram matrix `W^T W` in descending order:
    /// squared singular values padded with zeros when m < n.
    pub fn gram_eigenvalues(&self) -> Vec<T> {
        let n = self.cols();
        let mut out: Vec<T> = self.singular_values.iter().map(|&s| s * s).collect();
        out.resize(n, T::zero());
        out
    }
}

/// Scales row `i` of `m` by `s[i]`.
pub fn scale_rows<T: Scalar>(m: &Matrix<T>, s: &[T]) -> Matrix<T> {
    assert_eq!(m.rows(), s.len());
    let mut out = m.clone();
    for (i, &si) in s.iter().enumerate() {
        for v in out.row_mut(i) {
            *v *= si;
        }
    }
    out
}

/// `||M M^T - I||_F` for a matrix whose rows should be orthonormal.
fn gram_identity_error<T: Scalar>(mt: &Matrix<T>) -> T {
    let r = mt.rows();
    let mut acc = T::zero();
    for i in 0..r {
        for j in i..r {
            let d = vec_dot(mt.row(i), mt.row(j));
            let target = if i == j { T::one() } else { T::zero() };
            let e = d - target;
            let w = if i == j { T::one() } else { T::from_f64_lossy(2.0) };
            acc += w * e * e;
        }
    }
    acc.sqrt()
}

/// Symmetric Gram matrix `W^T W`, symmetrized so `G_ij == G_ji` exactly.
pub fn gram<T: Scalar>(w: &Matrix<T>) -> Matrix<T> {
    let mut g = w.matmul_transpose_self(w);
    g.symmetrize_in_place();
    g
}

/// SVD with a fixed sweep order and sign convention, deterministic for a
/// fixed input: the first nonzero entry of each right singular vector is
/// positive and singular values are sorted descending (ties keep index
/// order).
pub fn svd<T: Scalar>(w: &Matrix<T>) -> Result<SpectralDecomposition<T>> {
    svd_with_hint(w, None)
}

/// Same as [`svd`], warm-started from the square basis of a previous
/// decomposition of a nearby matrix. The hint only changes the iteration
/// count, never the contract: orthogonality is re-established by Jacobi
/// sweeps at the same threshold.
pub fn svd_with_hint<T: Scalar>(
    w: &Matrix<T>,
    hint: Option<&Matrix<T>>,
) -> Result<SpectralDecomposition<T>> {
    if !w.is_finite() {
        return Err(CmrError::InvalidMatrix("svd input has non-finite entries".into()));
    }
    let (m, n) = w.shape();
    if m >= n {
        let (sigma, ut, vt) = svd_tall(w, hint)?;
        Ok(SpectralDecomposition { singular_values: sigma, left_t: ut, right_t: vt })
    } else {
        let wt = w.transpose();
        let (sigma, ut, vt) = svd_tall(&wt, hint)?;
        // W = (W^T)^T = (U S V^T)^T = V S U^T: sides swap.
        Ok(SpectralDecomposition { singular_values: sigma, left_t: vt, right_t: ut })
    }
}

/// Core one-sided Jacobi on a tall matrix (m >= n). Returns
/// `(sigma desc, U^T (n x m), V^T (n x n))`.
///
/// The starting right basis comes from the eigenvectors of `W^T W` (or the
/// caller's hint); the Jacobi sweeps then enforce mutual orthogonality of
/// the working columns to full precision, which keeps U orthonormal even
/// when singular values span many orders of magnitude.
fn svd_tall<T: Scalar>(
    w: &Matrix<T>,
    hint: Option<&Matrix<T>>,
) -> Result<(Vec<T>, Matrix<T>, Matrix<T>)> {
    let (m, n) = w.shape();
    debug_assert!(m >= n);

    let mut vt = match hint {
        Some(h) if h.shape() == (n, n) => h.clone(),
        _ => {
            let g = gram(w);
            let (_, mut rows) = symmetric_eigen_rows(&g)?;
            reverse_rows(&mut rows);
            rows
        }
    };

    // Rows of `at` are the working columns of A = W * V.
    let wt = w.transpose();
    let mut at = vt.matmul(&wt);
    if jacobi_orthogonalize_rows(&mut at, &mut vt).is_err() {
        // A poor hint can stall; restart from the eigen preconditioner.
        let g = gram(w);
        let (_, mut rows) = symmetric_eigen_rows(&g)?;
        reverse_rows(&mut rows);
        vt = rows;
        at = vt.matmul(&wt);
        jacobi_orthogonalize_rows(&mut at, &mut vt)?;
    }

    // Singular values are the column norms of A (= row norms of at).
    let norms: Vec<T> = (0..n).map(|i| vec_norm(at.row(i))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap().then(a.cmp(&b)));

    let mut sigma = Vec::with_capacity(n);
    let mut ut = Matrix::zeros(n, m);
    let mut vt_sorted = Matrix::zeros(n, n);
    let mut pending_zero: Vec<usize> = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        sigma.push(s);
        vt_sorted.row_mut(dst).copy_from_slice(vt.row(src));
        if s > T::zero() {
            let inv = T::one() / s;
            for (u, &a) in ut.row_mut(dst).iter_mut().zip(at.row(src)) {
                *u = a * inv;
            }
        } else {
            pending_zero.push(dst);
        }
    }
    // Rank-deficient input: fill left vectors for zero singular values with a
    // deterministic orthonormal completion.
    for dst in pending_zero {
        let filler = complete_orthonormal_row(&ut, dst, m)?;
        ut.row_mut(dst).copy_from_slice(&filler);
    }

    // Sign convention: first nonzero entry of each right vector positive.
    for i in 0..n {
        let flip = vt_sorted
            .row(i)
            .iter()
            .find(|v| **v != T::zero())
            .map(|v| *v < T::zero())
            .unwrap_or(false);
        if flip {
            for v in vt_sorted.row_mut(i) {
                *v = -*v;
            }
            for u in ut.row_mut(i) {
                *u = -*u;
            }
        }
    }

    Ok((sigma, ut, vt_sorted))
}

fn reverse_rows<T: Scalar>(m: &mut Matrix<T>) {
    let rows = m.rows();
    let cols = m.cols();
    for i in 0..rows / 2 {
        let j = rows - 1 - i;
        for k in 0..cols {
            let a = m.get(i, k);
            let b = m.get(j, k);
            m.set(i, k, b);
            m.set(j, k, a);
        }
    }
}

/// Cyclic one-sided Jacobi sweeps rotating row pairs of `at` (and `vt` in
/// lockstep) until a full sweep finds every pair already satisfying
/// `|<a_p, a_q>| <= 1e-13 * ||a_p|| ||a_q||`.
fn jacobi_orthogonalize_rows<T: Scalar>(at: &mut Matrix<T>, vt: &mut Matrix<T>) -> Result<()> {
    let n = at.rows();
    if n < 2 {
        return Ok(());
    }
    let tol2 = T::from_f64_lossy(JACOBI_TOL * JACOBI_TOL);
    let one = T::one();
    let two = T::from_f64_lossy(2.0);

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        // Squared column norms, refreshed per sweep and maintained exactly
        // through the rotation identities within it.
        let mut norms2: Vec<T> = (0..n).map(|i| vec_dot(at.row(i), at.row(i))).collect();
        let mut rotations = 0usize;
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let bpp = norms2[p];
                let bqq = norms2[q];
                if bpp <= T::zero() || bqq <= T::zero() {
                    continue;
                }
                let bpq = vec_dot(at.row(p), at.row(q));
                if bpq * bpq <= tol2 * bpp * bqq {
                    continue;
                }
                let theta = (bqq - bpp) / (two * bpq);
                let t = if theta >= T::zero() {
                    one / (theta + (one + theta * theta).sqrt())
                } else {
                    -one / (-theta + (one + theta * theta).sqrt())
                };
                let c = one / (one + t * t).sqrt();
                let s = c * t;
                rotate_row_pair(at, p, q, c, s);
                rotate_row_pair(vt, p, q, c, s);
                norms2[p] = bpp - t * bpq;
                norms2[q] = bqq + t * bpq;
                rotations += 1;
            }
        }
        if rotations == 0 {
            return Ok(());
        }
    }
    Err(CmrError::InvalidState(format!(
        "jacobi svd did not converge within {JACOBI_MAX_SWEEPS} sweeps"
    )))
}

#[inline]
fn rotate_row_pair<T: Scalar>(m: &mut Matrix<T>, p: usize, q: usize, c: T, s: T) {
    debug_assert!(p < q);
    let cols = m.cols();
    let (head, tail) = m.data_mut().split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (ap, aq) in rp.iter_mut().zip(rq.iter_mut()) {
        let x = *ap;
        let y = *aq;
        *ap = c * x - s * y;
        *aq = s * x + c * y;
    }
}

/// Deterministic orthonormal completion: a unit vector orthogonal to every
/// row of `ut` other than `row`, built from the first workable standard
/// basis vector.
fn complete_orthonormal_row<T: Scalar>(ut: &Matrix<T>, row: usize, dim: usize) -> Result<Vec<T>> {
    let half = T::from_f64_lossy(0.5);
    for cand in 0..dim {
        let mut v = vec![T::zero(); dim];
        v[cand] = T::one();
        for i in 0..ut.rows() {
            if i == row {
                continue;
            }
            let proj = vec_dot(&v, ut.row(i));
            if proj != T::zero() {
                for (vv, &u) in v.iter_mut().zip(ut.row(i)) {
                    *vv -= proj * u;
                }
            }
        }
        let norm = vec_norm(&v);
        if norm > half {
            let inv = T::one() / norm;
            for vv in &mut v {
                *vv *= inv;
            }
            return Ok(v);
        }
    }
    Err(CmrError::InvalidState("orthonormal completion failed".into()))
}

/// Eigendecomposition of a symmetric matrix: Householder tridiagonalization
/// followed by implicit-shift QL. Returns eigenvalues in ascending order and
/// orthonormal eigenvectors as the columns of the returned matrix.
pub fn symmetric_eigen<T: Scalar>(a: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>)> {
    let (vals, rows) = symmetric_eigen_rows(a)?;
    Ok((vals, rows.transpose()))
}

/// Row-convention twin of [`symmetric_eigen`]: row i of the returned matrix
/// is the eigenvector for eigenvalue i. The whole computation runs in this
/// layout so the O(n^3) inner loops stay on contiguous rows.
pub(crate) fn symmetric_eigen_rows<T: Scalar>(a: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>)> {
    if a.rows() != a.cols() {
        return Err(CmrError::InvalidMatrix(format!(
            "symmetric_eigen requires a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(CmrError::InvalidMatrix("symmetric_eigen input not finite".into()));
    }
    let n = a.rows();
    let mut vt = a.clone();
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    if n == 1 {
        let val = vt.get(0, 0);
        vt.set(0, 0, T::one());
        return Ok((vec![val], vt));
    }
    tred2_rows(&mut vt, &mut d, &mut e);
    tql2_rows(&mut vt, &mut d, &mut e)?;
    Ok((d, vt))
}

/// EISPACK tred2 with the accumulating transform stored transposed:
/// `vt.row(i)` plays the role of the classic V's column i, which makes every
/// inner loop a contiguous slice operation.
fn tred2_rows<T: Scalar>(vt: &mut Matrix<T>, d: &mut [T], e: &mut [T]) {
    let n = vt.rows();
    for j in 0..n {
        d[j] = vt.get(j, n - 1);
    }

    for i in (1..n).rev() {
        let mut scale = T::zero();
        let mut h = T::zero();
        for item in d.iter().take(i) {
            scale += item.abs();
        }
        if scale == T::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = vt.get(j, i - 1);
                vt.set(j, i, T::zero());
                vt.set(i, j, T::zero());
            }
        } else {
            for item in d.iter_mut().take(i) {
                *item /= scale;
                h += *item * *item;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > T::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for item in e.iter_mut().take(i) {
                *item = T::zero();
            }

            for j in 0..i {
                f = d[j];
                vt.set(i, j, f);
                g = e[j] + vt.get(j, j) * f;
                if j + 1 < i {
                    let row_j = &vt.row(j)[j + 1..i];
                    g += vec_dot(row_j, &d[j + 1..i]);
                    for (ek, &vjk) in e[j + 1..i].iter_mut().zip(row_j.iter()) {
                        *ek += vjk * f;
                    }
                }
                e[j] = g;
            }
            f = T::zero();
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                {
                    let row_j = &mut vt.row_mut(j)[j..i];
                    for (k, v) in row_j.iter_mut().enumerate() {
                        let k = k + j;
                        *v -= f * e[k] + g * d[k];
                    }
                }
                d[j] = vt.get(j, i - 1);
                vt.set(j, i, T::zero());
            }
        }
        d[i] = h;
    }

    // Accumulate transformations.
    for i in 0..n - 1 {
        let vii = vt.get(i, i);
        vt.set(i, n - 1, vii);
        vt.set(i, i, T::one());
        let h = d[i + 1];
        if h != T::zero() {
            for k in 0..=i {
                d[k] = vt.get(i + 1, k) / h;
            }
            for j in 0..=i {
                let g = vec_dot(&vt.row(i + 1)[..=i], &vt.row(j)[..=i]);
                let row_j = &mut vt.row_mut(j)[..=i];
                for (k, v) in row_j.iter_mut().enumerate() {
                    *v -= g * d[k];
                }
            }
        }
        for v in &mut vt.row_mut(i + 1)[..=i] {
            *v = T::zero();
        }
    }
    for j in 0..n {
        d[j] = vt.get(j, n - 1);
        vt.set(j, n - 1, T::zero());
    }
    vt.set(n - 1, n - 1, T::one());
    e[0] = T::zero();
}

/// EISPACK tql2 on the transposed accumulator; rotations touch contiguous
/// row pairs. Eigenvalues ascend on exit.
fn tql2_rows<T: Scalar>(vt: &mut Matrix<T>, d: &mut [T], e: &mut [T]) -> Result<()> {
    let n = vt.rows();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();

    let mut f = T::zero();
    let mut tst1 = T::zero();
    let eps = T::epsilon();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > TQL2_MAX_ITERS {
                    return Err(CmrError::InvalidState(
                        "tql2 exceeded the iteration budget".into(),
                    ));
                }
                let g = d[l];
                let two = T::from_f64_lossy(2.0);
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for item in d.iter_mut().take(n).skip(l + 2) {
                    *item -= h;
                }
                f += h;

                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g2 = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g2;
                    d[i + 1] = h + s * (c * g2 + s * d[i]);

                    // Rotate eigenvector rows i and i+1.
                    let cols = vt.cols();
                    let (head, tail) = vt.data_mut().split_at_mut((i + 1) * cols);
                    let ri = &mut head[i * cols..(i + 1) * cols];
                    let ri1 = &mut tail[..cols];
                    for (a, b) in ri.iter_mut().zip(ri1.iter_mut()) {
                        let hv = *b;
                        *b = s * *a + c * hv;
                        *a = c * *a - s * hv;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;

                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }

    // Ascending order, selection sort with row swaps.
    for i in 0..n - 1 {
        let mut k = i;
        let mut p = d[i];
        for j in (i + 1)..n {
            if d[j] < p {
                k = j;
                p = d[j];
            }
        }
        if k != i {
            d[k] = d[i];
            d[i] = p;
            let cols = vt.cols();
            let (head, tail) = vt.data_mut().split_at_mut(k * cols);
            head[i * cols..(i + 1) * cols].swap_with_slice(&mut tail[..cols]);
        }
    }
    Ok(())
}

/// `V diag(f(lambda_i)) V^T` for a symmetric operator given by its
/// eigenpairs. `eigvecs` carries the eigenvectors as columns (n x r).
pub fn apply_symmetric_function<T: Scalar>(
    eigvals: &[T],
    eigvecs: &Matrix<T>,
    f: impl Fn(T) -> T,
) -> Result<Matrix<T>> {
    if eigvecs.cols() != eigvals.len() {
        return Err(CmrError::InvalidMatrix(format!(
            "{} eigenvalues but {} eigenvector columns",
            eigvals.len(),
            eigvecs.cols()
        )));
    }
    let n = eigvecs.rows();
    let r = eigvals.len();
    let fvals: Vec<T> = eigvals.iter().map(|&l| f(l)).collect();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = T::zero();
            for k in 0..r {
                acc += eigvecs.get(i, k) * fvals[k] * eigvecs.get(j, k);
            }
            out.set(i, j, acc);
            out.set(j, i, acc);
        }
    }
    Ok(out)
}

/// Orthonormalizes the rows of `g` (r <= c) by modified Gram-Schmidt with a
/// re-orthogonalization pass. Deterministic; degenerate rows fall back to a
/// standard-basis completion.
pub fn orthonormal_rows<T: Scalar>(g: &Matrix<T>) -> Result<Matrix<T>> {
    let (r, c) = g.shape();
    if r > c {
        return Err(CmrError::InvalidMatrix(format!(
            "orthonormal_rows needs rows <= cols, got {r}x{c}"
        )));
    }
    let mut q = g.clone();
    let tiny = T::from_f64_lossy(1e-300);
    for i in 0..r {
        for _pass in 0..2 {
            for j in 0..i {
                let (head, tail) = q.data_mut().split_at_mut(i * c);
                let prev = &head[j * c..(j + 1) * c];
                let cur = &mut tail[..c];
                let proj = vec_dot(cur, prev);
                for (x, &p) in cur.iter_mut().zip(prev.iter()) {
                    *x -= proj * p;
                }
            }
            let norm = vec_norm(q.row(i));
            if norm > tiny {
                let inv = T::one() / norm;
                for x in q.row_mut(i) {
                    *x *= inv;
                }
            } else {
                let filler = complete_orthonormal_row(&q, i, c)?;
                q.row_mut(i).copy_from_slice(&filler);
            }
        }
    }
    Ok(q)
}

/// Dominant singular triple `(sigma_max, u1, v1)` by power iteration on the
/// Gram operator. Deterministic fixed start; converges for any matrix with
/// a nonzero top singular value (ties settle inside the top subspace, which
/// is enough for a subgradient).
pub fn top_singular_triple<T: Scalar>(w: &Matrix<T>) -> (T, Vec<T>, Vec<T>) {
    let (m, n) = w.shape();
    let mut v = vec![T::one() / T::from_f64_lossy(n as f64).sqrt(); n];
    let mut sigma_prev = T::zero();
    let tol = T::from_f64_lossy(1e-14);
    let max_iters = 500;
    let mut u = vec![T::zero(); m];
    for _ in 0..max_iters {
        // u = W v
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = vec_dot(w.row(i), &v);
        }
        let un = vec_norm(&u);
        if un == T::zero() {
            return (T::zero(), vec![T::zero(); m], v);
        }
        for ui in &mut u {
            *ui /= un;
        }
        // v = W^T u
        for x in &mut v {
            *x = T::zero();
        }
        for (i, &ui) in u.iter().enumerate() {
            if ui != T::zero() {
                for (x, &wij) in v.iter_mut().zip(w.row(i)) {
                    *x += ui * wij;
                }
            }
        }
        let sigma = vec_norm(&v);
        if sigma == T::zero() {
            return (T::zero(), u, vec![T::zero(); n]);
        }
        for x in &mut v {
            *x /= sigma;
        }
        if (sigma - sigma_prev).abs() <= tol * sigma.max(T::one()) {
            sigma_prev = sigma;
            break;
        }
        sigma_prev = sigma;
    }
    (sigma_prev, u, v)
}

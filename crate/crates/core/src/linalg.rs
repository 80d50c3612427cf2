//! Dense and matrix-free linear algebra in `X^α` coordinates: a real basis in
//! which the Euclidean inner product equals the grid's `X^α` Hilbert product.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{CircleGrid, StateVector};

/// Isometry between `(StateVector, alpha_inner)` and `(ℝ^N, ·)`.
#[derive(Debug, Clone)]
pub struct AlphaCoords {
    grid: CircleGrid,
    alpha: f64,
    scale: Vec<f64>,
}

impl AlphaCoords {
    pub fn new(grid: &CircleGrid, alpha: f64) -> Self {
        let n = grid.n_points();
        let w = |i: usize| 1.0 + grid.fractional_weight(i, alpha);
        let mut scale = vec![0.0; n / 2 + 1];
        scale[0] = (2.0 * PI * w(0)).sqrt();
        for (k, s) in scale.iter_mut().enumerate().take(n / 2).skip(1) {
            *s = (4.0 * PI * w(k)).sqrt();
        }
        scale[n / 2] = (2.0 * PI * w(n / 2)).sqrt();
        Self {
            grid: grid.clone(),
            alpha,
            scale,
        }
    }

    pub fn dim(&self) -> usize {
        self.grid.n_points()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn grid(&self) -> &CircleGrid {
        &self.grid
    }

    pub fn encode(&self, s: &StateVector) -> DVector<f64> {
        let n = self.dim();
        let c = s.coeffs();
        let mut out = DVector::zeros(n);
        out[0] = self.scale[0] * c[0].re;
        for k in 1..n / 2 {
            out[2 * k - 1] = self.scale[k] * c[k].re;
            out[2 * k] = self.scale[k] * c[k].im;
        }
        out[n - 1] = self.scale[n / 2] * c[n / 2].re;
        out
    }

    pub fn decode(&self, v: &DVector<f64>) -> StateVector {
        let n = self.dim();
        let mut c = vec![Complex64::new(0.0, 0.0); n];
        c[0] = Complex64::new(v[0] / self.scale[0], 0.0);
        for k in 1..n / 2 {
            let z = Complex64::new(v[2 * k - 1], v[2 * k]) / self.scale[k];
            c[k] = z;
            c[n - k] = z.conj();
        }
        c[n / 2] = Complex64::new(v[n - 1] / self.scale[n / 2], 0.0);
        StateVector::from_coeffs(&self.grid, &c)
    }
}

pub fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let nrm = v.norm();
    v / nrm
}

/// Orthogonalizes `w` against `basis` (two passes). Returns `None` if less
/// than `drop_tol` of its norm survives.
pub fn orthogonalize(basis: &[DVector<f64>], w: &DVector<f64>, drop_tol: f64) -> Option<DVector<f64>> {
    let start = w.norm();
    if start == 0.0 || !start.is_finite() {
        return None;
    }
    let mut w = w.clone();
    for _ in 0..2 {
        for b in basis {
            let p = b.dot(&w);
            w.axpy(-p, b, 1.0);
        }
    }
    let nrm = w.norm();
    (nrm > drop_tol * start).then(|| w / nrm)
}

fn push_orthonormal(basis: &mut Vec<DVector<f64>>, w: &DVector<f64>, rng: &mut ChaCha8Rng) {
    let n = w.len();
    if let Some(q) = orthogonalize(basis, w, 1e-10) {
        basis.push(q);
        return;
    }
    // breakdown: the subspace is invariant, continue with a fresh direction
    loop {
        if let Some(q) = orthogonalize(basis, &random_unit(n, rng), 1e-6) {
            basis.push(q);
            return;
        }
    }
}

/// Orthonormal Krylov-type basis `V` (n×m) of the operator together with
/// `A V`, built in blocks of `block` vectors with full reorthogonalization.
pub fn block_krylov<F>(
    n: usize,
    m: usize,
    block: usize,
    rng: &mut ChaCha8Rng,
    mut apply: F,
) -> Result<(DMatrix<f64>, DMatrix<f64>)>
where
    F: FnMut(&[DVector<f64>]) -> Result<Vec<DVector<f64>>>,
{
    let m = m.min(n);
    let block = block.clamp(1, m);
    let mut v: Vec<DVector<f64>> = Vec::with_capacity(m);
    for _ in 0..block {
        let r = random_unit(n, rng);
        push_orthonormal(&mut v, &r, rng);
    }
    let mut av: Vec<DVector<f64>> = Vec::with_capacity(m);
    while av.len() < v.len() {
        let hi = (av.len() + block).min(v.len());
        let images = apply(&v[av.len()..hi])?;
        for w in images {
            if v.len() < m {
                push_orthonormal(&mut v, &w, rng);
            }
            av.push(w);
        }
    }
    Ok((DMatrix::from_columns(&v), DMatrix::from_columns(&av)))
}

/// An invariant subspace of the Rayleigh quotient grouping near-equal or
/// conjugate Ritz values.
#[derive(Debug, Clone)]
pub struct RitzCluster {
    pub values: Vec<Complex64>,
    /// Orthonormal coefficients in the Krylov basis (m×s).
    pub coeffs: DMatrix<f64>,
    /// Restriction `Yᵀ H Y` (s×s).
    pub block: DMatrix<f64>,
    /// `‖A V Y - V Y B‖_F`.
    pub residual: f64,
}

/// Singular value decomposition `A V = U Σ` with `V` square orthogonal and
/// singular values in non-increasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    /// Left vectors (m×n); columns for zero singular values are zero.
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    /// Right vectors (n×n), one per column.
    pub v: DMatrix<f64>,
}

/// One-sided Jacobi SVD. nalgebra's bidiagonal SVD can return inaccurate
/// factors on rank-deficient input, which the null-space and invariant
/// subspace computations here depend on.
pub fn svd(a: &DMatrix<f64>) -> Svd {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let tol = 1e-15;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let (x, y) = (w[(i, p)], w[(i, q)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (w[(i, p)], w[(i, q)]);
                    w[(i, p)] = c * x - s * y;
                    w[(i, q)] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u = DMatrix::zeros(m, n);
    let mut vs = DMatrix::zeros(n, n);
    let mut sv = DVector::zeros(n);
    for (k, &j) in order.iter().enumerate() {
        sv[k] = norms[j];
        if norms[j] > 0.0 {
            u.set_column(k, &(w.column(j) / norms[j]));
        }
        vs.set_column(k, &v.column(j));
    }
    Svd { u, singular_values: sv, v: vs }
}

fn null_space(h: &DMatrix<f64>, mu: Complex64, dim: usize) -> Vec<DVector<f64>> {
    let m = h.nrows();
    if mu.im == 0.0 {
        let shifted = h - DMatrix::identity(m, m) * mu.re;
        let d = svd(&shifted);
        return (m - dim..m).map(|i| d.v.column(i).into_owned()).collect();
    }
    // real form of H - μ: null vectors (x; y) of x + iy come in pairs
    let real_form = DMatrix::from_fn(2 * m, 2 * m, |i, j| {
        let (bi, bj) = (i / m, j / m);
        let (ii, jj) = (i % m, j % m);
        let re = h[(ii, jj)] - if ii == jj { mu.re } else { 0.0 };
        let im = if ii == jj { -mu.im } else { 0.0 };
        match (bi, bj) {
            (0, 0) | (1, 1) => re,
            (0, 1) => -im,
            _ => im,
        }
    });
    let d = svd(&real_form);
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(2 * dim);
    for i in 2 * m - 2 * dim..2 * m {
        let col = d.v.column(i);
        for half in [col.rows(0, m).into_owned(), col.rows(m, m).into_owned()] {
            if out.len() < 2 * dim {
                if let Some(q) = orthogonalize(&out, &half, 1e-8) {
                    out.push(q);
                }
            }
        }
    }
    out
}

/// Ritz clusters of `H = Vᵀ A V`, sorted by non-increasing modulus.
pub fn ritz_clusters(v: &DMatrix<f64>, av: &DMatrix<f64>, rel_cluster: f64) -> Vec<RitzCluster> {
    let h = v.transpose() * av;
    let m = h.nrows();
    let mut vals: Vec<Complex64> = h.clone().schur().complex_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
    let scale = vals.first().map_or(1.0, |z| z.norm()).max(f64::MIN_POSITIVE);
    let close = |a: Complex64, b: Complex64| (a - b).norm() <= rel_cluster * a.norm().max(b.norm()) + 1e-15 * scale;

    // union of near-equal and conjugate values
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for i in 0..m {
        for j in i + 1..m {
            if close(vals[i], vals[j]) || close(vals[i], vals[j].conj()) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[b.max(a)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_slot: Vec<Option<usize>> = vec![None; m];
    for i in 0..m {
        let r = find(&mut parent, i);
        match root_slot[r] {
            Some(g) => groups[g].push(i),
            None => {
                root_slot[r] = Some(groups.len());
                groups.push(vec![i]);
            }
        }
    }

    groups
        .into_iter()
        .map(|g| {
            let values: Vec<Complex64> = g.iter().map(|&i| vals[i]).collect();
            // sub-clusters of near-equal values in the closed upper half plane
            let mut reps: Vec<(Complex64, usize)> = Vec::new();
            for &z in values.iter().filter(|z| z.im >= 0.0) {
                match reps.iter_mut().find(|(c, _)| close(*c, z)) {
                    Some(r) => r.1 += 1,
                    None => reps.push((z, 1)),
                }
            }
            let mut cols: Vec<DVector<f64>> = Vec::new();
            for (mu, mult) in reps {
                let mu_c = if mu.im.abs() <= rel_cluster * mu.norm() { Complex64::new(mu.re, 0.0) } else { mu };
                for p in null_space(&h, mu_c, mult) {
                    if let Some(q) = orthogonalize(&cols, &p, 1e-8) {
                        cols.push(q);
                    }
                }
            }
            let y = DMatrix::from_columns(&cols);
            let b = y.transpose() * &h * &y;
            let r = av * &y - v * (&y * &b);
            RitzCluster {
                values,
                coeffs: y,
                block: b,
                residual: r.norm(),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub solution: DVector<f64>,
    pub relative_residual: f64,
    pub iterations: usize,
}

/// Restarted GMRES for `A x = b` from `x = 0`.
pub fn gmres<F>(
    b: &DVector<f64>,
    rel_tol: f64,
    restart: usize,
    max_iter: usize,
    mut apply: F,
) -> Result<GmresOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = b.len();
    let bnorm = b.norm();
    let mut x = DVector::zeros(n);
    if bnorm == 0.0 {
        return Ok(GmresOutcome {
            solution: x,
            relative_residual: 0.0,
            iterations: 0,
        });
    }
    let mut iterations = 0;
    let mut rel = 1.0;
    while iterations < max_iter {
        let r = b - apply(&x)?;
        let beta = r.norm();
        rel = beta / bnorm;
        if rel <= rel_tol {
            break;
        }
        let k_max = restart.min(max_iter - iterations).min(n);
        let mut q: Vec<DVector<f64>> = vec![r / beta];
        let mut h = DMatrix::<f64>::zeros(k_max + 1, k_max);
        let mut cs = vec![0.0; k_max];
        let mut sn = vec![0.0; k_max];
        let mut g = DVector::<f64>::zeros(k_max + 1);
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..k_max {
            let mut w = apply(&q[k])?;
            iterations += 1;
            for pass in 0..2 {
                for (j, qj) in q.iter().enumerate() {
                    let p = qj.dot(&w);
                    if pass == 0 {
                        h[(j, k)] = p;
                    } else {
                        h[(j, k)] += p;
                    }
                    w.axpy(-p, qj, 1.0);
                }
            }
            let wn = w.norm();
            h[(k + 1, k)] = wn;
            for j in 0..k {
                let t = cs[j] * h[(j, k)] + sn[j] * h[(j + 1, k)];
                h[(j + 1, k)] = -sn[j] * h[(j, k)] + cs[j] * h[(j + 1, k)];
                h[(j, k)] = t;
            }
            let den = h[(k, k)].hypot(h[(k + 1, k)]);
            if den == 0.0 {
                return Err(Error::SingularJacobian("GMRES breakdown with zero Hessenberg column".into()));
            }
            cs[k] = h[(k, k)] / den;
            sn[k] = h[(k + 1, k)] / den;
            h[(k, k)] = den;
            h[(k + 1, k)] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            rel = g[k + 1].abs() / bnorm;
            if rel <= rel_tol || wn <= 1e-14 * bnorm {
                break;
            }
            q.push(w / wn);
        }
        let mut y = DVector::<f64>::zeros(k_used);
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[(i, j)] * y[j];
            }
            y[i] = s / h[(i, i)];
        }
        for (i, yi) in y.iter().enumerate() {
            x.axpy(*yi, &q[i], 1.0);
        }
        if rel <= rel_tol {
            let r = b - apply(&x)?;
            rel = r.norm() / bnorm;
            if rel <= rel_tol * 10.0 {
                break;
            }
        }
    }
    Ok(GmresOutcome {
        solution: x,
        relative_residual: rel,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    #[test]
    fn jacobi_svd_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = DMatrix::from_fn(7, 3, |_, _| rng.gen_range(-1.0..1.0));
        let c = DMatrix::from_fn(3, 5, |_, _| rng.gen_range(-1.0..1.0));
        for a in [&b * &c, (&b * &c).transpose()] {
            let d = svd(&a);
            let rec = &d.u * DMatrix::from_diagonal(&d.singular_values) * d.v.transpose();
            assert!((rec - &a).norm() < 1e-13);
            assert!((d.v.transpose() * &d.v - DMatrix::identity(a.ncols(), a.ncols())).norm() < 1e-13);
            assert!(d.singular_values[3] < 1e-14 && d.singular_values[2] > 1e-3);
            for i in 3..a.ncols() {
                assert!((&a * d.v.column(i)).norm() < 1e-13);
            }
        }
    }

    use super::*;
    use rand::SeedableRng;

    #[test]
    fn coords_are_isometric() {
        let g = CircleGrid::new(16).unwrap();
        let c = AlphaCoords::new(&g, 0.875);
        let a = StateVector::from_fn(&g, |x| 1.0 + x.sin() - 0.3 * (4.0 * x).cos() + 0.2 * (8.0 * x).cos());
        let b = StateVector::from_fn(&g, |x| -0.5 + 2.0 * x.cos() + (4.0 * x).cos() + (3.0 * x).sin());
        let (ea, eb) = (c.encode(&a), c.encode(&b));
        assert!((ea.dot(&eb) - a.alpha_inner(&b, 0.875).unwrap()).abs() < 1e-10);
        let back = c.decode(&ea);
        assert!(back.sub(&a).unwrap().sup_norm() < 1e-13);
    }

    #[test]
    fn gmres_solves_small_system() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let out = gmres(&b, 1e-12, 10, 30, |x| Ok(&a * x)).unwrap();
        assert!((&a * &out.solution - &b).norm() < 1e-10);
    }

    #[test]
    fn ritz_recovers_double_and_complex_eigenvalues() {
        // diag(3, rotation block with modulus 2, 0.5, 0.5, 0.1)
        let mut a = DMatrix::<f64>::zeros(6, 6);
        a[(0, 0)] = 3.0;
        let (c, s) = (2.0 * 0.7f64.cos(), 2.0 * 0.7f64.sin());
        a[(1, 1)] = c;
        a[(1, 2)] = -s;
        a[(2, 1)] = s;
        a[(2, 2)] = c;
        a[(3, 3)] = 0.5;
        a[(4, 4)] = 0.5;
        a[(5, 5)] = 0.1;
        let q = nalgebra::QR::new(DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 + if i == j { 3.0 } else { 0.0 })).q();
        let a = &q * a * q.transpose();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (v, av) = block_krylov(6, 6, 2, &mut rng, |xs| Ok(xs.iter().map(|x| &a * x).collect())).unwrap();
        let cl = ritz_clusters(&v, &av, 1e-6);
        let sizes: Vec<usize> = cl.iter().map(|c| c.coeffs.ncols()).collect();
        assert_eq!(sizes, vec![1, 2, 2, 1]);
        assert!(cl.iter().all(|c| c.residual < 1e-10));
        assert!((cl[1].values[0].norm() - 2.0).abs() < 1e-12);
    }
}

//! Small dense linear-algebra kernels shared by the plant and stability
//! modules: matrix exponential, zero-order-hold discretization, a Lyapunov
//! equation solver and eigenvalue helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Matrix exponential by scaling-and-squaring with a degree-13 Padé
/// approximant (Higham 2005). Accurate to ~1e-13 relative for the matrix
/// sizes used here (up to 12x12).
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), a.ncols(), "expm requires a square matrix");
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }

    // 1-norm (max absolute column sum) drives the scaling decision.
    let mut norm = 0.0f64;
    for j in 0..n {
        let s: f64 = a.column(j).iter().map(|v| v.abs()).sum();
        norm = norm.max(s);
    }

    const THETA_13: f64 = 5.371920351148152;
    let squarings = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as u32
    } else {
        0
    };
    let a_scaled = a * (0.5f64.powi(squarings as i32));

    // Padé 13 coefficients.
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];

    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &a_scaled * &a_scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let u_inner = &a6 * (&a6 * B[13] + &a4 * B[11] + &a2 * B[9])
        + &a6 * B[7]
        + &a4 * B[5]
        + &a2 * B[3]
        + &ident * B[1];
    let u = &a_scaled * u_inner;
    let v = &a6 * (&a6 * B[12] + &a4 * B[10] + &a2 * B[8])
        + &a6 * B[6]
        + &a4 * B[4]
        + &a2 * B[2]
        + &ident * B[0];

    let denom = &v - &u;
    let numer = &v + &u;
    let mut result = denom
        .lu()
        .solve(&numer)
        .expect("Padé denominator is singular; matrix exponential failed");

    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Exact zero-order-hold pair for `x' = A x + u` over a step `dt`:
/// returns `(e^{A dt}, Phi)` with `Phi = ∫_0^dt e^{A s} ds`.
///
/// Computed jointly from the exponential of the augmented block matrix
/// `[[A, I], [0, 0]]`, which is exact for any A including singular ones.
pub fn zoh_pair(a: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut aug = DMatrix::<f64>::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    aug.view_mut((0, n), (n, n))
        .copy_from(&(DMatrix::identity(n, n) * dt));
    let e = expm(&aug);
    let ead = e.view((0, 0), (n, n)).into_owned();
    let phi = e.view((0, n), (n, n)).into_owned();
    (ead, phi)
}

/// Solve the continuous Lyapunov equation `A^T P + P A = -Q` via the
/// Kronecker linear system. Fine for the small augmented systems here.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "lyapunov: A is {}x{}, Q is {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    // vec(A^T P + P A) = (I ⊗ A^T + A^T ⊗ I) vec(P)
    let m = n * n;
    let mut big = DMatrix::<f64>::zeros(m, m);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                // (I ⊗ A^T): block (j,j) holds A^T => row i, col k of block j
                big[(j * n + i, j * n + k)] += a[(k, i)];
                // (A^T ⊗ I): scalar A^T[j,k] = a[k,j] on the diagonal of block (j,k)
                big[(j * n + i, k * n + i)] += a[(k, j)];
            }
        }
    }
    let rhs = DVector::from_iterator(m, q.iter().map(|v| -v));
    let sol = big
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Stability("Lyapunov equation is singular".into()))?;
    let mut p = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            p[(i, j)] = sol[j * n + i];
        }
    }
    // Enforce exact symmetry against roundoff.
    let p = symmetrize(&p);
    Ok(p)
}

/// `(M + M^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = symmetrize(m);
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)[0]
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    *sym_eigenvalues(m).last().unwrap()
}

/// Spectral radius of a general (possibly nonsymmetric) matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// True when every eigenvalue of `m` has a strictly negative real part.
pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    m.complex_eigenvalues().iter().all(|c| c.re < 0.0)
}

/// Real parts of the eigenvalues, for diagnostics.
pub fn eigen_real_parts(m: &DMatrix<f64>) -> Vec<f64> {
    let mut re: Vec<f64> = m.complex_eigenvalues().iter().map(|c| c.re).collect();
    re.sort_by(|a, b| a.partial_cmp(b).unwrap());
    re
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn expm_scalar_matches_exp() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.0, 15.0] {
            let m = DMatrix::from_element(1, 1, x);
            assert_relative_eq!(expm(&m)[(0, 0)], x.exp(), max_relative = 1e-12);
        }
    }

    #[test]
    fn expm_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 0.5, 2.0]));
        let e = expm(&m);
        for (i, &d) in [-1.0f64, 0.5, 2.0].iter().enumerate() {
            assert_relative_eq!(e[(i, i)], d.exp(), max_relative = 1e-12);
        }
        assert!(e[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn expm_nilpotent_exact() {
        // exp([[0,1],[0,0]]) = [[1,1],[0,1]]
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = expm(&m);
        assert_relative_eq!(e[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(e[(0, 1)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(e[(1, 1)], 1.0, epsilon = 1e-14);
        assert!(e[(1, 0)].abs() < 1e-14);
    }

    #[test]
    fn expm_rotation_norm_preserving() {
        // exp of a skew matrix is a rotation: columns stay unit length.
        let w = 3.7;
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -w, w, 0.0]);
        let e = expm(&m);
        assert_relative_eq!(e[(0, 0)], w.cos(), max_relative = 1e-12);
        assert_relative_eq!(e[(1, 0)], w.sin(), max_relative = 1e-12);
    }

    #[test]
    fn zoh_pair_integrator() {
        // A = 0: e^{A dt} = I, Phi = dt * I.
        let a = DMatrix::zeros(2, 2);
        let (e, phi) = zoh_pair(&a, 2.5);
        assert_relative_eq!(e[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(phi[(0, 0)], 2.5, epsilon = 1e-13);
        assert!(phi[(0, 1)].abs() < 1e-13);
    }

    #[test]
    fn zoh_pair_scalar_closed_form() {
        let a = DMatrix::from_element(1, 1, -0.5);
        let (e, phi) = zoh_pair(&a, 1.0);
        assert_relative_eq!(e[(0, 0)], (-0.5f64).exp(), max_relative = 1e-12);
        let exact = (1.0 - (-0.5f64).exp()) / 0.5;
        assert_relative_eq!(phi[(0, 0)], exact, max_relative = 1e-12);
    }

    #[test]
    fn lyapunov_solution_satisfies_equation() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, -0.2, -2.0]);
        let q = DMatrix::identity(2, 2);
        let p = solve_lyapunov(&a, &q).unwrap();
        let resid = a.transpose() * &p + &p * &a + &q;
        assert!(resid.iter().all(|v| v.abs() < 1e-10));
        assert!(min_eigenvalue(&p) > 0.0, "P must be positive definite");
    }

    #[test]
    fn hurwitz_and_spectral_radius() {
        let stable = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -0.1]);
        assert!(is_hurwitz(&stable));
        let unstable = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, -1.0]);
        assert!(!is_hurwitz(&unstable));
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.25, 0.0]);
        assert_relative_eq!(spectral_radius(&m), 0.5, max_relative = 1e-12);
    }
}

// Copyright 2026 The dcrab Authors
// SPDX-License-Identifier: Apache-2.0

//! Small dense complex linear algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn pauli_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
}

pub fn pauli_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

/// Lowering operator `|0><1|`.
pub fn sigma_minus() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO])
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// `op` acting on `site` of an `n`-qubit register (site 0 is the most
/// significant tensor factor).
pub fn embed(op: &CMatrix, site: usize, n: usize) -> CMatrix {
    let id = CMatrix::identity(2, 2);
    (0..n).fold(CMatrix::identity(1, 1), |acc, k| {
        kron(&acc, if k == site { op } else { &id })
    })
}

/// Largest entrywise modulus of `m - m^dagger`.
pub fn hermiticity_error(m: &CMatrix) -> f64 {
    (m - m.adjoint()).iter().fold(0.0, |a, z| a.max(z.norm()))
}

/// Frobenius norm of `U^dagger U - 1`.
pub fn unitarity_error(u: &CMatrix) -> f64 {
    let n = u.nrows();
    (u.adjoint() * u - CMatrix::identity(n, n)).norm()
}

pub fn check_unitary(u: &CMatrix, tol: f64) -> Result<()> {
    if !u.is_square() {
        return Err(Error::DimensionMismatch {
            expected: u.nrows(),
            got: u.ncols(),
        });
    }
    let dev = unitarity_error(u);
    if !(dev <= tol) {
        return Err(Error::NotUnitary(dev));
    }
    Ok(())
}

/// `exp(-i H t)` for Hermitian `H` via eigendecomposition (closed form for
/// 2x2).
pub fn hermitian_propagator(h: &CMatrix, t: f64) -> CMatrix {
    if h.nrows() == 2 {
        return qubit_propagator(h, t);
    }
    let eig = SymmetricEigen::new(h.clone());
    let v = &eig.eigenvectors;
    let phases = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues
            .iter()
            .map(|&e| C64::from_polar(1.0, -e * t)),
    );
    let mut scaled = v.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= phases[j];
    }
    scaled * v.adjoint()
}

/// `H = a I + b.sigma`, so `exp(-i H t) = e^{-iat} (cos|b|t - i sin|b|t b.sigma/|b|)`.
fn qubit_propagator(h: &CMatrix, t: f64) -> CMatrix {
    let a = 0.5 * (h[(0, 0)].re + h[(1, 1)].re);
    let bz = 0.5 * (h[(0, 0)].re - h[(1, 1)].re);
    let off = 0.5 * (h[(0, 1)] + h[(1, 0)].conj());
    let (bx, by) = (off.re, -off.im);
    let norm = (bx * bx + by * by + bz * bz).sqrt();
    let (cos, sinc) = if norm * t.abs() < 1e-8 {
        (1.0, t)
    } else {
        ((norm * t).cos(), (norm * t).sin() / norm)
    };
    let global = C64::from_polar(1.0, -a * t);
    // -i sinc (bx X + by Y + bz Z)
    let d0 = C64::new(cos, -sinc * bz);
    let d1 = C64::new(cos, sinc * bz);
    let o01 = C64::new(-sinc * by, -sinc * bx);
    let o10 = C64::new(sinc * by, -sinc * bx);
    CMatrix::from_row_slice(
        2,
        2,
        &[d0 * global, o01 * global, o10 * global, d1 * global],
    )
}

/// Closest unitary in Frobenius norm: the unitary polar factor `W V^dagger`
/// of the SVD `U = W S V^dagger`.
pub fn closest_unitary(u: &CMatrix) -> Result<CMatrix> {
    let svd = u.clone().svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(w), Some(v_t)) => Ok(w * v_t),
        _ => Err(Error::Numerical(
            "SVD did not return singular vectors".into(),
        )),
    }
}

const PADE13: [f64; 14] = [
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

const THETA13: f64 = 5.371920351148152;

fn one_norm(a: &CMatrix) -> f64 {
    a.column_iter()
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant.
pub fn expm(a: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("matrix exponential argument".into()));
    }
    let norm = one_norm(a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a * C64::from(0.5f64.powi(squarings));

    let b = |k: usize| C64::from(PADE13[k]);
    let id = CMatrix::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9));
    let u_tail = &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &id * b(1);
    let u = &scaled * (u_inner + u_tail);
    let v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8))
        + &a6 * b(6)
        + &a4 * b(4)
        + &a2 * b(2)
        + &id * b(0);

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::Numerical("singular Padé denominator".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

/// Column-stacking vectorization of a square matrix.
pub fn vectorize(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

pub fn unvectorize(v: &CVector, n: usize) -> CMatrix {
    CMatrix::from_column_slice(n, n, v.as_slice())
}

/// JSON encoding of complex matrices and vectors as `[re, im]` pairs,
/// matrices row-major.
pub mod json {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::{CMatrix, CVector, C64};

    fn pair(z: &C64) -> [f64; 2] {
        [z.re, z.im]
    }

    pub fn matrix_rows(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
        m.row_iter().map(|r| r.iter().map(pair).collect()).collect()
    }

    pub fn matrix_from_rows(rows: &[Vec<[f64; 2]>]) -> Result<CMatrix, String> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err("ragged complex matrix".into());
        }
        let flat: Vec<C64> = rows
            .iter()
            .flatten()
            .map(|p| C64::new(p[0], p[1]))
            .collect();
        Ok(CMatrix::from_row_slice(n, m, &flat))
    }

    pub mod matrix {
        use super::*;

        pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
            matrix_rows(m).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMatrix, D::Error> {
            let rows = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
            matrix_from_rows(&rows).map_err(D::Error::custom)
        }
    }

    pub mod matrices {
        use super::*;

        pub fn serialize<S: Serializer>(ms: &[CMatrix], s: S) -> Result<S::Ok, S::Error> {
            ms.iter().map(matrix_rows).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CMatrix>, D::Error> {
            let all = Vec::<Vec<Vec<[f64; 2]>>>::deserialize(d)?;
            all.iter()
                .map(|rows| matrix_from_rows(rows).map_err(D::Error::custom))
                .collect()
        }
    }

    pub mod vector {
        use super::*;

        pub fn serialize<S: Serializer>(v: &CVector, s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(pair).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CVector, D::Error> {
            let pairs = Vec::<[f64; 2]>::deserialize(d)?;
            Ok(CVector::from_iterator(
                pairs.len(),
                pairs.iter().map(|p| C64::new(p[0], p[1])),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_matrix(n: usize, scale: f64, seed: u64) -> CMatrix {
        let mut rng = crate::seed::rng(seed);
        CMatrix::from_fn(n, n, |_, _| {
            c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale
        })
    }

    fn random_hermitian(n: usize, seed: u64) -> CMatrix {
        let a = random_matrix(n, 1.0, seed);
        (&a + a.adjoint()) * c(0.5, 0.0)
    }

    #[test]
    fn expm_matches_eigendecomposition_for_hermitian_generators() {
        for (n, seed, t) in [(2, 1, 0.3), (4, 2, 7.0), (8, 3, 25.0)] {
            let h = random_hermitian(n, seed);
            let a = expm(&(&h * c(0.0, -t))).unwrap();
            let b = hermitian_propagator(&h, t);
            assert!((a - b).norm() < 1e-11 * n as f64);
        }
    }

    #[test]
    fn qubit_closed_form_matches_expm() {
        for seed in 10..30 {
            let h = random_hermitian(2, seed) * c(3.0, 0.0);
            let t = 0.1 * seed as f64;
            let a = expm(&(&h * c(0.0, -t))).unwrap();
            assert!((a - hermitian_propagator(&h, t)).norm() < 1e-13);
        }
        // b = 0 and nearly so
        for eps in [0.0, 1e-12] {
            let h = CMatrix::from_row_slice(
                2,
                2,
                &[c(0.7 + eps, 0.0), c(eps, eps), c(eps, -eps), c(0.7, 0.0)],
            );
            let a = expm(&(&h * c(0.0, -2.0))).unwrap();
            assert!((a - hermitian_propagator(&h, 2.0)).norm() < 1e-13);
        }
    }

    #[test]
    fn expm_matches_nalgebra_for_general_matrices() {
        for seed in 0..5 {
            let a = random_matrix(5, 2.0, seed);
            let ours = expm(&a).unwrap();
            let reference = a.exp();
            assert!((&ours - &reference).norm() <= 1e-10 * reference.norm());
        }
    }

    #[test]
    fn expm_small_cases() {
        let z = CMatrix::zeros(3, 3);
        assert!((expm(&z).unwrap() - CMatrix::identity(3, 3)).norm() < 1e-15);
        let d = CMatrix::from_diagonal(&CVector::from_vec(vec![c(1.0, 0.0), c(-2.0, 0.5)]));
        let e = expm(&d).unwrap();
        assert_relative_eq!(e[(0, 0)].re, 1f64.exp(), max_relative = 1e-14);
        let expected = c(-2.0, 0.5).exp();
        assert!((e[(1, 1)] - expected).norm() < 1e-14);
        assert!(expm(&CMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn polar_factor_is_unitary_and_fixes_unitaries() {
        let a = random_matrix(4, 1.0, 9);
        let u = closest_unitary(&a).unwrap();
        assert!(unitarity_error(&u) < 1e-12);
        let h = random_hermitian(4, 10);
        let v = hermitian_propagator(&h, 1.3);
        assert!((closest_unitary(&v).unwrap() - &v).norm() < 1e-12);
    }

    #[test]
    fn vectorize_round_trip_and_kron_identity() {
        let a = random_matrix(3, 1.0, 4);
        assert_eq!(unvectorize(&vectorize(&a), 3), a);
        let b = random_matrix(3, 1.0, 5);
        let x = random_matrix(3, 1.0, 6);
        // vec(A X B) = (B^T kron A) vec(X)
        let lhs = vectorize(&(&a * &x * &b));
        let rhs = kron(&b.transpose(), &a) * vectorize(&x);
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn embed_places_operator_on_site() {
        let x0 = embed(&pauli_x(), 0, 2);
        assert_eq!(x0, kron(&pauli_x(), &CMatrix::identity(2, 2)));
        let z1 = embed(&pauli_z(), 1, 3);
        assert_eq!(z1.nrows(), 8);
        assert_eq!(z1[(2, 2)], -ONE);
    }

    #[test]
    fn json_matrix_layout_is_row_major_pairs() {
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0, 2.0), c(3.0, 0.0), ZERO, c(0.0, -1.0)]);
        let rows = json::matrix_rows(&m);
        assert_eq!(rows[0][1], [3.0, 0.0]);
        assert_eq!(json::matrix_from_rows(&rows).unwrap(), m);
        assert!(json::matrix_from_rows(&[vec![[0.0, 0.0]], vec![]]).is_err());
    }
}

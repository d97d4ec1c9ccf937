//! Allocation-free dense kernels for the small (d ≤ 10) matrices used in the
//! hot simulation loop. Matrices are row-major `d × d` slices.

use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Singular;

/// Solves `a · x = rhs` by Gaussian elimination with partial pivoting.
/// Both `a` and `rhs` are overwritten; the solution is left in `rhs`.
pub(crate) fn solve_in_place(a: &mut [f64], rhs: &mut [f64], d: usize) -> Result<(), Singular> {
    debug_assert_eq!(a.len(), d * d);
    debug_assert_eq!(rhs.len(), d);
    if d == 1 {
        let p = a[0];
        if p == 0.0 || !p.is_finite() {
            return Err(Singular);
        }
        rhs[0] /= p;
        return Ok(());
    }
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return Err(Singular);
    }
    let tiny = scale * 1e-14;
    for col in 0..d {
        let (pivot_row, pivot_abs) = (col..d)
            .map(|r| (r, a[r * d + col].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot_abs <= tiny {
            return Err(Singular);
        }
        if pivot_row != col {
            for k in 0..d {
                a.swap(col * d + k, pivot_row * d + k);
            }
            rhs.swap(col, pivot_row);
        }
        let pivot = a[col * d + col];
        for r in col + 1..d {
            let factor = a[r * d + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..d {
                a[r * d + k] -= factor * a[col * d + k];
            }
            rhs[r] -= factor * rhs[col];
        }
    }
    for row in (0..d).rev() {
        let mut acc = rhs[row];
        for k in row + 1..d {
            acc -= a[row * d + k] * rhs[k];
        }
        rhs[row] = acc / a[row * d + row];
    }
    Ok(())
}

/// `out = a · x`
pub(crate) fn mat_vec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &a[r * d..(r + 1) * d];
        *o = row.iter().zip(x).map(|(m, v)| m * v).sum();
    }
}

/// `out += scale · a · x`
pub(crate) fn mat_vec_acc(a: &[f64], x: &[f64], scale: f64, out: &mut [f64]) {
    let d = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &a[r * d..(r + 1) * d];
        let dot: f64 = row.iter().zip(x).map(|(m, v)| m * v).sum();
        *o += scale * dot;
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub(crate) fn distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Hilbert–Schmidt (Frobenius) norm.
pub(crate) fn hs_norm(a: &[f64]) -> f64 {
    norm(a)
}

/// Operator (spectral) norm: the largest singular value.
pub(crate) fn operator_norm(a: &[f64], d: usize) -> f64 {
    if d == 1 {
        return a[0].abs();
    }
    let m = DMatrix::from_row_slice(d, d, a);
    m.singular_values().iter().fold(0.0_f64, |acc, v| acc.max(*v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_pivoting_system() {
        // Zero in the leading position forces a row swap.
        let mut a = vec![0.0, 2.0, 1.0, 1.0];
        let mut b = vec![4.0, 3.0];
        solve_in_place(&mut a, &mut b, 2).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-15);
        assert!((b[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn detects_singular() {
        let mut a = vec![1.0, 2.0, 2.0, 4.0];
        let mut b = vec![1.0, 1.0];
        assert_eq!(solve_in_place(&mut a, &mut b, 2), Err(Singular));
        let mut z = vec![0.0];
        let mut r = vec![1.0];
        assert_eq!(solve_in_place(&mut z, &mut r, 1), Err(Singular));
    }

    #[test]
    fn three_by_three_matches_product() {
        let a = vec![4.0, -2.0, 1.0, 3.0, 6.0, -4.0, 2.0, 1.0, 8.0];
        let x = [1.5, -0.5, 2.0];
        let mut b = vec![0.0; 3];
        mat_vec(&a, &x, &mut b);
        let mut work = a.clone();
        solve_in_place(&mut work, &mut b, 3).unwrap();
        for (got, want) in b.iter().zip(x) {
            assert!((got - want).abs() < 1e-13);
        }
    }

    #[test]
    fn operator_norm_of_diagonal() {
        let a = vec![3.0, 0.0, 0.0, -5.0];
        assert!((operator_norm(&a, 2) - 5.0).abs() < 1e-12);
        assert!((hs_norm(&a) - 34.0_f64.sqrt()).abs() < 1e-12);
    }
}

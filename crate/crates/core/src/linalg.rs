//! Small dense helpers: symmetric eigen-ranges, definite and block-indefinite solves.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, LU};

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// (λ_min, λ_max) of the symmetric part of `m`.
pub fn eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (f64::INFINITY, f64::NEG_INFINITY);
    }
    if m.nrows() == 1 {
        return (m[(0, 0)], m[(0, 0)]);
    }
    let sym = (m + m.transpose()) * 0.5;
    let ev = SymmetricEigen::new(sym).eigenvalues;
    (ev.min(), ev.max())
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Cholesky factor of `a` (positive definite) or of `-a` (negative definite).
#[derive(Clone, Debug)]
pub struct DefiniteFactor {
    chol: Cholesky<f64, Dyn>,
    negated: bool,
}

impl DefiniteFactor {
    pub fn positive(a: &DMatrix<f64>) -> Option<Self> {
        Cholesky::new(a.clone()).map(|chol| Self { chol, negated: false })
    }

    pub fn negative(a: &DMatrix<f64>) -> Option<Self> {
        Cholesky::new(-a).map(|chol| Self { chol, negated: true })
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let x = self.chol.solve(b);
        if self.negated {
            -x
        } else {
            x
        }
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let x = self.chol.solve(b);
        if self.negated {
            -x
        } else {
            x
        }
    }
}

/// Solver for a symmetric matrix of unknown sign: definite Cholesky when possible, LU otherwise.
#[derive(Clone, Debug)]
pub enum SymSolver {
    Definite(DefiniteFactor),
    Lu(LU<f64, Dyn, Dyn>),
}

impl SymSolver {
    pub fn new(a: &DMatrix<f64>) -> Option<Self> {
        if let Some(f) = DefiniteFactor::positive(a).or_else(|| DefiniteFactor::negative(a)) {
            return Some(SymSolver::Definite(f));
        }
        let lu = LU::new(a.clone());
        lu_invertible(&lu).then_some(SymSolver::Lu(lu))
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            SymSolver::Definite(f) => f.solve(b),
            SymSolver::Lu(lu) => lu.solve(b).expect("checked invertible"),
        }
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            SymSolver::Definite(f) => f.solve_vec(b),
            SymSolver::Lu(lu) => lu.solve(b).expect("checked invertible"),
        }
    }
}

fn lu_invertible(lu: &LU<f64, Dyn, Dyn>) -> bool {
    let u = lu.u();
    let scale = u.amax().max(f64::MIN_POSITIVE);
    (0..u.nrows()).all(|i| u[(i, i)].abs() > 1e-14 * scale)
}

/// Block LDLᵀ factorization of a symmetric 2×2-block matrix
/// `[[R11, R12], [R12ᵀ, R22]]` whose leading `m×m` block is split off.
///
/// Pivots on whichever diagonal block is definite with a definite Schur
/// complement (the saddle structure), falling back to partial-pivot LU.
#[derive(Clone, Debug)]
pub struct BlockFactor {
    m: usize,
    kind: BlockKind,
}

#[derive(Clone, Debug)]
enum BlockKind {
    /// R11 definite, Schur complement R22 − R12ᵀR11⁻¹R12 definite.
    Lead11 {
        r11: DefiniteFactor,
        x: DMatrix<f64>,
        r12: DMatrix<f64>,
        schur: DefiniteFactor,
    },
    /// R22 definite, Schur complement R11 − R12R22⁻¹R12ᵀ definite.
    Lead22 {
        r22: DefiniteFactor,
        y: DMatrix<f64>,
        r12: DMatrix<f64>,
        schur: DefiniteFactor,
    },
    Lu(LU<f64, Dyn, Dyn>),
}

fn definite(a: &DMatrix<f64>) -> Option<DefiniteFactor> {
    DefiniteFactor::positive(a).or_else(|| DefiniteFactor::negative(a))
}

impl BlockFactor {
    pub fn new(r: &DMatrix<f64>, m: usize) -> Option<Self> {
        let k = r.nrows();
        assert!(m <= k && r.ncols() == k);
        let r11 = r.view((0, 0), (m, m)).into_owned();
        let r12 = r.view((0, m), (m, k - m)).into_owned();
        let r22 = r.view((m, m), (k - m, k - m)).into_owned();

        if let Some(f11) = DefiniteFactor::positive(&r11) {
            let x = f11.solve(&r12);
            let s = &r22 - r12.transpose() * &x;
            if let Some(schur) = DefiniteFactor::negative(&s) {
                return Some(Self { m, kind: BlockKind::Lead11 { r11: f11, x, r12, schur } });
            }
        }
        if let Some(f22) = DefiniteFactor::negative(&r22) {
            let y = f22.solve(&r12.transpose());
            let s = &r11 - &r12 * &y;
            if let Some(schur) = DefiniteFactor::positive(&s) {
                return Some(Self { m, kind: BlockKind::Lead22 { r22: f22, y, r12, schur } });
            }
        }
        if let Some(f11) = definite(&r11) {
            let x = f11.solve(&r12);
            let s = &r22 - r12.transpose() * &x;
            if let Some(schur) = definite(&s) {
                return Some(Self { m, kind: BlockKind::Lead11 { r11: f11, x, r12, schur } });
            }
        }
        let lu = LU::new(r.clone());
        lu_invertible(&lu).then_some(Self { m, kind: BlockKind::Lu(lu) })
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.m;
        let k = b.nrows();
        match &self.kind {
            BlockKind::Lead11 { r11, x, r12, schur } => {
                let b1 = b.rows(0, m).into_owned();
                let b2 = b.rows(m, k - m).into_owned();
                let y1 = r11.solve(&b1);
                let z2 = schur.solve(&(b2 - r12.transpose() * &y1));
                let z1 = y1 - x * &z2;
                stack(&z1, &z2)
            }
            BlockKind::Lead22 { r22, y, r12, schur } => {
                let b1 = b.rows(0, m).into_owned();
                let b2 = b.rows(m, k - m).into_owned();
                let y2 = r22.solve(&b2);
                let z1 = schur.solve(&(b1 - r12 * &y2));
                let z2 = y2 - y * &z1;
                stack(&z1, &z2)
            }
            BlockKind::Lu(lu) => lu.solve(b).expect("checked invertible"),
        }
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let x = self.solve(&DMatrix::from_column_slice(b.len(), 1, b.as_slice()));
        DVector::from_column_slice(x.as_slice())
    }
}

pub fn stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(top.ncols(), bottom.ncols());
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

pub fn hstack(left: &DMatrix<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(left.nrows(), right.nrows());
    let mut out = DMatrix::zeros(left.nrows(), left.ncols() + right.ncols());
    out.columns_mut(0, left.ncols()).copy_from(left);
    out.columns_mut(left.ncols(), right.ncols()).copy_from(right);
    out
}

pub fn stack_vec(top: &DVector<f64>, bottom: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(top.len() + bottom.len(), top.iter().chain(bottom.iter()).copied())
}

pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_factor_matches_lu_on_saddle_matrix() {
        let r = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, -0.4, 0.1, -0.4, -3.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -2.0, 1.0, 0.5, 3.0]);
        let f = BlockFactor::new(&r, 2).unwrap();
        assert!(matches!(f.kind, BlockKind::Lead11 { .. }));
        let x = f.solve(&b);
        assert!((&r * &x - &b).norm() < 1e-13);
    }

    #[test]
    fn block_factor_falls_back_when_blocks_indefinite() {
        let r = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let f = BlockFactor::new(&r, 1).unwrap();
        let b = DMatrix::from_row_slice(2, 1, &[3.0, -1.0]);
        assert!((&r * f.solve(&b) - &b).norm() < 1e-14);
    }

    #[test]
    fn singular_is_rejected() {
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(BlockFactor::new(&r, 1).is_none());
        assert!(SymSolver::new(&r).is_none());
    }

    #[test]
    fn negative_definite_solve() {
        let a = DMatrix::from_row_slice(2, 2, &[-2.0, 0.5, 0.5, -1.0]);
        let f = DefiniteFactor::negative(&a).unwrap();
        let b = DVector::from_vec(vec![1.0, 2.0]);
        assert!((&a * f.solve_vec(&b) - &b).norm() < 1e-14);
    }
}

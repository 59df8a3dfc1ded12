//! GF(2^8) arithmetic and dense matrices used by the coding layers.
//!
//! Field elements are bytes interpreted as polynomials over GF(2), reduced
//! modulo x^8 + x^4 + x^3 + x^2 + 1 (0x11D). Addition is XOR. Multiplication
//! and inversion go through log/antilog tables generated at compile time,
//! which keeps the hot coding loops branch-light. Tables are immutable after
//! initialization and safe to share across threads.

use std::fmt;

use thiserror::Error;

/// Low eight bits of the reduction polynomial 0x11D.
const POLY: u16 = 0x1D;

/// Antilog table, mirrored to 510 entries so `EXP[a + b]` needs no modular
/// reduction for `a, b < 255`.
static EXP: [u8; 512] = build_exp_table();

/// Discrete log base 2 of every nonzero element. `LOG[0]` is unused.
static LOG: [u8; 256] = build_log_table();

const fn build_exp_table() -> [u8; 512] {
    let mut table = [0u8; 512];
    let mut val: u16 = 1;
    let mut i = 0usize;
    while i < 255 {
        table[i] = val as u8;
        table[i + 255] = val as u8;
        val <<= 1;
        if val & 0x100 != 0 {
            val ^= 0x100 | POLY;
        }
        i += 1;
    }
    table[510] = table[0];
    table[511] = table[1];
    table
}

const fn build_log_table() -> [u8; 256] {
    let mut table = [0u8; 256];
    let mut val: u16 = 1;
    let mut i = 0u8;
    loop {
        table[val as usize] = i;
        val <<= 1;
        if val & 0x100 != 0 {
            val ^= 0x100 | POLY;
        }
        if i == 254 {
            break;
        }
        i += 1;
    }
    table
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GaloisError {
    #[error("zero has no multiplicative inverse in GF(256)")]
    ZeroInverse,
    #[error("system is underdetermined: rank {rank}, need {needed}")]
    Underdetermined { rank: usize, needed: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// An element of GF(2^8).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
#[repr(transparent)]
pub struct Gf256(pub u8);

impl Gf256 {
    pub const ZERO: Self = Self(0);
    pub const ONE: Self = Self(1);

    #[inline]
    pub const fn new(val: u8) -> Self {
        Self(val)
    }

    #[inline]
    pub const fn raw(self) -> u8 {
        self.0
    }

    #[inline]
    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Multiplicative inverse. Zero has none.
    #[inline]
    pub fn inv(self) -> Result<Self, GaloisError> {
        if self.is_zero() {
            return Err(GaloisError::ZeroInverse);
        }
        let log_a = LOG[self.0 as usize] as usize;
        Ok(Self(EXP[255 - log_a]))
    }
}

impl fmt::Debug for Gf256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Gf256(0x{:02x})", self.0)
    }
}

impl std::ops::Add for Gf256 {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self(self.0 ^ rhs.0)
    }
}

impl std::ops::Sub for Gf256 {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        // characteristic 2: subtraction equals addition
        Self(self.0 ^ rhs.0)
    }
}

impl std::ops::Mul for Gf256 {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        if self.0 == 0 || rhs.0 == 0 {
            return Self::ZERO;
        }
        let log_sum = LOG[self.0 as usize] as usize + LOG[rhs.0 as usize] as usize;
        Self(EXP[log_sum])
    }
}

impl std::ops::AddAssign for Gf256 {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        self.0 ^= rhs.0;
    }
}

impl std::ops::MulAssign for Gf256 {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

/// `dst[i] ^= c * src[i]` over the whole slice.
///
/// This is the inner loop of every encoder and decoder here, so it works on
/// raw bytes and looks the tables up directly.
#[inline]
pub fn addmul_slice(dst: &mut [u8], src: &[u8], c: Gf256) {
    assert_eq!(dst.len(), src.len(), "slice length mismatch");
    if c.is_zero() {
        return;
    }
    if c == Gf256::ONE {
        for (d, s) in dst.iter_mut().zip(src) {
            *d ^= s;
        }
        return;
    }
    let log_c = LOG[c.0 as usize] as usize;
    for (d, s) in dst.iter_mut().zip(src) {
        if *s != 0 {
            *d ^= EXP[LOG[*s as usize] as usize + log_c];
        }
    }
}

/// Scale a byte slice by `c` in place.
#[inline]
pub fn scale_slice(dst: &mut [u8], c: Gf256) {
    if c == Gf256::ONE {
        return;
    }
    if c.is_zero() {
        dst.fill(0);
        return;
    }
    let log_c = LOG[c.0 as usize] as usize;
    for d in dst.iter_mut() {
        if *d != 0 {
            *d = EXP[LOG[*d as usize] as usize + log_c];
        }
    }
}

/// Dense row-major matrix over GF(2^8).
#[derive(Clone, PartialEq, Eq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<Gf256>,
}

impl Matrix {
    pub fn zero(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Gf256::ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zero(n, n);
        for i in 0..n {
            m.set(i, i, Gf256::ONE);
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<Gf256>>) -> Result<Self, GaloisError> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(GaloisError::Dimension("ragged row lengths".into()));
        }
        Ok(Self {
            rows: nrows,
            cols: ncols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Gf256 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Gf256) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[Gf256] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zero(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn mul(&self, rhs: &Matrix) -> Result<Matrix, GaloisError> {
        if self.cols != rhs.rows {
            return Err(GaloisError::Dimension(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zero(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a.is_zero() {
                    continue;
                }
                for c in 0..rhs.cols {
                    let v = out.get(r, c) + a * rhs.get(k, c);
                    out.set(r, c, v);
                }
            }
        }
        Ok(out)
    }

    /// Row rank by Gaussian elimination. Pivot search takes the first nonzero
    /// entry in column order; there is no magnitude to prefer in a finite
    /// field.
    pub fn rank(&self) -> usize {
        let mut work = self.clone();
        let mut rank = 0;
        for col in 0..work.cols {
            if rank == work.rows {
                break;
            }
            let pivot = (rank..work.rows).find(|&r| !work.get(r, col).is_zero());
            let Some(pivot) = pivot else { continue };
            work.swap_rows(rank, pivot);
            let inv = work.get(rank, col).inv().expect("pivot is nonzero");
            for r in (rank + 1)..work.rows {
                let factor = work.get(r, col) * inv;
                if factor.is_zero() {
                    continue;
                }
                for c in col..work.cols {
                    let v = work.get(r, c) + factor * work.get(rank, c);
                    work.set(r, c, v);
                }
            }
            rank += 1;
        }
        rank
    }

    /// Solve `self * x = rhs` for square `self`.
    ///
    /// Returns the achieved rank when the system is singular.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix, GaloisError> {
        if self.rows != self.cols {
            return Err(GaloisError::Dimension(format!(
                "coefficient matrix is {}x{}, expected square",
                self.rows, self.cols
            )));
        }
        if rhs.rows != self.rows {
            return Err(GaloisError::Dimension(format!(
                "rhs has {} rows, expected {}",
                rhs.rows, self.rows
            )));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut b = rhs.clone();
        // forward elimination with row normalization
        for col in 0..n {
            let pivot = (col..n).find(|&r| !a.get(r, col).is_zero()).ok_or(
                GaloisError::Underdetermined {
                    rank: a.rank(),
                    needed: n,
                },
            )?;
            a.swap_rows(col, pivot);
            b.swap_rows(col, pivot);
            let inv = a.get(col, col).inv().expect("pivot is nonzero");
            a.scale_row(col, inv);
            b.scale_row(col, inv);
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a.get(r, col);
                if factor.is_zero() {
                    continue;
                }
                a.addmul_row(r, col, factor);
                b.addmul_row(r, col, factor);
            }
        }
        Ok(b)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for c in 0..self.cols {
            self.data.swap(a * self.cols + c, b * self.cols + c);
        }
    }

    fn scale_row(&mut self, r: usize, factor: Gf256) {
        for c in 0..self.cols {
            let v = self.get(r, c) * factor;
            self.set(r, c, v);
        }
    }

    /// `row[dst] += factor * row[src]`.
    fn addmul_row(&mut self, dst: usize, src: usize, factor: Gf256) {
        for c in 0..self.cols {
            let v = self.get(dst, c) + factor * self.get(src, c);
            self.set(dst, c, v);
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                write!(f, "{:02x} ", self.get(r, c).raw())?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Schoolbook carryless multiply followed by reduction modulo 0x11D.
    /// Independent of the log/antilog tables.
    fn clmul_reduce(a: u8, b: u8) -> u8 {
        let mut acc: u16 = 0;
        for bit in 0..8 {
            if (b >> bit) & 1 == 1 {
                acc ^= (a as u16) << bit;
            }
        }
        for bit in (8..16).rev() {
            if (acc >> bit) & 1 == 1 {
                acc ^= 0x11D << (bit - 8);
            }
        }
        acc as u8
    }

    /// Division-free elimination used as a second opinion on rank.
    fn rank_fraction_free(m: &Matrix) -> usize {
        let mut rows: Vec<Vec<Gf256>> = (0..m.rows()).map(|r| m.row(r).to_vec()).collect();
        let mut rank = 0;
        for col in 0..m.cols() {
            if rank == rows.len() {
                break;
            }
            let Some(pivot) = (rank..rows.len()).find(|&r| !rows[r][col].is_zero()) else {
                continue;
            };
            rows.swap(rank, pivot);
            let pivot_val = rows[rank][col];
            for r in (rank + 1)..rows.len() {
                let row_val = rows[r][col];
                if row_val.is_zero() {
                    continue;
                }
                // cross-scale instead of dividing: row = pivot_val*row + row_val*pivot_row
                for c in 0..m.cols() {
                    let v = pivot_val * rows[r][c] + row_val * rows[rank][c];
                    rows[r][c] = v;
                }
            }
            rank += 1;
        }
        rank
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let mut m = Matrix::zero(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.set(r, c, Gf256(rng.gen()));
            }
        }
        m
    }

    #[test]
    fn mul_zero_annihilates() {
        assert_eq!(Gf256(0x57) * Gf256(0x00), Gf256(0x00));
    }

    #[test]
    fn mul_identity() {
        assert_eq!(Gf256(0x57) * Gf256(0x01), Gf256(0x57));
    }

    #[test]
    fn mul_reduces_modulo_0x11d() {
        // 0x02 * 0x80 overflows into the x^8 term and reduces to 0x1D
        assert_eq!(Gf256(0x02) * Gf256(0x80), Gf256(0x1D));
        assert_eq!(clmul_reduce(0x02, 0x80), 0x1D);
    }

    #[test]
    fn tables_match_carryless_multiply() {
        for a in 0..=255u8 {
            for b in 0..=255u8 {
                assert_eq!(
                    (Gf256(a) * Gf256(b)).raw(),
                    clmul_reduce(a, b),
                    "mismatch at {a:#x} * {b:#x}"
                );
            }
        }
    }

    #[test]
    fn inverse_of_identity() {
        assert_eq!(Gf256(0x01).inv().unwrap(), Gf256(0x01));
    }

    #[test]
    fn inverse_of_two_found_by_scan() {
        // exhaustive scan oracle for the inverse of 0x02
        let scanned = (1..=255u8)
            .find(|&b| Gf256(0x02) * Gf256(b) == Gf256::ONE)
            .unwrap();
        assert_eq!(scanned, 0x8E);
        assert_eq!(Gf256(0x02).inv().unwrap(), Gf256(0x8E));
    }

    #[test]
    fn inverse_of_zero_is_error() {
        assert_eq!(Gf256::ZERO.inv(), Err(GaloisError::ZeroInverse));
    }

    #[test]
    fn every_nonzero_inverse_multiplies_to_one() {
        for a in 1..=255u8 {
            let inv = Gf256(a).inv().unwrap();
            assert_eq!(Gf256(a) * inv, Gf256::ONE, "a = {a:#x}");
        }
    }

    #[test]
    fn field_axioms_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6A10);
        for _ in 0..10_000 {
            let a = Gf256(rng.gen());
            let b = Gf256(rng.gen());
            let c = Gf256(rng.gen());
            assert_eq!((a * b) * c, a * (b * c));
            assert_eq!(a * b, b * a);
            assert_eq!(a * (b + c), a * b + a * c);
        }
    }

    #[test]
    fn rank_of_identity() {
        assert_eq!(Matrix::identity(3).rank(), 3);
    }

    #[test]
    fn rank_of_zero_matrix() {
        assert_eq!(Matrix::zero(4, 7).rank(), 0);
        assert_eq!(Matrix::zero(1, 1).rank(), 0);
    }

    #[test]
    fn rank_matches_fraction_free_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6A11);
        let m = random_matrix(&mut rng, 8, 8);
        assert_eq!(m.rank(), rank_fraction_free(&m));

        // also exercise rank-deficient shapes
        for _ in 0..50 {
            let rows = rng.gen_range(1..=12);
            let cols = rng.gen_range(1..=12);
            let mut m = random_matrix(&mut rng, rows, cols);
            if rows >= 2 && rng.gen_bool(0.5) {
                // duplicate a row to force deficiency
                let src = rng.gen_range(0..rows);
                let dst = (src + 1) % rows;
                for c in 0..cols {
                    let v = m.get(src, c);
                    m.set(dst, c, v);
                }
            }
            assert_eq!(m.rank(), rank_fraction_free(&m));
        }
    }

    #[test]
    fn rank_equals_transpose_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6A12);
        for _ in 0..40 {
            let rows = rng.gen_range(1..=16);
            let cols = rng.gen_range(1..=16);
            let m = random_matrix(&mut rng, rows, cols);
            assert_eq!(m.rank(), m.transpose().rank());
        }
    }

    #[test]
    fn solve_identity_returns_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6A13);
        let rhs = random_matrix(&mut rng, 5, 3);
        let x = Matrix::identity(5).solve(&rhs).unwrap();
        assert_eq!(x, rhs);
    }

    #[test]
    fn solve_permutation_permutes_rhs() {
        // permutation sending row i of x to row (i+1) mod 3 of the product
        let mut p = Matrix::zero(3, 3);
        p.set(0, 1, Gf256::ONE);
        p.set(1, 2, Gf256::ONE);
        p.set(2, 0, Gf256::ONE);
        let mut rhs = Matrix::zero(3, 2);
        for r in 0..3 {
            for c in 0..2 {
                rhs.set(r, c, Gf256((r * 2 + c + 1) as u8));
            }
        }
        let x = p.solve(&rhs).unwrap();
        assert_eq!(p.mul(&x).unwrap(), rhs);
        // x row j equals rhs row i where p[i][j] = 1
        assert_eq!(x.row(1), rhs.row(0));
        assert_eq!(x.row(2), rhs.row(1));
        assert_eq!(x.row(0), rhs.row(2));
    }

    #[test]
    fn solve_then_multiply_back_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6A14);
        let mut solved = 0;
        while solved < 20 {
            let a = random_matrix(&mut rng, 6, 6);
            if a.rank() < 6 {
                continue;
            }
            let rhs = random_matrix(&mut rng, 6, 4);
            let x = a.solve(&rhs).unwrap();
            assert_eq!(a.mul(&x).unwrap(), rhs);
            solved += 1;
        }
    }

    #[test]
    fn solve_singular_reports_rank() {
        let mut a = Matrix::zero(3, 3);
        a.set(0, 0, Gf256::ONE);
        a.set(1, 1, Gf256::ONE);
        // third row duplicates the first
        a.set(2, 0, Gf256::ONE);
        let rhs = Matrix::zero(3, 1);
        match a.solve(&rhs) {
            Err(GaloisError::Underdetermined { rank, needed }) => {
                assert_eq!(rank, 2);
                assert_eq!(needed, 3);
            }
            other => panic!("expected underdetermined, got {other:?}"),
        }
    }
}

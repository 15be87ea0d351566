//! Shared domain types: binary labels, simplex points, row-stochastic
//! channels, conditional policies, co-report counts and joint distributions.
//!
//! Every type validates on construction and is immutable afterwards.

use crate::error::{PegError, Result};

/// Global tolerance for "sums to one" checks.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

/// Binary symbol: a correctness bit, a private signal or a report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Zero,
    One,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Zero, Label::One];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Label::Zero => 0,
            Label::One => 1,
        }
    }

    /// Panics if `index > 1`.
    #[inline]
    pub fn from_index(index: usize) -> Label {
        match index {
            0 => Label::Zero,
            1 => Label::One,
            _ => panic!("label index {index} out of range"),
        }
    }

    #[inline]
    pub fn flip(self) -> Label {
        match self {
            Label::Zero => Label::One,
            Label::One => Label::Zero,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = PegError;

    fn try_from(value: u8) -> Result<Self> {
        match value {
            0 => Ok(Label::Zero),
            1 => Ok(Label::One),
            v => Err(PegError::InvalidLabel(v)),
        }
    }
}

impl From<bool> for Label {
    fn from(b: bool) -> Self {
        if b {
            Label::One
        } else {
            Label::Zero
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.index() as u8
    }
}

/// Converts a slice of 0/1 bytes into labels.
pub fn labels(bits: &[u8]) -> Result<Vec<Label>> {
    bits.iter().map(|&b| Label::try_from(b)).collect()
}

/// A point on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector(Vec<f64>);

/// Checks that `v` is nonnegative and sums to one within
/// [`NORMALIZATION_TOLERANCE`].
pub fn validate_prob_vector(v: &[f64]) -> Result<ProbVector> {
    if v.len() < 2 {
        return Err(PegError::TooShort { len: v.len() });
    }
    for (index, &value) in v.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(PegError::NegativeEntry { index, value });
        }
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(PegError::NotNormalized { sum });
    }
    Ok(ProbVector(v.to_vec()))
}

impl ProbVector {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        validate_prob_vector(&v)
    }

    pub fn uniform(len: usize) -> Self {
        assert!(len >= 2);
        ProbVector(vec![1.0 / len as f64; len])
    }

    pub fn vertex(len: usize, index: usize) -> Self {
        assert!(len >= 2 && index < len);
        let mut v = vec![0.0; len];
        v[index] = 1.0;
        ProbVector(v)
    }

    /// Divides by the sum. Input must be nonnegative with a positive sum.
    pub(crate) fn normalize_from(mut v: Vec<f64>) -> Result<Self> {
        let sum: f64 = v.iter().sum();
        for x in &mut v {
            *x /= sum;
        }
        validate_prob_vector(&v)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn l1_distance(&self, other: &ProbVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    /// Floors every coordinate at `floor` and renormalizes.
    pub fn floored(&self, floor: f64) -> ProbVector {
        let v: Vec<f64> = self.0.iter().map(|&x| x.max(floor)).collect();
        let sum: f64 = v.iter().sum();
        ProbVector(v.into_iter().map(|x| x / sum).collect())
    }
}

/// `Σ p_i ln(p_i / q_i)` with `0 · ln(0/q) = 0`.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(PegError::LengthMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    let mut total = 0.0;
    for (index, (&pi, &qi)) in p.0.iter().zip(&q.0).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(PegError::SupportViolation { index });
            }
            total += pi * (pi / qi).ln();
        }
    }
    // Rounding can leave a tiny negative residue for p == q.
    Ok(total.max(0.0))
}

/// A 2×2 row-stochastic matrix. Row `r` is the output distribution given
/// input `r`.
///
/// Used both for agent strategies (signal → report) and for the
/// world's confusion matrices (truth → signal).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Channel {
    matrix: [[f64; 2]; 2],
}

/// An agent's reporting strategy: signal → report distribution.
pub type Strategy = Channel;

impl Channel {
    pub fn new(matrix: [[f64; 2]; 2]) -> Result<Self> {
        for row in &matrix {
            validate_prob_vector(row)?;
        }
        Ok(Channel { matrix })
    }

    pub fn truthful() -> Self {
        Channel {
            matrix: [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    pub fn flip() -> Self {
        Channel {
            matrix: [[0.0, 1.0], [1.0, 0.0]],
        }
    }

    /// Always outputs `label`.
    pub fn constant(label: Label) -> Self {
        let row = if label == Label::Zero {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        };
        Channel { matrix: [row, row] }
    }

    /// Symmetric channel that keeps its input with probability `fidelity`.
    pub fn symmetric(fidelity: f64) -> Result<Self> {
        Channel::new([[fidelity, 1.0 - fidelity], [1.0 - fidelity, fidelity]])
    }

    /// Rows `[(1 − a, a), (b, 1 − b)]`: `a` and `b` are the flip
    /// probabilities for input 0 and input 1.
    pub fn from_flip_probs(a: f64, b: f64) -> Result<Self> {
        Channel::new([[1.0 - a, a], [b, 1.0 - b]])
    }

    #[inline]
    pub fn matrix(&self) -> &[[f64; 2]; 2] {
        &self.matrix
    }

    #[inline]
    pub fn prob(&self, input: Label, output: Label) -> f64 {
        self.matrix[input.index()][output.index()]
    }

    #[inline]
    pub fn row(&self, input: Label) -> [f64; 2] {
        self.matrix[input.index()]
    }

    /// Apply `self` first and then `next`: the matrix product `self · next`.
    pub fn then(&self, next: &Channel) -> Channel {
        let a = &self.matrix;
        let b = &next.matrix;
        let mut m = [[0.0; 2]; 2];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
        }
        // Products of stochastic rows stay stochastic up to rounding.
        for row in &mut m {
            let s = row[0] + row[1];
            row[0] /= s;
            row[1] /= s;
        }
        Channel { matrix: m }
    }

    pub fn det(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn is_permutation(&self, tol: f64) -> bool {
        let t = Channel::truthful();
        let f = Channel::flip();
        self.max_abs_diff(&t) <= tol || self.max_abs_diff(&f) <= tol
    }

    pub fn max_abs_diff(&self, other: &Channel) -> f64 {
        let mut d: f64 = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                d = d.max((self.matrix[r][c] - other.matrix[r][c]).abs());
            }
        }
        d
    }
}

/// A conditional policy over binary outputs, keyed by a binary condition.
///
/// For a discriminator the condition is its private signal and the output
/// its report; for the generator the condition is the target label and the
/// output the correctness of the produced response.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyPoint {
    rows: [ProbVector; 2],
}

impl PolicyPoint {
    pub fn new(rows: [ProbVector; 2]) -> Result<Self> {
        for row in &rows {
            if row.len() != 2 {
                return Err(PegError::LengthMismatch {
                    expected: 2,
                    found: row.len(),
                });
            }
        }
        Ok(PolicyPoint { rows })
    }

    pub fn from_channel(c: &Channel) -> Self {
        let m = c.matrix();
        PolicyPoint {
            rows: [ProbVector(m[0].to_vec()), ProbVector(m[1].to_vec())],
        }
    }

    pub fn to_channel(&self) -> Channel {
        Channel {
            matrix: [
                [self.rows[0].get(0), self.rows[0].get(1)],
                [self.rows[1].get(0), self.rows[1].get(1)],
            ],
        }
    }

    pub fn uniform() -> Self {
        PolicyPoint {
            rows: [ProbVector::uniform(2), ProbVector::uniform(2)],
        }
    }

    #[inline]
    pub fn condition(&self, c: Label) -> &ProbVector {
        &self.rows[c.index()]
    }

    #[inline]
    pub fn prob(&self, c: Label, out: Label) -> f64 {
        self.rows[c.index()].get(out.index())
    }

    pub fn rows(&self) -> &[ProbVector; 2] {
        &self.rows
    }

    /// L1 distance to `other` for each condition.
    pub fn l1_distances(&self, other: &PolicyPoint) -> [f64; 2] {
        [
            self.rows[0].l1_distance(&other.rows[0]),
            self.rows[1].l1_distance(&other.rows[1]),
        ]
    }

    pub fn floored(&self, floor: f64) -> PolicyPoint {
        PolicyPoint {
            rows: [self.rows[0].floored(floor), self.rows[1].floored(floor)],
        }
    }
}

impl From<Channel> for PolicyPoint {
    fn from(c: Channel) -> Self {
        PolicyPoint::from_channel(&c)
    }
}

/// 2×2 matrix of report-pair counts for an agent pair over a task subset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoReportCounts {
    counts: [[u64; 2]; 2],
}

impl CoReportCounts {
    pub fn new(counts: [[u64; 2]; 2], subset_size: usize) -> Result<Self> {
        let sum: u64 = counts.iter().flatten().sum();
        if sum != subset_size as u64 {
            return Err(PegError::CountMismatch {
                sum,
                expected: subset_size,
            });
        }
        Ok(CoReportCounts { counts })
    }

    #[inline]
    pub fn counts(&self) -> &[[u64; 2]; 2] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Exact integer determinant.
    pub fn det(&self) -> i64 {
        let m = &self.counts;
        (m[0][0] * m[1][1]) as i64 - (m[0][1] * m[1][0]) as i64
    }
}

/// Joint probability matrix over a pair of binary variables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointDist {
    probs: [[f64; 2]; 2],
}

impl JointDist {
    pub fn new(probs: [[f64; 2]; 2]) -> Result<Self> {
        validate_prob_vector(&[probs[0][0], probs[0][1], probs[1][0], probs[1][1]])?;
        Ok(JointDist { probs })
    }

    /// Product of two marginals; determinant zero.
    pub fn independent(p: [f64; 2], q: [f64; 2]) -> Result<Self> {
        JointDist::new([[p[0] * q[0], p[0] * q[1]], [p[1] * q[0], p[1] * q[1]]])
    }

    #[inline]
    pub fn probs(&self) -> &[[f64; 2]; 2] {
        &self.probs
    }

    #[inline]
    pub fn get(&self, a: Label, b: Label) -> f64 {
        self.probs[a.index()][b.index()]
    }

    pub fn det(&self) -> f64 {
        let m = &self.probs;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn transpose(&self) -> JointDist {
        let m = &self.probs;
        JointDist {
            probs: [[m[0][0], m[1][0]], [m[0][1], m[1][1]]],
        }
    }

    pub fn swap_rows(&self) -> JointDist {
        let m = &self.probs;
        JointDist {
            probs: [m[1], m[0]],
        }
    }

    pub fn swap_cols(&self) -> JointDist {
        let m = &self.probs;
        JointDist {
            probs: [[m[0][1], m[0][0]], [m[1][1], m[1][0]]],
        }
    }

    /// Distribution of `(X', Y)` where `X'` is `X` passed through `g`:
    /// `Gᵀ · U`.
    pub fn garble_first(&self, g: &Channel) -> JointDist {
        let u = &self.probs;
        let gm = g.matrix();
        let mut out = [[0.0; 2]; 2];
        for (xp, row) in out.iter_mut().enumerate() {
            for (y, cell) in row.iter_mut().enumerate() {
                *cell = gm[0][xp] * u[0][y] + gm[1][xp] * u[1][y];
            }
        }
        JointDist { probs: out }
    }
}

/// Anything with a 2×2 determinant.
pub trait Determinant {
    fn det2(&self) -> f64;
}

impl Determinant for CoReportCounts {
    fn det2(&self) -> f64 {
        self.det() as f64
    }
}

impl Determinant for JointDist {
    fn det2(&self) -> f64 {
        self.det()
    }
}

impl Determinant for Channel {
    fn det2(&self) -> f64 {
        self.det()
    }
}

/// `m(0,0)·m(1,1) − m(0,1)·m(1,0)`.
pub fn det2<M: Determinant + ?Sized>(m: &M) -> f64 {
    m.det2()
}

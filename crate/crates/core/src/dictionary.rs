//! Unit-norm dictionaries, target signals and least-squares fits on a support.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::Ldl;

const UNIT_TOL: f64 = 1e-10;
const ZERO_COLUMN: f64 = 1e-12;
const SINGULAR_REL: f64 = 1e-12;

/// `d × N` matrix whose `N ≥ 2` columns all have unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitDictionary {
    data: DMatrix<f64>,
}

impl UnitDictionary {
    /// Wraps a matrix whose columns are already unit norm.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() < 1 || data.ncols() < 2 {
            return Err(Error::InvalidDictionary(format!(
                "need d >= 1 and N >= 2, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDictionary("non-finite entry".into()));
        }
        for (j, col) in data.column_iter().enumerate() {
            let n = col.norm();
            if (n - 1.0).abs() > UNIT_TOL {
                return Err(Error::InvalidDictionary(format!("column {j} has norm {n}")));
            }
        }
        Ok(Self { data })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn atoms(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.data.column(i).into_owned()
    }

    /// `⟨E_i, E_j⟩`.
    pub fn inner(&self, i: usize, j: usize) -> f64 {
        self.data.column(i).dot(&self.data.column(j))
    }

    /// `Eᵀ v`.
    pub fn correlations(&self, v: &DVector<f64>) -> DVector<f64> {
        self.data.tr_mul(v)
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.data.tr_mul(&self.data)
    }

    /// Columns `support` as a `d × |S|` matrix.
    pub fn select(&self, support: &[usize]) -> DMatrix<f64> {
        self.data.select_columns(support)
    }

    /// Same dictionary with its columns permuted: new column `i` is old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self { data: self.data.select_columns(perm) }
    }
}

/// Divides each column by its norm.
pub fn normalize_columns(matrix: &DMatrix<f64>) -> Result<UnitDictionary> {
    let mut data = matrix.clone();
    for (j, mut col) in data.column_iter_mut().enumerate() {
        let n = col.norm();
        if !(n > ZERO_COLUMN) {
            return Err(Error::ZeroColumn(j));
        }
        col /= n;
    }
    UnitDictionary::new(data)
}

/// `max_{i≠j} |⟨E_i, E_j⟩|`.
pub fn mutual_coherence(dict: &UnitDictionary) -> f64 {
    let gram = dict.gram();
    let n = dict.atoms();
    let mut mu = 0.0_f64;
    for j in 0..n {
        for i in 0..j {
            mu = mu.max(gram[(i, j)].abs());
        }
    }
    mu
}

/// A target `y`, optionally carrying the sparse combination it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSignal {
    pub vector: DVector<f64>,
    pub planted_support: Option<Vec<usize>>,
    pub planted_coeffs: Option<Vec<f64>>,
}

impl TargetSignal {
    pub fn new(vector: DVector<f64>) -> Self {
        Self { vector, planted_support: None, planted_coeffs: None }
    }

    /// `y = Σ α_j E_j` over `support`; support is stored sorted with
    /// coefficients kept aligned.
    pub fn planted(dict: &UnitDictionary, support: &[usize], coeffs: &[f64]) -> Self {
        assert_eq!(support.len(), coeffs.len());
        let mut pairs: Vec<(usize, f64)> = support.iter().copied().zip(coeffs.iter().copied()).collect();
        pairs.sort_by_key(|p| p.0);
        let mut vector = DVector::zeros(dict.dim());
        for &(j, a) in &pairs {
            vector.axpy(a, &dict.matrix().column(j), 1.0);
        }
        Self {
            vector,
            planted_support: Some(pairs.iter().map(|p| p.0).collect()),
            planted_coeffs: Some(pairs.iter().map(|p| p.1).collect()),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.vector.norm_squared()
    }
}

/// Support (sorted ascending), aligned coefficients and squared residual.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSolution {
    pub support: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub residual_sq: f64,
}

impl SparseSolution {
    /// `‖y − E_S α‖²` evaluated from the stored fields.
    pub fn recompute_residual_sq(&self, dict: &UnitDictionary, y: &TargetSignal) -> f64 {
        let mut r = y.vector.clone();
        for (&j, &a) in self.support.iter().zip(&self.coefficients) {
            r.axpy(-a, &dict.matrix().column(j), 1.0);
        }
        r.norm_squared()
    }
}

pub(crate) fn check_support(support: &[usize], atoms: usize) -> Result<Vec<usize>> {
    if support.is_empty() {
        return Err(Error::InvalidSupport("empty support".into()));
    }
    let mut sorted = support.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidSupport(format!("duplicate index in {support:?}")));
    }
    if let Some(&bad) = sorted.iter().find(|&&i| i >= atoms) {
        return Err(Error::InvalidSupport(format!("index {bad} out of range 0..{atoms}")));
    }
    Ok(sorted)
}

/// Ordinary least squares restricted to `support`, via the normal equations.
pub fn least_squares_on_support(dict: &UnitDictionary, y: &TargetSignal, support: &[usize]) -> Result<SparseSolution> {
    let support = check_support(support, dict.atoms())?;
    let sub = dict.select(&support);
    let gram = sub.tr_mul(&sub);
    let ldl = Ldl::factor(&gram);
    if ldl.is_singular(SINGULAR_REL) {
        return Err(Error::SingularGram(support));
    }
    let rhs = sub.tr_mul(&y.vector);
    let alpha = ldl.solve(&rhs);
    let residual = &y.vector - &sub * &alpha;
    Ok(SparseSolution {
        support,
        coefficients: alpha.iter().copied().collect(),
        residual_sq: residual.norm_squared().max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSeed;
    use proptest::prelude::*;

    fn random_dict(d: usize, n: usize, seed: u64) -> UnitDictionary {
        let mut s = RngSeed(seed).stream();
        let m = DMatrix::from_fn(d, n, |_, _| s.normal());
        normalize_columns(&m).unwrap()
    }

    #[test]
    fn identity_is_already_unit() {
        let eye = DMatrix::<f64>::identity(2, 2);
        assert_eq!(normalize_columns(&eye).unwrap().matrix(), &eye);
    }

    #[test]
    fn three_four_five() {
        let m = DMatrix::from_column_slice(2, 2, &[3.0, 4.0, 1.0, 0.0]);
        let d = normalize_columns(&m).unwrap();
        assert!((d.matrix()[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((d.matrix()[(1, 0)] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_column_rejected() {
        let m = DMatrix::from_column_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(normalize_columns(&m), Err(Error::ZeroColumn(1)));
    }

    #[test]
    fn dictionary_invariants_enforced() {
        assert!(UnitDictionary::new(DMatrix::from_element(2, 1, 1.0)).is_err());
        assert!(UnitDictionary::new(DMatrix::from_element(2, 2, 1.0)).is_err());
        let mut bad = DMatrix::<f64>::identity(2, 2);
        bad[(0, 0)] = f64::NAN;
        assert!(UnitDictionary::new(bad).is_err());
    }

    #[test]
    fn coherence_of_orthonormal_and_duplicates() {
        let eye = UnitDictionary::new(DMatrix::identity(4, 4)).unwrap();
        assert_eq!(mutual_coherence(&eye), 0.0);
        let dup = normalize_columns(&DMatrix::from_column_slice(2, 3, &[1.0, 1.0, 1.0, 1.0, 0.0, 1.0])).unwrap();
        assert!((mutual_coherence(&dup) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coherence_matches_pairwise_enumeration() {
        let d = random_dict(5, 3, 11);
        let a = d.column(0);
        let b = d.column(1);
        let c = d.column(2);
        let expected = a.dot(&b).abs().max(a.dot(&c).abs()).max(b.dot(&c).abs());
        assert!((mutual_coherence(&d) - expected).abs() < 1e-15);
    }

    #[test]
    fn orthonormal_support_closed_form() {
        let d = UnitDictionary::new(DMatrix::identity(4, 4)).unwrap();
        let y = TargetSignal::new(DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5]));
        let sol = least_squares_on_support(&d, &y, &[2, 0]).unwrap();
        assert_eq!(sol.support, vec![0, 2]);
        assert!((sol.coefficients[0] - 1.0).abs() < 1e-14);
        assert!((sol.coefficients[1] - 3.0).abs() < 1e-14);
        let expected = y.norm_sq() - 1.0 - 9.0;
        assert!((sol.residual_sq - expected).abs() < 1e-12);
    }

    #[test]
    fn planted_support_is_exact() {
        let d = random_dict(16, 10, 5);
        let y = TargetSignal::planted(&d, &[7, 2, 4], &[1.0, -1.0, 0.5]);
        let sol = least_squares_on_support(&d, &y, &[2, 4, 7]).unwrap();
        assert!(sol.residual_sq < 1e-10);
        assert!((sol.coefficients[0] + 1.0).abs() < 1e-9);
        assert!((sol.coefficients[2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn duplicated_columns_are_singular() {
        let m = DMatrix::from_column_slice(3, 3, &[1.0, 2.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
        let d = normalize_columns(&m).unwrap();
        let y = TargetSignal::new(DVector::from_vec(vec![1.0, 1.0, 1.0]));
        assert_eq!(least_squares_on_support(&d, &y, &[0, 1]), Err(Error::SingularGram(vec![0, 1])));
    }

    #[test]
    fn bad_supports_rejected() {
        let d = random_dict(4, 4, 1);
        let y = TargetSignal::new(DVector::from_element(4, 1.0));
        assert!(least_squares_on_support(&d, &y, &[]).is_err());
        assert!(least_squares_on_support(&d, &y, &[1, 1]).is_err());
        assert!(least_squares_on_support(&d, &y, &[4]).is_err());
    }

    proptest! {
        #[test]
        fn projection_monotone_and_recomputable(seed in 0u64..10_000, extra in 1usize..4) {
            let d = random_dict(12, 9, seed);
            let mut s = RngSeed(seed).derive(&[1]).stream();
            let y = TargetSignal::new(DVector::from_fn(12, |_, _| s.normal()));
            let big = s.subset(9, 2 + extra);
            let small = &big[..2];
            let a = least_squares_on_support(&d, &y, small).unwrap();
            let b = least_squares_on_support(&d, &y, &big).unwrap();
            prop_assert!(a.residual_sq >= b.residual_sq - 1e-9);
            for sol in [&a, &b] {
                let direct = sol.recompute_residual_sq(&d, &y);
                prop_assert!((direct - sol.residual_sq).abs() <= 1e-8 * direct.max(1e-12));
            }
            let mu = mutual_coherence(&d);
            prop_assert!((0.0..=1.0 + 1e-10).contains(&mu));
        }
    }
}

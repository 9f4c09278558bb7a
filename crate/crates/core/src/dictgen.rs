//! Seeded generators: orthonormal and coherence-tuned dictionaries, planted
//! sparse targets, and a redundant-feature classification dataset.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::{mutual_coherence, TargetSignal, UnitDictionary};
use crate::error::{Error, Result};
use crate::rng::{RngSeed, Stream};

const BISECT_ITERS: usize = 60;

fn gaussian_matrix(rows: usize, cols: usize, stream: &mut Stream) -> DMatrix<f64> {
    // column-major fill so the draw order is explicit
    let mut m = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = stream.normal();
        }
    }
    m
}

/// Modified Gram-Schmidt, applied twice for orthogonality to rounding level.
fn orthonormalize(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        for _ in 0..2 {
            for p in 0..j {
                let proj = m.column(p).dot(&m.column(j));
                let qp = m.column(p).into_owned();
                m.column_mut(j).axpy(-proj, &qp, 1.0);
            }
        }
        let n = m.column(j).norm();
        m.column_mut(j).scale_mut(1.0 / n);
    }
}

/// `N` orthonormal columns in `R^d` from Gram-Schmidt on i.i.d. normal columns.
pub fn random_orthonormal_dictionary(d: usize, n: usize, seed: RngSeed) -> Result<UnitDictionary> {
    if n < 2 || n > d {
        return Err(Error::InvalidShape(format!("need 2 <= N <= d, got N={n}, d={d}")));
    }
    let mut stream = seed.stream();
    let mut m = gaussian_matrix(d, n, &mut stream);
    orthonormalize(&mut m);
    UnitDictionary::new(m)
}

/// One-parameter family `e_i(t) = normalize((1−t)·q_i + t·u)` blending an
/// orthonormal set toward a shared unit direction.
///
/// Signs of the `q_i` are flipped so every `⟨q_i, u⟩ ≥ 0`; with that, each
/// pairwise inner product is nonnegative and coherence grows from 0 at `t = 0`
/// toward 1 as `t → 1`.
#[derive(Debug, Clone)]
pub struct CoherenceBlend {
    basis: DMatrix<f64>,
    shared: DVector<f64>,
    proj: Vec<f64>,
}

impl CoherenceBlend {
    pub fn new(d: usize, n: usize, seed: RngSeed) -> Result<Self> {
        let q = random_orthonormal_dictionary(d, n, seed.derive(&[0]))?;
        let mut basis = q.matrix().clone();
        let mut stream = seed.derive(&[1]).stream();
        let mut shared = DVector::from_fn(d, |_, _| stream.normal());
        shared /= shared.norm();
        let mut proj = Vec::with_capacity(n);
        for j in 0..n {
            let mut p = basis.column(j).dot(&shared);
            if p < 0.0 {
                basis.column_mut(j).neg_mut();
                p = -p;
            }
            proj.push(p);
        }
        Ok(Self { basis, shared, proj })
    }

    fn norm_sq(&self, i: usize, t: f64) -> f64 {
        let s = 1.0 - t;
        s * s + 2.0 * s * t * self.proj[i] + t * t
    }

    /// Coherence of the blended dictionary, from the projections alone.
    pub fn coherence(&self, t: f64) -> f64 {
        let s = 1.0 - t;
        let n = self.proj.len();
        let norms: Vec<f64> = (0..n).map(|i| self.norm_sq(i, t).sqrt()).collect();
        let mut mu = 0.0_f64;
        for j in 0..n {
            for i in 0..j {
                let num = s * t * (self.proj[i] + self.proj[j]) + t * t;
                mu = mu.max(num.abs() / (norms[i] * norms[j]));
            }
        }
        mu
    }

    pub fn dictionary(&self, t: f64) -> Result<UnitDictionary> {
        let mut m = self.basis.scale(1.0 - t);
        for mut col in m.column_iter_mut() {
            col.axpy(t, &self.shared, 1.0);
            let n = col.norm();
            col /= n;
        }
        UnitDictionary::new(m)
    }
}

/// Dictionary whose mutual coherence lands in `[target_mu − tol, target_mu + tol]`.
///
/// Bisects the blend parameter of [`CoherenceBlend`] and checks the result
/// with [`mutual_coherence`] on the assembled matrix.
pub fn coherent_dictionary(d: usize, n: usize, target_mu: f64, tol: f64, seed: RngSeed) -> Result<UnitDictionary> {
    if !(0.0..1.0).contains(&target_mu) || !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("target_mu must lie in [0, 1) and tol > 0, got {target_mu}, {tol}")));
    }
    let blend = CoherenceBlend::new(d, n, seed)?;
    let accept = |mu: f64| (mu - target_mu).abs() <= tol;

    let t = if accept(blend.coherence(0.0)) {
        0.0
    } else {
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let mut found = None;
        for _ in 0..BISECT_ITERS {
            let mid = 0.5 * (lo + hi);
            let mu = blend.coherence(mid);
            if (mu - target_mu).abs() <= 0.5 * tol {
                found = Some(mid);
                break;
            }
            if mu < target_mu {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        found.ok_or(Error::Unreachable(target_mu))?
    };
    let dict = blend.dictionary(t)?;
    if !accept(mutual_coherence(&dict)) {
        return Err(Error::Unreachable(target_mu));
    }
    Ok(dict)
}

/// Distribution of planted coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CoefficientLaw {
    /// ±1 with equal probability: equal magnitudes, the hardest case for
    /// one-shot Top-k.
    #[default]
    Rademacher,
    /// Random sign times a magnitude uniform on `[lo, hi]`.
    UniformMagnitude { lo: f64, hi: f64 },
}

/// Exactly `k`-sparse target on a uniform random support with Rademacher weights.
pub fn planted_signal(dict: &UnitDictionary, k: usize, seed: RngSeed) -> Result<TargetSignal> {
    planted_signal_with(dict, k, CoefficientLaw::Rademacher, seed)
}

pub fn planted_signal_with(
    dict: &UnitDictionary,
    k: usize,
    law: CoefficientLaw,
    seed: RngSeed,
) -> Result<TargetSignal> {
    if k == 0 || k > dict.atoms() {
        return Err(Error::InvalidK { k, n: dict.atoms() });
    }
    let mut stream = seed.stream();
    let support = stream.subset(dict.atoms(), k);
    let coeffs: Vec<f64> = (0..k)
        .map(|_| match law {
            CoefficientLaw::Rademacher => stream.sign(),
            CoefficientLaw::UniformMagnitude { lo, hi } => {
                let sign = stream.sign();
                sign * (lo + (hi - lo) * stream.uniform())
            }
        })
        .collect();
    Ok(TargetSignal::planted(dict, &support, &coeffs))
}

/// Parameters of the redundant-feature classification data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub samples: usize,
    pub features: usize,
    pub informative: usize,
    pub classes: usize,
    pub class_sep: f64,
    pub seed: RngSeed,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { samples: 4000, features: 100, informative: 10, classes: 10, class_sep: 0.6, seed: RngSeed(42) }
    }
}

/// Labelled samples whose trailing columns are exact linear mixtures of the
/// leading informative columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationDataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub n_informative: usize,
    pub classes: usize,
    pub mixing: DMatrix<f64>,
}

/// Class centroids `μ_c ~ N(0, class_sep²·I)` in the informative block, unit
/// Gaussian noise per sample, and a redundant block `X_inf · A` with
/// `A_ij ~ N(0, 1/D_inf)`. Labels are dealt round-robin and then shuffled.
pub fn synthetic_classification(cfg: &SyntheticConfig) -> Result<ClassificationDataset> {
    let SyntheticConfig { samples: m, features: d, informative: d_inf, classes: c, class_sep, seed } = *cfg;
    if m == 0 || d == 0 || d_inf == 0 || c < 2 || d_inf > d || m < c {
        return Err(Error::InvalidConfig(format!(
            "need M >= C >= 2 and 1 <= D_inf <= D, got M={m}, D={d}, D_inf={d_inf}, C={c}"
        )));
    }
    if !(class_sep >= 0.0) || !class_sep.is_finite() {
        return Err(Error::InvalidConfig(format!("class_sep must be finite and >= 0, got {class_sep}")));
    }

    let mut s = seed.derive(&[0]).stream();
    let centroids = gaussian_matrix(c, d_inf, &mut s) * class_sep;

    let mut labels: Vec<usize> = (0..m).map(|i| i % c).collect();
    seed.derive(&[1]).stream().shuffle(&mut labels);

    let mut s = seed.derive(&[2]).stream();
    let mut x_inf = DMatrix::zeros(m, d_inf);
    for (i, &label) in labels.iter().enumerate() {
        for j in 0..d_inf {
            x_inf[(i, j)] = centroids[(label, j)] + s.normal();
        }
    }

    let d_red = d - d_inf;
    let mut s = seed.derive(&[3]).stream();
    let mixing = gaussian_matrix(d_inf, d_red, &mut s) / (d_inf as f64).sqrt();
    let x_red = &x_inf * &mixing;

    let mut features = DMatrix::zeros(m, d);
    features.columns_mut(0, d_inf).copy_from(&x_inf);
    features.columns_mut(d_inf, d_red).copy_from(&x_red);
    Ok(ClassificationDataset { features, labels, n_informative: d_inf, classes: c, mixing })
}

impl ClassificationDataset {
    pub fn samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// `label,f0,...,f{D-1}` header, one row per sample, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = String::from("label");
        for j in 0..self.dim() {
            header.push_str(&format!(",f{j}"));
        }
        writeln!(out, "{header}")?;
        for (i, label) in self.labels.iter().enumerate() {
            let mut line = label.to_string();
            for j in 0..self.dim() {
                line.push_str(&format!(",{:.16e}", self.features[(i, j)]));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Labels and feature matrix read back from [`ClassificationDataset::write_csv`].
pub fn read_dataset_csv<R: BufRead>(input: R) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let bad = |msg: String| Error::InvalidConfig(format!("dataset csv: {msg}"));
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| bad("empty input".into()))?.map_err(|e| bad(e.to_string()))?;
    let cols = header.split(',').count();
    if cols < 2 || !header.starts_with("label,f0") {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (row, line) in lines.enumerate() {
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label = fields.next().unwrap_or_default();
        labels.push(label.parse::<usize>().map_err(|e| bad(format!("row {row}: {e}")))?);
        let before = values.len();
        for f in fields {
            values.push(f.parse::<f64>().map_err(|e| bad(format!("row {row}: {e}")))?);
        }
        if values.len() - before != cols - 1 {
            return Err(bad(format!("row {row} has the wrong number of fields")));
        }
    }
    let features = DMatrix::from_row_slice(labels.len(), cols - 1, &values);
    Ok((labels, features))
}

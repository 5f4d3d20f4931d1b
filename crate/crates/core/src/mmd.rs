//! Kernel evaluations and the biased squared-MMD estimator.
//!
//! The estimator is the three-sum expansion
//!
//! ```text
//! MMD²(X, Y) = 1/n_x² Σ k(x_i, x_j) + 1/n_y² Σ k(y_i, y_j) − 2/(n_x n_y) Σ k(x_i, y_j)
//! ```
//!
//! with the diagonal terms included (V-statistic). All sums run in a fixed
//! order so results are reproducible bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set of equal-length real vectors stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorBatch {
    dim: usize,
    data: Vec<f64>,
}

impl VectorBatch {
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyBatch)?;
        let mut batch = Self::with_dim(first.as_ref().len());
        for row in rows {
            batch.push(row.as_ref())?;
        }
        Ok(batch)
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Column-wise mean of the rows.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for row in self.rows() {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let n = self.len().max(1) as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

/// Kernel family used by the MMD estimator.
///
/// A Gaussian kernel without an explicit `sigma` resolves its bandwidth per
/// call with [`median_heuristic`] over the two batches being compared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    Linear,
    #[serde(alias = "polynomial")]
    Polynomial2 {
        #[serde(default = "default_offset")]
        offset: f64,
    },
    Gaussian {
        #[serde(default)]
        sigma: Option<f64>,
    },
}

fn default_offset() -> f64 {
    1.0
}

impl KernelSpec {
    pub const fn polynomial() -> Self {
        KernelSpec::Polynomial2 { offset: 1.0 }
    }

    pub const fn gaussian_median() -> Self {
        KernelSpec::Gaussian { sigma: None }
    }

    /// Short family name as used in grid CSVs.
    pub fn family_name(&self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::Polynomial2 { .. } => "polynomial",
            KernelSpec::Gaussian { .. } => "gaussian",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Polynomial2 { offset } if !(offset >= 0.0) => Err(Error::InvalidConfig(
                format!("polynomial offset must be >= 0, got {offset}"),
            )),
            KernelSpec::Gaussian { sigma: Some(s) } if !(s > 0.0 && s.is_finite()) => Err(
                Error::InvalidConfig(format!("gaussian sigma must be > 0, got {s}")),
            ),
            _ => Ok(()),
        }
    }

    /// Replace a median-heuristic bandwidth with a concrete value for `x`, `y`.
    pub fn resolve(&self, x: &VectorBatch, y: &VectorBatch) -> Result<KernelSpec> {
        self.validate()?;
        match self {
            KernelSpec::Gaussian { sigma: None } => Ok(KernelSpec::Gaussian {
                sigma: Some(median_heuristic(x, y)?),
            }),
            other => Ok(*other),
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

/// Evaluates `k(x, y)`. Gaussian kernels must carry an explicit sigma.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    spec.validate()?;
    let k = Kernel::from_spec(spec)?;
    Ok(k.eval(x, y))
}

/// Resolved kernel with precomputed constants.
#[derive(Debug, Clone, Copy)]
enum Kernel {
    Linear,
    Poly(f64),
    Gauss { inv_two_sigma_sq: f64 },
}

impl Kernel {
    fn from_spec(spec: &KernelSpec) -> Result<Self> {
        Ok(match *spec {
            KernelSpec::Linear => Kernel::Linear,
            KernelSpec::Polynomial2 { offset } => Kernel::Poly(offset),
            KernelSpec::Gaussian { sigma: Some(s) } => Kernel::Gauss {
                inv_two_sigma_sq: 1.0 / (2.0 * s * s),
            },
            KernelSpec::Gaussian { sigma: None } => {
                return Err(Error::InvalidConfig(
                    "gaussian bandwidth must be resolved before evaluation".into(),
                ))
            }
        })
    }

    #[inline]
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => dot(x, y),
            Kernel::Poly(c) => {
                let t = dot(x, y) + c;
                t * t
            }
            Kernel::Gauss { inv_two_sigma_sq } => (-sq_dist(x, y) * inv_two_sigma_sq).exp(),
        }
    }
}

/// Σ_{i,j} k(a_i, a_j) using symmetry; summation order is fixed.
fn self_sum(k: &Kernel, a: &VectorBatch) -> f64 {
    let n = a.len();
    let mut diag = 0.0;
    let mut off = 0.0;
    for i in 0..n {
        let ai = a.row(i);
        diag += k.eval(ai, ai);
        let mut acc = 0.0;
        for j in (i + 1)..n {
            acc += k.eval(ai, a.row(j));
        }
        off += acc;
    }
    diag + 2.0 * off
}

/// Σ_{i,j} k(a_i, b_j), summed both row-major and column-major and averaged
/// so swapping the arguments yields a bit-identical result.
fn cross_sum(k: &Kernel, a: &VectorBatch, b: &VectorBatch) -> f64 {
    let (na, nb) = (a.len(), b.len());
    let mut block = Vec::with_capacity(na * nb);
    for ai in a.rows() {
        for bj in b.rows() {
            block.push(k.eval(ai, bj));
        }
    }
    let mut by_rows = 0.0;
    for row in block.chunks_exact(nb) {
        by_rows += row.iter().sum::<f64>();
    }
    let mut by_cols = 0.0;
    for j in 0..nb {
        let mut acc = 0.0;
        for i in 0..na {
            acc += block[i * nb + j];
        }
        by_cols += acc;
    }
    0.5 * (by_rows + by_cols)
}

fn check_pair(x: &VectorBatch, y: &VectorBatch) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    Ok(())
}

/// Biased squared-MMD between `x` and `y`.
pub fn mmd(x: &VectorBatch, y: &VectorBatch, spec: &KernelSpec) -> Result<f64> {
    check_pair(x, y)?;
    let resolved = spec.resolve(x, y)?;
    let k = Kernel::from_spec(&resolved)?;
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let xx = self_sum(&k, x) / (nx * nx);
    let yy = self_sum(&k, y) / (ny * ny);
    let xy = cross_sum(&k, x, y);
    Ok(xx + yy - 2.0 * xy / (nx * ny))
}

/// Gaussian squared-MMD with fixed `sigma` and its gradient with respect to
/// every row of `x` and `y` (row-major, same layout as the batches).
pub fn mmd_gaussian_with_grad(
    x: &VectorBatch,
    y: &VectorBatch,
    sigma: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_pair(x, y)?;
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma must be > 0, got {sigma}")));
    }
    let d = x.dim();
    let (nx, ny) = (x.len(), y.len());
    let (fx, fy) = (nx as f64, ny as f64);
    let inv_s2 = 1.0 / (sigma * sigma);
    let gauss = |a: &[f64], b: &[f64]| (-0.5 * sq_dist(a, b) * inv_s2).exp();

    let mut gx = vec![0.0; nx * d];
    let mut gy = vec![0.0; ny * d];
    let mut xx = 0.0;
    let mut yy = 0.0;
    let mut xy = 0.0;

    // d k(a,b)/da = -k (a - b) / sigma².
    for i in 0..nx {
        let xi = x.row(i);
        for j in 0..nx {
            let xj = x.row(j);
            let kv = gauss(xi, xj);
            xx += kv;
            // Both (i,j) and (j,i) terms contribute to row i; the loop visits
            // each ordered pair once, so scale by 2.
            let c = -2.0 * kv * inv_s2 / (fx * fx);
            for t in 0..d {
                gx[i * d + t] += c * (xi[t] - xj[t]);
            }
        }
        for j in 0..ny {
            let yj = y.row(j);
            let kv = gauss(xi, yj);
            xy += kv;
            let c = 2.0 * kv * inv_s2 / (fx * fy);
            for t in 0..d {
                let diff = xi[t] - yj[t];
                gx[i * d + t] += c * diff;
                gy[j * d + t] -= c * diff;
            }
        }
    }
    for i in 0..ny {
        let yi = y.row(i);
        for j in 0..ny {
            let yj = y.row(j);
            let kv = gauss(yi, yj);
            yy += kv;
            let c = -2.0 * kv * inv_s2 / (fy * fy);
            for t in 0..d {
                gy[i * d + t] += c * (yi[t] - yj[t]);
            }
        }
    }
    let value = xx / (fx * fx) + yy / (fy * fy) - 2.0 * xy / (fx * fy);
    Ok((value, gx, gy))
}

/// Median of the non-zero pairwise Euclidean distances over the pooled batch.
/// Falls back to 1 when every distance is zero.
pub fn median_heuristic(x: &VectorBatch, y: &VectorBatch) -> Result<f64> {
    if x.dim() != y.dim() && !x.is_empty() && !y.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    let pooled: Vec<&[f64]> = x.rows().chain(y.rows()).collect();
    if pooled.len() < 2 {
        return Err(Error::InsufficientPoints(pooled.len()));
    }
    let mut dists = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for (i, a) in pooled.iter().enumerate() {
        for b in &pooled[i + 1..] {
            let d2 = sq_dist(a, b);
            if d2 > 0.0 {
                dists.push(d2.sqrt());
            }
        }
    }
    if dists.is_empty() {
        return Ok(1.0);
    }
    Ok(median_in_place(&mut dists))
}

pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalars(v: &[f64]) -> VectorBatch {
        VectorBatch::from_flat(1, v.to_vec()).unwrap()
    }

    /// Full double loops over every ordered pair, written without the
    /// symmetry shortcut used by `mmd`.
    fn oracle(x: &[Vec<f64>], y: &[Vec<f64>], k: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
        let (nx, ny) = (x.len() as f64, y.len() as f64);
        let mut a = 0.0;
        for xi in x {
            for xj in x {
                a += k(xi, xj);
            }
        }
        let mut b = 0.0;
        for yi in y {
            for yj in y {
                b += k(yi, yj);
            }
        }
        let mut c = 0.0;
        for xi in x {
            for yj in y {
                c += k(xi, yj);
            }
        }
        a / (nx * nx) + b / (ny * ny) - 2.0 * c / (nx * ny)
    }

    #[test]
    fn gaussian_kernel_values() {
        let spec = KernelSpec::Gaussian { sigma: Some(0.7) };
        assert_eq!(kernel_eval(&spec, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        // ‖x − y‖² = 2σ²
        let s: f64 = 0.7;
        let v = kernel_eval(&spec, &[0.0], &[s * 2f64.sqrt()]).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-12);
        assert!((v - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn linear_and_poly_kernel_values() {
        assert_eq!(kernel_eval(&KernelSpec::Linear, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        let p = KernelSpec::polynomial();
        assert_eq!(kernel_eval(&p, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 144.0);
    }

    #[test]
    fn kernel_dimension_mismatch() {
        assert!(matches!(
            kernel_eval(&KernelSpec::Linear, &[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn unresolved_gaussian_rejected_by_kernel_eval() {
        assert!(kernel_eval(&KernelSpec::gaussian_median(), &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn invalid_kernel_params() {
        let bad = KernelSpec::Gaussian { sigma: Some(0.0) };
        assert!(bad.validate().is_err());
        let bad = KernelSpec::Polynomial2 { offset: -1.0 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mmd_examples() {
        let x = VectorBatch::from_rows(&[[2.0, 0.0]]).unwrap();
        let y = VectorBatch::from_rows(&[[0.0, 0.0]]).unwrap();
        assert!((mmd(&x, &y, &KernelSpec::Linear).unwrap() - 4.0).abs() < 1e-12);

        let s: f64 = 1.3;
        let spec = KernelSpec::Gaussian { sigma: Some(s) };
        let v = mmd(&scalars(&[0.0]), &scalars(&[s * 2f64.sqrt()]), &spec).unwrap();
        let expected = oracle(&[vec![0.0]], &[vec![s * 2f64.sqrt()]], |a, b| {
            (-(a[0] - b[0]).powi(2) / (2.0 * s * s)).exp()
        });
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 1.264241).abs() < 1e-6);
    }

    #[test]
    fn mmd_identical_batches_is_zero() {
        let x = VectorBatch::from_rows(&[[0.1, 0.4], [1.0, -2.0], [3.0, 0.5]]).unwrap();
        for spec in [KernelSpec::Linear, KernelSpec::polynomial(), KernelSpec::gaussian_median()] {
            assert!(mmd(&x, &x, &spec).unwrap().abs() <= 1e-9);
        }
    }

    #[test]
    fn mmd_errors() {
        let x = VectorBatch::with_dim(2);
        let y = VectorBatch::from_rows(&[[0.0, 0.0]]).unwrap();
        assert!(matches!(mmd(&x, &y, &KernelSpec::Linear), Err(Error::EmptyBatch)));
        let z = VectorBatch::from_rows(&[[0.0]]).unwrap();
        assert!(matches!(
            mmd(&y, &z, &KernelSpec::Linear),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn median_heuristic_examples() {
        assert_eq!(median_heuristic(&scalars(&[0.0, 1.0]), &scalars(&[3.0])).unwrap(), 2.0);
        assert_eq!(median_heuristic(&scalars(&[2.0, 2.0]), &scalars(&[2.0])).unwrap(), 1.0);
        assert_eq!(median_heuristic(&scalars(&[0.0]), &scalars(&[5.0])).unwrap(), 5.0);
        assert!(matches!(
            median_heuristic(&scalars(&[0.0]), &VectorBatch::with_dim(1)),
            Err(Error::InsufficientPoints(1))
        ));
    }

    #[test]
    fn median_even_count() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(median_in_place(&mut v), 2.5);
    }

    #[test]
    fn gaussian_gradient_matches_finite_differences() {
        let x = VectorBatch::from_rows(&[[0.1, 0.4], [1.0, -0.2], [0.3, 0.5]]).unwrap();
        let y = VectorBatch::from_rows(&[[0.9, 0.1], [-0.4, 0.8]]).unwrap();
        let sigma = 0.8;
        let spec = KernelSpec::Gaussian { sigma: Some(sigma) };
        let (value, gx, gy) = mmd_gaussian_with_grad(&x, &y, sigma).unwrap();
        assert!((value - mmd(&x, &y, &spec).unwrap()).abs() < 1e-12);
        let h = 1e-6;
        for (which, grad) in [(0, &gx), (1, &gy)] {
            for idx in 0..grad.len() {
                let bump = |delta: f64| {
                    let (mut a, mut b) = (x.as_flat().to_vec(), y.as_flat().to_vec());
                    if which == 0 {
                        a[idx] += delta;
                    } else {
                        b[idx] += delta;
                    }
                    let a = VectorBatch::from_flat(2, a).unwrap();
                    let b = VectorBatch::from_flat(2, b).unwrap();
                    mmd(&a, &b, &spec).unwrap()
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                assert!((fd - grad[idx]).abs() < 1e-7, "{which}/{idx}: {fd} vs {}", grad[idx]);
            }
        }
    }

    fn batch_strategy(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), 1..12)
    }

    proptest! {
        #[test]
        fn mmd_symmetric_and_matches_oracle(
            (x, y) in (1usize..5).prop_flat_map(|d| (batch_strategy(d), batch_strategy(d)))
        ) {
            let bx = VectorBatch::from_rows(&x).unwrap();
            let by = VectorBatch::from_rows(&y).unwrap();
            let sigma = median_heuristic(&bx, &by).unwrap();
            let specs = [
                KernelSpec::Linear,
                KernelSpec::polynomial(),
                KernelSpec::Gaussian { sigma: Some(sigma) },
            ];
            for spec in specs {
                let xy = mmd(&bx, &by, &spec).unwrap();
                let yx = mmd(&by, &bx, &spec).unwrap();
                prop_assert_eq!(xy, yx);
                let want = oracle(&x, &y, |a, b| kernel_eval(&spec, a, b).unwrap());
                prop_assert!((xy - want).abs() <= 1e-9 * want.abs().max(1.0));
                prop_assert!(xy >= -1e-9);
            }
            let g = mmd(&bx, &by, &KernelSpec::gaussian_median()).unwrap();
            prop_assert!((-1e-9..=2.0 + 1e-9).contains(&g));
        }

        #[test]
        fn linear_mmd_is_mean_difference(
            (x, y) in (1usize..5).prop_flat_map(|d| (batch_strategy(d), batch_strategy(d)))
        ) {
            let bx = VectorBatch::from_rows(&x).unwrap();
            let by = VectorBatch::from_rows(&y).unwrap();
            let v = mmd(&bx, &by, &KernelSpec::Linear).unwrap();
            let want = sq_dist(&bx.mean(), &by.mean());
            prop_assert!((v - want).abs() <= 1e-9);
        }

        #[test]
        fn mmd_row_permutation_invariant(x in batch_strategy(3), y in batch_strategy(3), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut xp = x.clone();
            xp.shuffle(&mut rng);
            let bx = VectorBatch::from_rows(&x).unwrap();
            let bxp = VectorBatch::from_rows(&xp).unwrap();
            let by = VectorBatch::from_rows(&y).unwrap();
            for spec in [KernelSpec::Linear, KernelSpec::polynomial(), KernelSpec::gaussian_median()] {
                let a = mmd(&bx, &by, &spec).unwrap();
                let b = mmd(&bxp, &by, &spec).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}

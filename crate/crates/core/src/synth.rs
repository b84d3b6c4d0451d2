//! Seeded synthetic data: covariates uniform on the unit ball, Gaussian or
//! Poisson responses, and the fixed true parameters of the two experiment
//! suites.
//!
//! All randomness comes from ChaCha8 seeded with a 64-bit seed. Independent
//! quantities generated from one seed use distinct ChaCha streams (see
//! [`Stream`]), so the training covariates, the responses and the held-out
//! test covariates of a trial never share random numbers.

use crate::basis::BasisSet;
use crate::data::{Covariates, Dataset, DatasetMeta};
use crate::error::{GaimError, Result};
use crate::links::{Family, LinkSpec};
use crate::model::{predict_eta, ModelParams};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

/// ChaCha stream used for each generated quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Covariates = 0,
    Responses = 1,
    TestCovariates = 2,
}

/// Generator for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Means below this are sampled by inversion.
pub const POISSON_INVERSION_LIMIT: f64 = 10.0;

/// Largest admissible single Poisson draw.
pub const POISSON_DRAW_CAP: f64 = 1e6;

/// Known generating parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub label: String,
    pub params: ModelParams,
}

impl Truth {
    pub fn alpha_star(&self) -> &DMatrix<f64> {
        &self.params.alpha
    }

    pub fn beta_star(&self) -> &DMatrix<f64> {
        &self.params.beta
    }

    /// `f*(x)` on the linear-predictor scale.
    pub fn f_star(&self, basis: &BasisSet, x: &[f64]) -> Result<f64> {
        predict_eta(&self.params, basis, x)
    }
}

/// The `d = 4, m = 2, K = 3` truth of the link-function study.
pub fn truth_table1() -> Truth {
    let h = 0.5;
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    let r3 = 1.0 / 3f64.sqrt();
    let alpha = DMatrix::from_column_slice(4, 2, &[h, h, h, h, r2, r2, 0.0, 0.0]);
    let beta = DMatrix::from_row_slice(2, 3, &[r3, r3, r3, r2, -0.5, 0.5]);
    Truth {
        label: "table1".into(),
        params: ModelParams::new(alpha, beta).expect("fixed truth is valid"),
    }
}

/// Block-sparse truth of the baseline comparison, with `K = 3`.
///
/// Column `j` of `alpha*` equals `sqrt(m/d)` on the `j`-th block of `d/m`
/// consecutive coordinates and zero elsewhere.
///
/// Row `j` of `beta*` has magnitudes `2^{-k}` for `k = 0, 1, 2` (geometric
/// decay with ratio 1/2); the sign of entry `k` is negative exactly when bit
/// `k` of `j mod 8` is set. Each row is then scaled to unit norm. Rows
/// `0..8` therefore carry eight distinct sign patterns, and later rows cycle
/// through them again.
pub fn truth_table2(d: usize, m: usize) -> Result<Truth> {
    truth_block_sparse(d, m, 3)
}

/// [`truth_table2`] with an arbitrary basis size `k`.
pub fn truth_block_sparse(d: usize, m: usize, k: usize) -> Result<Truth> {
    if m == 0 || d == 0 || d % m != 0 || k == 0 {
        return Err(GaimError::InvalidArgument(format!(
            "block-sparse truth needs m to divide d (d={d}, m={m}) and K >= 1"
        )));
    }
    let block = d / m;
    let value = (m as f64 / d as f64).sqrt();
    let alpha = DMatrix::from_fn(d, m, |i, j| if i / block == j { value } else { 0.0 });
    let patterns = 1usize << k.min(usize::BITS as usize - 1);
    let mut beta = DMatrix::from_fn(m, k, |j, kk| {
        let sign = if (j % patterns) >> kk & 1 == 1 { -1.0 } else { 1.0 };
        sign * 0.5f64.powi(kk as i32)
    });
    for mut row in beta.row_iter_mut() {
        let norm = row.norm();
        row /= norm;
    }
    Ok(Truth {
        label: format!("block-sparse(d={d},m={m})"),
        params: ModelParams::new(alpha, beta)?,
    })
}

/// Noise variances of the baseline comparison presets.
pub const TABLE2_PRESETS: [(usize, usize, f64); 3] = [(4, 2, 0.125), (20, 5, 0.0625), (50, 10, 0.05)];

/// Gaussian noise variance for `(d, m)`: the preset value, else `m / (4 d)`.
pub fn table2_noise_variance(d: usize, m: usize) -> f64 {
    TABLE2_PRESETS
        .iter()
        .find(|p| p.0 == d && p.1 == m)
        .map_or(0.25 * m as f64 / d as f64, |p| p.2)
}

/// `n` i.i.d. points uniform on the unit ball of `R^d` (stream [`Stream::Covariates`]).
pub fn sample_unit_ball(n: usize, d: usize, seed: u64) -> Result<Covariates> {
    sample_unit_ball_stream(n, d, seed, Stream::Covariates)
}

/// Uniform unit-ball sample drawn from the given stream: direction from a
/// normalized standard Gaussian vector, radius `U^{1/d}`.
pub fn sample_unit_ball_stream(n: usize, d: usize, seed: u64, stream: Stream) -> Result<Covariates> {
    if n == 0 || d == 0 {
        return Err(GaimError::InvalidArgument("unit-ball sample needs n, d >= 1".into()));
    }
    let mut rng = rng_for(seed, stream);
    let mut values = Vec::with_capacity(n * d);
    let mut z = vec![0.0; d];
    for _ in 0..n {
        let norm = loop {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                break norm;
            }
        };
        let u: f64 = rng.random();
        let radius = u.powf(1.0 / d as f64);
        values.extend(z.iter().map(|v| v / norm * radius));
    }
    Covariates::from_row_major(n, d, values)
}

/// One Poisson draw: inversion below [`POISSON_INVERSION_LIMIT`], otherwise
/// the `rand_distr` sampler.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> Result<f64> {
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(GaimError::InvalidArgument(format!("Poisson mean {mean} is not positive")));
    }
    let draw = if mean < POISSON_INVERSION_LIMIT {
        let u: f64 = rng.random();
        let mut k = 0.0;
        let mut p = (-mean).exp();
        let mut cdf = p;
        while u > cdf && p > 0.0 && k < POISSON_DRAW_CAP {
            k += 1.0;
            p *= mean / k;
            cdf += p;
        }
        k
    } else {
        Poisson::new(mean)
            .map_err(|e| GaimError::InvalidArgument(e.to_string()))?
            .sample(rng)
    };
    if draw >= POISSON_DRAW_CAP {
        return Err(GaimError::RunawayPoisson { mean });
    }
    Ok(draw)
}

/// Responses `y_i ~ family(mean = g^{-1}(f*(x_i)))` from stream [`Stream::Responses`].
///
/// `noise_variance` is used by the Gaussian family only.
pub fn sample_responses(
    family: Family,
    link: &LinkSpec,
    truth: &Truth,
    basis: &BasisSet,
    x: &Covariates,
    noise_variance: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if family == Family::Gaussian && !(noise_variance >= 0.0) {
        return Err(GaimError::InvalidArgument("noise variance must be >= 0".into()));
    }
    let sd = noise_variance.sqrt();
    let mut rng = rng_for(seed, Stream::Responses);
    x.rows()
        .map(|row| {
            let mean = link.inv_link(truth.f_star(basis, row)?);
            match family {
                Family::Gaussian => {
                    let z: f64 = rng.sample(StandardNormal);
                    Ok(mean + sd * z)
                }
                Family::Poisson => sample_poisson(&mut rng, mean),
            }
        })
        .collect()
}

/// Everything needed to generate one synthetic dataset.
#[derive(Debug, Clone)]
pub struct DataSpec<'a> {
    pub n: usize,
    pub family: Family,
    pub link: LinkSpec,
    pub truth: &'a Truth,
    pub basis: &'a BasisSet,
    pub noise_variance: f64,
}

/// Covariates and responses for one seed.
pub fn generate(spec: &DataSpec<'_>, seed: u64) -> Result<Dataset> {
    let x = sample_unit_ball(spec.n, spec.truth.params.dim(), seed)?;
    let y = sample_responses(
        spec.family,
        &spec.link,
        spec.truth,
        spec.basis,
        &x,
        spec.noise_variance,
        seed,
    )?;
    let mut ds = Dataset::new(x, y, seed)?;
    ds.meta = DatasetMeta {
        family: Some(spec.family),
        link: Some(spec.link.kind),
        truth: Some(spec.truth.label.clone()),
    };
    Ok(ds)
}

/// Held-out covariates for function-error evaluation (stream [`Stream::TestCovariates`]).
pub fn test_covariates(n: usize, d: usize, seed: u64) -> Result<Covariates> {
    sample_unit_ball_stream(n, d, seed, Stream::TestCovariates)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_lie_in_the_unit_ball() {
        let x = sample_unit_ball(2000, 7, 3).unwrap();
        assert!(x.rows().all(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1.0 + 1e-12));
    }

    #[test]
    fn mean_radius_d1() {
        let x = sample_unit_ball(1_000_000, 1, 1).unwrap();
        let mean = x.as_slice().iter().map(|v| v.abs()).sum::<f64>() / 1e6;
        assert!((mean - 0.5).abs() < 0.002, "{mean}");
    }

    #[test]
    fn mean_radius_d3() {
        // E||x|| = d / (d + 1) for the uniform ball.
        let x = sample_unit_ball(1_000_000, 3, 2).unwrap();
        let mean = x
            .rows()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / 1e6;
        assert!((mean - 0.75).abs() < 0.002, "{mean}");
    }

    #[test]
    fn seeds_are_deterministic_and_streams_differ() {
        let a = sample_unit_ball(100, 4, 9).unwrap();
        assert_eq!(a, sample_unit_ball(100, 4, 9).unwrap());
        assert_ne!(a, sample_unit_ball(100, 4, 10).unwrap());
        assert_ne!(a, test_covariates(100, 4, 9).unwrap());
    }

    #[test]
    fn table1_truth_values() {
        let t = truth_table1();
        assert!((t.alpha_star().column(0).norm() - 1.0).abs() < 1e-15);
        let r2 = 1.0 / 2f64.sqrt();
        for (got, want) in t.beta_star().row(1).iter().zip([r2, -0.5, 0.5]) {
            assert!((got - want).abs() < 1e-15);
        }
        let b = BasisSet::shifted_legendre(3).unwrap();
        assert_eq!(t.f_star(&b, &[0.0; 4]).unwrap(), 0.0);
    }

    #[test]
    fn table2_truth_structure() {
        let t = truth_table2(4, 2).unwrap();
        let r2 = std::f64::consts::FRAC_1_SQRT_2;
        let want = DMatrix::from_column_slice(4, 2, &[r2, r2, 0.0, 0.0, 0.0, 0.0, r2, r2]);
        assert!((t.alpha_star() - want).amax() < 1e-15);
        for (d, m, _) in TABLE2_PRESETS {
            let t = truth_table2(d, m).unwrap();
            let gram = t.alpha_star().transpose() * t.alpha_star();
            assert!((gram - DMatrix::<f64>::identity(m, m)).amax() < 1e-12);
            for row in t.beta_star().row_iter() {
                assert!((row.norm() - 1.0).abs() < 1e-12);
            }
        }
        let t = truth_table2(20, 5).unwrap();
        for a in 0..5 {
            for b in 0..a {
                assert_ne!(t.beta_star().row(a), t.beta_star().row(b));
            }
        }
        assert!(truth_table2(10, 3).is_err());
    }

    #[test]
    fn preset_variances() {
        assert_eq!(table2_noise_variance(4, 2), 0.125);
        assert_eq!(table2_noise_variance(20, 5), 0.0625);
        assert_eq!(table2_noise_variance(50, 10), 0.05);
        assert_eq!(table2_noise_variance(8, 2), 0.0625);
    }

    #[test]
    fn noiseless_gaussian_responses_equal_mean() {
        let t = truth_table1();
        let b = BasisSet::shifted_legendre(3).unwrap();
        let x = sample_unit_ball(50, 4, 1).unwrap();
        let y = sample_responses(Family::Gaussian, &LinkSpec::identity(), &t, &b, &x, 0.0, 1).unwrap();
        for (row, yi) in x.rows().zip(&y) {
            assert_eq!(*yi, t.f_star(&b, row).unwrap());
        }
    }

    #[test]
    fn poisson_responses_at_origin_have_unit_mean() {
        let t = truth_table1();
        let b = BasisSet::shifted_legendre(3).unwrap();
        let x = Covariates::from_row_major(1_000_000, 4, vec![0.0; 4_000_000]).unwrap();
        let y = sample_responses(Family::Poisson, &LinkSpec::log(), &t, &b, &x, 0.0, 4).unwrap();
        let mean = y.iter().sum::<f64>() / 1e6;
        assert!((mean - 1.0).abs() < 0.005, "{mean}");
        assert!(y.iter().all(|v| *v >= 0.0 && v.fract() == 0.0));
    }

    #[test]
    fn poisson_sampler_moments() {
        let mut rng = rng_for(77, Stream::Responses);
        for mean in [0.5, 1.0, 5.0, 25.0] {
            let n = 1_000_000;
            let draws: Vec<f64> = (0..n).map(|_| sample_poisson(&mut rng, mean).unwrap()).collect();
            let m = draws.iter().sum::<f64>() / n as f64;
            let v = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se_mean = (mean / n as f64).sqrt();
            // Var of the sample variance for Poisson: (mu + 2 mu^2) / n approximately.
            let se_var = ((mean + 2.0 * mean * mean) / n as f64).sqrt();
            assert!((m - mean).abs() < 3.0 * se_mean, "mean {mean}: {m}");
            assert!((v - mean).abs() < 3.0 * se_var, "var {mean}: {v}");
        }
        assert!(sample_poisson(&mut rng, 0.0).is_err());
    }
}

//! Synthetic embedding pools with a planted, tunable gender signal.
//!
//! Attribute set A clusters around `u_a = e0`, set B around `u_b`, which
//! sits at a configurable angle from `u_a` in the `e0/e1` plane (orthogonal
//! by default). Two target classes are planted:
//!
//! * `male_coded` around `beta * u_a + (1 - beta) * u_n`
//! * `female_coded` around `beta * u_b + (1 - beta) * u_n`
//!
//! where `u_n = (u_a + u_b) / 2` is equidistant from both poles. Noise is
//! spherical Gaussian; in non-negative mode each coordinate is truncated at
//! zero so every cosine lands in `[0, 1]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::domain::{EmbeddingRecord, Family, GenderTag, Variant};
use crate::metrics::{cosine_similarity, derive_seed, iias, MetricError};
use crate::scalar::Scalar;

pub const ATTRIBUTE_CLASS: &str = "attribute";
pub const MALE_CODED: &str = "male_coded";
pub const FEMALE_CODED: &str = "female_coded";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("dimension must be >= 2, got {0}")]
    Dimension(usize),
    #[error("bias strength must be in [0, 1], got {0}")]
    Beta(f64),
    #[error("noise scale must be finite and >= 0, got {0}")]
    Sigma(f64),
    #[error("pole angle must be in (0, {max}] degrees, got {angle}")]
    Angle { angle: f64, max: f64 },
    #[error("{0} per gender must be >= 1")]
    EmptySet(&'static str),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub dim: usize,
    /// Bias strength in `[0, 1]`; 0 places targets equidistant from both poles.
    pub beta: f64,
    /// Per-coordinate noise standard deviation.
    pub sigma: f64,
    pub attributes_per_gender: usize,
    pub targets_per_gender: usize,
    pub seed: u64,
    pub non_negative: bool,
    /// Angle between the two attribute poles.
    pub pole_angle_degrees: f64,
    pub model: String,
    pub family: Family,
    pub variant: Variant,
    pub iteration: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            beta: 0.5,
            sigma: 0.1,
            attributes_per_gender: 10,
            targets_per_gender: 5,
            seed: 0,
            non_negative: true,
            pole_angle_degrees: 90.0,
            model: "synth".to_string(),
            family: Family::Cnn,
            variant: Variant::Biased,
            iteration: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.dim < 2 {
            return Err(SynthError::Dimension(self.dim));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(SynthError::Beta(self.beta));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(SynthError::Sigma(self.sigma));
        }
        // non-negative poles need an angle within the first quadrant
        let max = if self.non_negative { 90.0 } else { 179.0 };
        if !(self.pole_angle_degrees > 0.0 && self.pole_angle_degrees <= max) {
            return Err(SynthError::Angle {
                angle: self.pole_angle_degrees,
                max,
            });
        }
        if self.attributes_per_gender == 0 {
            return Err(SynthError::EmptySet("attributes"));
        }
        if self.targets_per_gender == 0 {
            return Err(SynthError::EmptySet("targets"));
        }
        Ok(())
    }

    pub fn pole_a(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        v[0] = 1.0;
        v
    }

    pub fn pole_b(&self) -> Vec<f64> {
        let theta = self.pole_angle_degrees.to_radians();
        let mut v = vec![0.0; self.dim];
        // exact axis for the default right angle
        if self.pole_angle_degrees == 90.0 {
            v[1] = 1.0;
        } else {
            v[0] = theta.cos();
            v[1] = theta.sin();
        }
        v
    }

    fn blend(&self, pole: &[f64]) -> Vec<f64> {
        let (a, b) = (self.pole_a(), self.pole_b());
        pole.iter()
            .zip(a.iter().zip(&b))
            .map(|(p, (x, y))| self.beta * p + (1.0 - self.beta) * (x + y) / 2.0)
            .collect()
    }

    /// Centre of the male-coded target class.
    pub fn male_target_direction(&self) -> Vec<f64> {
        self.blend(&self.pole_a())
    }

    pub fn female_target_direction(&self) -> Vec<f64> {
        self.blend(&self.pole_b())
    }
}

fn draw<R: rand::Rng>(rng: &mut R, center: &[f64], sigma: f64, non_negative: bool) -> Vec<f64> {
    loop {
        let v: Vec<f64> = center
            .iter()
            .map(|&c| {
                let z: f64 = StandardNormal.sample(rng);
                let x = c + sigma * z;
                if non_negative {
                    x.max(0.0)
                } else {
                    x
                }
            })
            .collect();
        if v.iter().any(|&x| x != 0.0) {
            return v;
        }
    }
}

/// Generates one embedding space: `attributes_per_gender` attribute records
/// per gender and `targets_per_gender` records per gender for each of the
/// two planted target classes. Deterministic in `config.seed`.
pub fn generate_pool<T: Scalar>(config: &SynthConfig) -> Result<Vec<EmbeddingRecord<T>>, SynthError> {
    config.validate()?;
    let sets: [(&str, Vec<f64>, usize); 3] = [
        (ATTRIBUTE_CLASS, Vec::new(), config.attributes_per_gender),
        (MALE_CODED, config.male_target_direction(), config.targets_per_gender),
        (
            FEMALE_CODED,
            config.female_target_direction(),
            config.targets_per_gender,
        ),
    ];
    let space = format!("{}-{}-{}", config.model, config.variant, config.iteration);

    let mut out = Vec::new();
    for (class, center, count) in &sets {
        for gender in GenderTag::ALL {
            let center = if *class == ATTRIBUTE_CLASS {
                match gender {
                    GenderTag::Man => config.pole_a(),
                    GenderTag::Woman => config.pole_b(),
                }
            } else {
                center.clone()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["synth", class, gender.as_str()]));
            for i in 0..*count {
                let v = draw(&mut rng, &center, config.sigma, config.non_negative);
                out.push(EmbeddingRecord {
                    id: format!("{space}-{class}-{gender}-{i:04}"),
                    vec: v.into_iter().map(T::lit).collect(),
                    gender,
                    class: class.to_string(),
                    masked: false,
                    model: config.model.clone(),
                    family: config.family,
                    variant: config.variant,
                    iteration: config.iteration,
                });
            }
        }
    }
    Ok(out)
}

/// IIAS of `class` against all attribute records of a generated pool.
pub fn measured_iias<T: Scalar>(pool: &[EmbeddingRecord<T>], class: &str) -> Result<T, MetricError> {
    let pick = |c: &str, g: Option<GenderTag>| -> Vec<&[T]> {
        pool.iter()
            .filter(|r| r.class == c && g.is_none_or(|g| r.gender == g))
            .map(|r| r.vec.as_slice())
            .collect()
    };
    iias(
        &pick(class, None),
        &pick(ATTRIBUTE_CLASS, Some(GenderTag::Man)),
        &pick(ATTRIBUTE_CLASS, Some(GenderTag::Woman)),
    )
}

/// Expected IIAS of the male-coded class. The female-coded class mirrors it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IiasEstimate {
    pub value: f64,
    /// `None` for the closed form; standard error of the mean otherwise.
    pub std_error: Option<f64>,
}

pub const MONTE_CARLO_REPLICATES: usize = 32;

/// Closed form `cos(t, u_a) - cos(t, u_b)` when noise-free, otherwise the
/// mean over [`MONTE_CARLO_REPLICATES`] independently seeded pools.
pub fn expected_iias(config: &SynthConfig) -> Result<IiasEstimate, SynthError> {
    config.validate()?;
    if config.sigma == 0.0 {
        let t = config.male_target_direction();
        let value = cosine_similarity(&t, &config.pole_a())? - cosine_similarity(&t, &config.pole_b())?;
        return Ok(IiasEstimate { value, std_error: None });
    }
    let mut values = Vec::with_capacity(MONTE_CARLO_REPLICATES);
    for i in 0..MONTE_CARLO_REPLICATES {
        let replicate = SynthConfig {
            seed: derive_seed(config.seed, &["monte-carlo", &i.to_string()]),
            ..config.clone()
        };
        let pool = generate_pool::<f64>(&replicate)?;
        values.push(measured_iias(&pool, MALE_CODED)?);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(IiasEstimate {
        value: mean,
        std_error: Some((var / n).sqrt()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn noiseless(beta: f64, dim: usize) -> SynthConfig {
        SynthConfig {
            dim,
            beta,
            sigma: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn full_bias_noise_free_is_one() {
        let cfg = noiseless(1.0, 4);
        let pool = generate_pool::<f64>(&cfg).unwrap();
        assert_eq!(measured_iias(&pool, MALE_CODED).unwrap(), 1.0);
        assert_eq!(measured_iias(&pool, FEMALE_CODED).unwrap(), -1.0);
        assert_eq!(expected_iias(&cfg).unwrap().value, 1.0);
    }

    #[test]
    fn zero_bias_noise_free_is_zero() {
        let cfg = noiseless(0.0, 3);
        let pool = generate_pool::<f64>(&cfg).unwrap();
        assert_relative_eq!(measured_iias(&pool, MALE_CODED).unwrap(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(expected_iias(&cfg).unwrap().value, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn half_bias_in_the_plane() {
        let cfg = noiseless(0.5, 2);
        assert_eq!(cfg.male_target_direction(), vec![0.75, 0.25]);
        let e = expected_iias(&cfg).unwrap();
        assert_relative_eq!(e.value, 0.5 / 0.625f64.sqrt(), epsilon = 1e-12);
        assert!(e.std_error.is_none());
    }

    #[test]
    fn deterministic_in_seed() {
        let cfg = SynthConfig {
            seed: 11,
            ..Default::default()
        };
        let a = generate_pool::<f64>(&cfg).unwrap();
        let b = generate_pool::<f64>(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_pool::<f64>(&SynthConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shape_and_tags() {
        let cfg = SynthConfig {
            attributes_per_gender: 4,
            targets_per_gender: 3,
            sigma: 0.5,
            ..Default::default()
        };
        let pool = generate_pool::<f32>(&cfg).unwrap();
        assert_eq!(pool.len(), 2 * 4 + 2 * 2 * 3);
        assert!(pool.iter().all(|r| r.dim() == 8 && !r.is_zero()));
        assert!(pool.iter().flat_map(|r| &r.vec).all(|&x| x >= 0.0));
    }

    #[test]
    fn config_errors() {
        let bad = |f: fn(&mut SynthConfig)| {
            let mut c = SynthConfig::default();
            f(&mut c);
            generate_pool::<f64>(&c).unwrap_err()
        };
        assert_eq!(bad(|c| c.dim = 1), SynthError::Dimension(1));
        assert_eq!(bad(|c| c.beta = 1.5), SynthError::Beta(1.5));
        assert_eq!(bad(|c| c.sigma = -1.0), SynthError::Sigma(-1.0));
        assert!(matches!(
            bad(|c| c.pole_angle_degrees = 120.0),
            SynthError::Angle { .. }
        ));
        assert_eq!(bad(|c| c.targets_per_gender = 0), SynthError::EmptySet("targets"));
    }

    #[test]
    fn monte_carlo_reports_standard_error() {
        let cfg = SynthConfig {
            beta: 1.0,
            sigma: 0.05,
            ..Default::default()
        };
        let e = expected_iias(&cfg).unwrap();
        let se = e.std_error.unwrap();
        assert!(se > 0.0 && se < 0.01, "{se}");
        assert!(e.value > 0.8 && e.value <= 1.0, "{}", e.value);
    }
}

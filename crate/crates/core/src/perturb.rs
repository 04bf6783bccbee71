//! Parameter-space perturbation of a trained model.
//!
//! Each ensemble member adds zero-mean Gaussian noise to every layer, with a
//! per-layer standard deviation of `lambda` times the spread of that layer's
//! own parameters (weights and biases flattened together). Noise streams are
//! keyed per (member, layer), so the ensemble regenerates bit-exactly from
//! the base model and its config.

use serde::{Deserialize, Serialize};

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{ClassifierModel, ForwardPass, NetworkParams};
use crate::seed::{derive_seed, rng_from_seed};

/// Ensemble size `B`, noise scale `lambda`, and the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub num_models: usize,
    pub noise_scale: f64,
    pub master_seed: u64,
}

impl PerturbConfig {
    pub fn new(num_models: usize, noise_scale: f64, master_seed: u64) -> Result<Self> {
        if num_models == 0 {
            return Err(Error::InvalidConfig("num_models must be >= 1".into()));
        }
        if !noise_scale.is_finite() || noise_scale < 0.0 {
            return Err(Error::InvalidConfig(
                "noise_scale must be finite and >= 0".into(),
            ));
        }
        Ok(Self {
            num_models,
            noise_scale,
            master_seed,
        })
    }
}

/// A base model plus its perturbed parameter copies.
#[derive(Debug, Clone)]
pub struct PerturbedEnsemble {
    base: ClassifierModel,
    members: Vec<NetworkParams>,
    config: PerturbConfig,
}

impl PerturbedEnsemble {
    pub(crate) fn assemble(
        base: ClassifierModel,
        members: Vec<NetworkParams>,
        config: PerturbConfig,
    ) -> Self {
        Self {
            base,
            members,
            config,
        }
    }

    pub fn base(&self) -> &ClassifierModel {
        &self.base
    }

    pub fn members(&self) -> &[NetworkParams] {
        &self.members
    }

    pub fn config(&self) -> &PerturbConfig {
        &self.config
    }

    /// Forward pass through member `i`.
    pub fn member_forward(&self, i: usize, x: &[f64]) -> Result<ForwardPass> {
        self.base.forward_with(&self.members[i], x)
    }
}

/// Noise standard deviation for one layer: `lambda` times the population
/// standard deviation (divisor n) of the flattened layer parameters.
pub fn layer_sigma(theta: &[f64], lambda: f64) -> Result<f64> {
    if theta.is_empty() {
        return Err(Error::EmptyInput("layer parameter vector"));
    }
    let n = theta.len() as f64;
    let mean = theta.iter().sum::<f64>() / n;
    let var = theta.iter().map(|&t| (t - mean) * (t - mean)).sum::<f64>() / n;
    Ok(lambda * var.sqrt())
}

/// I.i.d. draws from N(0, sigma^2), deterministic per stream seed.
pub fn sample_layer_noise(length: usize, sigma: f64, stream_seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(stream_seed);
    (0..length)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * sigma
        })
        .collect()
}

/// Builds the perturbed ensemble. The base model is left untouched; each
/// member is base + per-layer noise with its own derived stream seed.
pub fn make_ensemble(model: &ClassifierModel, config: &PerturbConfig) -> PerturbedEnsemble {
    let members = (0..config.num_models)
        .map(|member| {
            let mut params = model.params().clone();
            for (l, layer) in params.layers.iter_mut().enumerate() {
                let theta = layer.flatten();
                let sigma = layer_sigma(&theta, config.noise_scale)
                    .expect("validated spec guarantees non-empty layers");
                let seed = derive_seed(config.master_seed, member as u64, l as u64);
                let noise = sample_layer_noise(theta.len(), sigma, seed);
                let nw = layer.weights.len();
                for (w, e) in layer.weights.iter_mut().zip(&noise[..nw]) {
                    *w += e;
                }
                for (b, e) in layer.bias.iter_mut().zip(&noise[nw..]) {
                    *b += e;
                }
            }
            params
        })
        .collect();
    PerturbedEnsemble {
        base: model.clone(),
        members,
        config: config.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ClassifierModel, NetworkSpec};

    fn small_model(seed: u64) -> ClassifierModel {
        let spec = NetworkSpec::new(2, vec![3], 2).unwrap();
        ClassifierModel::init(spec, seed)
    }

    #[test]
    fn sigma_matches_direct_arithmetic() {
        // mean 2, population variance 2/3
        let sigma = layer_sigma(&[1.0, 2.0, 3.0], 2.0).unwrap();
        let expected = 2.0 * (2.0f64 / 3.0).sqrt();
        assert!((sigma - expected).abs() < 1e-12, "sigma = {sigma}");
        assert!((sigma - 1.632993).abs() < 1e-6);
    }

    #[test]
    fn sigma_zero_cases() {
        assert_eq!(layer_sigma(&[1.0, 5.0, -2.0], 0.0).unwrap(), 0.0);
        assert_eq!(layer_sigma(&[3.5; 7], 2.0).unwrap(), 0.0);
        assert!(matches!(layer_sigma(&[], 1.0), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn sigma_homogeneous_in_lambda() {
        let theta = [0.3, -1.7, 2.2, 0.05];
        // Power-of-two scalings are exact in IEEE 754.
        for c in [2.0, 4.0, 0.5, 8.0] {
            let a = layer_sigma(&theta, c * 0.37).unwrap();
            let b = c * layer_sigma(&theta, 0.37).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn noise_zero_sigma_is_zero() {
        let noise = sample_layer_noise(64, 0.0, 123);
        assert!(noise.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn noise_moments_match() {
        let noise = sample_layer_noise(100_000, 1.0, 7);
        let n = noise.len() as f64;
        let mean = noise.iter().sum::<f64>() / n;
        let std = (noise.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.02, "mean = {mean}");
        assert!((0.98..=1.02).contains(&std), "std = {std}");
    }

    #[test]
    fn noise_stream_is_deterministic() {
        assert_eq!(
            sample_layer_noise(32, 0.5, 99),
            sample_layer_noise(32, 0.5, 99)
        );
        assert_ne!(
            sample_layer_noise(32, 0.5, 99),
            sample_layer_noise(32, 0.5, 98)
        );
    }

    #[test]
    fn zero_scale_members_equal_base() {
        let model = small_model(1);
        let cfg = PerturbConfig::new(4, 0.0, 42).unwrap();
        let ens = make_ensemble(&model, &cfg);
        for member in ens.members() {
            assert_eq!(member, model.params());
        }
    }

    #[test]
    fn high_noise_config_accepted() {
        let cfg = PerturbConfig::new(9, 4.0, 0).unwrap();
        assert_eq!(cfg.num_models, 9);
        let ens = make_ensemble(&small_model(1), &cfg);
        assert_eq!(ens.members().len(), 9);
    }

    #[test]
    fn member_mean_stays_near_base() {
        // Zero-mean noise: elementwise mean over 500 members stays within
        // 4 sigma_layer / sqrt(500) of the base value.
        let model = small_model(3);
        let cfg = PerturbConfig::new(500, 0.8, 11).unwrap();
        let ens = make_ensemble(&model, &cfg);
        let b = cfg.num_models as f64;
        for (l, layer) in model.params().layers.iter().enumerate() {
            let sigma = layer_sigma(&layer.flatten(), cfg.noise_scale).unwrap();
            let bound = 4.0 * sigma / b.sqrt();
            for (p, &base_w) in layer.weights.iter().enumerate() {
                let mean = ens
                    .members()
                    .iter()
                    .map(|m| m.layers[l].weights[p])
                    .sum::<f64>()
                    / b;
                assert!(
                    (mean - base_w).abs() <= bound,
                    "layer {l} weight {p}: |{mean} - {base_w}| > {bound}"
                );
            }
        }
    }

    #[test]
    fn mean_deviation_shrinks_with_ensemble_size() {
        let model = small_model(5);
        let dev = |b: usize| {
            let cfg = PerturbConfig::new(b, 1.0, 17).unwrap();
            let ens = make_ensemble(&model, &cfg);
            let mut total = 0.0;
            let mut count = 0usize;
            for (l, layer) in model.params().layers.iter().enumerate() {
                for (p, &base_w) in layer.weights.iter().enumerate() {
                    let mean = ens
                        .members()
                        .iter()
                        .map(|m| m.layers[l].weights[p])
                        .sum::<f64>()
                        / b as f64;
                    total += (mean - base_w).abs();
                    count += 1;
                }
            }
            total / count as f64
        };
        let (d10, d100, d1000) = (dev(10), dev(100), dev(1000));
        assert!(d10 > d100 && d100 > d1000, "{d10} {d100} {d1000}");
    }

    #[test]
    fn base_model_is_not_mutated() {
        let model = small_model(9);
        let snapshot = model.params().clone();
        let cfg = PerturbConfig::new(8, 2.0, 1).unwrap();
        let _ens = make_ensemble(&model, &cfg);
        assert_eq!(model.params(), &snapshot);
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let model = small_model(13);
        let cfg = PerturbConfig::new(6, 1.5, 31).unwrap();
        let a = make_ensemble(&model, &cfg);
        let b = make_ensemble(&model, &cfg);
        assert_eq!(a.members(), b.members());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sigma_scales_with_lambda_within_ulp(
                theta in proptest::collection::vec(-10.0f64..10.0, 1..20),
                lambda in 0.0f64..5.0,
                c in 0.01f64..100.0,
            ) {
                let a = layer_sigma(&theta, c * lambda).unwrap();
                let b = c * layer_sigma(&theta, lambda).unwrap();
                let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
                prop_assert!((a - b).abs() / scale <= 1e-15);
            }
        }
    }
}

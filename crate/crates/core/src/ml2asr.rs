//! Regression-guided adaptation space reduction: predict each option's
//! qualities, verify only the most promising few, and select among those
//! with the usual analysis rule.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};
use crate::mapek::{analyse, AnalysisConfig, AnalysisResult, KnowledgeBase};
use crate::sim::{AdaptationOption, PowerAssignment, QualityPoint, Topology, UncertaintySample};

pub const MIN_SAMPLES: usize = 20;
pub const RIDGE_LAMBDA: f64 = 1e-3;
pub const DEFAULT_TOP_K: usize = 20;

/// Option split shares, per-mote power, mean SNR and total load.
pub fn features(
    topology: &Topology,
    option: &AdaptationOption,
    power: &PowerAssignment,
    uncs: &UncertaintySample,
) -> Vec<f64> {
    let mut f: Vec<f64> =
        topology.configurable_motes().iter().map(|m| option.splits.get(m).map_or(1.0, |s| s.first_share())).collect();
    f.extend(power.0.iter().map(|p| f64::from(*p)));
    f.push(uncs.mean_snr());
    f.push(uncs.total_load());
    f
}

/// Ordinary least squares on centered features, one model per quality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityRegressor {
    pub packet_loss: LinearModel,
    pub energy: LinearModel,
    /// Whether the design matrix needed the ridge term.
    pub ridge: bool,
}

impl QualityRegressor {
    pub fn predict(&self, x: &[f64]) -> QualityPoint {
        QualityPoint::new(self.packet_loss.predict(x), self.energy.predict(x))
    }
}

/// Fits both qualities. Rank-deficient designs (constant or collinear
/// features, too few samples) are solved with a small ridge penalty.
pub fn train(samples: &[(Vec<f64>, QualityPoint)]) -> Result<QualityRegressor> {
    if samples.len() < MIN_SAMPLES {
        return Err(invalid_input(format!("{} samples, at least {MIN_SAMPLES} needed", samples.len())));
    }
    let d = samples[0].0.len();
    if samples.iter().any(|(x, _)| x.len() != d) {
        return Err(invalid_input("feature vectors differ in length"));
    }
    let n = samples.len();
    let mut mean = vec![0.0; d];
    for (x, _) in samples {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n as f64;
        }
    }
    let x = DMatrix::from_fn(n, d, |i, j| samples[i].0[j] - mean[j]);
    let svd = x.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let tol = smax * n.max(d) as f64 * f64::EPSILON * 16.0;
    let full_rank = d == 0 || (n >= d && svd.singular_values.iter().all(|s| *s > tol));

    let solve = |y: DVector<f64>| -> Result<Vec<f64>> {
        if d == 0 {
            return Ok(Vec::new());
        }
        let beta = if full_rank {
            x.clone().svd(true, true).solve(&y, 0.0).map_err(|e| invalid_input(e.to_string()))?
        } else {
            let xtx = x.transpose() * &x + DMatrix::identity(d, d) * RIDGE_LAMBDA;
            let xty = x.transpose() * y;
            xtx.cholesky().ok_or_else(|| invalid_input("ridge system is not positive definite"))?.solve(&xty)
        };
        Ok(beta.iter().copied().collect())
    };
    let fit = |target: &dyn Fn(&QualityPoint) -> f64| -> Result<LinearModel> {
        let ys: Vec<f64> = samples.iter().map(|(_, q)| target(q)).collect();
        let ybar = ys.iter().sum::<f64>() / n as f64;
        let coefficients = solve(DVector::from_iterator(n, ys.iter().map(|y| y - ybar)))?;
        let intercept = ybar - coefficients.iter().zip(&mean).map(|(c, m)| c * m).sum::<f64>();
        Ok(LinearModel { coefficients, intercept })
    };
    Ok(QualityRegressor { packet_loss: fit(&|q| q.packet_loss)?, energy: fit(&|q| q.energy)?, ridge: !full_rank })
}

/// Predicts every option, keeps the `k` whose predicted class ranks best
/// (in-class before outliers, then rank, then membership), and runs the
/// analysis over that subset only.
#[allow(clippy::too_many_arguments)]
pub fn reduce_and_select<R: Rng + ?Sized, V: FnMut(&AdaptationOption) -> QualityPoint>(
    kb: &mut KnowledgeBase,
    options: &[AdaptationOption],
    predictions: &[QualityPoint],
    k: usize,
    uncs: &UncertaintySample,
    cycle: u32,
    config: &AnalysisConfig,
    rng: &mut R,
    verify: V,
) -> Result<AnalysisResult> {
    if predictions.len() != options.len() {
        return Err(invalid_input("one prediction per option is required"));
    }
    if k == 0 {
        return Err(invalid_input("the verification budget must be positive"));
    }
    let classifier = kb.classifier().clone();
    let preference = kb.preference().clone();
    let mut scored: Vec<(bool, usize, f64, usize)> = predictions
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let c = classifier.classify(&q.to_vec());
            let outlier = c.membership <= config.prob_threshold;
            (outlier, preference.rank(c.class_id).unwrap_or(usize::MAX), -c.membership, i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.total_cmp(&b.2)).then(a.3.cmp(&b.3)));
    let mut keep: Vec<usize> = scored.iter().take(k).map(|s| s.3).collect();
    keep.sort_unstable();
    let subset: Vec<AdaptationOption> = keep.into_iter().map(|i| options[i].clone()).collect();
    analyse(kb, &subset, uncs, cycle, config, rng, verify)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn linear_history(n: usize, seed: u64) -> Vec<(Vec<f64>, QualityPoint)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
                let pl = 10.0 + 2.0 * x[0] - 1.5 * x[1] + 0.25 * x[3];
                let ec = 14.0 - 0.3 * x[2] + 0.1 * x[0];
                (x, QualityPoint::new(pl, ec))
            })
            .collect()
    }

    #[test]
    fn recovers_an_exact_linear_model() {
        let r = train(&linear_history(60, 1)).unwrap();
        assert!(!r.ridge);
        let expect = [2.0, -1.5, 0.0, 0.25];
        for (c, e) in r.packet_loss.coefficients.iter().zip(expect) {
            assert!((c - e).abs() < 1e-6, "{c} vs {e}");
        }
        assert!((r.packet_loss.intercept - 10.0).abs() < 1e-6);
        assert!((r.energy.coefficients[2] + 0.3).abs() < 1e-6);
        assert!((r.energy.intercept - 14.0).abs() < 1e-6);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        assert!(train(&linear_history(10, 1)).is_err());
    }

    #[test]
    fn constant_target_gives_zero_slopes() {
        let mut h = linear_history(30, 2);
        for (_, q) in &mut h {
            *q = QualityPoint::new(7.0, 13.0);
        }
        let r = train(&h).unwrap();
        assert!(r.packet_loss.coefficients.iter().all(|c| c.abs() < 1e-9));
        assert!((r.packet_loss.intercept - 7.0).abs() < 1e-9);
        assert!((r.energy.intercept - 13.0).abs() < 1e-9);
    }

    #[test]
    fn constant_feature_falls_back_to_ridge() {
        let mut h = linear_history(30, 3);
        for (x, _) in &mut h {
            x.push(5.0);
        }
        let r = train(&h).unwrap();
        assert!(r.ridge);
        let q = r.predict(&h[0].0);
        assert!((q.packet_loss - h[0].1.packet_loss).abs() < 1e-2);
    }
}

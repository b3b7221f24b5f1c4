//! Expectation-Maximization for full-covariance 2D mixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::linalg::{self, Mat2, Vec2};
use super::model::{ClassId, GaussianComponent, GmmModel};
use crate::error::{invalid_input, Result};

#[derive(Clone, Debug)]
pub struct FitOptions {
    /// Added to every covariance estimate (squared quality units).
    pub reg_covar: f64,
    pub max_iter: usize,
    /// Stop once the relative change in log-likelihood drops below this.
    pub tol: f64,
    /// Independent k-means++ restarts; the best final log-likelihood wins.
    pub n_init: usize,
    /// Lloyd refinement steps applied to the k-means++ seeds.
    pub kmeans_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { reg_covar: 1e-6, max_iter: 300, tol: 1e-6, n_init: 3, kmeans_iter: 10 }
    }
}

#[derive(Clone, Debug)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Log-likelihood evaluated at the start of each EM iteration.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
}

impl GmmFit {
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood_trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

/// Fits a `k`-component mixture with default options. Class ids are `0..k`.
pub fn fit_gmm(points: &[Vec2], k: usize, seed: u64) -> Result<GmmModel> {
    Ok(fit_gmm_with(points, k, seed, &FitOptions::default())?.model)
}

pub fn fit_gmm_with(points: &[Vec2], k: usize, seed: u64, opts: &FitOptions) -> Result<GmmFit> {
    if points.is_empty() {
        return Err(invalid_input("cannot fit a mixture to an empty point set"));
    }
    if k == 0 {
        return Err(invalid_input("component count must be at least 1"));
    }
    if points.len() < k {
        return Err(invalid_input(format!("{} points cannot support {k} components", points.len())));
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(invalid_input("non-finite point"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // k = 1 has a unique optimum; restarts would only repeat the work.
    let restarts = if k == 1 { 1 } else { opts.n_init.max(1) };
    let mut best: Option<GmmFit> = None;
    for _ in 0..restarts {
        let fit = run_em(points, k, &mut rng, opts);
        if best.as_ref().is_none_or(|b| fit.log_likelihood() > b.log_likelihood()) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

struct Params {
    weights: Vec<f64>,
    means: Vec<Vec2>,
    covs: Vec<Mat2>,
    support: Vec<f64>,
}

fn run_em(points: &[Vec2], k: usize, rng: &mut ChaCha8Rng, opts: &FitOptions) -> GmmFit {
    let n = points.len();
    let centers = kmeans_seeds(points, k, rng, opts.kmeans_iter);

    // Hard assignment to the seeds provides the initial responsibilities.
    let mut resp = vec![0.0; n * k];
    for (i, p) in points.iter().enumerate() {
        resp[i * k + nearest(p, &centers)] = 1.0;
    }
    let fallback = sample_cov(points);
    let mut params = m_step(points, &resp, k, opts.reg_covar, None, &fallback);

    let mut trace = Vec::new();
    let mut converged = false;
    let mut log_terms = vec![0.0; k];
    for _ in 0..opts.max_iter {
        let chols: Vec<[f64; 3]> = params.covs.iter().map(|c| linalg::cholesky(c).unwrap()).collect();
        let log_w: Vec<f64> = params.weights.iter().map(|w| w.ln()).collect();
        let mut ll = 0.0;
        for (i, p) in points.iter().enumerate() {
            for j in 0..k {
                log_terms[j] = log_w[j] + linalg::log_pdf(p, &params.means[j], &chols[j]);
            }
            let norm = linalg::log_sum_exp(&log_terms);
            ll += norm;
            for j in 0..k {
                resp[i * k + j] = (log_terms[j] - norm).exp();
            }
        }
        let prev = trace.last().copied();
        trace.push(ll);
        if let Some(prev) = prev {
            if ((ll - prev) / prev.abs().max(1.0)).abs() < opts.tol {
                converged = true;
                break;
            }
        }
        params = m_step(points, &resp, k, opts.reg_covar, Some(&params), &fallback);
    }

    let components = (0..k)
        .map(|j| GaussianComponent {
            mean: params.means[j],
            cov: params.covs[j],
            weight: params.weights[j],
            support_count: params.support[j].round() as u64,
            class_id: ClassId(j as u32),
        })
        .collect();
    GmmFit { model: GmmModel::new(components), log_likelihood_trace: trace, converged }
}

fn m_step(points: &[Vec2], resp: &[f64], k: usize, reg: f64, previous: Option<&Params>, fallback_cov: &Mat2) -> Params {
    let n = points.len();
    let mut nk = vec![0.0; k];
    let mut sums = vec![[0.0; 2]; k];
    for (i, p) in points.iter().enumerate() {
        for j in 0..k {
            let r = resp[i * k + j];
            nk[j] += r;
            sums[j][0] += r * p[0];
            sums[j][1] += r * p[1];
        }
    }

    let mut means = vec![[0.0; 2]; k];
    let mut covs = vec![[[0.0; 2]; 2]; k];
    for j in 0..k {
        if nk[j] > 1e-12 {
            means[j] = [sums[j][0] / nk[j], sums[j][1] / nk[j]];
        } else {
            // An emptied component keeps its last position.
            means[j] = previous.map_or(points[j % n], |p| p.means[j]);
        }
    }
    for (i, p) in points.iter().enumerate() {
        for j in 0..k {
            let r = resp[i * k + j];
            let d0 = p[0] - means[j][0];
            let d1 = p[1] - means[j][1];
            covs[j][0][0] += r * d0 * d0;
            covs[j][0][1] += r * d0 * d1;
            covs[j][1][1] += r * d1 * d1;
        }
    }
    for j in 0..k {
        let cov = if nk[j] > 1e-12 {
            let c = &covs[j];
            [[c[0][0] / nk[j], c[0][1] / nk[j]], [c[0][1] / nk[j], c[1][1] / nk[j]]]
        } else {
            previous.map_or(*fallback_cov, |p| p.covs[j])
        };
        covs[j] = linalg::regularize(&linalg::add_diagonal(&cov, reg), reg);
    }

    let floor = 1e-12;
    let mut weights: Vec<f64> = nk.iter().map(|v| (v / n as f64).max(floor)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    Params { weights, means, covs, support: nk }
}

fn sample_cov(points: &[Vec2]) -> Mat2 {
    let n = points.len() as f64;
    let mean = [points.iter().map(|p| p[0]).sum::<f64>() / n, points.iter().map(|p| p[1]).sum::<f64>() / n];
    let mut c = [[0.0; 2]; 2];
    for p in points {
        let d0 = p[0] - mean[0];
        let d1 = p[1] - mean[1];
        c[0][0] += d0 * d0;
        c[0][1] += d0 * d1;
        c[1][1] += d1 * d1;
    }
    [[c[0][0] / n, c[0][1] / n], [c[0][1] / n, c[1][1] / n]]
}

fn dist_sq(a: &Vec2, b: &Vec2) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: &Vec2, centers: &[Vec2]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let d = dist_sq(p, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

/// k-means++ seeding followed by a few Lloyd iterations. Distances are taken
/// in a per-axis standardized space so that axes with very different spreads
/// (percent vs. millicoulomb) both contribute.
fn kmeans_seeds(points: &[Vec2], k: usize, rng: &mut ChaCha8Rng, lloyd_iter: usize) -> Vec<Vec2> {
    let n = points.len();
    let cov = sample_cov(points);
    let scale = [cov[0][0].sqrt().max(1e-12), cov[1][1].sqrt().max(1e-12)];
    let scaled: Vec<Vec2> = points.iter().map(|p| [p[0] / scale[0], p[1] / scale[1]]).collect();

    let mut centers: Vec<Vec2> = Vec::with_capacity(k);
    centers.push(scaled[rng.random_range(0..n)]);
    let mut d2: Vec<f64> = scaled.iter().map(|p| dist_sq(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = scaled[idx];
        centers.push(c);
        for (d, p) in d2.iter_mut().zip(&scaled) {
            *d = d.min(dist_sq(p, &c));
        }
    }

    for _ in 0..lloyd_iter {
        let mut sums = vec![[0.0; 2]; k];
        let mut counts = vec![0usize; k];
        for p in &scaled {
            let j = nearest(p, &centers);
            sums[j][0] += p[0];
            sums[j][1] += p[1];
            counts[j] += 1;
        }
        let mut moved = false;
        for j in 0..k {
            if counts[j] > 0 {
                let c = [sums[j][0] / counts[j] as f64, sums[j][1] / counts[j] as f64];
                moved |= c != centers[j];
                centers[j] = c;
            }
        }
        if !moved {
            break;
        }
    }

    centers.into_iter().map(|c| [c[0] * scale[0], c[1] * scale[1]]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blob(rng: &mut ChaCha8Rng, mean: Vec2, sd: f64, n: usize) -> Vec<Vec2> {
        let normal = Normal::new(0.0, sd).unwrap();
        (0..n).map(|_| [mean[0] + normal.sample(rng), mean[1] + normal.sample(rng)]).collect()
    }

    #[test]
    fn single_component_is_sample_moments_plus_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = blob(&mut rng, [2.0, -1.0], 1.5, 200);
        let m = fit_gmm(&pts, 1, 9).unwrap();
        let c = &m.components[0];
        let expected = sample_cov(&pts);
        let n = pts.len() as f64;
        let mean = [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n];
        assert!((c.mean[0] - mean[0]).abs() < 1e-9 && (c.mean[1] - mean[1]).abs() < 1e-9);
        assert!((c.cov[0][0] - expected[0][0] - 1e-6).abs() < 1e-9);
        assert!((c.cov[1][1] - expected[1][1] - 1e-6).abs() < 1e-9);
        assert!((c.cov[0][1] - expected[0][1]).abs() < 1e-9);
        assert_eq!(c.support_count, 200);
        assert_eq!(c.weight, 1.0);
    }

    #[test]
    fn identical_points_collapse_to_ridge() {
        let pts = vec![[3.0, 4.0]; 25];
        let m = fit_gmm(&pts, 1, 0).unwrap();
        let c = &m.components[0];
        assert_eq!(c.mean, [3.0, 4.0]);
        assert!((c.cov[0][0] - 1e-6).abs() < 1e-15);
        assert!((c.cov[1][1] - 1e-6).abs() < 1e-15);
        assert_eq!(c.cov[0][1], 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(fit_gmm(&[], 1, 0).is_err());
        assert!(fit_gmm(&[[0.0, 0.0]], 2, 0).is_err());
        assert!(fit_gmm(&[[0.0, 0.0]], 0, 0).is_err());
    }

    #[test]
    fn more_components_than_distinct_points() {
        let pts = vec![[1.0, 1.0]; 6];
        let m = fit_gmm(&pts, 3, 1).unwrap();
        m.validate().unwrap();
    }

    #[test]
    fn recovers_two_separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pts = blob(&mut rng, [0.0, 0.0], 1.0, 300);
        pts.extend(blob(&mut rng, [8.0, 0.0], 1.0, 200));
        let m = fit_gmm(&pts, 2, 5).unwrap();
        let mut comps = m.components.clone();
        comps.sort_by(|a, b| a.mean[0].total_cmp(&b.mean[0]));
        assert!(comps[0].mean[0].abs() < 0.5);
        assert!((comps[1].mean[0] - 8.0).abs() < 0.5);
        assert!((comps[0].weight - 0.6).abs() < 0.1);
    }
}

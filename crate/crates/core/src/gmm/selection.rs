//! Component-count selection: BIC curve plus Kneedle elbow detection.

use serde::{Deserialize, Serialize};

use super::em::{fit_gmm_with, FitOptions};
use super::linalg::Vec2;
use super::model::GmmModel;
use crate::error::{invalid_input, Result};

pub const DEFAULT_MAX_COMPONENTS: usize = 5;

/// Kneedle sensitivity.
pub const KNEEDLE_SENSITIVITY: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BicCurve {
    pub component_counts: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Free parameters of a `k`-component full-covariance 2D mixture:
/// `k-1` weights, `2k` means and `3k` covariance entries.
pub fn free_parameters(k: usize) -> usize {
    6 * k - 1
}

/// `p·ln(n) − 2·ln L̂`.
pub fn bic_score(points: &[Vec2], model: &GmmModel) -> Result<f64> {
    if points.is_empty() {
        return Err(invalid_input("BIC needs at least one point"));
    }
    if model.is_empty() {
        return Err(invalid_input("BIC needs a non-empty model"));
    }
    let n = points.len() as f64;
    let p = free_parameters(model.len()) as f64;
    Ok(p * n.ln() - 2.0 * model.log_likelihood(points))
}

/// Index of the knee of a decreasing-convex curve.
///
/// Both axes are min-max normalized; the difference curve is the gap between
/// the falling diagonal and the normalized curve. A local maximum of that gap
/// counts as a knee once the gap later drops below `max − S·mean(Δx)`; the
/// confirmed knee with the largest gap wins. Curves without a knee return 0.
pub fn kneedle_elbow(xs: &[f64], ys: &[f64]) -> Result<usize> {
    if xs.len() != ys.len() {
        return Err(invalid_input(format!("length mismatch: {} xs vs {} ys", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(invalid_input("kneedle needs at least two points"));
    }
    if xs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid_input("xs must be strictly increasing"));
    }
    let n = xs.len();
    let normalize = |v: &[f64]| -> Vec<f64> {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        v.iter().map(|x| if span > 0.0 { (x - lo) / span } else { 0.0 }).collect()
    };
    let xn = normalize(xs);
    let yn = normalize(ys);
    let diff: Vec<f64> = (0..n).map(|i| (1.0 - xn[i]) - yn[i]).collect();
    let step = 1.0 / (n - 1) as f64;
    let threshold_drop = KNEEDLE_SENSITIVITY * step;

    const EPS: f64 = 1e-12;
    let mut best: Option<(usize, f64)> = None;
    for i in 0..n {
        let left_ok = i == 0 || diff[i] >= diff[i - 1];
        let right_ok = i + 1 == n || diff[i] > diff[i + 1];
        if !(left_ok && right_ok) || diff[i] <= EPS {
            continue;
        }
        let threshold = diff[i] - threshold_drop;
        let mut confirmed = false;
        for &d in &diff[i + 1..] {
            if d > diff[i] {
                break;
            }
            if d < threshold - EPS {
                confirmed = true;
                break;
            }
        }
        if confirmed && best.is_none_or(|(_, v)| diff[i] > v) {
            best = Some((i, diff[i]));
        }
    }
    Ok(best.map_or(0, |(i, _)| i))
}

#[derive(Clone, Debug)]
pub struct ComponentSelection {
    pub count: usize,
    pub curve: BicCurve,
    /// The fitted model for each candidate count, index `k - 1`.
    pub models: Vec<GmmModel>,
}

impl ComponentSelection {
    pub fn into_model(mut self) -> GmmModel {
        self.models.swap_remove(self.count - 1)
    }
}

/// Fits mixtures for `k = 1..=k_max` and returns the count at the elbow of
/// the BIC curve.
pub fn select_component_count(points: &[Vec2], k_max: usize, seed: u64) -> Result<usize> {
    Ok(select_components(points, k_max, seed, &FitOptions::default())?.count)
}

pub fn select_components(points: &[Vec2], k_max: usize, seed: u64, opts: &FitOptions) -> Result<ComponentSelection> {
    if k_max == 0 {
        return Err(invalid_input("k_max must be at least 1"));
    }
    if points.len() < k_max {
        return Err(invalid_input(format!("{} points are too few for k_max = {k_max}", points.len())));
    }
    let mut models = Vec::with_capacity(k_max);
    let mut scores = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let fit = fit_gmm_with(points, k, seed.wrapping_add(k as u64), opts)?;
        scores.push(bic_score(points, &fit.model)?);
        models.push(fit.model);
    }
    let counts: Vec<usize> = (1..=k_max).collect();
    let count = if k_max == 1 {
        1
    } else {
        let xs: Vec<f64> = counts.iter().map(|&k| k as f64).collect();
        kneedle_elbow(&xs, &scores)? + 1
    };
    Ok(ComponentSelection { count, curve: BicCurve { component_counts: counts, scores }, models })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xs(n: usize) -> Vec<f64> {
        (1..=n).map(|v| v as f64).collect()
    }

    /// Hand evaluation of the normalized difference curve.
    fn manual_diff(ys: &[f64]) -> Vec<f64> {
        let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n = ys.len();
        (0..n).map(|i| (1.0 - i as f64 / (n - 1) as f64) - (ys[i] - lo) / (hi - lo)).collect()
    }

    #[test]
    fn knee_examples() {
        let a = [100.0, 40.0, 25.0, 20.0, 18.0];
        // diff = [0, .482, .415, .226, 0]
        let d = manual_diff(&a);
        assert!((d[1] - (0.75 - 22.0 / 82.0)).abs() < 1e-12);
        assert_eq!(kneedle_elbow(&xs(5), &a).unwrap(), 1);

        let b = [100.0, 90.0, 30.0, 28.0, 27.0];
        let d = manual_diff(&b);
        assert!(d[2] > d[1] && d[2] > d[3]);
        assert_eq!(kneedle_elbow(&xs(5), &b).unwrap(), 2);
    }

    #[test]
    fn linear_curve_has_no_knee() {
        let ys = [50.0, 40.0, 30.0, 20.0, 10.0];
        assert_eq!(kneedle_elbow(&xs(5), &ys).unwrap(), 0);
    }

    #[test]
    fn rising_curve_knees_at_first_point() {
        let ys = [1000.0, 1010.0, 1020.0, 1030.0, 1040.0];
        assert_eq!(kneedle_elbow(&xs(5), &ys).unwrap(), 0);
    }

    #[test]
    fn elbow_shaped_bic_curve_knees_at_two() {
        // Steep drop from one to two components, then a shallow tail.
        let ys = [-2100.0, -3650.0, -3720.0, -3760.0, -3785.0];
        assert_eq!(kneedle_elbow(&xs(5), &ys).unwrap() + 1, 2);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(kneedle_elbow(&xs(3), &[1.0, 2.0]).is_err());
        assert!(kneedle_elbow(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn bic_formula_for_one_component() {
        let pts: Vec<Vec2> = (0..100).map(|i| [(i % 10) as f64, (i / 10) as f64]).collect();
        let model = crate::gmm::fit_gmm(&pts, 1, 0).unwrap();
        let expected = 5.0 * 100f64.ln() - 2.0 * model.log_likelihood(&pts);
        assert!((bic_score(&pts, &model).unwrap() - expected).abs() < 1e-9);
        assert!(bic_score(&pts, &model).unwrap().is_finite());
    }

    #[test]
    fn too_few_points() {
        assert!(select_component_count(&[[0.0, 0.0]; 3], 5, 0).is_err());
    }
}

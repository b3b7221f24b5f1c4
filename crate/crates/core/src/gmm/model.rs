use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::linalg::{self, Mat2, Vec2};
use crate::error::{invalid_input, Result};

/// Default tail-probability threshold below which a point belongs to no class.
pub const DEFAULT_OUTLIER_THRESHOLD: f64 = 0.001;

/// Mahalanobis radius at which `exp(-d²/2)` equals [`DEFAULT_OUTLIER_THRESHOLD`].
pub const OUTLIER_RADIUS: f64 = 3.7169;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean: Vec2,
    pub cov: Mat2,
    pub weight: f64,
    pub support_count: u64,
    pub class_id: ClassId,
}

impl GaussianComponent {
    pub fn new(mean: Vec2, cov: Mat2, weight: f64, support_count: u64, class_id: ClassId) -> Self {
        Self { mean, cov, weight, support_count, class_id }
    }

    pub(crate) fn cholesky(&self) -> [f64; 3] {
        linalg::cholesky(&self.cov).unwrap_or_else(|| linalg::cholesky(&linalg::regularize(&self.cov, 1e-6)).unwrap())
    }

    pub fn mahalanobis_sq(&self, point: &Vec2) -> f64 {
        linalg::mahalanobis_sq(point, &self.mean, &self.cholesky())
    }

    pub fn log_pdf(&self, point: &Vec2) -> f64 {
        linalg::log_pdf(point, &self.mean, &self.cholesky())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Classification {
    pub class_id: ClassId,
    pub component: usize,
    pub membership: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub components: Vec<GaussianComponent>,
    #[serde(default = "default_threshold")]
    pub outlier_threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_OUTLIER_THRESHOLD
}

impl Default for GmmModel {
    fn default() -> Self {
        Self::empty()
    }
}

impl GmmModel {
    pub fn new(components: Vec<GaussianComponent>) -> Self {
        Self { components, outlier_threshold: DEFAULT_OUTLIER_THRESHOLD }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.components.iter().map(|c| c.class_id).collect()
    }

    pub fn component(&self, class_id: ClassId) -> Option<&GaussianComponent> {
        self.components.iter().find(|c| c.class_id == class_id)
    }

    pub fn total_support(&self) -> u64 {
        self.components.iter().map(|c| c.support_count).sum()
    }

    /// Reassign class ids `first, first+1, ...` in component order.
    pub fn relabel_from(mut self, first: u32) -> Self {
        for (i, c) in self.components.iter_mut().enumerate() {
            c.class_id = ClassId(first + i as u32);
        }
        self
    }

    /// Checks the model invariants: unique class ids, weights summing to one,
    /// positive weights, and factorizable covariances.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.components {
            if !seen.insert(c.class_id) {
                return Err(invalid_input(format!("duplicate class id {}", c.class_id)));
            }
            if !(c.weight > 0.0) {
                return Err(invalid_input(format!("component {} has non-positive weight", c.class_id)));
            }
            if linalg::cholesky(&c.cov).is_none() {
                return Err(invalid_input(format!("covariance of {} is not positive definite", c.class_id)));
            }
        }
        if !self.components.is_empty() {
            let total: f64 = self.components.iter().map(|c| c.weight).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(invalid_input(format!("weights sum to {total}")));
            }
        }
        Ok(())
    }

    /// Mixture log-likelihood of `points`.
    pub fn log_likelihood(&self, points: &[Vec2]) -> f64 {
        let chols: Vec<_> = self.components.iter().map(|c| c.cholesky()).collect();
        let mut buf = vec![0.0; self.components.len()];
        points
            .iter()
            .map(|p| {
                for (slot, (c, chol)) in buf.iter_mut().zip(self.components.iter().zip(&chols)) {
                    *slot = c.weight.ln() + linalg::log_pdf(p, &c.mean, chol);
                }
                linalg::log_sum_exp(&buf)
            })
            .sum()
    }

    /// Assigns `point` to the component maximizing `weight·pdf` (lowest index
    /// on ties). Membership is the chi-square(2) survival probability of the
    /// squared Mahalanobis distance to that component.
    ///
    /// Panics on an empty model.
    pub fn classify(&self, point: &Vec2) -> Classification {
        assert!(!self.components.is_empty(), "classify on an empty model");
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        let mut best_d2 = f64::INFINITY;
        for (i, c) in self.components.iter().enumerate() {
            let chol = c.cholesky();
            let d2 = linalg::mahalanobis_sq(point, &c.mean, &chol);
            let score = c.weight.ln() - chol[0].ln() - chol[2].ln() - 0.5 * d2;
            if score > best_score {
                best = i;
                best_score = score;
                best_d2 = d2;
            }
        }
        Classification { class_id: self.components[best].class_id, component: best, membership: (-0.5 * best_d2).exp() }
    }

    /// True when no component explains `point`, i.e. its membership is below
    /// the outlier threshold under every component, not just the winning one.
    pub fn is_out_of_class(&self, point: &Vec2) -> bool {
        let d = self.min_mahalanobis(point);
        (-0.5 * d * d).exp() < self.outlier_threshold
    }

    /// Smallest Mahalanobis distance from `point` to any component.
    pub fn min_mahalanobis(&self, point: &Vec2) -> f64 {
        self.components.iter().map(|c| c.mahalanobis_sq(point)).fold(f64::INFINITY, f64::min).sqrt()
    }

    /// Union of two models. Base means and covariances are kept verbatim; the
    /// two blocks of weights are rescaled by their share of the total support.
    pub fn merge(&self, addition: &GmmModel) -> Result<GmmModel> {
        let base_ids: BTreeSet<_> = self.class_ids().into_iter().collect();
        if let Some(dup) = addition.components.iter().find(|c| base_ids.contains(&c.class_id)) {
            return Err(invalid_input(format!("class id {} exists in both models", dup.class_id)));
        }
        if addition.is_empty() {
            return Ok(self.clone());
        }
        if self.is_empty() {
            return Ok(GmmModel { outlier_threshold: self.outlier_threshold, ..addition.clone() });
        }

        let base_support = self.total_support() as f64;
        let add_support = addition.total_support() as f64;
        let (base_share, add_share) = if base_support + add_support > 0.0 {
            let total = base_support + add_support;
            (base_support / total, add_support / total)
        } else {
            let total = (self.len() + addition.len()) as f64;
            (self.len() as f64 / total, addition.len() as f64 / total)
        };
        let base_sum: f64 = self.components.iter().map(|c| c.weight).sum();
        let add_sum: f64 = addition.components.iter().map(|c| c.weight).sum();

        let mut components = Vec::with_capacity(self.len() + addition.len());
        for c in &self.components {
            components.push(GaussianComponent { weight: c.weight / base_sum * base_share, ..c.clone() });
        }
        for c in &addition.components {
            components.push(GaussianComponent { weight: c.weight / add_sum * add_share, ..c.clone() });
        }
        // Guard against a zero-support block collapsing a weight to zero.
        let floor = 1e-12;
        for c in &mut components {
            c.weight = c.weight.max(floor);
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= total;
        }
        Ok(GmmModel { components, outlier_threshold: self.outlier_threshold })
    }
}

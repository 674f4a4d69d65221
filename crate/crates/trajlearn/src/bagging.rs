//! Bagging-GMM baseline: an ensemble of mixtures, each trained on a random
//! subset of the pooled samples, blended at reproduction time by how well
//! each learner hits the desired poses.
//!
//! The blend is best-effort. A learner that happens to pass near a desired
//! pose gets most of the weight, but nothing pins the output to the pose
//! itself; quantifying that gap is the point of the module. The weighting
//! is a documented surrogate (the sharper the kernel, the closer the blend
//! tracks the single best learner), not a reproduction of any published
//! scheme.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cem::TimeSensitiveConstraint;
use crate::data::DemonstrationSet;
use crate::error::{Error, Result};
use crate::gmm::{fit_em, EmConfig, GmmModel};
use crate::gmr::{clamp_spd, gmr_at, reproduce, Trajectory};
use crate::manifold::{ManifoldDescriptor, Point};

/// Fraction of the pooled samples each learner trains on (B > 1; a single
/// learner keeps the full pool so B = 1 degenerates to a plain fit).
const SUBSET_FRACTION: f64 = 0.8;
/// Blend kernel width as a fraction of the output spread.
const SCALE_DIVISOR: f64 = 10.0;
const BLEND_MEAN_ITER: usize = 100;
const BLEND_MEAN_TOL: f64 = 1e-12;

/// Mixtures trained on random data subsets plus the blend state derived
/// from the training pool.
#[derive(Debug, Clone)]
pub struct BaggingEnsemble {
    output: ManifoldDescriptor,
    learners: Vec<GmmModel>,
    subset_seeds: Vec<u64>,
    /// Blend weights toward the constraints supplied at fit time
    /// (uniform when there were none).
    weights: Vec<f64>,
    /// RMS geodesic spread of the training outputs about their mean;
    /// the blend kernel width is this over [`SCALE_DIVISOR`].
    data_scale: f64,
}

impl BaggingEnsemble {
    /// Reassembles an ensemble from stored parts, revalidating the
    /// cross-learner invariants.
    pub(crate) fn from_parts(
        learners: Vec<GmmModel>,
        subset_seeds: Vec<u64>,
        weights: Vec<f64>,
        data_scale: f64,
    ) -> Result<Self> {
        let first = learners
            .first()
            .ok_or_else(|| Error::InvalidArgument("ensemble needs at least one learner".into()))?;
        let output = first.output_descriptor().clone();
        let b = learners.len();
        for (bi, l) in learners.iter().enumerate() {
            if l.output_descriptor() != &output {
                return Err(Error::InvalidArgument(format!(
                    "learner {bi} uses descriptor {}, learner 0 uses {}",
                    l.output_descriptor(),
                    output
                )));
            }
        }
        if subset_seeds.len() != b || weights.len() != b {
            return Err(Error::InvalidArgument(format!(
                "{b} learners with {} seeds and {} weights",
                subset_seeds.len(),
                weights.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "blend weights must be non-negative and sum to 1, sum is {total}"
            )));
        }
        if !(data_scale >= 0.0) || !data_scale.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid data scale {data_scale}")));
        }
        Ok(BaggingEnsemble { output, learners, subset_seeds, weights, data_scale })
    }

    pub fn output_descriptor(&self) -> &ManifoldDescriptor {
        &self.output
    }

    pub fn learner_count(&self) -> usize {
        self.learners.len()
    }

    pub fn learners(&self) -> &[GmmModel] {
        &self.learners
    }

    pub fn subset_seeds(&self) -> &[u64] {
        &self.subset_seeds
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn data_scale(&self) -> f64 {
        self.data_scale
    }

    /// Per-learner blend weights toward the given poses: proportional to
    /// `exp(-d_b^2 / sigma^2)` with `d_b^2` the learner's total squared
    /// regression error at the constraint times, shifted by the best
    /// learner's error so at least one weight survives the exponential.
    pub fn blend_weights(&self, constraints: &[TimeSensitiveConstraint]) -> Result<Vec<f64>> {
        let b = self.learners.len();
        if constraints.is_empty() {
            return Ok(vec![1.0 / b as f64; b]);
        }
        let mut errors = Vec::with_capacity(b);
        for learner in &self.learners {
            let mut d2 = 0.0;
            for c in constraints {
                let pred = gmr_at(learner, c.t_des, None)?;
                d2 += self.output.geodesic_distance(&pred.mean, &c.x_des)?.powi(2);
            }
            errors.push(d2);
        }
        Ok(kernel_weights(&errors, self.data_scale / SCALE_DIVISOR))
    }
}

fn kernel_weights(squared_errors: &[f64], sigma: f64) -> Vec<f64> {
    let b = squared_errors.len();
    let best = squared_errors.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(sigma > 0.0) {
        // degenerate training pool (zero spread); no scale to judge by
        return vec![1.0 / b as f64; b];
    }
    let mut w: Vec<f64> =
        squared_errors.iter().map(|d2| (-(d2 - best) / (sigma * sigma)).exp()).collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    w
}

/// Sorted indices of a random `SUBSET_FRACTION` of `0..n`.
fn subset_indices(n: usize, seed: u64) -> Vec<usize> {
    let m = (n as f64 * SUBSET_FRACTION).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(m);
    idx.sort_unstable();
    idx
}

/// RMS geodesic distance of the pooled outputs from their Frechet mean.
fn output_spread(data: &DemonstrationSet) -> Result<f64> {
    let output = data.output_descriptor();
    let d_out = output.point_dim();
    let outputs: Vec<Point> = data
        .samples()
        .iter()
        .map(|p| Point::new(output, p.coords().rows(1, d_out).clone_owned()))
        .collect::<Result<_>>()?;
    let mean = output.frechet_mean(&outputs, None, BLEND_MEAN_ITER, BLEND_MEAN_TOL)?;
    let mut total = 0.0;
    for p in &outputs {
        total += output.geodesic_distance(&mean, p)?.powi(2);
    }
    Ok((total / outputs.len() as f64).sqrt())
}

/// Trains `b` mixtures on seeded random subsets of `data` and fixes the
/// blend weights toward `constraints`. Learners are independent of each
/// other; only the subset draw consumes the shared seed.
pub fn bagging_fit(
    data: &DemonstrationSet,
    k: usize,
    b: usize,
    constraints: &[TimeSensitiveConstraint],
    seed: u64,
    config: &EmConfig,
) -> Result<BaggingEnsemble> {
    if b == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one learner".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subset_seeds: Vec<u64> = (0..b).map(|_| rng.next_u64()).collect();

    let mut learners = Vec::with_capacity(b);
    for (bi, &s) in subset_seeds.iter().enumerate() {
        let fitted = if b == 1 {
            fit_em(data, k, config)
        } else {
            data.subset(&subset_indices(data.len(), s)).and_then(|sub| fit_em(&sub, k, config))
        }
        .map_err(|e| e.with_context(&format!("learner {bi}")))?;
        learners.push(fitted.model);
    }

    let mut ensemble = BaggingEnsemble {
        output: data.output_descriptor().clone(),
        learners,
        subset_seeds,
        weights: vec![1.0 / b as f64; b],
        data_scale: output_spread(data)?,
    };
    ensemble.weights = ensemble.blend_weights(constraints)?;
    Ok(ensemble)
}

/// Weighted Frechet mean of the learner means plus the moment-matched
/// blend covariance, both expressed at the blended mean.
fn blend_at(
    output: &ManifoldDescriptor,
    means: &[Point],
    covariances: &[&DMatrix<f64>],
    weights: &[f64],
) -> Result<(Point, DMatrix<f64>)> {
    let mean = output.frechet_mean(means, Some(weights), BLEND_MEAN_ITER, BLEND_MEAN_TOL)?;
    let basis = output.tangent_basis(&mean);
    let d_eff = output.effective_dim();
    let mut local = DMatrix::zeros(d_eff, d_eff);
    let mut pull = DVector::zeros(d_eff);
    for ((m_b, c_b), &w) in means.iter().zip(covariances).zip(weights) {
        let moved = output.transport_covariance(m_b, &mean, c_b)?;
        let u = basis.transpose() * output.log_map(&mean, m_b)?.coords();
        local += (basis.transpose() * moved * &basis) * w;
        local.syger(w, &u, &u, 1.0);
        pull.axpy(w, &u, 1.0);
    }
    // at the exact Frechet mean the pull term vanishes; subtracting the
    // residual keeps the second moment consistent with the finite tolerance
    local.syger(-1.0, &pull, &pull, 1.0);
    local.fill_upper_triangle_with_lower_triangle();
    let local = clamp_spd(local);
    Ok((mean, &basis * local * basis.transpose()))
}

/// Runs every learner's regression over `times` and blends per time.
/// Weights are constant along the trajectory: recomputed toward
/// `constraints` when given, otherwise the fit-time weights.
pub fn bagging_reproduce(
    ensemble: &BaggingEnsemble,
    times: &[f64],
    constraints: &[TimeSensitiveConstraint],
) -> Result<Trajectory> {
    let weights = if constraints.is_empty() {
        ensemble.weights.clone()
    } else {
        ensemble.blend_weights(constraints)?
    };
    let trajectories: Vec<Trajectory> = ensemble
        .learners
        .iter()
        .enumerate()
        .map(|(bi, m)| reproduce(m, times).map_err(|e| e.with_context(&format!("learner {bi}"))))
        .collect::<Result<_>>()?;

    let mut means = Vec::with_capacity(times.len());
    let mut covariances = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        let ms: Vec<Point> = trajectories.iter().map(|tr| tr.means[i].clone()).collect();
        let cs: Vec<&DMatrix<f64>> = trajectories.iter().map(|tr| &tr.covariances[i]).collect();
        let (m, c) = blend_at(&ensemble.output, &ms, &cs, &weights)?;
        means.push(m);
        covariances.push(c);
    }
    Ok(Trajectory { times: times.to_vec(), means, covariances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{joint_descriptor, normalize_time, RawDemonstration};
    use crate::gmm::GaussianComponent;
    use approx::assert_relative_eq;

    fn line_demos(n: usize, noise: f64) -> DemonstrationSet {
        let output = ManifoldDescriptor::euclidean(2);
        let mut demos = Vec::new();
        for d in 0..4 {
            let mut times = Vec::new();
            let mut points = Vec::new();
            for i in 0..n {
                let s = i as f64 / (n - 1) as f64;
                let wobble = noise * ((d as f64 + 1.0) * (7.0 * s)).sin();
                times.push(s);
                points.push(Point::from_coords(DVector::from_row_slice(&[
                    s + wobble,
                    1.0 - s - wobble,
                ])));
            }
            demos.push(RawDemonstration { times, points });
        }
        normalize_time(&output, &demos, 1.0).unwrap()
    }

    /// Single diagonal component: the regression returns `x` at every time.
    fn flat_learner(output: &ManifoldDescriptor, x: &[f64]) -> GmmModel {
        let joint = joint_descriptor(output);
        let d = joint.point_dim();
        let mut mean = vec![0.5];
        mean.extend_from_slice(x);
        let cov = DMatrix::from_diagonal(&DVector::from_element(d, 0.05));
        GmmModel::new(
            output.clone(),
            vec![GaussianComponent {
                prior: 1.0,
                mean: Point::new(&joint, DVector::from_row_slice(&mean)).unwrap(),
                covariance: cov,
            }],
        )
        .unwrap()
    }

    fn manual_ensemble(xs: &[&[f64]], data_scale: f64) -> BaggingEnsemble {
        let output = ManifoldDescriptor::euclidean(xs[0].len());
        let learners: Vec<GmmModel> = xs.iter().map(|x| flat_learner(&output, x)).collect();
        let b = learners.len();
        BaggingEnsemble {
            output,
            learners,
            subset_seeds: vec![0; b],
            weights: vec![1.0 / b as f64; b],
            data_scale,
        }
    }

    fn constraint(output: &ManifoldDescriptor, t: f64, x: &[f64]) -> TimeSensitiveConstraint {
        TimeSensitiveConstraint::new(
            output,
            t,
            Point::new(output, DVector::from_row_slice(x)).unwrap(),
            1e-3,
        )
        .unwrap()
    }

    #[test]
    fn subsets_are_sorted_unique_and_eighty_percent() {
        let idx = subset_indices(50, 7);
        assert_eq!(idx.len(), 40);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(idx.iter().all(|&i| i < 50));
        assert_ne!(idx, subset_indices(50, 8));
    }

    #[test]
    fn single_learner_is_the_plain_fit() {
        let data = line_demos(12, 0.02);
        let config = EmConfig::default();
        let ensemble = bagging_fit(&data, 2, 1, &[], 3, &config).unwrap();
        let plain = fit_em(&data, 2, &config).unwrap().model;

        assert_eq!(ensemble.learner_count(), 1);
        assert_eq!(ensemble.weights(), &[1.0]);
        for (a, b) in ensemble.learners()[0].components().iter().zip(plain.components()) {
            assert_eq!(a.prior, b.prior);
            assert_eq!(a.mean.coords(), b.mean.coords());
            assert_eq!(a.covariance, b.covariance);
        }

        // the blend of one learner is that learner's regression
        let times: Vec<f64> = (0..9).map(|i| i as f64 / 8.0).collect();
        let blended = bagging_reproduce(&ensemble, &times, &[]).unwrap();
        let direct = reproduce(&plain, &times).unwrap();
        for i in 0..times.len() {
            assert_relative_eq!(blended.means[i].coords(), direct.means[i].coords(), epsilon = 1e-12);
            assert_relative_eq!(blended.covariances[i], direct.covariances[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn fixed_seed_reproduces_the_ensemble_exactly() {
        let data = line_demos(15, 0.03);
        let config = EmConfig::default();
        let a = bagging_fit(&data, 2, 4, &[], 11, &config).unwrap();
        let b = bagging_fit(&data, 2, 4, &[], 11, &config).unwrap();
        assert_eq!(a.subset_seeds(), b.subset_seeds());
        assert_eq!(a.weights(), b.weights());
        for (la, lb) in a.learners().iter().zip(b.learners()) {
            for (ca, cb) in la.components().iter().zip(lb.components()) {
                assert_eq!(ca.prior, cb.prior);
                assert_eq!(ca.mean.coords(), cb.mean.coords());
                assert_eq!(ca.covariance, cb.covariance);
            }
        }
        let c = bagging_fit(&data, 2, 4, &[], 12, &config).unwrap();
        assert_ne!(a.subset_seeds(), c.subset_seeds());
    }

    #[test]
    fn weights_concentrate_on_the_accurate_learner() {
        let ensemble = manual_ensemble(&[&[0.0, 0.0], &[1.0, 0.0], &[0.5, 0.5]], 1.0);
        let c = constraint(&ensemble.output, 0.5, &[1.0, 0.0]);
        let w = ensemble.blend_weights(&[c.clone()]).unwrap();
        assert!(w[1] > 0.999, "exact learner weight {}", w[1]);
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);

        let blended = bagging_reproduce(&ensemble, &[0.5], &[c]).unwrap();
        assert_relative_eq!(
            blended.means[0].coords(),
            &DVector::from_row_slice(&[1.0, 0.0]),
            epsilon = 1e-3
        );
    }

    #[test]
    fn identical_learners_blend_to_plain_regression_on_the_sphere() {
        let output = ManifoldDescriptor::new(vec![crate::manifold::Block::Sphere {
            ambient_dim: 4,
        }])
        .unwrap();
        let joint = joint_descriptor(&output);
        let mut comps = Vec::new();
        for (t, ang) in [(0.2, 0.1), (0.8, 0.9)] {
            let q = [(ang as f64 / 2.0).cos(), (ang as f64 / 2.0).sin(), 0.0, 0.0];
            let mean = DVector::from_row_slice(&[t, q[0], q[1], q[2], q[3]]);
            let mut cov = DMatrix::from_diagonal(&DVector::from_element(5, 0.02));
            cov[(0, 0)] = 0.09;
            comps.push(GaussianComponent {
                prior: 0.5,
                mean: Point::new(&joint, mean).unwrap(),
                covariance: cov,
            });
        }
        let model = GmmModel::new(output.clone(), comps).unwrap();
        let ensemble = BaggingEnsemble {
            output: output.clone(),
            learners: vec![model.clone(); 3],
            subset_seeds: vec![0; 3],
            weights: vec![1.0 / 3.0; 3],
            data_scale: 0.5,
        };
        let times: Vec<f64> = (0..7).map(|i| 0.2 + 0.6 * i as f64 / 6.0).collect();
        let blended = bagging_reproduce(&ensemble, &times, &[]).unwrap();
        let direct = reproduce(&model, &times).unwrap();
        for i in 0..times.len() {
            assert!(output.geodesic_distance(&blended.means[i], &direct.means[i]).unwrap() < 1e-9);
            assert_relative_eq!(blended.covariances[i], direct.covariances[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn euclidean_blend_is_the_convex_combination_of_learner_means() {
        let ensemble = manual_ensemble(&[&[0.0, 1.0], &[0.4, 0.2], &[1.0, 0.0]], 1.0);
        let c = constraint(&ensemble.output, 0.5, &[0.3, 0.3]);
        let w = ensemble.blend_weights(&[c.clone()]).unwrap();
        assert!(w.iter().all(|&x| x >= 0.0));
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);

        let blended = bagging_reproduce(&ensemble, &[0.25, 0.5, 0.75], &[c]).unwrap();
        let expected = w[0] * DVector::from_row_slice(&[0.0, 1.0])
            + w[1] * DVector::from_row_slice(&[0.4, 0.2])
            + w[2] * DVector::from_row_slice(&[1.0, 0.0]);
        for mean in &blended.means {
            assert_relative_eq!(mean.coords(), &expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn blended_error_stays_within_ten_percent_of_the_best_learner() {
        let data = line_demos(20, 0.05);
        let config = EmConfig::default();
        let output = data.output_descriptor().clone();
        let c = constraint(&output, 0.5, &[0.55, 0.42]);
        let ensemble = bagging_fit(&data, 2, 5, std::slice::from_ref(&c), 21, &config).unwrap();

        let best = ensemble
            .learners()
            .iter()
            .map(|m| {
                let pred = gmr_at(m, c.t_des, None).unwrap();
                output.geodesic_distance(&pred.mean, &c.x_des).unwrap()
            })
            .fold(f64::INFINITY, f64::min);
        let blended = bagging_reproduce(&ensemble, &[c.t_des], std::slice::from_ref(&c)).unwrap();
        let err = output.geodesic_distance(&blended.means[0], &c.x_des).unwrap();
        assert!(
            err <= 1.1 * best,
            "blended error {err} exceeds 1.1x best learner error {best}"
        );
        assert!(best > 0.0, "constraint placed off the data should not be hit exactly");
    }

    #[test]
    fn degenerate_spread_falls_back_to_uniform_weights() {
        let w = kernel_weights(&[0.3, 0.1, 0.7], 0.0);
        assert_eq!(w, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn zero_learners_is_rejected_and_learner_failures_are_tagged() {
        let data = line_demos(12, 0.02);
        let config = EmConfig::default();
        assert!(matches!(
            bagging_fit(&data, 2, 0, &[], 1, &config),
            Err(Error::InvalidArgument(_))
        ));

        // 4 demos x 3 samples = 12 pooled; 80% subsets (9) cannot seed 10 bins
        let tiny = line_demos(3, 0.02);
        let err = bagging_fit(&tiny, 10, 2, &[], 1, &config).unwrap_err();
        assert!(err.to_string().contains("learner 0"), "{err}");
    }
}

//! Gaussian mixture regression: condition a joint `(time, output)` mixture
//! on a query time and return the output-space mean and covariance.
//!
//! On curved blocks the conditional mean has no closed form; it is found by
//! a fixed-point loop that re-expresses every component in the tangent space
//! of the current estimate (transporting covariances there) and applies the
//! Euclidean conditioning formulas in local coordinates. With Euclidean-only
//! descriptors the loop lands on the classic GMR equations after one step.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::manifold::Point;

const GMR_MAX_ITER: usize = 10;
const GMR_TOL: f64 = 1e-10;

/// Regression output at one query time.
#[derive(Debug, Clone)]
pub struct GmrOutput {
    pub mean: Point,
    pub covariance: DMatrix<f64>,
    pub activations: Vec<f64>,
}

/// Regression outputs over a time grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub means: Vec<Point>,
    pub covariances: Vec<DMatrix<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Evenly spaced grid with exact endpoints. A single-sample grid
/// degenerates to `[start]`.
pub fn time_grid(start: f64, end: f64, samples: usize) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::InvalidArgument("time grid needs at least 1 sample".into()));
    }
    if samples == 1 {
        return Ok(vec![start]);
    }
    if !(end > start) {
        return Err(Error::InvalidArgument(format!(
            "time grid needs end > start, got [{start}, {end}]"
        )));
    }
    let n = samples;
    let mut grid: Vec<f64> = (0..n)
        .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
        .collect();
    grid[n - 1] = end;
    Ok(grid)
}

/// Component activations at `t`: priors times the time-marginal densities,
/// normalized. If every marginal underflows the weights fall back to
/// uniform with a warning.
pub fn activation_weights(model: &GmmModel, t: f64) -> Result<Vec<f64>> {
    if !t.is_finite() {
        return Err(Error::InvalidArgument(format!("query time {t} is not finite")));
    }
    let k = model.k();
    let mut logs = Vec::with_capacity(k);
    for c in model.components() {
        let var = c.covariance[(0, 0)];
        if !(var > 0.0) {
            return Err(Error::NumericalDegeneracy(format!(
                "non-positive time variance {var}"
            )));
        }
        let d = t - c.mean.coords()[0];
        let lp = if c.prior > 0.0 {
            c.prior.ln() - 0.5 * (d * d / var + (2.0 * std::f64::consts::PI * var).ln())
        } else {
            f64::NEG_INFINITY
        };
        logs.push(lp);
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        log::warn!("all time marginals underflow at t = {t}; using uniform activations");
        return Ok(vec![1.0 / k as f64; k]);
    }
    let mut weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    Ok(weights)
}

/// Per-component conditional statistics in the tangent space of the current
/// estimate: displacement of the conditional mean and the Schur-complement
/// covariance, both in orthonormal local coordinates.
struct LocalConditional {
    u: DVector<f64>,
    sigma: DMatrix<f64>,
}

struct GmrPass {
    basis: DMatrix<f64>,
    locals: Vec<LocalConditional>,
    step: DVector<f64>,
}

fn conditional_pass(
    model: &GmmModel,
    t: f64,
    weights: &[f64],
    estimate: &Point,
) -> Result<GmrPass> {
    let output = model.output_descriptor();
    let joint = model.joint_descriptor();
    let d_out = output.point_dim();
    let d_eff = output.effective_dim();
    let basis = output.tangent_basis(estimate);

    // joint-space anchor at the estimate; transport ignores the time slot
    let mut anchor = DVector::zeros(d_out + 1);
    anchor[0] = t;
    anchor.rows_mut(1, d_out).copy_from(estimate.coords());
    let anchor = Point::from_coords(anchor);

    let mut locals = Vec::with_capacity(model.k());
    let mut step = DVector::zeros(d_eff);
    for (k, c) in model.components().iter().enumerate() {
        let moved = joint.transport_covariance(&c.mean, &anchor, &c.covariance)?;
        let e_tt = moved[(0, 0)];
        let e_xt = basis.transpose() * moved.view((1, 0), (d_out, 1));
        let e_xx = basis.transpose() * moved.view((1, 1), (d_out, d_out)) * &basis;

        let v = output.log_map(estimate, &model.output_mean(k))?;
        let v_local = basis.transpose() * v.coords();
        let dt = t - model.time_mean(k);
        let u = v_local + &e_xt * (dt / e_tt);
        let sigma = e_xx - &e_xt * e_xt.transpose() / e_tt;
        step.axpy(weights[k], &u, 1.0);
        locals.push(LocalConditional { u, sigma });
    }
    Ok(GmrPass { basis, locals, step })
}

/// Conditional mean and covariance at `t`. `warm_start` seeds the mean
/// loop; by default it starts at the most activated component's mean.
pub fn gmr_at(model: &GmmModel, t: f64, warm_start: Option<&Point>) -> Result<GmrOutput> {
    let output = model.output_descriptor();
    let weights = activation_weights(model, t)?;
    let dominant = weights
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(k, _)| k)
        .expect("model has at least one component");

    let mut estimate = match warm_start {
        Some(p) => {
            output.validate_point(p)?;
            p.clone()
        }
        None => model.output_mean(dominant),
    };

    let mut pass = conditional_pass(model, t, &weights, &estimate)?;
    for _ in 0..GMR_MAX_ITER {
        if pass.step.norm() < GMR_TOL {
            break;
        }
        // basis columns are tangent at the estimate, so the combination is too
        let ambient = &pass.basis * &pass.step;
        estimate =
            output.exp_map(&crate::manifold::TangentVector::from_parts(estimate, ambient))?;
        pass = conditional_pass(model, t, &weights, &estimate)?;
    }

    // moment-matched blend in the tangent space of the final estimate
    let d_eff = output.effective_dim();
    let mut sigma = DMatrix::zeros(d_eff, d_eff);
    for (w, lc) in weights.iter().zip(&pass.locals) {
        sigma.syger(*w, &lc.u, &lc.u, 1.0);
        sigma += &lc.sigma * *w;
    }
    sigma.syger(-1.0, &pass.step, &pass.step, 1.0);
    sigma.fill_upper_triangle_with_lower_triangle();
    sigma = clamp_spd(sigma);
    let covariance = &pass.basis * sigma * pass.basis.transpose();

    Ok(GmrOutput { mean: estimate, covariance, activations: weights })
}

/// Clamps negative eigenvalues (possible only through rounding in the
/// moment-matched blend) to a tiny positive floor.
pub(crate) fn clamp_spd(sigma: DMatrix<f64>) -> DMatrix<f64> {
    let eig = sigma.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sigma;
    }
    let mut vals = eig.eigenvalues;
    for l in vals.iter_mut() {
        if *l < 1e-12 {
            *l = 1e-12;
        }
    }
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Runs the regression across a time grid, warm-starting each query at the
/// previous mean so the estimate tracks one geodesic branch.
pub fn reproduce(model: &GmmModel, times: &[f64]) -> Result<Trajectory> {
    if times.is_empty() {
        return Err(Error::InvalidArgument("empty time grid".into()));
    }
    let mut means = Vec::with_capacity(times.len());
    let mut covariances = Vec::with_capacity(times.len());
    let mut warm: Option<Point> = None;
    for &t in times {
        let out = gmr_at(model, t, warm.as_ref())?;
        warm = Some(out.mean.clone());
        means.push(out.mean);
        covariances.push(out.covariance);
    }
    Ok(Trajectory { times: times.to_vec(), means, covariances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{joint_descriptor, normalize_time, DemonstrationSet, RawDemonstration};
    use crate::gmm::{fit_em, EmConfig, GaussianComponent};
    use crate::manifold::ManifoldDescriptor;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn joint_point(vals: &[f64]) -> Point {
        Point::from_coords(DVector::from_row_slice(vals))
    }

    #[test]
    fn single_component_conditioning_is_the_textbook_formula() {
        // mean (0,0), cov [[1, .5], [.5, 1]]: at t = 1 the conditional is
        // N(0.5, 0.75)
        let m = ManifoldDescriptor::euclidean(1);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let model = GmmModel::new(
            m,
            vec![GaussianComponent { prior: 1.0, mean: joint_point(&[0.0, 0.0]), covariance: cov }],
        )
        .unwrap();
        let out = gmr_at(&model, 1.0, None).unwrap();
        assert_relative_eq!(out.mean.coords()[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(out.covariance[(0, 0)], 0.75, epsilon = 1e-12);
        assert_eq!(out.activations, vec![1.0]);
    }

    #[test]
    fn activation_weights_match_hand_computed_marginals() {
        let m = ManifoldDescriptor::euclidean(1);
        let eye = DMatrix::identity(2, 2);
        let model = GmmModel::new(
            m,
            vec![
                GaussianComponent { prior: 0.5, mean: joint_point(&[0.0, 0.0]), covariance: eye.clone() },
                GaussianComponent { prior: 0.5, mean: joint_point(&[1.0, 0.0]), covariance: eye },
            ],
        )
        .unwrap();
        let w = activation_weights(&model, 0.0).unwrap();
        // log ratio is exactly -1/2
        let h2 = (-0.5f64).exp() / (1.0 + (-0.5f64).exp());
        assert_relative_eq!(w[1], h2, epsilon = 1e-15);
        assert_relative_eq!(w[0] + w[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn euclidean_regression_matches_independent_implementation() {
        // plain-arithmetic GMR written from the textbook equations, compared
        // on a fitted two-dimensional model
        let m = ManifoldDescriptor::euclidean(2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut demos = Vec::new();
        for _ in 0..4 {
            let n = 60;
            let times: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            let points = times
                .iter()
                .map(|&t| {
                    let x = t * 2.0 + 0.05 * rng.sample::<f64, _>(StandardNormal);
                    let y = (t * 3.0).sin() + 0.05 * rng.sample::<f64, _>(StandardNormal);
                    Point::from_coords(DVector::from_row_slice(&[x, y]))
                })
                .collect();
            demos.push(RawDemonstration { times, points });
        }
        let data = normalize_time(&m, &demos, 1.0).unwrap();
        let fit = fit_em(&data, 3, &EmConfig::default()).unwrap();
        let model = &fit.model;

        for &t in &[0.0, 0.17, 0.5, 0.83, 1.0] {
            let out = gmr_at(model, t, None).unwrap();

            // reference path: everything in global coordinates
            let mut hs = Vec::new();
            for c in model.components() {
                let v = c.covariance[(0, 0)];
                let d = t - c.mean.coords()[0];
                hs.push(c.prior * (-0.5 * d * d / v).exp() / (2.0 * std::f64::consts::PI * v).sqrt());
            }
            let total: f64 = hs.iter().sum();
            for h in &mut hs {
                *h /= total;
            }
            let mut mean = DVector::zeros(2);
            let mut second = DMatrix::zeros(2, 2);
            for (h, c) in hs.iter().zip(model.components()) {
                let mu_x = c.mean.coords().rows(1, 2).into_owned();
                let s_xt = c.covariance.view((1, 0), (2, 1)).into_owned();
                let s_tt = c.covariance[(0, 0)];
                let s_xx = c.covariance.view((1, 1), (2, 2)).into_owned();
                let mu_k = &mu_x + &s_xt * ((t - c.mean.coords()[0]) / s_tt);
                let sig_k = &s_xx - &s_xt * s_xt.transpose() / s_tt;
                second += (sig_k + &mu_k * mu_k.transpose()) * *h;
                mean += mu_k * *h;
            }
            let cov = second - &mean * mean.transpose();

            assert!((out.mean.coords() - &mean).norm() < 1e-12, "mean mismatch at t = {t}");
            assert!((&out.covariance - &cov).norm() < 1e-12, "covariance mismatch at t = {t}");
        }
    }

    #[test]
    fn conditional_moments_match_monte_carlo() {
        // sample the joint mixture, keep draws in a narrow time window, and
        // compare the empirical conditional moments against the regression
        let m = ManifoldDescriptor::euclidean(2);
        let c1 = DMatrix::from_row_slice(3, 3, &[
            0.9, 0.3, -0.1,
            0.3, 0.8, 0.2,
            -0.1, 0.2, 0.6,
        ]);
        let c2 = DMatrix::from_row_slice(3, 3, &[
            1.1, -0.2, 0.3,
            -0.2, 0.7, -0.1,
            0.3, -0.1, 0.9,
        ]);
        let model = GmmModel::new(
            m,
            vec![
                GaussianComponent { prior: 0.4, mean: joint_point(&[-0.5, 1.0, 0.5]), covariance: c1.clone() },
                GaussianComponent { prior: 0.6, mean: joint_point(&[0.7, -0.8, 1.2]), covariance: c2.clone() },
            ],
        )
        .unwrap();
        let t0 = 0.2;
        let out = gmr_at(&model, t0, None).unwrap();

        let chol1 = c1.cholesky().unwrap();
        let chol2 = c2.cholesky().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let window = 0.03;
        let mut count = 0.0;
        let mut mean = DVector::zeros(2);
        let mut second = DMatrix::zeros(2, 2);
        for _ in 0..2_000_000 {
            let (mu, chol) = if rng.random::<f64>() < 0.4 {
                (model.component(0).mean.coords(), &chol1)
            } else {
                (model.component(1).mean.coords(), &chol2)
            };
            let z = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let draw = mu + chol.l() * z;
            if (draw[0] - t0).abs() < window {
                let x = draw.rows(1, 2).into_owned();
                second += &x * x.transpose();
                mean += x;
                count += 1.0;
            }
        }
        assert!(count > 10_000.0, "window too narrow: {count} draws");
        mean /= count;
        second /= count;
        let cov = second - &mean * mean.transpose();

        let mean_err = (out.mean.coords() - &mean).norm();
        assert!(mean_err < 0.02, "conditional mean off by {mean_err}");
        let cov_err = (&out.covariance - &cov).norm() / out.covariance.norm();
        assert!(cov_err < 0.05, "conditional covariance off by {cov_err}");
    }

    #[test]
    fn quaternion_regression_tracks_the_geodesic() {
        // noiseless demos along one geodesic arc; the regression mean must
        // stay within a milliradian of the independent slerp construction
        let m: ManifoldDescriptor = "s:4".parse().unwrap();
        let qa = DVector::from_row_slice(&[1.0, 0.0, 0.0, 0.0]);
        let angle: f64 = 0.8; // rotation angle of the arc end
        let axis = [0.26726124191242440, 0.53452248382484879, 0.80178372573727319];
        let half = angle / 2.0;
        let qb = DVector::from_row_slice(&[
            half.cos(),
            half.sin() * axis[0],
            half.sin() * axis[1],
            half.sin() * axis[2],
        ]);
        let slerp = |s: f64| -> DVector<f64> {
            let dot = qa.dot(&qb).clamp(-1.0, 1.0);
            let theta = dot.acos();
            (&qa * ((1.0 - s) * theta).sin() + &qb * (s * theta).sin()) / theta.sin()
        };
        let mut demos = Vec::new();
        for _ in 0..3 {
            let n = 80;
            let times: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            let points = times.iter().map(|&s| Point::from_coords(slerp(s))).collect();
            demos.push(RawDemonstration { times: times.clone(), points });
        }
        let data = normalize_time(&m, &demos, 1.0).unwrap();
        let fit = fit_em(&data, 4, &EmConfig::default()).unwrap();
        let grid = time_grid(0.0, 1.0, 41).unwrap();
        let traj = reproduce(&fit.model, &grid).unwrap();
        for (i, &t) in grid.iter().enumerate() {
            let expected = slerp(t);
            let got = traj.means[i].coords();
            let err = crate::frame::quat_angle(&expected, got);
            assert!(err < 1e-3, "rotation error {err} rad at t = {t}");
        }
        // covariances are tangent-supported: Sigma q = 0 at the mean
        for (mu, cov) in traj.means.iter().zip(&traj.covariances) {
            assert!((cov * mu.coords()).norm() < 1e-9);
        }
    }

    #[test]
    fn reproduce_covariances_are_symmetric_positive() {
        let m = ManifoldDescriptor::euclidean(1);
        let mut demos = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3 {
            let n = 50;
            let times: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            let points = times
                .iter()
                .map(|&t| {
                    Point::from_coords(DVector::from_row_slice(&[
                        (6.0 * t).cos() + 0.03 * rng.sample::<f64, _>(StandardNormal),
                    ]))
                })
                .collect();
            demos.push(RawDemonstration { times, points });
        }
        let data = normalize_time(&m, &demos, 2.0).unwrap();
        let fit = fit_em(&data, 5, &EmConfig::default()).unwrap();
        let grid = time_grid(0.0, 2.0, 101).unwrap();
        let traj = reproduce(&fit.model, &grid).unwrap();
        assert_eq!(traj.len(), 101);
        assert_relative_eq!(traj.times[0], 0.0);
        assert_relative_eq!(traj.times[100], 2.0);
        for cov in &traj.covariances {
            assert!(cov[(0, 0)] > 0.0);
            assert!((cov - cov.transpose()).norm() < 1e-12);
        }
    }

    #[test]
    fn time_grid_validates_and_hits_endpoints() {
        assert!(time_grid(0.0, 1.0, 0).is_err());
        assert!(time_grid(1.0, 1.0, 5).is_err());
        assert_eq!(time_grid(0.0, 1.0, 1).unwrap(), vec![0.0]);
        let g = time_grid(0.0, 60.0, 201).unwrap();
        assert_eq!(g.len(), 201);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[200], 60.0);
        assert_relative_eq!(g[100], 30.0, epsilon = 1e-12);
    }

    #[test]
    fn far_extrapolation_still_returns_weights() {
        let m = ManifoldDescriptor::euclidean(1);
        let eye = DMatrix::identity(2, 2) * 1e-4;
        let model = GmmModel::new(
            m,
            vec![
                GaussianComponent { prior: 0.5, mean: joint_point(&[0.0, 0.0]), covariance: eye.clone() },
                GaussianComponent { prior: 0.5, mean: joint_point(&[1.0, 1.0]), covariance: eye },
            ],
        )
        .unwrap();
        let w = activation_weights(&model, 1e6).unwrap();
        assert_eq!(w.len(), 2);
        let sum: f64 = w.iter().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn joint_descriptor_prepends_time() {
        let m: ManifoldDescriptor = "e:3,s:4".parse().unwrap();
        let j = joint_descriptor(&m);
        assert_eq!(j.point_dim(), 8);
        assert_eq!(j.effective_dim(), 7);
        let _ = DemonstrationSet::new(
            m,
            vec![joint_point(&[0.0, 1.0, 2.0, 3.0, 1.0, 0.0, 0.0, 0.0])],
            vec![0..1],
        )
        .unwrap();
    }
}

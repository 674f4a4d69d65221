//! Constrained EM: force a mixture to pass through desired poses at
//! desired times.
//!
//! Each constraint pins one component's joint mean at `(t_des, x_des)`;
//! everything else about EM is unchanged, so the likelihood still climbs.
//! Pinning alone does not make the regression hit the pose: neighboring
//! components keep activation mass at `t_des` and drag the blend away.
//! A post-convergence step therefore shrinks covariances by per-component
//! factors γ_k ∈ (0, 1], maximizing data likelihood subject to every other
//! component's activation at each constrained time staying below ε.

use nalgebra::DVector;

use crate::data::{joint_descriptor, DemonstrationSet};
use crate::error::{Error, Result};
use crate::gmm::{
    em_loop, init_kbins, kbin_range, time_sorted_indices, weighted_scatter, EmConfig,
    GaussianComponent, GmmModel, TangentDensity,
};
use crate::gmr::gmr_at;
use crate::manifold::{ManifoldDescriptor, Point};

/// Smallest allowed covariance scale.
const GAMMA_FLOOR: f64 = 1e-6;
/// Scale candidates per coordinate in the ascent phase.
const GAMMA_CANDIDATES: usize = 64;
/// Minimum log-likelihood gain to accept a coordinate move.
const ASCENT_GAIN: f64 = 1e-9;
const ASCENT_MAX_PASSES: usize = 60;
/// Extra ladder refinement rounds after the full-range ascent. Each round
/// rebuilds per-coordinate candidates one rung around the incumbent, so the
/// final resolution is fine enough to sit on a cap boundary.
const SCALE_REFINEMENTS: usize = 3;
/// An unconstrained component whose time mean lands this close to a
/// constrained time makes the activation cap unreachable.
const TIME_GUARD: f64 = 1e-6;

/// A desired pose at a desired time, with the activation threshold the
/// scaling step must push every other component below.
#[derive(Debug, Clone)]
pub struct TimeSensitiveConstraint {
    pub t_des: f64,
    pub x_des: Point,
    pub epsilon: f64,
}

impl TimeSensitiveConstraint {
    pub const DEFAULT_EPSILON: f64 = 1e-3;

    pub fn new(output: &ManifoldDescriptor, t_des: f64, x_des: Point, epsilon: f64) -> Result<Self> {
        if !t_des.is_finite() {
            return Err(Error::InvalidArgument(format!("constraint time {t_des} is not finite")));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "activation threshold {epsilon} must lie in (0, 1)"
            )));
        }
        output.validate_point(&x_des)?;
        Ok(TimeSensitiveConstraint { t_des, x_des, epsilon })
    }
}

/// A constraint resolved to the component that will carry it.
#[derive(Debug, Clone)]
pub struct BoundConstraint {
    pub constraint: TimeSensitiveConstraint,
    pub lambda: usize,
}

/// Covariance scales produced for one constraint. The γ vector is shared
/// across constraints (one joint program); the activation is the bound
/// component's, evaluated at its constrained time under those scales.
#[derive(Debug, Clone)]
pub struct ScalingSolution {
    pub gammas: Vec<f64>,
    pub achieved_activation: f64,
    pub feasible: bool,
}

/// Constrained fit: the unscaled mixture, the constraint bindings, the
/// shared covariance scales, and the likelihood trace.
#[derive(Debug, Clone)]
pub struct CemResult {
    pub model: GmmModel,
    pub bindings: Vec<BoundConstraint>,
    pub gammas: Vec<f64>,
    pub scalings: Vec<ScalingSolution>,
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl CemResult {
    /// The mixture with covariances scaled by γ; this is what regression
    /// should run on.
    pub fn scaled_model(&self) -> Result<GmmModel> {
        self.model.scaled(&self.gammas)
    }
}

/// Index of the component whose output mean is geodesically closest to
/// `x_des`; ties break to the smallest index.
pub fn identify_component(model: &GmmModel, x_des: &Point) -> Result<usize> {
    model.output_descriptor().validate_point(x_des)?;
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for k in 0..model.k() {
        let d = model.output_descriptor().geodesic_distance(&model.output_mean(k), x_des)?;
        if d < best_dist {
            best = k;
            best_dist = d;
        }
    }
    Ok(best)
}

/// Activation weights at `t` with each component's covariance scaled by its
/// γ: priors times scaled time marginals, normalized.
pub fn scaling_activation(model: &GmmModel, gammas: &[f64], t: f64) -> Result<Vec<f64>> {
    if gammas.len() != model.k() {
        return Err(Error::InvalidArgument(format!(
            "{} scale factors for {} components",
            gammas.len(),
            model.k()
        )));
    }
    let mut logs = Vec::with_capacity(model.k());
    for (c, &g) in model.components().iter().zip(gammas) {
        if !(g > 0.0 && g <= 1.0) {
            return Err(Error::InvalidArgument(format!("scale factor {g} outside (0, 1]")));
        }
        let var = g * c.covariance[(0, 0)];
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
        log::warn!("all scaled time marginals underflow at t = {t}; using uniform activations");
        return Ok(vec![1.0 / model.k() as f64; model.k()]);
    }
    let mut weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    Ok(weights)
}

/// One activation cap: at `t_des`, every component other than `lambda`
/// must activate at most `epsilon`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ActivationCap {
    pub lambda: usize,
    pub t_des: f64,
    pub epsilon: f64,
}

fn worst_violation(
    model: &GmmModel,
    gammas: &[f64],
    caps: &[ActivationCap],
) -> Result<Option<(usize, f64)>> {
    let mut worst: Option<(usize, f64)> = None;
    for cap in caps {
        let weights = scaling_activation(model, gammas, cap.t_des)?;
        for (k, &w) in weights.iter().enumerate() {
            if k == cap.lambda {
                continue;
            }
            let v = w - cap.epsilon;
            if v > 0.0 && worst.map_or(true, |(_, wv)| v > wv) {
                worst = Some((k, v));
            }
        }
    }
    Ok(worst)
}

fn caps_satisfied(model: &GmmModel, gammas: &[f64], caps: &[ActivationCap]) -> Result<bool> {
    Ok(worst_violation(model, gammas, caps)?.is_none())
}

/// Per-component log joint weights (log prior + log density) for every
/// sample, cached so the ascent can swap one component's scale cheaply.
struct LikelihoodRows<'a> {
    model: &'a GmmModel,
    data: &'a DemonstrationSet,
    rows: Vec<Vec<f64>>,
}

impl<'a> LikelihoodRows<'a> {
    fn new(model: &'a GmmModel, data: &'a DemonstrationSet, gammas: &[f64]) -> Result<Self> {
        let mut cache = LikelihoodRows { model, data, rows: Vec::with_capacity(model.k()) };
        for (k, &g) in gammas.iter().enumerate() {
            let row = cache.row(k, g)?;
            cache.rows.push(row);
        }
        Ok(cache)
    }

    fn row(&self, k: usize, gamma: f64) -> Result<Vec<f64>> {
        let c = self.model.component(k);
        let joint = self.model.joint_descriptor();
        let density = TangentDensity::new(joint, &c.mean, &c.covariance, gamma)?;
        let log_prior = c.prior.ln();
        self.data
            .samples()
            .iter()
            .map(|s| density.log_pdf(joint, s.coords()).map(|lp| lp + log_prior))
            .collect()
    }

    /// Mixture log-likelihood with component `k`'s row replaced.
    fn total_with(&self, k: usize, replacement: &[f64]) -> f64 {
        let n = self.data.len();
        let mut ll = 0.0;
        for i in 0..n {
            let mut max = f64::NEG_INFINITY;
            for (j, row) in self.rows.iter().enumerate() {
                let v = if j == k { replacement[i] } else { row[i] };
                if v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            let mut sum = 0.0;
            for (j, row) in self.rows.iter().enumerate() {
                let v = if j == k { replacement[i] } else { row[i] };
                sum += (v - max).exp();
            }
            ll += max + sum.ln();
        }
        ll
    }

    fn total(&self) -> f64 {
        if self.rows.is_empty() {
            return f64::NEG_INFINITY;
        }
        self.total_with(0, &self.rows[0].clone())
    }
}

fn log_spaced_candidates() -> Vec<f64> {
    (0..GAMMA_CANDIDATES)
        .map(|i| {
            let frac = i as f64 / (GAMMA_CANDIDATES - 1) as f64;
            10f64.powf(GAMMA_FLOOR.log10() * (1.0 - frac))
        })
        .collect()
}

/// Raises `trial[j]` to the largest feasible scale at or below 1, bisecting
/// in log space when the cap boundary sits between the current value and 1.
fn expand_to_cap(
    model: &GmmModel,
    caps: &[ActivationCap],
    trial: &mut [f64],
    j: usize,
) -> Result<()> {
    let lo = trial[j];
    trial[j] = 1.0;
    if caps_satisfied(model, trial, caps)? {
        return Ok(());
    }
    let (mut lo, mut hi) = (lo, 1.0);
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        trial[j] = mid;
        if caps_satisfied(model, trial, caps)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    trial[j] = lo;
    Ok(())
}

/// Candidates spanning one rung either side of `center`, clamped to
/// [GAMMA_FLOOR, 1].
fn local_ladder(center: f64, half_width: f64) -> Vec<f64> {
    let lo = (center.log10() - half_width).max(GAMMA_FLOOR.log10());
    let hi = (center.log10() + half_width).min(0.0);
    (0..GAMMA_CANDIDATES)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (GAMMA_CANDIDATES - 1) as f64))
        .collect()
}

/// Joint scaling program over all caps with one shared γ vector:
/// maximize the scaled data log-likelihood subject to every cap, starting
/// from γ = 1. Restoration halves the most violating component's scale
/// until feasible; a fixed-order coordinate ascent over log-spaced
/// candidate ladders then climbs the likelihood without leaving the
/// feasible set, re-centering the ladders at finer resolution once each
/// level stalls. The optimum usually sits exactly on a cap boundary
/// between two rungs, so without the refinement the solver would stop a
/// whole rung short.
///
/// Two kinds of move are tried: a single scale change, and a bound
/// component's scale candidate paired with bisected re-expansion of the
/// other scales onto the exact cap boundary. The paired move matters
/// because the likelihood is stationary in every scale at the fit, so a
/// lone shrink of a bound scale never clears the acceptance gain even when
/// it buys cap slack that the free scales could spend.
pub(crate) fn scaling_optimize_joint(
    model: &GmmModel,
    data: &DemonstrationSet,
    caps: &[ActivationCap],
) -> Result<Vec<f64>> {
    let k = model.k();
    let mut gammas = vec![1.0; k];
    if caps.is_empty() {
        return Ok(gammas);
    }
    while let Some((comp, _)) = worst_violation(model, &gammas, caps)? {
        gammas[comp] *= 0.5;
        if gammas[comp] < GAMMA_FLOOR {
            return Err(Error::Infeasible {
                component: comp,
                message: format!(
                    "activation caps cannot be met even at the scale floor {GAMMA_FLOOR:e}"
                ),
            });
        }
    }

    let mut cache = LikelihoodRows::new(model, data, &gammas)?;
    let mut best_ll = cache.total();
    // rung spacing of the current ladders, in decades
    let mut width = -GAMMA_FLOOR.log10() / (GAMMA_CANDIDATES - 1) as f64;
    for level in 0..=SCALE_REFINEMENTS {
        let ladders: Vec<Vec<f64>> = if level == 0 {
            vec![log_spaced_candidates(); k]
        } else {
            let local = (0..k).map(|j| local_ladder(gammas[j], width)).collect();
            width = 2.0 * width / (GAMMA_CANDIDATES - 1) as f64;
            local
        };
        for _ in 0..ASCENT_MAX_PASSES {
            let mut improved = false;
            for j in 0..k {
                let mut best_move: Option<(f64, f64, Vec<f64>)> = None;
                for &g in &ladders[j] {
                    if g == gammas[j] {
                        continue;
                    }
                    let mut trial = gammas.clone();
                    trial[j] = g;
                    if !caps_satisfied(model, &trial, caps)? {
                        continue;
                    }
                    let row = cache.row(j, g)?;
                    let ll = cache.total_with(j, &row);
                    if ll > best_ll + ASCENT_GAIN && best_move.as_ref().map_or(true, |m| ll > m.1)
                    {
                        best_move = Some((g, ll, row));
                    }
                }
                if let Some((g, ll, row)) = best_move {
                    gammas[j] = g;
                    best_ll = ll;
                    cache.rows[j] = row;
                    improved = true;
                }
            }
            for cap in caps {
                let lam = cap.lambda;
                let mut best_move: Option<(Vec<f64>, f64)> = None;
                for &g in &ladders[lam] {
                    let mut trial = gammas.clone();
                    trial[lam] = g;
                    if !caps_satisfied(model, &trial, caps)? {
                        continue;
                    }
                    for j in 0..k {
                        if j != lam {
                            expand_to_cap(model, caps, &mut trial, j)?;
                        }
                    }
                    let ll = LikelihoodRows::new(model, data, &trial)?.total();
                    if ll > best_ll + ASCENT_GAIN && best_move.as_ref().map_or(true, |m| ll > m.1)
                    {
                        best_move = Some((trial, ll));
                    }
                }
                if let Some((trial, ll)) = best_move {
                    cache = LikelihoodRows::new(model, data, &trial)?;
                    gammas = trial;
                    best_ll = ll;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
    }
    Ok(gammas)
}

/// Scaling program for a single constrained component, from a converged
/// model whose mean `lambda` is already pinned.
pub fn scaling_optimize(
    model: &GmmModel,
    data: &DemonstrationSet,
    lambda: usize,
    t_des: f64,
    epsilon: f64,
) -> Result<ScalingSolution> {
    if lambda >= model.k() {
        return Err(Error::InvalidArgument(format!(
            "component {lambda} out of range for K = {}",
            model.k()
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "activation threshold {epsilon} must lie in (0, 1)"
        )));
    }
    let caps = [ActivationCap { lambda, t_des, epsilon }];
    let gammas = scaling_optimize_joint(model, data, &caps)?;
    let achieved = scaling_activation(model, &gammas, t_des)?[lambda];
    Ok(ScalingSolution { gammas, achieved_activation: achieved, feasible: true })
}

/// Regression mean of a single component at `t` (the rest of the mixture
/// masked out).
fn component_prediction(model: &GmmModel, k: usize, t: f64) -> Result<Point> {
    let single = GmmModel::new(
        model.output_descriptor().clone(),
        vec![GaussianComponent { prior: 1.0, ..model.component(k).clone() }],
    )?;
    Ok(gmr_at(&single, t, None)?.mean)
}

/// EM with pinned means plus the covariance-scaling step.
///
/// Constraints bind to components of the time-bin initialization by output
/// distance, the bound means are pinned at `(t_des, x_des)` from the start,
/// and EM runs with those means held fixed. After convergence one joint
/// scaling program covers all constraints, and the regression at each
/// constrained time is checked against the activation mixing bound.
pub fn cem_fit(
    data: &DemonstrationSet,
    k: usize,
    constraints: &[TimeSensitiveConstraint],
    config: &EmConfig,
) -> Result<CemResult> {
    if !constraints.is_empty() && constraints.len() >= k {
        return Err(Error::InvalidArgument(format!(
            "{} constraints need more than {k} components",
            constraints.len()
        )));
    }
    let output = data.output_descriptor().clone();
    for c in constraints {
        output.validate_point(&c.x_des)?;
        if !c.t_des.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "constraint time {} is not finite",
                c.t_des
            )));
        }
        if k > 1 && !(c.epsilon > 0.0 && c.epsilon < 1.0 / (k - 1) as f64) {
            return Err(Error::InvalidArgument(format!(
                "activation threshold {} must lie in (0, 1/{})",
                c.epsilon,
                k - 1
            )));
        }
    }

    let init = init_kbins(data, k, config)?;
    let mut bindings: Vec<BoundConstraint> = Vec::with_capacity(constraints.len());
    for c in constraints {
        let lambda = identify_component(&init, &c.x_des)?;
        if bindings.iter().any(|b| b.lambda == lambda) {
            return Err(Error::ConstraintCollision {
                component: lambda,
                message: "two constraints bind the same component; use more components or \
                          constraints with distinct nearest means"
                    .into(),
            });
        }
        bindings.push(BoundConstraint { constraint: c.clone(), lambda });
    }

    // pin the bound means now so the recorded likelihood trace starts from
    // a model the fixed-mean M-step can only improve
    let joint = joint_descriptor(&output);
    let order = time_sorted_indices(data);
    let coords: Vec<&DVector<f64>> = data.samples().iter().map(|p| p.coords()).collect();
    let n = data.len();
    let mut components = init.components().to_vec();
    let mut fixed_means = Vec::with_capacity(bindings.len());
    for b in &bindings {
        let mut pinned = DVector::zeros(joint.point_dim());
        pinned[0] = b.constraint.t_des;
        pinned
            .rows_mut(1, output.point_dim())
            .copy_from(b.constraint.x_des.coords());
        let pinned = Point::from_coords(pinned);
        // the bin's scatter, re-centered on the pinned mean
        let bin: Vec<&DVector<f64>> =
            order[kbin_range(n, k, b.lambda)].iter().map(|&i| coords[i]).collect();
        let covariance =
            weighted_scatter(&joint, &pinned, &bin, &vec![1.0; bin.len()], bin.len() as f64, config)?;
        components[b.lambda] = GaussianComponent {
            prior: components[b.lambda].prior,
            mean: pinned.clone(),
            covariance,
        };
        fixed_means.push((b.lambda, pinned));
    }
    let pinned_init = GmmModel::new(output.clone(), components)?;
    let fit = em_loop(pinned_init, data, config, &fixed_means)?;

    // a free component sitting on a constrained time makes its activation
    // cap unreachable (shrinking its covariance concentrates it there)
    for b in &bindings {
        for j in 0..k {
            if j != b.lambda && (fit.model.time_mean(j) - b.constraint.t_des).abs() < TIME_GUARD {
                return Err(Error::Infeasible {
                    component: j,
                    message: format!(
                        "component {j} converged with time mean {} on top of constrained time {}",
                        fit.model.time_mean(j),
                        b.constraint.t_des
                    ),
                });
            }
        }
    }

    let caps: Vec<ActivationCap> = bindings
        .iter()
        .map(|b| ActivationCap {
            lambda: b.lambda,
            t_des: b.constraint.t_des,
            epsilon: b.constraint.epsilon,
        })
        .collect();
    let gammas = scaling_optimize_joint(&fit.model, data, &caps)?;

    let scaled = fit.model.scaled(&gammas)?;
    let mut scalings = Vec::with_capacity(bindings.len());
    for b in &bindings {
        let weights = scaling_activation(&fit.model, &gammas, b.constraint.t_des)?;
        let regression = gmr_at(&scaled, b.constraint.t_des, None)?;
        let err = output.geodesic_distance(&regression.mean, &b.constraint.x_des)?;
        let mut d_max = 0.0f64;
        for j in 0..k {
            let pred = component_prediction(&scaled, j, b.constraint.t_des)?;
            d_max = d_max.max(output.geodesic_distance(&pred, &b.constraint.x_des)?);
        }
        // activation mixing bound, padded for the regression solver's own
        // stopping tolerance
        let bound = (k - 1) as f64 * b.constraint.epsilon * d_max * (1.0 + 1e-9) + 1e-9;
        if err > bound {
            return Err(Error::NumericalDegeneracy(format!(
                "regression misses the constrained pose by {err:.3e} (bound {bound:.3e}) at t = {}",
                b.constraint.t_des
            )));
        }
        scalings.push(ScalingSolution {
            gammas: gammas.clone(),
            achieved_activation: weights[b.lambda],
            feasible: true,
        });
    }

    Ok(CemResult {
        model: fit.model,
        bindings,
        gammas,
        scalings,
        log_likelihoods: fit.log_likelihoods,
        iterations: fit.iterations,
        converged: fit.converged,
    })
}

//! Task-parameterized mixtures: learn one local model per reference frame,
//! then blend the frames' predictions at run time under new frame poses.
//!
//! Each frame sees the demonstrations through its own inverse transform, so
//! a skill learned once adapts to moved task parameters by moving the frames
//! only. Frames can carry a pose constraint in their local coordinates
//! (usually: pass through my origin at my anchor time); those are trained
//! with the constrained fit, everything else with plain EM. Reproduction
//! fuses the per-frame predictions with a weighted product of Gaussians
//! whose weights ramp linearly between frame anchors and are exactly
//! one-hot at them, which hands each anchor pose to its own frame alone.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::cem::{cem_fit, TimeSensitiveConstraint};
use crate::data::DemonstrationSet;
use crate::error::{Error, Result};
use crate::frame::TaskFrame;
use crate::gmm::{fit_em, EmConfig, GmmModel};
use crate::gmr::{reproduce, Trajectory};
use crate::manifold::{ManifoldDescriptor, Point, TangentVector};

const FUSE_MAX_ITER: usize = 10;
const FUSE_TOL: f64 = 1e-10;

/// A reference frame plus its optional local-coordinates constraint.
#[derive(Debug, Clone)]
pub struct TaskFrameSpec {
    pub frame: TaskFrame,
    pub constraint: Option<TimeSensitiveConstraint>,
}

impl TaskFrameSpec {
    pub fn unconstrained(frame: TaskFrame) -> Self {
        TaskFrameSpec { frame, constraint: None }
    }

    /// Constrains the local model to pass through this frame's origin at
    /// `t_des`: the standard "reach the task parameter" binding.
    pub fn constrained_origin(
        frame: TaskFrame,
        output: &ManifoldDescriptor,
        t_des: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let constraint = TimeSensitiveConstraint::new(output, t_des, output.origin(), epsilon)?;
        Ok(TaskFrameSpec { frame, constraint: Some(constraint) })
    }
}

/// One frame's trained local mixture and its anchor bookkeeping.
#[derive(Debug, Clone)]
pub struct FrameModel {
    /// Local mixture with unscaled covariances.
    pub model: GmmModel,
    /// Covariance scales from the constrained fit (all ones when plain EM).
    pub gammas: Vec<f64>,
    /// Anchor component: the pinned one, or the one nearest the local origin.
    pub lambda: usize,
    /// Anchor time: the constrained time, or the anchor component's time mean.
    pub anchor_time: f64,
    pub constrained: bool,
}

/// Task-parameterized model: per-frame local mixtures over a shared output
/// descriptor with a shared component count.
#[derive(Debug, Clone)]
pub struct TpGmmModel {
    output: ManifoldDescriptor,
    k: usize,
    frames: Vec<FrameModel>,
}

impl TpGmmModel {
    pub fn new(frames: Vec<FrameModel>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("model needs at least one frame".into()))?;
        let output = first.model.output_descriptor().clone();
        let k = first.model.k();
        for (f, fm) in frames.iter().enumerate() {
            if fm.model.output_descriptor() != &output {
                return Err(Error::InvalidArgument(format!(
                    "frame {f} uses descriptor {}, frame 0 uses {}",
                    fm.model.output_descriptor(),
                    output
                )));
            }
            if fm.model.k() != k {
                return Err(Error::InvalidArgument(format!(
                    "frame {f} has {} components, frame 0 has {k}",
                    fm.model.k()
                )));
            }
            if fm.gammas.len() != k || fm.gammas.iter().any(|&g| !(g > 0.0 && g <= 1.0)) {
                return Err(Error::InvalidArgument(format!(
                    "frame {f} carries invalid covariance scales"
                )));
            }
            if fm.lambda >= k {
                return Err(Error::InvalidArgument(format!(
                    "frame {f} anchors on component {} of {k}",
                    fm.lambda
                )));
            }
            if !fm.anchor_time.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "frame {f} anchor time {} is not finite",
                    fm.anchor_time
                )));
            }
        }
        Ok(TpGmmModel { output, k, frames })
    }

    pub fn output_descriptor(&self) -> &ManifoldDescriptor {
        &self.output
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn frames(&self) -> &[FrameModel] {
        &self.frames
    }
}

/// Per-frame fusion weights over a query grid, one-hot at each frame's
/// anchor and linear in between.
#[derive(Debug, Clone)]
pub struct FusionSchedule {
    /// Grid index of each frame's anchor.
    pub anchors: Vec<usize>,
    /// `weights[f][n]` in [0, 1].
    pub weights: Vec<Vec<f64>>,
}

/// The fused trajectory together with the schedule that produced it.
#[derive(Debug, Clone)]
pub struct TpReproduction {
    pub trajectory: Trajectory,
    pub schedule: FusionSchedule,
}

/// Views the demonstrations from inside `frame`: outputs through the
/// inverse transform, times untouched.
pub fn project_to_frame(data: &DemonstrationSet, frame: &TaskFrame) -> Result<DemonstrationSet> {
    let output = data.output_descriptor().clone();
    frame.check_compatible(&output)?;
    let joint = data.joint_descriptor().clone();
    let inverse = frame.inverse();
    let mut samples = Vec::with_capacity(data.len());
    for p in data.samples() {
        let coords = p.coords();
        let out = Point::from_coords(coords.rows(1, output.point_dim()).into_owned());
        let local = inverse.apply(&output, &out)?;
        let mut joint_coords = DVector::zeros(joint.point_dim());
        joint_coords[0] = coords[0];
        joint_coords.rows_mut(1, output.point_dim()).copy_from(local.coords());
        samples.push(Point::from_coords(joint_coords));
    }
    DemonstrationSet::new(output, samples, data.boundaries().to_vec())
}

/// Maps a local regression output into the global frame: the mean through
/// the frame action, the covariance through its differential.
pub fn local_to_global(
    frame: &TaskFrame,
    output: &ManifoldDescriptor,
    mean: &Point,
    covariance: &DMatrix<f64>,
) -> Result<(Point, DMatrix<f64>)> {
    let global_mean = frame.apply(output, mean)?;
    let global_cov = frame.apply_covariance(output, covariance)?;
    Ok((global_mean, global_cov))
}

/// Trains one local mixture per frame: the constrained fit where the frame
/// carries a constraint, plain EM otherwise. Unconstrained frames anchor on
/// the component nearest their origin.
pub fn tpgmm_fit(
    data: &DemonstrationSet,
    specs: &[TaskFrameSpec],
    k: usize,
    config: &EmConfig,
) -> Result<TpGmmModel> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("need at least one frame".into()));
    }
    let output = data.output_descriptor().clone();
    let mut frames = Vec::with_capacity(specs.len());
    for (f, spec) in specs.iter().enumerate() {
        let tag = format!("frame {f}");
        let local = project_to_frame(data, &spec.frame).map_err(|e| e.with_context(&tag))?;
        let frame_model = match &spec.constraint {
            Some(c) => {
                let fit = cem_fit(&local, k, std::slice::from_ref(c), config)
                    .map_err(|e| e.with_context(&tag))?;
                FrameModel {
                    model: fit.model,
                    gammas: fit.gammas,
                    lambda: fit.bindings[0].lambda,
                    anchor_time: c.t_des,
                    constrained: true,
                }
            }
            None => {
                let fit = fit_em(&local, k, config).map_err(|e| e.with_context(&tag))?;
                let lambda = crate::cem::identify_component(&fit.model, &output.origin())
                    .map_err(|e| e.with_context(&tag))?;
                let anchor_time = fit.model.time_mean(lambda);
                FrameModel {
                    model: fit.model,
                    gammas: vec![1.0; k],
                    lambda,
                    anchor_time,
                    constrained: false,
                }
            }
        };
        frames.push(frame_model);
    }
    TpGmmModel::new(frames)
}

/// Weighted product of Gaussians on the manifold: precisions are summed in
/// the tangent space of the running estimate (covariances transported
/// there), the mean follows the Gauss-Newton step of the weighted normal
/// equations, and the fused covariance is the inverse summed precision at
/// the converged mean. Entries with zero weight are ignored.
pub fn fuse(
    m: &ManifoldDescriptor,
    means: &[&Point],
    covariances: &[&DMatrix<f64>],
    weights: &[f64],
) -> Result<(Point, DMatrix<f64>)> {
    if means.len() != covariances.len() || means.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} means, {} covariances, {} weights",
            means.len(),
            covariances.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidArgument("fusion weights must be non-negative".into()));
    }
    let active: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    if active.is_empty() {
        return Err(Error::InvalidArgument("all fusion weights are zero".into()));
    }
    let lead = *active
        .iter()
        .max_by(|&&a, &&b| weights[a].total_cmp(&weights[b]).then(b.cmp(&a)))
        .expect("non-empty active set");
    let mut estimate = means[lead].clone();

    let d_eff = m.effective_dim();
    let mut pass = fuse_pass(m, means, covariances, weights, &active, &estimate)?;
    for _ in 0..FUSE_MAX_ITER {
        if pass.step.norm() < FUSE_TOL {
            break;
        }
        let ambient = &pass.basis * &pass.step;
        estimate = m.exp_map(&TangentVector::from_parts(estimate, ambient))?;
        pass = fuse_pass(m, means, covariances, weights, &active, &estimate)?;
    }
    let precision_chol = Cholesky::new(pass.precision).ok_or_else(|| {
        Error::NumericalDegeneracy("fused precision is not positive definite".into())
    })?;
    let mut local_cov = DMatrix::identity(d_eff, d_eff);
    precision_chol.solve_mut(&mut local_cov);
    let covariance = &pass.basis * local_cov * pass.basis.transpose();
    Ok((estimate, covariance))
}

struct FusePass {
    basis: DMatrix<f64>,
    precision: DMatrix<f64>,
    step: DVector<f64>,
}

fn fuse_pass(
    m: &ManifoldDescriptor,
    means: &[&Point],
    covariances: &[&DMatrix<f64>],
    weights: &[f64],
    active: &[usize],
    estimate: &Point,
) -> Result<FusePass> {
    let d_eff = m.effective_dim();
    let basis = m.tangent_basis(estimate);
    let mut precision = DMatrix::zeros(d_eff, d_eff);
    let mut rhs = DVector::zeros(d_eff);
    for &f in active {
        let moved = m.transport_covariance(means[f], estimate, covariances[f])?;
        let local = basis.transpose() * moved * &basis;
        let chol = Cholesky::new(local).ok_or_else(|| {
            Error::NumericalDegeneracy(format!(
                "prediction {f} has a singular covariance on the tangent subspace"
            ))
        })?;
        let u = basis.transpose() * m.log_map(estimate, means[f])?.coords();
        let mut p = DMatrix::identity(d_eff, d_eff);
        chol.solve_mut(&mut p);
        rhs += (&p * u) * weights[f];
        precision += p * weights[f];
    }
    let step = Cholesky::new(precision.clone())
        .ok_or_else(|| {
            Error::NumericalDegeneracy("fused precision is not positive definite".into())
        })?
        .solve(&rhs);
    Ok(FusePass { basis, precision, step })
}

/// Piecewise-linear fusion weights over a grid of `samples` points:
/// one-hot at every anchor, ramping linearly between neighboring anchors,
/// and held at 1 outside the first and last anchor.
pub fn fusion_schedule(anchors: &[usize], samples: usize) -> Result<FusionSchedule> {
    if anchors.is_empty() {
        return Err(Error::InvalidArgument("need at least one anchor".into()));
    }
    for &a in anchors {
        if a >= samples {
            return Err(Error::InvalidArgument(format!(
                "anchor index {a} outside the {samples}-point grid"
            )));
        }
    }
    let f = anchors.len();
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by_key(|&i| anchors[i]);
    for pair in order.windows(2) {
        if anchors[pair[0]] == anchors[pair[1]] {
            return Err(Error::InvalidArgument(format!(
                "frames {} and {} share anchor index {}",
                pair[0], pair[1], anchors[pair[0]]
            )));
        }
    }
    let mut weights = vec![vec![0.0; samples]; f];
    let first = order[0];
    let last = *order.last().expect("non-empty anchors");
    for n in 0..samples {
        if n <= anchors[first] {
            weights[first][n] = 1.0;
            continue;
        }
        if n >= anchors[last] {
            weights[last][n] = 1.0;
            continue;
        }
        // bracketing anchors: the segment with anchors[lo] <= n < anchors[hi]
        let pos = order.partition_point(|&i| anchors[i] <= n) - 1;
        let lo = order[pos];
        let hi = order[pos + 1];
        let s = (n - anchors[lo]) as f64 / (anchors[hi] - anchors[lo]) as f64;
        weights[lo][n] = 1.0 - s;
        weights[hi][n] = s;
    }
    Ok(FusionSchedule { anchors: anchors.to_vec(), weights })
}

/// Reproduces the skill under new frame poses: per-frame local regression
/// on the scaled local models, projection into the global frame, and the
/// scheduled product-of-Gaussians blend. Anchor grid indices are resolved
/// against this call's time grid.
pub fn tpgmm_reproduce(
    model: &TpGmmModel,
    frames: &[TaskFrame],
    times: &[f64],
) -> Result<TpReproduction> {
    if frames.len() != model.frame_count() {
        return Err(Error::InvalidArgument(format!(
            "{} frames supplied, model was trained with {}",
            frames.len(),
            model.frame_count()
        )));
    }
    if times.is_empty() {
        return Err(Error::InvalidArgument("empty time grid".into()));
    }
    let output = model.output_descriptor();
    for (f, frame) in frames.iter().enumerate() {
        frame.check_compatible(output).map_err(|e| e.with_context(&format!("frame {f}")))?;
    }

    let anchors: Vec<usize> = model
        .frames()
        .iter()
        .map(|fm| {
            times
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    (a.1 - fm.anchor_time)
                        .abs()
                        .total_cmp(&(b.1 - fm.anchor_time).abs())
                        .then(b.0.cmp(&a.0))
                })
                .map(|(n, _)| n)
                .expect("non-empty grid")
        })
        .collect();
    let schedule = fusion_schedule(&anchors, times.len())?;

    // per-frame regression in local coordinates, then into the global frame
    let mut globals: Vec<(Vec<Point>, Vec<DMatrix<f64>>)> = Vec::with_capacity(frames.len());
    for (f, (fm, frame)) in model.frames().iter().zip(frames).enumerate() {
        let tag = format!("frame {f}");
        let scaled = fm.model.scaled(&fm.gammas).map_err(|e| e.with_context(&tag))?;
        let local = reproduce(&scaled, times).map_err(|e| e.with_context(&tag))?;
        let mut means = Vec::with_capacity(times.len());
        let mut covs = Vec::with_capacity(times.len());
        for (mean, cov) in local.means.iter().zip(&local.covariances) {
            let (gm, gc) = local_to_global(frame, output, mean, cov)
                .map_err(|e| e.with_context(&tag))?;
            means.push(gm);
            covs.push(gc);
        }
        globals.push((means, covs));
    }

    let mut fused_means = Vec::with_capacity(times.len());
    let mut fused_covs = Vec::with_capacity(times.len());
    for n in 0..times.len() {
        let means: Vec<&Point> = globals.iter().map(|(m, _)| &m[n]).collect();
        let covs: Vec<&DMatrix<f64>> = globals.iter().map(|(_, c)| &c[n]).collect();
        let w: Vec<f64> = schedule.weights.iter().map(|row| row[n]).collect();
        let (mean, cov) = fuse(output, &means, &covs, &w)?;
        fused_means.push(mean);
        fused_covs.push(cov);
    }
    Ok(TpReproduction {
        trajectory: Trajectory {
            times: times.to_vec(),
            means: fused_means,
            covariances: fused_covs,
        },
        schedule: FusionSchedule { anchors, weights: schedule.weights },
    })
}

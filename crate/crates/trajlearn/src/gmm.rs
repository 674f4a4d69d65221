//! Gaussian mixture models over joint `(time, output)` samples where the
//! output lives on a product manifold.
//!
//! Means are manifold points; covariances are ambient tangent-space matrices
//! at the mean. On sphere blocks those matrices are supported on the tangent
//! subspace, so densities use the determinant and inverse restricted to that
//! subspace (built from an orthonormal tangent basis) and normalize over the
//! effective dimension. With Euclidean-only descriptors every step reduces
//! exactly to the classic EM equations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::data::{joint_descriptor, DemonstrationSet};
use crate::error::{Error, Result};
use crate::manifold::{ManifoldDescriptor, Point};

/// One mixture component: prior weight, joint mean, joint tangent covariance.
#[derive(Debug, Clone)]
pub struct GaussianComponent {
    pub prior: f64,
    pub mean: Point,
    pub covariance: DMatrix<f64>,
}

/// Mixture over the time-extended descriptor.
#[derive(Debug, Clone)]
pub struct GmmModel {
    joint: ManifoldDescriptor,
    output: ManifoldDescriptor,
    components: Vec<GaussianComponent>,
}

/// Knobs shared by the fitting routines.
#[derive(Debug, Clone)]
pub struct EmConfig {
    /// Maximum EM iterations.
    pub max_iter: usize,
    /// Relative log-likelihood change that counts as converged.
    pub tol: f64,
    /// Cap on tangent-space mean updates per M-step.
    pub mean_iter: usize,
    /// Mean update step norm that counts as converged.
    pub mean_tol: f64,
    /// Covariance ridge, as a fraction of the mean eigenvalue. The ridge is
    /// not part of the likelihood the M-step maximizes, so raising it trades
    /// the non-decreasing likelihood guarantee for better conditioning; the
    /// default keeps its effect below the 1e-9 monotonicity budget.
    pub reg_scale: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig { max_iter: 200, tol: 1e-6, mean_iter: 10, mean_tol: 1e-10, reg_scale: 1e-12 }
    }
}

/// Result of an EM run: the model plus its log-likelihood trace (entry 0 is
/// the initialization, one entry per iteration after that).
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: GmmModel,
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl GmmModel {
    pub fn new(output: ManifoldDescriptor, components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        }
        let joint = joint_descriptor(&output);
        let d = joint.point_dim();
        let mut prior_sum = 0.0;
        for (k, c) in components.iter().enumerate() {
            if !(c.prior >= 0.0) {
                return Err(Error::InvalidArgument(format!("component {k} has prior {}", c.prior)));
            }
            prior_sum += c.prior;
            joint.validate_point(&c.mean).map_err(|e| {
                Error::InvalidArgument(format!("component {k} mean: {e}"))
            })?;
            if c.covariance.nrows() != d || c.covariance.ncols() != d {
                return Err(Error::InvalidArgument(format!(
                    "component {k} covariance is {}x{}, expected {d}x{d}",
                    c.covariance.nrows(),
                    c.covariance.ncols()
                )));
            }
            let asym = (&c.covariance - c.covariance.transpose()).norm();
            if asym > 1e-9 * c.covariance.norm().max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "component {k} covariance is not symmetric (residual {asym:.3e})"
                )));
            }
            if !(c.covariance[(0, 0)] > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "component {k} has non-positive time variance {}",
                    c.covariance[(0, 0)]
                )));
            }
        }
        if (prior_sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "priors sum to {prior_sum}, expected 1"
            )));
        }
        Ok(GmmModel { joint, output, components })
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn joint_descriptor(&self) -> &ManifoldDescriptor {
        &self.joint
    }

    pub fn output_descriptor(&self) -> &ManifoldDescriptor {
        &self.output
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn component(&self, k: usize) -> &GaussianComponent {
        &self.components[k]
    }

    /// Output part of component `k`'s mean.
    pub fn output_mean(&self, k: usize) -> Point {
        let c = self.components[k].mean.coords();
        Point::from_coords(c.rows_range(1..c.len()).into_owned())
    }

    /// Time coordinate of component `k`'s mean.
    pub fn time_mean(&self, k: usize) -> f64 {
        self.components[k].mean.coords()[0]
    }

    /// Returns a copy with every covariance scaled by its factor in `gammas`.
    pub fn scaled(&self, gammas: &[f64]) -> Result<GmmModel> {
        if gammas.len() != self.k() {
            return Err(Error::InvalidArgument(format!(
                "{} scale factors for {} components",
                gammas.len(),
                self.k()
            )));
        }
        let components = self
            .components
            .iter()
            .zip(gammas)
            .map(|(c, &g)| GaussianComponent {
                prior: c.prior,
                mean: c.mean.clone(),
                covariance: &c.covariance * g,
            })
            .collect();
        GmmModel::new(self.output.clone(), components)
    }
}

/// Density of one Gaussian restricted to the tangent subspace at its mean.
/// Prepared once, evaluated many times.
pub(crate) struct TangentDensity {
    mean: DVector<f64>,
    basis: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl TangentDensity {
    pub(crate) fn new(
        m: &ManifoldDescriptor,
        mean: &Point,
        cov: &DMatrix<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::InvalidArgument(format!("scale factor {gamma} must be positive")));
        }
        let basis = m.tangent_basis(mean);
        let local = basis.transpose() * (cov * gamma) * &basis;
        let d_eff = local.nrows();
        let chol = Cholesky::new(local).ok_or_else(|| {
            Error::NumericalDegeneracy("covariance is singular on the tangent subspace".into())
        })?;
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let log_norm = -0.5 * (d_eff as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(TangentDensity { mean: mean.coords().clone(), basis, chol, log_norm })
    }

    /// Log density at `x` (prior not included).
    pub(crate) fn log_pdf(&self, m: &ManifoldDescriptor, x: &DVector<f64>) -> Result<f64> {
        let u = m.log_coords(&self.mean, x)?;
        let local = self.basis.transpose() * u;
        let solved = self.chol.solve(&local);
        Ok(-0.5 * local.dot(&solved) + self.log_norm)
    }
}

/// Gaussian density on an arbitrary descriptor, normalized over the
/// effective tangent dimension.
pub fn gaussian_log_pdf(
    m: &ManifoldDescriptor,
    mean: &Point,
    cov: &DMatrix<f64>,
    x: &Point,
) -> Result<f64> {
    m.validate_point(mean)?;
    m.validate_point(x)?;
    let density = TangentDensity::new(m, mean, cov, 1.0)?;
    density.log_pdf(m, x.coords())
}

pub fn gaussian_pdf(
    m: &ManifoldDescriptor,
    mean: &Point,
    cov: &DMatrix<f64>,
    x: &Point,
) -> Result<f64> {
    gaussian_log_pdf(m, mean, cov, x).map(f64::exp)
}

pub(crate) fn prepare_densities(model: &GmmModel, gammas: Option<&[f64]>) -> Result<Vec<TangentDensity>> {
    model
        .components
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let gamma = gammas.map_or(1.0, |g| g[k]);
            TangentDensity::new(&model.joint, &c.mean, &c.covariance, gamma).map_err(|e| match e {
                Error::NumericalDegeneracy(msg) => Error::DegenerateComponent {
                    component: k,
                    message: msg,
                },
                other => other,
            })
        })
        .collect()
}

/// Posterior responsibilities (K x N) and the dataset log-likelihood,
/// computed in log space. If every component underflows on a sample, that
/// sample gets uniform responsibilities and a warning is logged.
pub fn e_step(model: &GmmModel, data: &DemonstrationSet) -> Result<(DMatrix<f64>, f64)> {
    check_data(model, data)?;
    let densities = prepare_densities(model, None)?;
    let k = model.k();
    let n = data.len();
    let mut resp = DMatrix::zeros(k, n);
    let mut ll = 0.0;
    let mut logs = vec![0.0; k];
    for (i, sample) in data.samples().iter().enumerate() {
        for (j, d) in densities.iter().enumerate() {
            let prior = model.components[j].prior;
            logs[j] = if prior > 0.0 {
                prior.ln() + d.log_pdf(&model.joint, sample.coords())?
            } else {
                f64::NEG_INFINITY
            };
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            log::warn!("all components underflow on sample {i}; using uniform responsibilities");
            for j in 0..k {
                resp[(j, i)] = 1.0 / k as f64;
            }
            ll += f64::NEG_INFINITY;
            continue;
        }
        let mut sum = 0.0;
        for (j, lw) in logs.iter().enumerate() {
            let w = (lw - max).exp();
            resp[(j, i)] = w;
            sum += w;
        }
        for j in 0..k {
            resp[(j, i)] /= sum;
        }
        ll += max + sum.ln();
    }
    Ok((resp, ll))
}

/// Dataset log-likelihood under the model.
pub fn log_likelihood(model: &GmmModel, data: &DemonstrationSet) -> Result<f64> {
    e_step(model, data).map(|(_, ll)| ll)
}

/// Maximization step: priors from responsibility mass, means by tangent-space
/// fixed point, covariances from log-map outer products plus the ridge.
pub fn m_step(
    model: &GmmModel,
    data: &DemonstrationSet,
    resp: &DMatrix<f64>,
    config: &EmConfig,
) -> Result<GmmModel> {
    m_step_with_fixed_means(model, data, resp, config, &[])
}

/// Like [`m_step`] but holding the means of selected components fixed at the
/// given points (covariances and priors still update).
pub(crate) fn m_step_with_fixed_means(
    model: &GmmModel,
    data: &DemonstrationSet,
    resp: &DMatrix<f64>,
    config: &EmConfig,
    fixed_means: &[(usize, Point)],
) -> Result<GmmModel> {
    check_data(model, data)?;
    let k = model.k();
    let n = data.len();
    if resp.nrows() != k || resp.ncols() != n {
        return Err(Error::InvalidArgument(format!(
            "responsibility matrix is {}x{}, expected {k}x{n}",
            resp.nrows(),
            resp.ncols()
        )));
    }
    let coords: Vec<&DVector<f64>> = data.samples().iter().map(|p| p.coords()).collect();
    let mut components = Vec::with_capacity(k);
    for j in 0..k {
        let weights: Vec<f64> = (0..n).map(|i| resp[(j, i)]).collect();
        let mass: f64 = weights.iter().sum();
        if mass < 1e-12 {
            return Err(Error::DegenerateComponent {
                component: j,
                message: format!("responsibility mass {mass:.3e} vanished"),
            });
        }
        let mean = match fixed_means.iter().find(|(idx, _)| *idx == j) {
            Some((_, p)) => p.clone(),
            None => {
                let mu = model.joint.weighted_mean_coords(
                    &coords,
                    &weights,
                    model.components[j].mean.coords(),
                    config.mean_iter,
                    config.mean_tol,
                )?;
                Point::from_coords(mu)
            }
        };
        let covariance = weighted_scatter(&model.joint, &mean, &coords, &weights, mass, config)?;
        components.push(GaussianComponent { prior: mass / n as f64, mean, covariance });
    }
    // responsibility columns sum to 1, so this only clears rounding drift
    let total: f64 = components.iter().map(|c| c.prior).sum();
    for c in &mut components {
        c.prior /= total;
    }
    GmmModel::new(model.output.clone(), components)
}

/// Weighted second moment of the log maps at `mean`, plus the ridge.
pub(crate) fn weighted_scatter(
    joint: &ManifoldDescriptor,
    mean: &Point,
    coords: &[&DVector<f64>],
    weights: &[f64],
    mass: f64,
    config: &EmConfig,
) -> Result<DMatrix<f64>> {
    let d = joint.point_dim();
    let mut cov = DMatrix::zeros(d, d);
    for (x, &w) in coords.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let u = joint.log_coords(mean.coords(), x)?;
        cov.syger(w, &u, &u, 1.0);
    }
    cov /= mass;
    cov.fill_upper_triangle_with_lower_triangle();
    Ok(regularize(cov, config.reg_scale))
}

/// Adds `reg_scale * trace / D` to the diagonal; falls back to a tiny
/// absolute ridge when the scatter is exactly zero (single-sample bins).
fn regularize(mut cov: DMatrix<f64>, reg_scale: f64) -> DMatrix<f64> {
    let d = cov.nrows();
    let trace = cov.trace();
    let ridge = if trace > 0.0 { reg_scale * trace / d as f64 } else { 1e-10 };
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    cov
}

/// Sample indices ordered by time (stable under ties).
pub(crate) fn time_sorted_indices(data: &DemonstrationSet) -> Vec<usize> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data.time(a).total_cmp(&data.time(b)).then(a.cmp(&b)));
    order
}

/// Samples of bin `j` out of `k` in the time-sorted order.
pub(crate) fn kbin_range(n: usize, k: usize, j: usize) -> std::ops::Range<usize> {
    j * n / k..(j + 1) * n / k
}

/// Initializes a mixture by slicing the time-sorted samples into K
/// contiguous bins and fitting one Gaussian per bin, priors uniform.
pub fn init_kbins(data: &DemonstrationSet, k: usize, config: &EmConfig) -> Result<GmmModel> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    let n = data.len();
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "{n} samples cannot fill {k} time bins"
        )));
    }
    let order = time_sorted_indices(data);
    let coords: Vec<&DVector<f64>> = data.samples().iter().map(|p| p.coords()).collect();

    let joint = joint_descriptor(data.output_descriptor());
    let mut components = Vec::with_capacity(k);
    for j in 0..k {
        let bin: Vec<&DVector<f64>> = order[kbin_range(n, k, j)].iter().map(|&i| coords[i]).collect();
        let weights = vec![1.0; bin.len()];
        let init = bin[bin.len() / 2];
        let mu = joint.weighted_mean_coords(&bin, &weights, init, config.mean_iter, config.mean_tol)?;
        let mean = Point::from_coords(mu);
        let covariance =
            weighted_scatter(&joint, &mean, &bin, &weights, bin.len() as f64, config)?;
        components.push(GaussianComponent { prior: 1.0 / k as f64, mean, covariance });
    }
    GmmModel::new(data.output_descriptor().clone(), components)
}

/// Fits a K-component mixture with EM from the time-bin initialization.
pub fn fit_em(data: &DemonstrationSet, k: usize, config: &EmConfig) -> Result<FitResult> {
    let init = init_kbins(data, k, config)?;
    em_loop(init, data, config, &[])
}

pub(crate) fn em_loop(
    mut model: GmmModel,
    data: &DemonstrationSet,
    config: &EmConfig,
    fixed_means: &[(usize, Point)],
) -> Result<FitResult> {
    let mut trace = Vec::with_capacity(config.max_iter + 1);
    let mut converged = false;
    loop {
        let (resp, ll) = e_step(&model, data)?;
        if let Some(&prev) = trace.last() {
            trace.push(ll);
            if (ll - prev).abs() <= config.tol * ll.abs().max(1.0) {
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
        }
        if trace.len() > config.max_iter {
            break;
        }
        model = m_step_with_fixed_means(&model, data, &resp, config, fixed_means)?;
    }
    let iterations = trace.len() - 1;
    Ok(FitResult { model, log_likelihoods: trace, iterations, converged })
}

fn check_data(model: &GmmModel, data: &DemonstrationSet) -> Result<()> {
    if data.output_descriptor() != &model.output {
        return Err(Error::InvalidArgument(format!(
            "data descriptor {} does not match model descriptor {}",
            data.output_descriptor(),
            model.output
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty demonstration set".into()));
    }
    Ok(())
}

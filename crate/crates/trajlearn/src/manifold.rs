//! Geometry kernel for product manifolds assembled from Euclidean blocks and
//! unit spheres.
//!
//! Points and tangent vectors are stored in ambient coordinates: a sphere
//! block with ambient dimension `a` occupies `a` consecutive slots and its
//! tangent vectors are the ambient vectors orthogonal to the base point.
//! Tangent-space covariances are therefore full `D x D` ambient matrices
//! supported on the tangent subspace; [`ManifoldDescriptor::tangent_basis`]
//! returns an orthonormal basis of that subspace so densities can work on the
//! support only.
//!
//! Parallel transport between two sphere points is realized as the ambient
//! rotation in the plane the two points span (identity on the orthogonal
//! complement). Restricted to tangent vectors this is geodesic transport; as
//! a matrix it is orthogonal, so transporting a covariance preserves its full
//! eigenvalue multiset.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inner products below this are treated as antipodal: the log map and
/// transport are undefined there.
const ANTIPODAL_DOT: f64 = -1.0 + 1e-8;

/// Validation tolerance for unit norms and tangency.
pub const GEOMETRY_TOL: f64 = 1e-9;

/// One factor of a product manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Block {
    /// Flat factor R^dim.
    Euclidean { dim: usize },
    /// Unit sphere S^(ambient_dim - 1) embedded in R^ambient_dim.
    /// `ambient_dim = 4` is the unit-quaternion representation of rotations.
    Sphere { ambient_dim: usize },
}

impl Block {
    /// Slots this block occupies in a coordinate vector.
    pub fn ambient_dim(&self) -> usize {
        match *self {
            Block::Euclidean { dim } => dim,
            Block::Sphere { ambient_dim } => ambient_dim,
        }
    }

    /// Dimension of the tangent space (sphere blocks lose one direction).
    pub fn intrinsic_dim(&self) -> usize {
        match *self {
            Block::Euclidean { dim } => dim,
            Block::Sphere { ambient_dim } => ambient_dim - 1,
        }
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self, Block::Sphere { .. })
    }
}

/// Ordered list of blocks describing one product manifold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifoldDescriptor {
    blocks: Vec<Block>,
}

/// A point on a product manifold, ambient coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    coords: DVector<f64>,
}

/// A tangent vector anchored at `base`, ambient coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    base: Point,
    coords: DVector<f64>,
}

impl ManifoldDescriptor {
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("descriptor needs at least one block".into()));
        }
        for b in &blocks {
            match *b {
                Block::Euclidean { dim } if dim == 0 => {
                    return Err(Error::InvalidArgument("euclidean block of dimension 0".into()))
                }
                Block::Sphere { ambient_dim } if ambient_dim < 2 => {
                    return Err(Error::InvalidArgument(format!(
                        "sphere block needs ambient dimension >= 2, got {ambient_dim}"
                    )))
                }
                _ => {}
            }
        }
        Ok(Self { blocks })
    }

    /// Shorthand for a single flat block.
    pub fn euclidean(dim: usize) -> Self {
        Self::new(vec![Block::Euclidean { dim }]).expect("dim checked by caller")
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Re-checks the internal invariants; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        Self::new(self.blocks.clone()).map(|_| ())
    }

    /// Length of a coordinate vector (points and tangent vectors alike).
    pub fn point_dim(&self) -> usize {
        self.blocks.iter().map(Block::ambient_dim).sum()
    }

    /// Dimension of the tangent subspace inside the ambient coordinates.
    pub fn effective_dim(&self) -> usize {
        self.blocks.iter().map(Block::intrinsic_dim).sum()
    }

    pub fn is_euclidean(&self) -> bool {
        !self.blocks.iter().any(Block::is_sphere)
    }

    /// Blocks together with their coordinate ranges.
    pub fn block_ranges(&self) -> impl Iterator<Item = (Block, Range<usize>)> + '_ {
        let mut start = 0;
        self.blocks.iter().map(move |b| {
            let r = start..start + b.ambient_dim();
            start = r.end;
            (*b, r)
        })
    }

    /// Canonical base point: zeros on Euclidean blocks, first basis vector on
    /// spheres (the identity quaternion for 4-dimensional blocks).
    pub fn origin(&self) -> Point {
        let mut c = DVector::zeros(self.point_dim());
        for (b, r) in self.block_ranges() {
            if b.is_sphere() {
                c[r.start] = 1.0;
            }
        }
        Point { coords: c }
    }

    pub fn validate_point(&self, p: &Point) -> Result<()> {
        self.check_dim(p.coords.len())?;
        for (b, r) in self.block_ranges() {
            if b.is_sphere() {
                let norm = p.coords.rows_range(r.clone()).norm();
                if (norm - 1.0).abs() > GEOMETRY_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "sphere block at {}..{} has norm {norm}, expected 1",
                        r.start, r.end
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn validate_tangent(&self, v: &TangentVector) -> Result<()> {
        self.validate_point(&v.base)?;
        self.check_dim(v.coords.len())?;
        for (b, r) in self.block_ranges() {
            if b.is_sphere() {
                let dot = v.coords.rows_range(r.clone()).dot(&v.base.coords.rows_range(r.clone()));
                let scale = v.coords.rows_range(r).norm().max(1.0);
                if dot.abs() > GEOMETRY_TOL * scale {
                    return Err(Error::InvalidArgument(format!(
                        "tangent vector not orthogonal to its base (block dot {dot})"
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.point_dim() {
            return Err(Error::InvalidArgument(format!(
                "coordinate vector has length {n}, descriptor expects {}",
                self.point_dim()
            )));
        }
        Ok(())
    }

    /// Log map: the tangent vector at `base` pointing to `target` with the
    /// geodesic distance as its norm.
    pub fn log_map(&self, base: &Point, target: &Point) -> Result<TangentVector> {
        self.check_dim(base.coords.len())?;
        self.check_dim(target.coords.len())?;
        let coords = self.log_coords(&base.coords, &target.coords)?;
        Ok(TangentVector { base: base.clone(), coords })
    }

    /// Exp map at the tangent vector's own base point.
    pub fn exp_map(&self, v: &TangentVector) -> Result<Point> {
        self.check_dim(v.base.coords.len())?;
        self.check_dim(v.coords.len())?;
        Ok(Point { coords: self.exp_coords(&v.base.coords, &v.coords) })
    }

    /// Transports `v` along the geodesic from its base to `to`.
    pub fn parallel_transport(&self, v: &TangentVector, to: &Point) -> Result<TangentVector> {
        let g = self.transport_matrix(&v.base.coords, &to.coords)?;
        Ok(TangentVector { base: to.clone(), coords: &g * &v.coords })
    }

    /// Transports a tangent-space covariance from `from` to `to`.
    /// The transport matrix is orthogonal, so eigenvalues are preserved.
    pub fn transport_covariance(
        &self,
        from: &Point,
        to: &Point,
        cov: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let d = self.point_dim();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::InvalidArgument(format!(
                "covariance is {}x{}, descriptor expects {d}x{d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let g = self.transport_matrix(&from.coords, &to.coords)?;
        Ok(&g * cov * g.transpose())
    }

    pub fn geodesic_distance(&self, p: &Point, q: &Point) -> Result<f64> {
        self.check_dim(p.coords.len())?;
        self.check_dim(q.coords.len())?;
        Ok(self.distance_coords(&p.coords, &q.coords))
    }

    /// Orthonormal basis of the tangent subspace at `at`, one column per
    /// effective dimension. Euclidean blocks contribute standard basis
    /// vectors; sphere blocks the Householder complement of the base point.
    pub fn tangent_basis(&self, at: &Point) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.point_dim(), self.effective_dim());
        let mut col = 0;
        for (block, r) in self.block_ranges() {
            match block {
                Block::Euclidean { dim } => {
                    for i in 0..dim {
                        b[(r.start + i, col)] = 1.0;
                        col += 1;
                    }
                }
                Block::Sphere { ambient_dim: a } => {
                    // Householder matrix whose first column is +-mu; the
                    // remaining columns span the orthogonal complement.
                    let mu = at.coords.rows_range(r.clone());
                    let s = if mu[0] >= 0.0 { -1.0 } else { 1.0 };
                    let mut w = mu.into_owned();
                    w[0] -= s;
                    let wn2 = w.norm_squared(); // 2 (1 + |mu_0|), never small
                    for j in 1..a {
                        let scale = 2.0 * w[j] / wn2;
                        for i in 0..a {
                            let e = if i == j { 1.0 } else { 0.0 };
                            b[(r.start + i, col)] = e - scale * w[i];
                        }
                        col += 1;
                    }
                }
            }
        }
        b
    }

    /// Weighted Frechet mean by fixed-point iteration on the tangent update
    /// `u = sum_i w_i Log_mu(p_i) / sum_i w_i`.
    pub fn frechet_mean(
        &self,
        points: &[Point],
        weights: Option<&[f64]>,
        max_iter: usize,
        tol: f64,
    ) -> Result<Point> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("frechet mean of an empty set".into()));
        }
        if let Some(w) = weights {
            if w.len() != points.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} weights for {} points",
                    w.len(),
                    points.len()
                )));
            }
        }
        let coords: Vec<&DVector<f64>> = points.iter().map(|p| &p.coords).collect();
        let uniform = vec![1.0; points.len()];
        let w = weights.unwrap_or(&uniform);
        let mu = self.weighted_mean_coords(&coords, w, &points[0].coords, max_iter, tol)?;
        Ok(Point { coords: mu })
    }

    // ---- coordinate-level kernels (callers guarantee dimensions) ----

    pub(crate) fn log_coords(&self, base: &DVector<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(base.len());
        for (block, r) in self.block_ranges() {
            match block {
                Block::Euclidean { .. } => {
                    for i in r.clone() {
                        out[i] = target[i] - base[i];
                    }
                }
                Block::Sphere { ambient_dim: a } => {
                    let p = base.rows_range(r.clone());
                    let q = target.rows_range(r.clone());
                    let dot = p.dot(&q);
                    let c = dot.clamp(-1.0, 1.0);
                    if c < ANTIPODAL_DOT {
                        return Err(Error::DegenerateGeodesic(format!(
                            "log map between antipodal sphere points (inner product {dot:.12})"
                        )));
                    }
                    // perpendicular part of q at p; theta via atan2 keeps full
                    // precision near 0 where acos would lose ~1e-8
                    let perp = q - p * dot;
                    let n = perp.norm();
                    if n > 0.0 {
                        let theta = n.atan2(c);
                        let scale = theta / n;
                        for (i, idx) in r.clone().enumerate() {
                            out[idx] = perp[i] * scale;
                        }
                    }
                    let _ = a;
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn exp_coords(&self, base: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = base.clone();
        for (block, r) in self.block_ranges() {
            match block {
                Block::Euclidean { .. } => {
                    for i in r.clone() {
                        out[i] = base[i] + v[i];
                    }
                }
                Block::Sphere { .. } => {
                    let p = base.rows_range(r.clone());
                    let vb = v.rows_range(r.clone());
                    let theta = vb.norm();
                    if theta > 0.0 {
                        let q = (p * theta.cos() + vb * (theta.sin() / theta)).normalize();
                        for (i, idx) in r.clone().enumerate() {
                            out[idx] = q[i];
                        }
                    }
                }
            }
        }
        out
    }

    pub(crate) fn distance_coords(&self, p: &DVector<f64>, q: &DVector<f64>) -> f64 {
        let mut d2 = 0.0;
        for (block, r) in self.block_ranges() {
            match block {
                Block::Euclidean { .. } => {
                    for i in r.clone() {
                        let d = q[i] - p[i];
                        d2 += d * d;
                    }
                }
                Block::Sphere { .. } => {
                    let pb = p.rows_range(r.clone());
                    let qb = q.rows_range(r.clone());
                    let dot = pb.dot(&qb).clamp(-1.0, 1.0);
                    let perp = (qb - pb * dot).norm();
                    let theta = perp.atan2(dot);
                    d2 += theta * theta;
                }
            }
        }
        d2.sqrt()
    }

    /// Block-diagonal transport operator from `from` to `to`: identity on
    /// Euclidean blocks, in-plane rotation per sphere block.
    pub(crate) fn transport_matrix(&self, from: &DVector<f64>, to: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(from.len())?;
        self.check_dim(to.len())?;
        let d = self.point_dim();
        let mut g = DMatrix::identity(d, d);
        for (block, r) in self.block_ranges() {
            if let Block::Sphere { ambient_dim: a } = block {
                let p = from.rows_range(r.clone()).into_owned();
                let q = to.rows_range(r.clone()).into_owned();
                let dot = p.dot(&q);
                let c = dot.clamp(-1.0, 1.0);
                if c < ANTIPODAL_DOT {
                    return Err(Error::DegenerateGeodesic(format!(
                        "transport between antipodal sphere points (inner product {dot:.12})"
                    )));
                }
                let perp = &q - &p * dot;
                let n = perp.norm();
                if n == 0.0 {
                    continue;
                }
                let e = perp / n;
                let theta = n.atan2(c);
                let (sin, cos) = theta.sin_cos();
                // rotation by theta in span(p, e), identity elsewhere:
                // G = I + (cos-1)(p p^T + e e^T) + sin (e p^T - p e^T)
                let pp = &p * p.transpose();
                let ee = &e * e.transpose();
                let ep = &e * p.transpose();
                let pe = &p * e.transpose();
                let gb = DMatrix::identity(a, a) + (cos - 1.0) * (pp + ee) + sin * (ep - pe);
                g.view_mut((r.start, r.start), (a, a)).copy_from(&gb);
            }
        }
        Ok(g)
    }

    pub(crate) fn weighted_mean_coords(
        &self,
        points: &[&DVector<f64>],
        weights: &[f64],
        init: &DVector<f64>,
        max_iter: usize,
        tol: f64,
    ) -> Result<DVector<f64>> {
        let wsum: f64 = weights.iter().sum();
        if wsum <= 0.0 {
            return Err(Error::InvalidArgument("weighted mean needs positive total weight".into()));
        }
        let mut mu = init.clone();
        for _ in 0..max_iter.max(1) {
            let mut u = DVector::zeros(mu.len());
            for (p, &w) in points.iter().zip(weights) {
                u += self.log_coords(&mu, p)? * w;
            }
            u /= wsum;
            let step = u.norm();
            mu = self.exp_coords(&mu, &u);
            if step < tol {
                break;
            }
        }
        Ok(mu)
    }
}

impl fmt::Display for ManifoldDescriptor {
    /// Compact form used by the CLI: `e:2` or `e:3,s:4`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            match b {
                Block::Euclidean { dim } => write!(f, "e:{dim}")?,
                Block::Sphere { ambient_dim } => write!(f, "s:{ambient_dim}")?,
            }
        }
        Ok(())
    }
}

impl FromStr for ManifoldDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut blocks = Vec::new();
        for tok in s.split(',') {
            let tok = tok.trim();
            let (kind, num) = tok.split_once(':').ok_or_else(|| {
                Error::InvalidArgument(format!("descriptor token `{tok}`, expected e:<dim> or s:<dim>"))
            })?;
            let n: usize = num
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("descriptor dimension `{num}`")))?;
            match kind.trim() {
                "e" => blocks.push(Block::Euclidean { dim: n }),
                "s" => blocks.push(Block::Sphere { ambient_dim: n }),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "descriptor block kind `{other}`, expected `e` or `s`"
                    )))
                }
            }
        }
        ManifoldDescriptor::new(blocks)
    }
}

impl Point {
    /// Validated constructor.
    pub fn new(m: &ManifoldDescriptor, coords: DVector<f64>) -> Result<Self> {
        let p = Point { coords };
        m.validate_point(&p)?;
        Ok(p)
    }

    /// Skips validation; for coordinates that already satisfy the invariants.
    pub(crate) fn from_coords(coords: DVector<f64>) -> Self {
        Point { coords }
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn into_coords(self) -> DVector<f64> {
        self.coords
    }
}

impl TangentVector {
    pub fn new(m: &ManifoldDescriptor, base: Point, coords: DVector<f64>) -> Result<Self> {
        let v = TangentVector { base, coords };
        m.validate_tangent(&v)?;
        Ok(v)
    }

    pub(crate) fn from_parts(base: Point, coords: DVector<f64>) -> Self {
        TangentVector { base, coords }
    }

    pub fn base(&self) -> &Point {
        &self.base
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn norm(&self) -> f64 {
        self.coords.norm()
    }
}

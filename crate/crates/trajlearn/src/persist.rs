//! On-disk formats: mixture models and task-parameterized models as JSON,
//! constraint and frame lists as JSON, trajectories and fusion schedules
//! as CSV.
//!
//! Floats are written in shortest round-trip form everywhere, so
//! save-load-save cycles are byte-identical and loads reproduce the exact
//! doubles. Loads re-run the same validation as the in-memory constructors;
//! a file that parses but violates a model invariant reports a corrupt
//! model, not a panic later.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::bagging::BaggingEnsemble;
use crate::cem::TimeSensitiveConstraint;
use crate::error::{Error, Result};
use crate::frame::TaskFrame;
use crate::gmm::{GaussianComponent, GmmModel};
use crate::gmr::Trajectory;
use crate::manifold::{ManifoldDescriptor, Point};
use crate::tpgmm::{FrameModel, FusionSchedule, TpGmmModel};

#[derive(Serialize, Deserialize)]
struct ComponentSchema {
    prior: f64,
    /// Joint mean: time slot first, then the output coordinates.
    mean: Vec<f64>,
    /// Row-major joint covariance, `(1 + point_dim)^2` entries.
    covariance: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelSchema {
    /// Output manifold; the stored means/covariances live on its
    /// time-extended joint.
    descriptor: ManifoldDescriptor,
    k: usize,
    components: Vec<ComponentSchema>,
}

#[derive(Serialize, Deserialize)]
struct FrameModelSchema {
    model: ModelSchema,
    gammas: Vec<f64>,
    lambda: usize,
    anchor_time: f64,
    constrained: bool,
}

#[derive(Serialize, Deserialize)]
struct TpModelSchema {
    frames: Vec<FrameModelSchema>,
}

fn model_to_schema(model: &GmmModel) -> ModelSchema {
    let d = model.joint_descriptor().point_dim();
    let components = model
        .components()
        .iter()
        .map(|c| ComponentSchema {
            prior: c.prior,
            mean: c.mean.coords().iter().copied().collect(),
            covariance: (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| c.covariance[(i, j)]).collect(),
        })
        .collect();
    ModelSchema { descriptor: model.output_descriptor().clone(), k: model.k(), components }
}

fn model_from_schema(schema: ModelSchema) -> Result<GmmModel> {
    schema.descriptor.validate().map_err(|e| Error::CorruptModel(e.to_string()))?;
    let d = schema.descriptor.point_dim() + 1;
    if schema.components.len() != schema.k {
        return Err(Error::CorruptModel(format!(
            "k = {} but {} components stored",
            schema.k,
            schema.components.len()
        )));
    }
    let mut components = Vec::with_capacity(schema.k);
    for (k, c) in schema.components.into_iter().enumerate() {
        if c.mean.len() != d {
            return Err(Error::CorruptModel(format!(
                "component {k} mean has {} entries, joint dimension is {d}",
                c.mean.len()
            )));
        }
        if c.covariance.len() != d * d {
            return Err(Error::CorruptModel(format!(
                "component {k} covariance has {} entries, expected {}",
                c.covariance.len(),
                d * d
            )));
        }
        components.push(GaussianComponent {
            prior: c.prior,
            mean: Point::from_coords(DVector::from_row_slice(&c.mean)),
            covariance: DMatrix::from_row_slice(d, d, &c.covariance),
        });
    }
    GmmModel::new(schema.descriptor, components).map_err(|e| Error::CorruptModel(e.to_string()))
}

pub fn save_model(path: &Path, model: &GmmModel) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&model_to_schema(model))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<GmmModel> {
    model_from_schema(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn save_tp_model(path: &Path, model: &TpGmmModel) -> Result<()> {
    let frames = model
        .frames()
        .iter()
        .map(|fm| FrameModelSchema {
            model: model_to_schema(&fm.model),
            gammas: fm.gammas.clone(),
            lambda: fm.lambda,
            anchor_time: fm.anchor_time,
            constrained: fm.constrained,
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&TpModelSchema { frames })?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_tp_model(path: &Path) -> Result<TpGmmModel> {
    let schema: TpModelSchema = serde_json::from_str(&fs::read_to_string(path)?)?;
    let mut frames = Vec::with_capacity(schema.frames.len());
    for (f, fm) in schema.frames.into_iter().enumerate() {
        frames.push(FrameModel {
            model: model_from_schema(fm.model).map_err(|e| e.with_context(&format!("frame {f}")))?,
            gammas: fm.gammas,
            lambda: fm.lambda,
            anchor_time: fm.anchor_time,
            constrained: fm.constrained,
        });
    }
    TpGmmModel::new(frames).map_err(|e| Error::CorruptModel(e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct EnsembleSchema {
    learners: Vec<ModelSchema>,
    subset_seeds: Vec<u64>,
    weights: Vec<f64>,
    data_scale: f64,
}

pub fn save_ensemble(path: &Path, ensemble: &BaggingEnsemble) -> Result<()> {
    let schema = EnsembleSchema {
        learners: ensemble.learners().iter().map(model_to_schema).collect(),
        subset_seeds: ensemble.subset_seeds().to_vec(),
        weights: ensemble.weights().to_vec(),
        data_scale: ensemble.data_scale(),
    };
    let mut text = serde_json::to_string_pretty(&schema)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_ensemble(path: &Path) -> Result<BaggingEnsemble> {
    let schema: EnsembleSchema = serde_json::from_str(&fs::read_to_string(path)?)?;
    let mut learners = Vec::with_capacity(schema.learners.len());
    for (bi, l) in schema.learners.into_iter().enumerate() {
        learners.push(model_from_schema(l).map_err(|e| e.with_context(&format!("learner {bi}")))?);
    }
    BaggingEnsemble::from_parts(learners, schema.subset_seeds, schema.weights, schema.data_scale)
        .map_err(|e| Error::CorruptModel(e.to_string()))
}

/// Any trained artifact the reproduce command accepts.
pub enum StoredModel {
    Mixture(GmmModel),
    TaskParameterized(TpGmmModel),
    Ensemble(BaggingEnsemble),
}

/// Loads a model file of any kind, telling them apart by their top-level
/// key: `components`, `frames`, or `learners`.
pub fn load_stored(path: &Path) -> Result<StoredModel> {
    let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    if value.get("components").is_some() {
        Ok(StoredModel::Mixture(load_model(path)?))
    } else if value.get("frames").is_some() {
        Ok(StoredModel::TaskParameterized(load_tp_model(path)?))
    } else if value.get("learners").is_some() {
        Ok(StoredModel::Ensemble(load_ensemble(path)?))
    } else {
        Err(Error::CorruptModel(
            "no components, frames, or learners key; not a model file".into(),
        ))
    }
}

#[derive(Deserialize)]
struct ConstraintSchema {
    t_des: f64,
    x_des: Vec<f64>,
    epsilon: Option<f64>,
}

/// Loads `[{t_des, x_des, epsilon?}, ...]`; entries without their own
/// epsilon get `default_epsilon`.
pub fn load_constraints(
    path: &Path,
    output: &ManifoldDescriptor,
    default_epsilon: f64,
) -> Result<Vec<TimeSensitiveConstraint>> {
    let entries: Vec<ConstraintSchema> = serde_json::from_str(&fs::read_to_string(path)?)?;
    let mut constraints = Vec::with_capacity(entries.len());
    for (i, entry) in entries.into_iter().enumerate() {
        let build = || -> Result<TimeSensitiveConstraint> {
            let x_des = Point::new(output, DVector::from_row_slice(&entry.x_des))?;
            TimeSensitiveConstraint::new(
                output,
                entry.t_des,
                x_des,
                entry.epsilon.unwrap_or(default_epsilon),
            )
        };
        constraints.push(build().map_err(|e| e.with_context(&format!("constraint {i}")))?);
    }
    Ok(constraints)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RotationSchema {
    Rows([[f64; 3]; 3]),
    /// 9 entries: row-major matrix. 4 entries: quaternion `[w, x, y, z]`.
    Flat(Vec<f64>),
}

#[derive(Deserialize)]
struct FrameSchema {
    rotation: RotationSchema,
    translation: [f64; 3],
    anchor_time: Option<f64>,
    #[serde(default)]
    constrained: bool,
}

/// A task-frame pose plus the constraint bookkeeping the training command
/// consumes; reproduction only needs the pose.
#[derive(Debug, Clone)]
pub struct FrameEntry {
    pub frame: TaskFrame,
    pub anchor_time: Option<f64>,
    pub constrained: bool,
}

/// Loads `[{rotation, translation, anchor_time?, constrained?}, ...]`.
/// `rotation` is a 3x3 matrix (nested rows or 9 row-major values) or a
/// unit quaternion `[w, x, y, z]`.
pub fn load_frames(path: &Path) -> Result<Vec<FrameEntry>> {
    let entries: Vec<FrameSchema> = serde_json::from_str(&fs::read_to_string(path)?)?;
    let mut frames = Vec::with_capacity(entries.len());
    for (i, entry) in entries.into_iter().enumerate() {
        let t = Vector3::from_row_slice(&entry.translation);
        let frame = match entry.rotation {
            RotationSchema::Rows(rows) => {
                TaskFrame::from_rotation(Matrix3::from_fn(|r, c| rows[r][c]), t)
            }
            RotationSchema::Flat(v) if v.len() == 9 => {
                TaskFrame::from_rotation(Matrix3::from_fn(|r, c| v[3 * r + c]), t)
            }
            RotationSchema::Flat(v) if v.len() == 4 => {
                TaskFrame::from_quaternion([v[0], v[1], v[2], v[3]], t)
            }
            RotationSchema::Flat(v) => Err(Error::InvalidFrame(format!(
                "rotation needs 9 matrix or 4 quaternion entries, got {}",
                v.len()
            ))),
        }
        .map_err(|e| e.with_context(&format!("frame {i}")))?;
        frames.push(FrameEntry { frame, anchor_time: entry.anchor_time, constrained: entry.constrained });
    }
    Ok(frames)
}

/// Header `t`, output coordinates, then the row-major covariance entries.
pub fn write_trajectory_csv(
    path: &Path,
    output: &ManifoldDescriptor,
    traj: &Trajectory,
) -> Result<()> {
    let d = output.point_dim();
    let mut text = String::from("t");
    for i in 0..d {
        text.push_str(&format!(",x{i}"));
    }
    for i in 0..d {
        for j in 0..d {
            text.push_str(&format!(",c{i}_{j}"));
        }
    }
    text.push('\n');
    for ((t, mean), cov) in traj.times.iter().zip(&traj.means).zip(&traj.covariances) {
        text.push_str(&format!("{t}"));
        for v in mean.coords().iter() {
            text.push_str(&format!(",{v}"));
        }
        for i in 0..d {
            for j in 0..d {
                text.push_str(&format!(",{}", cov[(i, j)]));
            }
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path, output: &ManifoldDescriptor) -> Result<Trajectory> {
    let d = output.point_dim();
    let width = 1 + d + d * d;
    let text = fs::read_to_string(path)?;
    let mut times = Vec::new();
    let mut means = Vec::new();
    let mut covariances = Vec::new();
    let mut saw_rows = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if !saw_rows => continue, // header
            Err(_) => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("non-numeric field in `{line}`"),
                })
            }
        };
        saw_rows = true;
        if row.len() != width {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected {width} fields, got {}", row.len()),
            });
        }
        let mean = Point::new(output, DVector::from_row_slice(&row[1..1 + d]))
            .map_err(|e| Error::Parse { line: lineno + 1, message: e.to_string() })?;
        times.push(row[0]);
        means.push(mean);
        covariances.push(DMatrix::from_row_slice(d, d, &row[1 + d..]));
    }
    if times.is_empty() {
        return Err(Error::InvalidArgument("trajectory csv contains no rows".into()));
    }
    Ok(Trajectory { times, means, covariances })
}

/// Header `t`, then one fusion weight column per frame.
pub fn write_schedule_csv(path: &Path, times: &[f64], schedule: &FusionSchedule) -> Result<()> {
    let mut text = String::from("t");
    for f in 0..schedule.weights.len() {
        text.push_str(&format!(",w{f}"));
    }
    text.push('\n');
    for (n, t) in times.iter().enumerate() {
        text.push_str(&format!("{t}"));
        for w in &schedule.weights {
            text.push_str(&format!(",{}", w[n]));
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

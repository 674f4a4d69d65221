//! Command-line front end: train, reproduce, evaluate, and compare
//! workflows over the file formats in [`crate::persist`].
//!
//! Settings resolve in three layers: built-in defaults, then the JSON
//! config file, then flags. Every run is deterministic given the resolved
//! config; output files are byte-identical across repeated runs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bagging::{bagging_fit, bagging_reproduce};
use crate::cem::{cem_fit, TimeSensitiveConstraint};
use crate::data::{align_quaternions, load_csv, normalize_time, DemonstrationSet};
use crate::error::{Error, Result};
use crate::frame::{quat_angle, TaskFrame};
use crate::gmm::{fit_em, EmConfig};
use crate::gmr::{reproduce, time_grid, Trajectory};
use crate::manifold::{Block, ManifoldDescriptor, Point, TangentVector};
use crate::persist::{
    load_constraints, load_frames, load_stored, read_trajectory_csv, save_ensemble, save_model,
    save_tp_model, write_schedule_csv, write_trajectory_csv, FrameEntry, StoredModel,
};
use crate::tpgmm::{tpgmm_fit, tpgmm_reproduce, TaskFrameSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Plain mixture fit.
    Em,
    /// Constrained fit: exact poses at the constraint times.
    Cem,
    /// Per-frame local models fused at run time.
    Tpgmm,
    /// Ensemble-of-mixtures baseline with best-effort constraints.
    Bagging,
}

/// One run's resolved settings. The JSON config file deserializes into
/// this directly (flat keys, every field optional).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub k: usize,
    /// Activation threshold for constrained fits; also the default for
    /// constraint-file entries without their own.
    pub epsilon: f64,
    pub em_max_iter: usize,
    pub em_tol: f64,
    /// Gauss-Newton cap and tolerance for every mean update.
    pub mean_iter: usize,
    pub mean_tol: f64,
    /// Reproduction grid size.
    pub samples: usize,
    pub seed: u64,
    /// Demonstrations are time-normalized onto `[0, duration]`.
    pub duration: f64,
    /// Bagging ensemble size.
    pub learners: usize,
    /// Output manifold, e.g. `e:2` or `e:3,s:4`.
    pub descriptor: String,
    pub data: Option<PathBuf>,
    pub constraints: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Em,
            k: 6,
            epsilon: TimeSensitiveConstraint::DEFAULT_EPSILON,
            em_max_iter: 200,
            em_tol: 1e-6,
            mean_iter: 10,
            mean_tol: 1e-10,
            samples: 200,
            seed: 0,
            duration: 60.0,
            learners: 10,
            descriptor: "e:2".into(),
            data: None,
            constraints: None,
            frames: None,
            model: None,
            trajectory: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    fn resolve(args: &CommonArgs) -> Result<RunConfig> {
        let mut cfg: RunConfig = match &args.config {
            Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
            None => RunConfig::default(),
        };
        if let Some(v) = args.method {
            cfg.method = v;
        }
        if let Some(v) = args.k {
            cfg.k = v;
        }
        if let Some(v) = args.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = args.seed {
            cfg.seed = v;
        }
        if let Some(v) = args.samples {
            cfg.samples = v;
        }
        if let Some(v) = args.duration {
            cfg.duration = v;
        }
        if let Some(v) = args.learners {
            cfg.learners = v;
        }
        if let Some(v) = &args.descriptor {
            cfg.descriptor = v.clone();
        }
        if let Some(v) = &args.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = &args.data {
            cfg.data = Some(v.clone());
        }
        if let Some(v) = &args.constraints {
            cfg.constraints = Some(v.clone());
        }
        if let Some(v) = &args.frames {
            cfg.frames = Some(v.clone());
        }
        if let Some(v) = &args.model {
            cfg.model = Some(v.clone());
        }
        if let Some(v) = &args.trajectory {
            cfg.trajectory = Some(v.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon {} must lie in (0, 1)",
                self.epsilon
            )));
        }
        if self.em_max_iter == 0 || self.mean_iter == 0 {
            return Err(Error::InvalidArgument("iteration caps must be at least 1".into()));
        }
        if !(self.em_tol > 0.0) || !(self.mean_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if self.samples == 0 {
            return Err(Error::InvalidArgument("samples must be at least 1".into()));
        }
        if !(self.duration > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "duration {} must be positive",
                self.duration
            )));
        }
        if self.learners == 0 {
            return Err(Error::InvalidArgument("learners must be at least 1".into()));
        }
        Ok(())
    }

    fn em_config(&self) -> EmConfig {
        EmConfig {
            max_iter: self.em_max_iter,
            tol: self.em_tol,
            mean_iter: self.mean_iter,
            mean_tol: self.mean_tol,
            ..EmConfig::default()
        }
    }

    fn output(&self) -> Result<ManifoldDescriptor> {
        self.descriptor.parse()
    }
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// JSON config file (flat keys); the flags below override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training method
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Mixture components per model
    #[arg(long)]
    k: Option<usize>,
    /// Activation threshold for constrained fits
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory all output files go to
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Demonstrations CSV
    #[arg(long)]
    data: Option<PathBuf>,
    /// Constraints JSON
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// Task frames JSON
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Trained model JSON
    #[arg(long)]
    model: Option<PathBuf>,
    /// Trajectory CSV to evaluate
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Output manifold, e.g. "e:2" or "e:3,s:4"
    #[arg(long)]
    descriptor: Option<String>,
    /// Normalized demonstration duration in seconds
    #[arg(long)]
    duration: Option<f64>,
    /// Reproduction grid size
    #[arg(long)]
    samples: Option<usize>,
    /// Bagging ensemble size
    #[arg(long)]
    learners: Option<usize>,
}

#[derive(Parser)]
#[command(name = "trajlearn", version, about = "Trajectory learning from demonstrations")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to demonstrations; writes model.json and report.json
    Train(CommonArgs),
    /// Regress a trajectory from a trained model; writes trajectory.csv
    Reproduce(CommonArgs),
    /// Score a trajectory against demonstrations and constraints
    Evaluate(CommonArgs),
    /// Train em, cem, and bagging on one dataset and tabulate their errors
    Compare(CommonArgs),
}

pub fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Train(a) => cmd_train(&RunConfig::resolve(&a)?),
        Command::Reproduce(a) => cmd_reproduce(&RunConfig::resolve(&a)?),
        Command::Evaluate(a) => cmd_evaluate(&RunConfig::resolve(&a)?),
        Command::Compare(a) => cmd_compare(&RunConfig::resolve(&a)?),
    }
}

fn load_demos(cfg: &RunConfig) -> Result<(ManifoldDescriptor, DemonstrationSet)> {
    let output = cfg.output()?;
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("a demonstrations CSV is required (--data)".into()))?;
    let mut demos = load_csv(path, &output)?;
    align_quaternions(&output, &mut demos);
    let set = normalize_time(&output, &demos, cfg.duration)?;
    Ok((output, set))
}

fn constraints_for(
    cfg: &RunConfig,
    output: &ManifoldDescriptor,
    required: bool,
) -> Result<Vec<TimeSensitiveConstraint>> {
    match &cfg.constraints {
        Some(p) => load_constraints(p, output, cfg.epsilon),
        None if required => Err(Error::InvalidArgument(
            "this method needs a constraints JSON (--constraints)".into(),
        )),
        None => Ok(Vec::new()),
    }
}

fn frames_for(cfg: &RunConfig) -> Result<Vec<FrameEntry>> {
    let path = cfg
        .frames
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("a frames JSON is required (--frames)".into()))?;
    load_frames(path)
}

/// Turns loaded frame entries into training specs: constrained frames pin
/// the local origin at their anchor time.
fn frame_specs(
    entries: &[FrameEntry],
    output: &ManifoldDescriptor,
    epsilon: f64,
) -> Result<Vec<TaskFrameSpec>> {
    entries
        .iter()
        .enumerate()
        .map(|(f, e)| {
            if e.constrained {
                let t = e.anchor_time.ok_or_else(|| {
                    Error::InvalidArgument(format!("frame {f} is constrained but has no anchor_time"))
                })?;
                TaskFrameSpec::constrained_origin(e.frame.clone(), output, t, epsilon)
            } else {
                Ok(TaskFrameSpec::unconstrained(e.frame.clone()))
            }
        })
        .collect()
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let (output, data) = load_demos(cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let em = cfg.em_config();
    let model_path = cfg.out_dir.join("model.json");

    let report = match cfg.method {
        Method::Em => {
            let fit = fit_em(&data, cfg.k, &em)?;
            save_model(&model_path, &fit.model)?;
            json!({
                "method": cfg.method,
                "k": cfg.k,
                "seed": cfg.seed,
                "iterations": fit.iterations,
                "converged": fit.converged,
                "log_likelihoods": fit.log_likelihoods,
            })
        }
        Method::Cem => {
            let constraints = constraints_for(cfg, &output, true)?;
            let fit = cem_fit(&data, cfg.k, &constraints, &em)?;
            // regression-ready scaled model under the standard name; the
            // unscaled fit stays inspectable next to it
            save_model(&model_path, &fit.scaled_model()?)?;
            save_model(&cfg.out_dir.join("model_unscaled.json"), &fit.model)?;
            let constraint_reports: Vec<_> = fit
                .bindings
                .iter()
                .zip(&fit.scalings)
                .map(|(b, s)| {
                    json!({
                        "t_des": b.constraint.t_des,
                        "epsilon": b.constraint.epsilon,
                        "lambda": b.lambda,
                        "achieved_activation": s.achieved_activation,
                        "feasible": s.feasible,
                    })
                })
                .collect();
            json!({
                "method": cfg.method,
                "k": cfg.k,
                "seed": cfg.seed,
                "iterations": fit.iterations,
                "converged": fit.converged,
                "log_likelihoods": fit.log_likelihoods,
                "gammas": fit.gammas,
                "constraints": constraint_reports,
            })
        }
        Method::Tpgmm => {
            let entries = frames_for(cfg)?;
            let specs = frame_specs(&entries, &output, cfg.epsilon)?;
            let model = tpgmm_fit(&data, &specs, cfg.k, &em)?;
            save_tp_model(&model_path, &model)?;
            let frame_reports: Vec<_> = model
                .frames()
                .iter()
                .map(|f| {
                    json!({
                        "lambda": f.lambda,
                        "anchor_time": f.anchor_time,
                        "constrained": f.constrained,
                        "gammas": f.gammas,
                    })
                })
                .collect();
            json!({
                "method": cfg.method,
                "k": cfg.k,
                "seed": cfg.seed,
                "frames": frame_reports,
            })
        }
        Method::Bagging => {
            let constraints = constraints_for(cfg, &output, false)?;
            let ensemble = bagging_fit(&data, cfg.k, cfg.learners, &constraints, cfg.seed, &em)?;
            save_ensemble(&model_path, &ensemble)?;
            json!({
                "method": cfg.method,
                "k": cfg.k,
                "seed": cfg.seed,
                "learners": cfg.learners,
                "weights": ensemble.weights(),
                "data_scale": ensemble.data_scale(),
            })
        }
    };

    let report_path = cfg.out_dir.join("report.json");
    write_json(&report_path, &report)?;
    println!("wrote {} and {}", model_path.display(), report_path.display());
    Ok(())
}

fn cmd_reproduce(cfg: &RunConfig) -> Result<()> {
    let model_path = cfg
        .model
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("a model JSON is required (--model)".into()))?;
    let times = time_grid(0.0, cfg.duration, cfg.samples)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let traj_path = cfg.out_dir.join("trajectory.csv");

    match load_stored(model_path)? {
        StoredModel::Mixture(model) => {
            let traj = reproduce(&model, &times)?;
            write_trajectory_csv(&traj_path, model.output_descriptor(), &traj)?;
        }
        StoredModel::TaskParameterized(model) => {
            let frames: Vec<TaskFrame> = frames_for(cfg)?.into_iter().map(|e| e.frame).collect();
            let rep = tpgmm_reproduce(&model, &frames, &times)?;
            write_trajectory_csv(&traj_path, model.output_descriptor(), &rep.trajectory)?;
            let schedule_path = cfg.out_dir.join("schedule.csv");
            write_schedule_csv(&schedule_path, &times, &rep.schedule)?;
            println!("wrote {}", schedule_path.display());
        }
        StoredModel::Ensemble(ensemble) => {
            let constraints = constraints_for(cfg, ensemble.output_descriptor(), false)?;
            let traj = bagging_reproduce(&ensemble, &times, &constraints)?;
            write_trajectory_csv(&traj_path, ensemble.output_descriptor(), &traj)?;
        }
    }
    println!("wrote {}", traj_path.display());
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let (output, demos) = load_demos(cfg)?;
    let traj_path = cfg
        .trajectory
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("a trajectory CSV is required (--trajectory)".into()))?;
    let traj = read_trajectory_csv(traj_path, &output)?;
    let constraints = constraints_for(cfg, &output, false)?;

    let metrics = evaluate_trajectory(&output, &traj, &demos, &constraints)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let metrics_path = cfg.out_dir.join("metrics.json");
    write_json(&metrics_path, &metrics)?;
    println!("wrote {}", metrics_path.display());
    Ok(())
}

fn cmd_compare(cfg: &RunConfig) -> Result<()> {
    let (output, data) = load_demos(cfg)?;
    // the comparison is about constraint satisfaction, so constraints are
    // mandatory here even though em ignores them during training
    let constraints = constraints_for(cfg, &output, true)?;
    let times = time_grid(0.0, cfg.duration, cfg.samples)?;
    let em = cfg.em_config();
    fs::create_dir_all(&cfg.out_dir)?;

    let mut reports = Vec::new();
    let mut table = String::new();
    table.push_str("method,rmse");
    for i in 0..constraints.len() {
        table.push_str(&format!(",constraint{i}_error"));
    }
    table.push_str(",max_constraint_error\n");

    let runs: [(&str, Trajectory); 3] = [
        ("em", reproduce(&fit_em(&data, cfg.k, &em)?.model, &times)?),
        ("cem", reproduce(&cem_fit(&data, cfg.k, &constraints, &em)?.scaled_model()?, &times)?),
        (
            "bagging",
            bagging_reproduce(
                &bagging_fit(&data, cfg.k, cfg.learners, &constraints, cfg.seed, &em)?,
                &times,
                &constraints,
            )?,
        ),
    ];

    for (name, traj) in &runs {
        write_trajectory_csv(&cfg.out_dir.join(format!("trajectory_{name}.csv")), &output, traj)?;
        let metrics = evaluate_trajectory(&output, traj, &data, &constraints)?;
        let rmse = metrics["rmse"].as_f64().expect("rmse is numeric");
        let errors: Vec<f64> = metrics["constraints"]
            .as_array()
            .expect("constraint list")
            .iter()
            .map(|c| c["geodesic_error"].as_f64().expect("error is numeric"))
            .collect();
        table.push_str(&format!("{name},{rmse}"));
        for e in &errors {
            table.push_str(&format!(",{e}"));
        }
        let max = errors.iter().cloned().fold(0.0, f64::max);
        table.push_str(&format!(",{max}\n"));
        reports.push(json!({ "method": name, "metrics": metrics }));
    }

    let table_path = cfg.out_dir.join("compare.csv");
    fs::write(&table_path, &table)?;
    write_json(&cfg.out_dir.join("compare.json"), &json!({ "runs": reports }))?;
    println!("wrote {}", table_path.display());
    print!("{table}");
    Ok(())
}

/// Geodesic interpolation of one demonstration at query time `t`, clamped
/// to the demonstration's time range.
fn demo_at(output: &ManifoldDescriptor, demo: &[Point], t: f64) -> Result<Point> {
    let d = output.point_dim();
    let slice = |p: &Point| Point::from_coords(p.coords().rows(1, d).clone_owned());
    let i = demo.partition_point(|p| p.coords()[0] < t);
    if i == 0 {
        return Ok(slice(&demo[0]));
    }
    if i == demo.len() {
        return Ok(slice(&demo[demo.len() - 1]));
    }
    let (t0, t1) = (demo[i - 1].coords()[0], demo[i].coords()[0]);
    let s = (t - t0) / (t1 - t0);
    let a = slice(&demo[i - 1]);
    let b = slice(&demo[i]);
    let v = output.log_map(&a, &b)?;
    let coords = v.coords() * s;
    output.exp_map(&TangentVector::new(output, a, coords)?)
}

/// Position error over the Euclidean blocks and the largest rotation-angle
/// error over the sphere blocks (`None` without sphere blocks).
fn split_errors(
    output: &ManifoldDescriptor,
    a: &Point,
    b: &Point,
) -> Result<(f64, Option<f64>)> {
    let mut pos2 = 0.0;
    let mut orient: Option<f64> = None;
    for (block, r) in output.block_ranges() {
        let xa = a.coords().rows_range(r.clone()).clone_owned();
        let xb = b.coords().rows_range(r.clone()).clone_owned();
        match block {
            Block::Euclidean { .. } => pos2 += (xa - xb).norm_squared(),
            Block::Sphere { ambient_dim } => {
                let angle = if ambient_dim == 4 {
                    // unit quaternions double-cover rotations
                    quat_angle(&xa, &xb)
                } else {
                    xa.dot(&xb).clamp(-1.0, 1.0).acos()
                };
                orient = Some(orient.map_or(angle, |o: f64| o.max(angle)));
            }
        }
    }
    Ok((pos2.sqrt(), orient))
}

fn evaluate_trajectory(
    output: &ManifoldDescriptor,
    traj: &Trajectory,
    demos: &DemonstrationSet,
    constraints: &[TimeSensitiveConstraint],
) -> Result<serde_json::Value> {
    // RMSE against each demonstration, interpolated at the trajectory times
    let mut rmse = Vec::with_capacity(demos.demo_count());
    for d in 0..demos.demo_count() {
        let demo = demos.demo(d);
        let mut total = 0.0;
        for (t, mean) in traj.times.iter().zip(&traj.means) {
            let x = demo_at(output, demo, *t)?;
            total += output.geodesic_distance(mean, &x)?.powi(2);
        }
        rmse.push((total / traj.len() as f64).sqrt());
    }
    let nearest = rmse
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(d, _)| d)
        .expect("at least one demonstration");

    // constraint-time errors, read off the nearest grid row
    let mut constraint_reports = Vec::with_capacity(constraints.len());
    for c in constraints {
        let n = traj
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - c.t_des).abs().total_cmp(&(b.1 - c.t_des).abs()))
            .map(|(n, _)| n)
            .expect("trajectory is non-empty");
        let (position, orientation) = split_errors(output, &traj.means[n], &c.x_des)?;
        constraint_reports.push(json!({
            "t_des": c.t_des,
            "evaluated_t": traj.times[n],
            "position_error": position,
            "orientation_error": orientation,
            "geodesic_error": output.geodesic_distance(&traj.means[n], &c.x_des)?,
        }));
    }

    // start and end vs the overall nearest demonstration
    let endpoint = |n: usize| -> Result<serde_json::Value> {
        let x = demo_at(output, demos.demo(nearest), traj.times[n])?;
        let (position, orientation) = split_errors(output, &traj.means[n], &x)?;
        Ok(json!({
            "t": traj.times[n],
            "position_error": position,
            "orientation_error": orientation,
        }))
    };

    Ok(json!({
        "rmse": rmse[nearest],
        "nearest_demo": nearest,
        "rmse_per_demo": rmse,
        "constraints": constraint_reports,
        "endpoints": { "start": endpoint(0)?, "end": endpoint(traj.len() - 1)? },
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthKind};
    use nalgebra::DVector;

    fn sine_set() -> (ManifoldDescriptor, DemonstrationSet) {
        let (m, demos) =
            synth_generate(SynthKind::SineArc { demos: 3, samples: 30, noise: 0.01 }, 9);
        let set = normalize_time(&m, &demos, 1.0).unwrap();
        (m, set)
    }

    #[test]
    fn config_file_resolves_under_flag_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        fs::write(&path, r#"{"method": "cem", "k": 4, "seed": 11}"#).unwrap();
        let mut args = CommonArgs {
            config: Some(path.clone()),
            method: None,
            k: Some(9),
            epsilon: None,
            seed: None,
            out_dir: None,
            data: None,
            constraints: None,
            frames: None,
            model: None,
            trajectory: None,
            descriptor: None,
            duration: None,
            samples: None,
            learners: None,
        };
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!(cfg.method, Method::Cem);
        assert_eq!(cfg.k, 9); // flag wins
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.duration, 60.0); // default survives

        args.epsilon = Some(2.0);
        assert!(RunConfig::resolve(&args).is_err());

        fs::write(&path, r#"{"mehtod": "cem"}"#).unwrap();
        args.epsilon = None;
        assert!(matches!(RunConfig::resolve(&args), Err(Error::Json(_))));
    }

    #[test]
    fn demo_interpolation_clamps_and_slerps() {
        let output = ManifoldDescriptor::euclidean(1);
        let joint = |t: f64, x: f64| Point::from_coords(DVector::from_row_slice(&[t, x]));
        let demo = vec![joint(0.0, 0.0), joint(1.0, 2.0)];
        assert_eq!(demo_at(&output, &demo, 0.5).unwrap().coords()[0], 1.0);
        assert_eq!(demo_at(&output, &demo, -1.0).unwrap().coords()[0], 0.0);
        assert_eq!(demo_at(&output, &demo, 9.0).unwrap().coords()[0], 2.0);

        // quarter-turn quaternion pair: midpoint is the eighth-turn
        let sphere = ManifoldDescriptor::new(vec![Block::Sphere { ambient_dim: 4 }]).unwrap();
        let demo = vec![
            Point::from_coords(DVector::from_row_slice(&[0.0, 1.0, 0.0, 0.0, 0.0])),
            Point::from_coords(DVector::from_row_slice(&[
                1.0,
                (std::f64::consts::FRAC_PI_4).cos(),
                (std::f64::consts::FRAC_PI_4).sin(),
                0.0,
                0.0,
            ])),
        ];
        let mid = demo_at(&sphere, &demo, 0.5).unwrap();
        let expected = Point::from_coords(DVector::from_row_slice(&[
            (std::f64::consts::FRAC_PI_8).cos(),
            (std::f64::consts::FRAC_PI_8).sin(),
            0.0,
            0.0,
        ]));
        assert!(sphere.geodesic_distance(&mid, &expected).unwrap() < 1e-12);
    }

    #[test]
    fn split_errors_separate_position_and_rotation() {
        let output: ManifoldDescriptor = "e:3,s:4".parse().unwrap();
        let a = Point::from_coords(DVector::from_row_slice(&[
            0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0,
        ]));
        let half = 0.3_f64;
        let b = Point::from_coords(DVector::from_row_slice(&[
            3.0,
            4.0,
            0.0,
            half.cos(),
            half.sin(),
            0.0,
            0.0,
        ]));
        let (pos, orient) = split_errors(&output, &a, &b).unwrap();
        assert!((pos - 5.0).abs() < 1e-12);
        assert!((orient.unwrap() - 2.0 * half).abs() < 1e-12);

        // sign flip of the quaternion is the same rotation
        let c = Point::from_coords(DVector::from_row_slice(&[
            0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0,
        ]));
        let (_, orient) = split_errors(&output, &a, &c).unwrap();
        assert!(orient.unwrap() < 1e-7);
    }

    #[test]
    fn evaluation_of_a_demonstration_is_zero_rmse() {
        let (m, set) = sine_set();
        let demo = set.demo(0);
        let times: Vec<f64> = demo.iter().map(|p| p.coords()[0]).collect();
        let means: Vec<Point> =
            demo.iter().map(|p| Point::from_coords(p.coords().rows(1, 2).clone_owned())).collect();
        let d = m.point_dim();
        let covariances = vec![nalgebra::DMatrix::zeros(d, d); times.len()];
        let traj = Trajectory { times, means, covariances };

        let x_des = traj.means[10].clone();
        let c = TimeSensitiveConstraint::new(&m, traj.times[10], x_des, 1e-3).unwrap();
        let metrics = evaluate_trajectory(&m, &traj, &set, &[c]).unwrap();
        assert_eq!(metrics["nearest_demo"], 0);
        assert!(metrics["rmse"].as_f64().unwrap() < 1e-12);
        let ce = &metrics["constraints"][0];
        assert!(ce["geodesic_error"].as_f64().unwrap() < 1e-12);
        assert!(ce["position_error"].as_f64().unwrap() < 1e-12);
        assert!(ce["orientation_error"].is_null());
        assert!(metrics["endpoints"]["start"]["position_error"].as_f64().unwrap() < 1e-12);
    }
}

//! Demonstration data: CSV loading and writing, time normalization,
//! quaternion hemisphere alignment, and seeded synthetic generators.
//!
//! CSV layout: one row per sample, `t` followed by the output coordinates.
//! Blank lines separate demonstrations; a single leading non-numeric row is
//! treated as a header.

use std::fs;
use std::ops::Range;
use std::path::Path;

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::manifold::{Block, ManifoldDescriptor, Point};

/// One recorded demonstration, timestamps still in their original units.
#[derive(Debug, Clone)]
pub struct RawDemonstration {
    pub times: Vec<f64>,
    pub points: Vec<Point>,
}

/// Pooled training set: joint `(t, x)` samples on the time-extended
/// descriptor, with per-demonstration boundaries retained.
#[derive(Debug, Clone)]
pub struct DemonstrationSet {
    joint: ManifoldDescriptor,
    output: ManifoldDescriptor,
    samples: Vec<Point>,
    boundaries: Vec<Range<usize>>,
}

/// Prepends the scalar time block to an output descriptor.
pub fn joint_descriptor(output: &ManifoldDescriptor) -> ManifoldDescriptor {
    let mut blocks = vec![Block::Euclidean { dim: 1 }];
    blocks.extend_from_slice(output.blocks());
    ManifoldDescriptor::new(blocks).expect("output descriptor already validated")
}

impl DemonstrationSet {
    /// Assembles a set from joint samples. `boundaries` must tile
    /// `0..samples.len()` in order; times must strictly increase within each
    /// demonstration.
    pub fn new(
        output: ManifoldDescriptor,
        samples: Vec<Point>,
        boundaries: Vec<Range<usize>>,
    ) -> Result<Self> {
        let joint = joint_descriptor(&output);
        let mut expected_start = 0;
        for r in &boundaries {
            if r.start != expected_start || r.end <= r.start {
                return Err(Error::InvalidArgument(
                    "demonstration boundaries must tile the sample range".into(),
                ));
            }
            expected_start = r.end;
        }
        if expected_start != samples.len() {
            return Err(Error::InvalidArgument(
                "demonstration boundaries do not cover all samples".into(),
            ));
        }
        for p in &samples {
            joint.validate_point(p)?;
        }
        for r in &boundaries {
            for i in r.start + 1..r.end {
                if samples[i].coords()[0] <= samples[i - 1].coords()[0] {
                    return Err(Error::InvalidArgument(format!(
                        "times must strictly increase within a demonstration (sample {i})"
                    )));
                }
            }
        }
        Ok(DemonstrationSet { joint, output, samples, boundaries })
    }

    pub fn joint_descriptor(&self) -> &ManifoldDescriptor {
        &self.joint
    }

    pub fn output_descriptor(&self) -> &ManifoldDescriptor {
        &self.output
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Point] {
        &self.samples
    }

    pub fn time(&self, i: usize) -> f64 {
        self.samples[i].coords()[0]
    }

    pub fn demo_count(&self) -> usize {
        self.boundaries.len()
    }

    pub fn boundaries(&self) -> &[Range<usize>] {
        &self.boundaries
    }

    pub fn demo(&self, d: usize) -> &[Point] {
        &self.samples[self.boundaries[d].clone()]
    }

    pub fn time_span(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &self.samples {
            lo = lo.min(p.coords()[0]);
            hi = hi.max(p.coords()[0]);
        }
        (lo, hi)
    }

    /// Keeps the given (sorted, unique) sample indices, preserving the
    /// per-demonstration grouping.
    pub fn subset(&self, keep: &[usize]) -> Result<Self> {
        let mut samples = Vec::with_capacity(keep.len());
        let mut boundaries = Vec::new();
        let mut cursor = 0;
        for r in &self.boundaries {
            let start = samples.len();
            while cursor < keep.len() && keep[cursor] < r.end {
                let idx = keep[cursor];
                if idx < r.start {
                    return Err(Error::InvalidArgument("subset indices must be sorted".into()));
                }
                samples.push(self.samples[idx].clone());
                cursor += 1;
            }
            if samples.len() > start {
                boundaries.push(start..samples.len());
            }
        }
        if cursor != keep.len() {
            return Err(Error::InvalidArgument("subset index out of range".into()));
        }
        DemonstrationSet::new(self.output.clone(), samples, boundaries)
    }
}

/// Rescales every demonstration's timestamps affinely onto `[0, duration]`
/// and pools the samples into a joint-descriptor set.
pub fn normalize_time(
    output: &ManifoldDescriptor,
    demos: &[RawDemonstration],
    duration: f64,
) -> Result<DemonstrationSet> {
    if demos.is_empty() {
        return Err(Error::InvalidArgument("no demonstrations".into()));
    }
    if !(duration > 0.0) {
        return Err(Error::InvalidArgument(format!("duration must be positive, got {duration}")));
    }
    let mut samples = Vec::new();
    let mut boundaries = Vec::new();
    for (d, demo) in demos.iter().enumerate() {
        if demo.times.len() != demo.points.len() {
            return Err(Error::InvalidArgument(format!(
                "demonstration {d}: {} times for {} points",
                demo.times.len(),
                demo.points.len()
            )));
        }
        if demo.times.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "demonstration {d} needs at least 2 samples"
            )));
        }
        let t0 = demo.times[0];
        let t1 = *demo.times.last().unwrap();
        if !(t1 > t0) {
            return Err(Error::InvalidArgument(format!(
                "demonstration {d} has a non-increasing time span"
            )));
        }
        let start = samples.len();
        for (t, p) in demo.times.iter().zip(&demo.points) {
            let tn = (t - t0) / (t1 - t0) * duration;
            let mut coords = DVector::zeros(1 + p.coords().len());
            coords[0] = tn;
            coords.rows_mut(1, p.coords().len()).copy_from(p.coords());
            samples.push(Point::from_coords(coords));
        }
        boundaries.push(start..samples.len());
    }
    DemonstrationSet::new(output.clone(), samples, boundaries)
}

/// Flips quaternion blocks so each demonstration stays on one hemisphere:
/// the first sample gets a non-negative scalar part, every later sample a
/// non-negative inner product with its predecessor.
pub fn align_quaternions(output: &ManifoldDescriptor, demos: &mut [RawDemonstration]) {
    let quat_ranges: Vec<Range<usize>> = output
        .block_ranges()
        .filter(|(b, _)| matches!(b, Block::Sphere { ambient_dim: 4 }))
        .map(|(_, r)| r)
        .collect();
    if quat_ranges.is_empty() {
        return;
    }
    for demo in demos {
        for r in &quat_ranges {
            let mut prev: Option<DVector<f64>> = None;
            for p in &mut demo.points {
                let mut coords = p.coords().clone();
                let block = coords.rows_range(r.clone()).into_owned();
                let flip = match &prev {
                    None => block[0] < 0.0,
                    Some(q) => q.dot(&block) < 0.0,
                };
                if flip {
                    for i in r.clone() {
                        coords[i] = -coords[i];
                    }
                }
                prev = Some(coords.rows_range(r.clone()).into_owned());
                *p = Point::from_coords(coords);
            }
        }
    }
}

/// Loads demonstrations from CSV. Each row is `t` plus the output
/// coordinates; blank lines separate demonstrations; one leading non-numeric
/// row is accepted as a header. Sphere blocks are checked for unit norm:
/// drift up to 1e-3 is renormalized (with a warning), more is an error.
pub fn load_csv(path: &Path, output: &ManifoldDescriptor) -> Result<Vec<RawDemonstration>> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, output)
}

fn parse_csv(text: &str, output: &ManifoldDescriptor) -> Result<Vec<RawDemonstration>> {
    let dim = output.point_dim();
    let mut demos = Vec::new();
    let mut times = Vec::new();
    let mut points = Vec::new();
    let mut saw_rows = false;

    let mut flush = |times: &mut Vec<f64>, points: &mut Vec<Point>| {
        if !times.is_empty() {
            demos.push(RawDemonstration {
                times: std::mem::take(times),
                points: std::mem::take(points),
            });
        }
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            flush(&mut times, &mut points);
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
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
        if row.len() != dim + 1 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected {} fields (t plus {dim} coordinates), got {}", dim + 1, row.len()),
            });
        }
        let mut coords = DVector::from_row_slice(&row[1..]);
        for (b, r) in output.block_ranges() {
            if b.is_sphere() {
                let norm = coords.rows_range(r.clone()).norm();
                if (norm - 1.0).abs() > 1e-3 {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: format!("sphere block norm {norm} is too far from 1"),
                    });
                }
                if (norm - 1.0).abs() > crate::manifold::GEOMETRY_TOL {
                    log::warn!("line {}: renormalizing sphere block (norm {norm})", lineno + 1);
                    for i in r.clone() {
                        coords[i] /= norm;
                    }
                }
            }
        }
        times.push(row[0]);
        points.push(Point::from_coords(coords));
    }
    flush(&mut times, &mut points);
    if demos.is_empty() {
        return Err(Error::InvalidArgument("csv contains no samples".into()));
    }
    Ok(demos)
}

/// Writes demonstrations in the format `load_csv` reads. Floats are printed
/// in shortest round-trip form, so a load-save-load cycle is exact.
pub fn write_demos_csv(path: &Path, output: &ManifoldDescriptor, demos: &[RawDemonstration]) -> Result<()> {
    let mut text = String::from("t");
    for i in 0..output.point_dim() {
        text.push_str(&format!(",x{i}"));
    }
    text.push('\n');
    for (d, demo) in demos.iter().enumerate() {
        if d > 0 {
            text.push('\n');
        }
        for (t, p) in demo.times.iter().zip(&demo.points) {
            text.push_str(&format!("{t}"));
            for v in p.coords().iter() {
                text.push_str(&format!(",{v}"));
            }
            text.push('\n');
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Families of seeded synthetic datasets.
#[derive(Debug, Clone, Copy)]
pub enum SynthKind {
    /// Planar sine arc strokes; output `e:2`.
    SineArc { demos: usize, samples: usize, noise: f64 },
    /// Planar S-shaped strokes (two opposing bends); output `e:2`.
    LetterS { demos: usize, samples: usize, noise: f64 },
    /// Pick-and-place pose curve: 3-D waypoint path plus slerped
    /// orientation keys; output `e:3,s:4`.
    PickPlace { demos: usize, samples: usize, noise: f64 },
}

/// Generates a synthetic dataset. The same `(kind, seed)` pair always yields
/// identical data; `noise = 0` yields the exact analytic curve.
pub fn synth_generate(kind: SynthKind, seed: u64) -> (ManifoldDescriptor, Vec<RawDemonstration>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        SynthKind::SineArc { demos, samples, noise } => {
            let m = ManifoldDescriptor::euclidean(2);
            let data = (0..demos)
                .map(|_| {
                    let amp = 0.5 + 0.05 * normal(&mut rng);
                    let phase = 0.05 * normal(&mut rng);
                    planar_demo(samples, noise, &mut rng, |s| {
                        (s, amp * (std::f64::consts::PI * s + phase).sin())
                    })
                })
                .collect();
            (m, data)
        }
        SynthKind::LetterS { demos, samples, noise } => {
            let m = ManifoldDescriptor::euclidean(2);
            let data = (0..demos)
                .map(|_| {
                    let sway = 0.3 + 0.03 * normal(&mut rng);
                    planar_demo(samples, noise, &mut rng, |s| {
                        (
                            sway * (2.0 * std::f64::consts::PI * s).sin(),
                            1.0 - 2.0 * s + 0.15 * (4.0 * std::f64::consts::PI * s).sin(),
                        )
                    })
                })
                .collect();
            (m, data)
        }
        SynthKind::PickPlace { demos, samples, noise } => {
            let m = ManifoldDescriptor::new(vec![
                Block::Euclidean { dim: 3 },
                Block::Sphere { ambient_dim: 4 },
            ])
            .expect("static descriptor");
            let data = (0..demos).map(|_| pose_demo(samples, noise, &mut rng)).collect();
            (m, data)
        }
    }
}

/// Pose of the noiseless pick-and-place curve at parameter `s` in `[0, 1]`.
/// Exposed so callers can place task frames exactly on the curve.
pub fn pick_place_pose(s: f64) -> (DVector<f64>, [f64; 4]) {
    // lift, traverse, place
    let waypoints = [
        [0.0, 0.0, 0.0],
        [0.0, 0.05, 0.30],
        [0.50, 0.30, 0.35],
        [0.55, 0.35, 0.05],
    ];
    let knots = [0.0, 0.25, 0.60, 1.0];
    let seg = if s < knots[1] {
        0
    } else if s < knots[2] {
        1
    } else {
        2
    };
    let u = ((s - knots[seg]) / (knots[seg + 1] - knots[seg])).clamp(0.0, 1.0);
    let h = u * u * (3.0 - 2.0 * u); // smoothstep
    let a = waypoints[seg];
    let b = waypoints[seg + 1];
    let pos = DVector::from_row_slice(&[
        a[0] + h * (b[0] - a[0]),
        a[1] + h * (b[1] - a[1]),
        a[2] + h * (b[2] - a[2]),
    ]);

    // orientation keys at s = 0, 0.5, 1
    let q0 = [1.0, 0.0, 0.0, 0.0];
    let q1 = axis_angle_quat([0.0, 1.0, 0.0], 1.0);
    let q2 = axis_angle_quat([std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2, 0.0], 1.2);
    let quat = if s < 0.5 { slerp(q0, q1, s / 0.5) } else { slerp(q1, q2, (s - 0.5) / 0.5) };
    (pos, quat)
}

fn axis_angle_quat(axis: [f64; 3], angle: f64) -> [f64; 4] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let (s, c) = ((angle / 2.0).sin(), (angle / 2.0).cos());
    [c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n]
}

fn slerp(a: [f64; 4], mut b: [f64; 4], s: f64) -> [f64; 4] {
    let mut dot = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
    if dot < 0.0 {
        for v in &mut b {
            *v = -*v;
        }
        dot = -dot;
    }
    let dot = dot.clamp(-1.0, 1.0);
    let theta = dot.acos();
    let (wa, wb) = if theta < 1e-9 {
        (1.0 - s, s)
    } else {
        (((1.0 - s) * theta).sin() / theta.sin(), (s * theta).sin() / theta.sin())
    };
    let raw = [
        wa * a[0] + wb * b[0],
        wa * a[1] + wb * b[1],
        wa * a[2] + wb * b[2],
        wa * a[3] + wb * b[3],
    ];
    let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    [raw[0] / n, raw[1] / n, raw[2] / n, raw[3] / n]
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn planar_demo(
    samples: usize,
    noise: f64,
    rng: &mut ChaCha8Rng,
    curve: impl Fn(f64) -> (f64, f64),
) -> RawDemonstration {
    let mut times = Vec::with_capacity(samples);
    let mut points = Vec::with_capacity(samples);
    for i in 0..samples {
        let s = i as f64 / (samples - 1) as f64;
        let (x, y) = curve(s);
        times.push(s);
        points.push(Point::from_coords(DVector::from_row_slice(&[
            x + noise * normal(rng),
            y + noise * normal(rng),
        ])));
    }
    RawDemonstration { times, points }
}

fn pose_demo(samples: usize, noise: f64, rng: &mut ChaCha8Rng) -> RawDemonstration {
    let mut times = Vec::with_capacity(samples);
    let mut points = Vec::with_capacity(samples);
    for i in 0..samples {
        let s = i as f64 / (samples - 1) as f64;
        let (pos, quat) = pick_place_pose(s);
        let mut coords = DVector::zeros(7);
        for j in 0..3 {
            coords[j] = pos[j] + noise * normal(rng);
        }
        // orientation noise: random tangent perturbation of the same scale
        let q = DVector::from_row_slice(&quat);
        let mut v = DVector::from_fn(4, |_, _| normal(rng));
        v -= &q * q.dot(&v);
        let v = v * noise;
        let theta = v.norm();
        let qn = if theta > 0.0 {
            (&q * theta.cos() + (&v / theta) * theta.sin()).normalize()
        } else {
            q
        };
        for j in 0..4 {
            coords[3 + j] = qn[j];
        }
        times.push(s);
        points.push(Point::from_coords(coords));
    }
    RawDemonstration { times, points }
}

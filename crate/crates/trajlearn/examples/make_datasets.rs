//! Writes a small corpus of demonstration CSVs plus matching constraint
//! and frame files, ready for the command-line tool.
//!
//! Run with `cargo run --example make_datasets -- [dir]` (default
//! `datasets/`), then follow the printed commands.

use std::path::PathBuf;

use nalgebra::DVector;
use serde_json::json;
use trajlearn::data::{pick_place_pose, synth_generate, write_demos_csv, SynthKind};
use trajlearn::error::Result;

fn main() -> Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "datasets".into()));
    std::fs::create_dir_all(&dir)?;

    let (sine_m, sine) =
        synth_generate(SynthKind::SineArc { demos: 5, samples: 100, noise: 0.01 }, 7);
    write_demos_csv(&dir.join("sine.csv"), &sine_m, &sine)?;

    let (letter_m, letter) =
        synth_generate(SynthKind::LetterS { demos: 3, samples: 120, noise: 0.015 }, 3);
    write_demos_csv(&dir.join("letter_s.csv"), &letter_m, &letter)?;

    let (pose_m, poses) =
        synth_generate(SynthKind::PickPlace { demos: 4, samples: 90, noise: 0.004 }, 11);
    write_demos_csv(&dir.join("pick_place.csv"), &pose_m, &poses)?;

    // stroke endpoints as desired poses, nudged off the recorded average
    let mut start = DVector::zeros(2);
    let mut end = DVector::zeros(2);
    for demo in &letter {
        start += demo.points.first().unwrap().coords();
        end += demo.points.last().unwrap().coords();
    }
    start /= letter.len() as f64;
    end /= letter.len() as f64;
    let constraints = json!([
        { "t_des": 0.0, "x_des": [start[0] + 0.04, start[1] - 0.03] },
        { "t_des": 60.0, "x_des": [end[0] - 0.03, end[1] + 0.04] },
    ]);
    std::fs::write(
        dir.join("letter_s_constraints.json"),
        serde_json::to_string_pretty(&constraints)? + "\n",
    )?;

    // pick / inspect / place frames sitting on the noiseless curve
    let frame = |s: f64, t: f64| {
        let (pos, quat) = pick_place_pose(s);
        json!({
            "rotation": [quat[0], quat[1], quat[2], quat[3]],
            "translation": [pos[0], pos[1], pos[2]],
            "anchor_time": t,
            "constrained": true,
        })
    };
    let frames = json!([frame(0.0, 0.0), frame(0.5, 30.0), frame(1.0, 60.0)]);
    std::fs::write(
        dir.join("pick_place_frames.json"),
        serde_json::to_string_pretty(&frames)? + "\n",
    )?;

    println!("wrote demonstration corpus to {}/", dir.display());
    println!("\ntry:");
    let d = dir.display();
    println!("  trajlearn train --data {d}/sine.csv --k 5 --out-dir out/sine");
    println!("  trajlearn reproduce --model out/sine/model.json --out-dir out/sine");
    println!(
        "  trajlearn evaluate --data {d}/sine.csv --trajectory out/sine/trajectory.csv --out-dir out/sine"
    );
    println!(
        "  trajlearn train --method cem --data {d}/letter_s.csv --constraints {d}/letter_s_constraints.json --out-dir out/letter"
    );
    println!(
        "  trajlearn compare --data {d}/letter_s.csv --constraints {d}/letter_s_constraints.json --out-dir out/compare"
    );
    println!(
        "  trajlearn train --method tpgmm --descriptor e:3,s:4 --data {d}/pick_place.csv --frames {d}/pick_place_frames.json --k 9 --epsilon 1e-9 --out-dir out/poses"
    );
    println!(
        "  trajlearn reproduce --model out/poses/model.json --frames {d}/pick_place_frames.json --samples 61 --out-dir out/poses"
    );
    Ok(())
}

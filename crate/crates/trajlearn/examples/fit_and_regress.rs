//! Fit a mixture to noisy planar strokes, then regress the mean trajectory
//! and its uncertainty envelope by conditioning on time.
//!
//! Run with `cargo run --example fit_and_regress`.

use trajlearn::data::{normalize_time, synth_generate, SynthKind};
use trajlearn::error::Result;
use trajlearn::gmm::{fit_em, EmConfig};
use trajlearn::gmr::{reproduce, time_grid};

fn main() -> Result<()> {
    let (output, demos) =
        synth_generate(SynthKind::SineArc { demos: 5, samples: 80, noise: 0.01 }, 42);
    let data = normalize_time(&output, &demos, 60.0)?;
    println!("{} demonstrations, {} pooled samples on {output}", data.demo_count(), data.len());

    let fit = fit_em(&data, 5, &EmConfig::default())?;
    let ll = &fit.log_likelihoods;
    println!(
        "EM: {} iterations, converged = {}, log-likelihood {:.2} -> {:.2}",
        fit.iterations,
        fit.converged,
        ll.first().unwrap(),
        ll.last().unwrap()
    );
    for k in 0..fit.model.k() {
        let c = fit.model.component(k);
        println!(
            "  component {k}: prior {:.3}, centered at t = {:.1}",
            c.prior,
            fit.model.time_mean(k)
        );
    }

    // regression: condition the joint model on a time grid
    let times = time_grid(0.0, 60.0, 13)?;
    let traj = reproduce(&fit.model, &times)?;
    println!("\n    t        x        y    sigma_x  sigma_y");
    for (i, t) in traj.times.iter().enumerate() {
        let mean = traj.means[i].coords();
        let cov = &traj.covariances[i];
        println!(
            "{t:>6.1}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}",
            mean[0],
            mean[1],
            cov[(0, 0)].sqrt(),
            cov[(1, 1)].sqrt()
        );
    }
    Ok(())
}

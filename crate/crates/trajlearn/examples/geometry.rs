//! Tour of the geometry layer on a rigid-body pose manifold: geodesics,
//! tangent vectors, parallel transport, and the Frechet mean.
//!
//! Run with `cargo run --example geometry`.

use nalgebra::{DMatrix, DVector};
use trajlearn::error::Result;
use trajlearn::manifold::{ManifoldDescriptor, Point};

fn main() -> Result<()> {
    // 3-D position times unit quaternions
    let m: ManifoldDescriptor = "e:3,s:4".parse()?;
    println!("pose manifold {m}: {} ambient coordinates, {} tangent directions", m.point_dim(), m.effective_dim());

    let p = Point::new(&m, DVector::from_row_slice(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]))?;
    let half = 0.6_f64; // rotation of 1.2 rad about x
    let q = Point::new(
        &m,
        DVector::from_row_slice(&[0.3, -0.1, 0.2, half.cos(), half.sin(), 0.0, 0.0]),
    )?;

    // the log map gives the geodesic's initial velocity; its norm is the
    // geodesic distance, and the exp map walks back to the target
    let v = m.log_map(&p, &q)?;
    println!("|log_p(q)| = {:.6}, geodesic distance = {:.6}", v.norm(), m.geodesic_distance(&p, &q)?);
    let back = m.exp_map(&v)?;
    println!("exp_p(log_p(q)) lands within {:.2e} of q", m.geodesic_distance(&back, &q)?);

    // parallel transport moves tangent data between base points isometrically
    let w = m.parallel_transport(&v, &q)?;
    println!("transport keeps the norm: {:.6} -> {:.6}", v.norm(), w.norm());

    // the same holds for covariances: eigenvalues survive the move
    let basis = m.tangent_basis(&p);
    let seed = DMatrix::from_fn(m.effective_dim(), m.effective_dim(), |i, j| {
        0.05 / (1.0 + (i as f64 - j as f64).abs())
    });
    let local = &seed * seed.transpose();
    let cov = &basis * local * basis.transpose();
    let moved = m.transport_covariance(&p, &q, &cov)?;
    let before = cov.symmetric_eigen().eigenvalues;
    let after = moved.symmetric_eigen().eigenvalues;
    let mut sb: Vec<f64> = before.iter().copied().collect();
    let mut sa: Vec<f64> = after.iter().copied().collect();
    sb.sort_by(f64::total_cmp);
    sa.sort_by(f64::total_cmp);
    let drift = sb.iter().zip(&sa).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    println!("covariance transport moves eigenvalues by at most {drift:.2e}");

    // Frechet mean of three poses: the point minimizing summed squared
    // geodesic distance
    let r = Point::new(
        &m,
        DVector::from_row_slice(&[0.1, 0.4, -0.2, (0.3f64).cos(), 0.0, (0.3f64).sin(), 0.0]),
    )?;
    let cloud = [p.clone(), q.clone(), r];
    let mean = m.frechet_mean(&cloud, None, 50, 1e-12)?;
    let cost = |c: &Point| -> Result<f64> {
        let mut total = 0.0;
        for x in &cloud {
            total += m.geodesic_distance(c, x)?.powi(2);
        }
        Ok(total)
    };
    println!("summed squared distance at the mean: {:.6}", cost(&mean)?);
    for (i, x) in cloud.iter().enumerate() {
        println!("  ... at sample {i}: {:.6}", cost(x)?);
    }
    Ok(())
}

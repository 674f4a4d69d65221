//! Randomized invariant checks. Each property encodes something the rest of
//! the code silently relies on, so a failing case here usually explains a
//! mystery elsewhere.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use trajlearn::data::joint_descriptor;
use trajlearn::gmm::{GaussianComponent, GmmModel};
use trajlearn::gmr::gmr_at;
use trajlearn::manifold::{ManifoldDescriptor, Point};
use trajlearn::tpgmm::fusion_schedule;

const TOL: f64 = 1e-9;

fn descriptor(which: u8) -> ManifoldDescriptor {
    let text = match which % 4 {
        0 => "e:2",
        1 => "e:3",
        2 => "s:3",
        _ => "e:3,s:4",
    };
    text.parse().expect("fixed descriptors parse")
}

/// Projects raw coordinates onto the descriptor: sphere blocks get
/// normalized, everything else passes through.
fn project(m: &ManifoldDescriptor, raw: &[f64]) -> Option<Point> {
    let mut coords = DVector::from_row_slice(&raw[..m.point_dim()]);
    let mut at = 0;
    for block in m.blocks() {
        let w = block.ambient_dim();
        if block.is_sphere() {
            let norm = coords.rows(at, w).norm();
            if norm < 1e-3 {
                return None;
            }
            let scaled = coords.rows(at, w) / norm;
            coords.rows_mut(at, w).copy_from(&scaled);
        }
        at += w;
    }
    Point::new(m, coords).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn log_then_exp_lands_back_on_the_target(
        which in 0u8..4,
        p_raw in prop::collection::vec(-2.0f64..2.0, 7),
        q_raw in prop::collection::vec(-2.0f64..2.0, 7),
    ) {
        let m = descriptor(which);
        prop_assume!(project(&m, &p_raw).is_some() && project(&m, &q_raw).is_some());
        let p = project(&m, &p_raw).unwrap();
        let q = project(&m, &q_raw).unwrap();
        let v = match m.log_map(&p, &q) {
            Ok(v) => v,
            // near-antipodal sphere pairs have no unique geodesic
            Err(_) => return Ok(()),
        };
        let back = m.exp_map(&v).unwrap();
        prop_assert!((back.coords() - q.coords()).norm() < TOL);
        let dist = m.geodesic_distance(&p, &q).unwrap();
        prop_assert!((dist - v.coords().norm()).abs() < TOL);
    }

    #[test]
    fn parallel_transport_preserves_the_metric(
        which in 0u8..4,
        p_raw in prop::collection::vec(-2.0f64..2.0, 7),
        q_raw in prop::collection::vec(-2.0f64..2.0, 7),
        r_raw in prop::collection::vec(-2.0f64..2.0, 7),
        s_raw in prop::collection::vec(-2.0f64..2.0, 7),
    ) {
        let m = descriptor(which);
        let points: Option<Vec<Point>> = [&p_raw, &q_raw, &r_raw, &s_raw]
            .iter()
            .map(|raw| project(&m, raw))
            .collect();
        prop_assume!(points.is_some());
        let [p, q, r, s]: [Point; 4] = points.unwrap().try_into().unwrap();
        let (Ok(v), Ok(w)) = (m.log_map(&p, &r), m.log_map(&p, &s)) else {
            return Ok(());
        };
        let (Ok(tv), Ok(tw)) = (m.parallel_transport(&v, &q), m.parallel_transport(&w, &q)) else {
            return Ok(());
        };
        prop_assert!((tv.coords().norm() - v.coords().norm()).abs() < TOL);
        prop_assert!((tv.coords().dot(tw.coords()) - v.coords().dot(w.coords())).abs() < TOL);
    }

    #[test]
    fn activations_are_a_probability_vector(
        time_means in prop::collection::vec(0.0f64..60.0, 2..6),
        t in -10.0f64..70.0,
    ) {
        let model = time_line_model(&time_means, 1.0);
        let out = gmr_at(&model, t, None).unwrap();
        let sum: f64 = out.activations.iter().sum();
        prop_assert!((sum - 1.0).abs() < TOL);
        for &h in &out.activations {
            prop_assert!((0.0..=1.0 + TOL).contains(&h));
        }
    }

    #[test]
    fn shrinking_far_components_raises_the_bound_activation(
        offsets in prop::collection::vec(3.0f64..20.0, 1..4),
        signs in prop::collection::vec(prop::bool::ANY, 4),
        sigma in 0.5f64..2.0,
        gamma in 0.05f64..1.0,
    ) {
        // component 0 sits exactly at the constrained time; every other time
        // mean keeps at least a two-sigma margin, where smaller variance can
        // only lower its density at t_des
        let t_des = 30.0;
        let mut time_means = vec![t_des];
        for (i, off) in offsets.iter().enumerate() {
            let dir = if signs[i] { 1.0 } else { -1.0 };
            time_means.push(t_des + dir * off * sigma);
        }
        let model = time_line_model(&time_means, sigma);
        let before = gmr_at(&model, t_des, None).unwrap().activations[0];
        let mut gammas = vec![1.0; time_means.len()];
        for g in gammas.iter_mut().skip(1) {
            *g = gamma;
        }
        let after = gmr_at(&model.scaled(&gammas).unwrap(), t_des, None).unwrap().activations[0];
        prop_assert!(after >= before - TOL, "activation fell from {before} to {after}");
    }

    #[test]
    fn fusion_weights_stay_a_partition_of_unity(
        anchor_picks in prop::collection::vec(0usize..50, 1..5),
        samples in 1usize..50,
    ) {
        let mut anchors: Vec<usize> = anchor_picks.iter().map(|a| a % samples).collect();
        anchors.sort_unstable();
        anchors.dedup();
        let schedule = fusion_schedule(&anchors, samples).unwrap();
        for n in 0..samples {
            let sum: f64 = schedule.weights.iter().map(|row| row[n]).sum();
            prop_assert!((sum - 1.0).abs() < TOL);
        }
        for (f, &a) in anchors.iter().enumerate() {
            prop_assert!((schedule.weights[f][a] - 1.0).abs() < TOL, "frame {f} not alone at its anchor");
        }
    }
}

/// One-dimensional output, unit output variance, unit priors: each component
/// is placed on the time axis so activation behavior is easy to reason about.
fn time_line_model(time_means: &[f64], sigma: f64) -> GmmModel {
    let output: ManifoldDescriptor = "e:1".parse().unwrap();
    let joint = joint_descriptor(&output);
    let components = time_means
        .iter()
        .map(|&mu| GaussianComponent {
            prior: 1.0 / time_means.len() as f64,
            mean: Point::new(&joint, DVector::from_row_slice(&[mu, 0.0])).unwrap(),
            covariance: DMatrix::from_diagonal(&DVector::from_row_slice(&[sigma * sigma, 1.0])),
        })
        .collect();
    GmmModel::new(output, components).unwrap()
}

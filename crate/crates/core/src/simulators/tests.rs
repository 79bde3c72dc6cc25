use super::*;
use crate::losses::relative_mi;
use crate::rng::stream;
use std::f64::consts::PI;

fn moments(sim: &dyn Simulator, theta: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = sim.x_dim();
    let xs: Vec<Vec<f64>> = (0..n as u64).map(|s| sim.simulate(theta, s).unwrap()).collect();
    let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
    let cov = (0..d)
        .map(|a| {
            (0..d)
                .map(|b| xs.iter().map(|x| (x[a] - mean[a]) * (x[b] - mean[b])).sum::<f64>() / (n - 1) as f64)
                .collect()
        })
        .collect();
    (mean, cov)
}

#[test]
fn cosine_means() {
    assert_eq!(CosineToy::mean(&[0.0, 0.0]), vec![1.0, 1.0]);
    let m = CosineToy::mean(&[0.1, 0.3]);
    assert!(m[0].abs() < 1e-15 && m[1].abs() < 1e-15);
}

#[test]
fn cosine_covariance() {
    let (_, cov) = moments(&CosineToy::new(), &[0.3, 0.7], 10_000);
    for a in 0..2 {
        assert!((cov[a][a] - 0.1).abs() < 0.005, "{cov:?}");
    }
    assert!(cov[0][1].abs() < 0.005);
}

#[test]
fn tractable_means_match_within_five_standard_errors() {
    let sims: Vec<Box<dyn Simulator>> = vec![
        Box::new(CosineToy::new()),
        Box::new(GridMultimodal::new(2, 4, 4, 0.3).unwrap()),
        Box::new(TractableGaussian::new(2).unwrap()),
    ];
    let mut rng = stream(&[31]);
    let n = 100_000;
    for sim in &sims {
        for _ in 0..5 {
            let theta = sim.prior().sample(&mut rng);
            // the analytic mean is the x maximizing the Gaussian likelihood
            let mean: Vec<f64> = match sim.name() {
                "cosine_toy" => CosineToy::mean(&theta),
                "grid_multimodal" => (0..4).map(|i| (4.0 * PI * theta[i % 2]).cos()).collect(),
                _ => theta.clone(),
            };
            let (m, cov) = moments(sim.as_ref(), &theta, n);
            for j in 0..sim.x_dim() {
                let se = (cov[j][j] / n as f64).sqrt();
                assert!((m[j] - mean[j]).abs() < 5.0 * se, "{} {j}", sim.name());
            }
        }
    }
}

#[test]
fn grid_modes_and_shapes() {
    let g = GridMultimodal::new(2, 4, 4, 0.3).unwrap();
    let modes = g.modes().unwrap();
    assert_eq!(modes.centers.len(), 16);
    for c in &modes.centers {
        for t in c {
            assert!(((t * 8.0 - 1.0) / 2.0).fract().abs() < 1e-12);
        }
    }
    assert_eq!(modes.capture_radius, 1.0 / 16.0);
    assert!(GridMultimodal::new(2, 4, 5, 0.3).is_err());
    let wide = GridMultimodal::new(2, 16, 80, 0.3).unwrap();
    assert_eq!(wide.x_dim(), 80);
    assert_eq!(wide.modes().unwrap().centers.len(), 256);
    let quiet = GridMultimodal::new(2, 4, 4, 1e-12).unwrap();
    let x = quiet.simulate(&modes.centers[5], 9).unwrap();
    assert!(x.iter().all(|v| v.abs() < 1e-10));
}

#[test]
fn grid_likelihood_peaks_at_declared_centers() {
    let g = GridMultimodal::new(2, 4, 2, 0.3).unwrap();
    let centers = g.modes().unwrap().centers;
    let n = 401;
    let h = 1.0 / (n - 1) as f64;
    let x0 = [0.0, 0.0];
    let ll: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| g.log_likelihood(&x0, &[i as f64 * h, j as f64 * h]).unwrap()).collect())
        .collect();
    let mut maxima = Vec::new();
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let v = ll[i][j];
            let is_max = (-1i32..=1).all(|a| {
                (-1i32..=1).all(|b| ll[(i as i32 + a) as usize][(j as i32 + b) as usize] <= v)
            });
            if is_max {
                maxima.push([i as f64 * h, j as f64 * h]);
            }
        }
    }
    let near = |p: &[f64], q: &[f64]| p.iter().zip(q).all(|(a, b)| (a - b).abs() <= h + 1e-12);
    assert!(maxima.iter().all(|m| centers.iter().any(|c| near(m, c))));
    assert!(centers.iter().all(|c| maxima.iter().any(|m| near(m, c))));
}

#[test]
fn queue_quantiles() {
    assert_eq!(quantiles(&[4.0, 1.0, 3.0, 2.0], 3), vec![1.0, 2.5, 4.0]);
    assert_eq!(quantiles(&[5.0, 1.0, 3.0], 1), vec![3.0]);
    let q = Mg1Queue::new(50, 5).unwrap();
    let x = q.simulate(&[1.0, 2.0, 0.2], 4).unwrap();
    assert_eq!(x.len(), 5);
    assert!(x.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(x, q.simulate(&[1.0, 2.0, 0.2], 4).unwrap());
    assert_ne!(x, q.simulate(&[1.0, 2.0, 0.2], 5).unwrap());
    assert!(q.simulate(&[1.0, 2.0, 0.5], 4).is_err());
}

#[test]
fn saturated_queue_departs_at_the_service_time() {
    // mean inter-arrival 3 against a fixed service time of 8: the server
    // never idles after the first job
    let q = Mg1Queue::new(2000, 20).unwrap();
    let x = q.simulate(&[8.0, 0.0, 1.0 / 3.0], 1).unwrap();
    assert!(x[..19].iter().all(|v| (v - 8.0).abs() < 1e-9), "{x:?}");
}

#[test]
fn ricker_outputs() {
    let r = Ricker::new(13).unwrap();
    let y = r.simulate(&[3.8, 0.3, 10.0], 2).unwrap();
    assert_eq!(y.len(), 13);
    assert!(y.iter().all(|v| *v >= 0.0 && v.fract() == 0.0));
    assert_eq!(y, r.simulate(&[3.8, 0.3, 10.0], 2).unwrap());
}

#[test]
fn noiseless_ricker_iterates_the_recursion() {
    let theta = [3.5, 0.0, 7.0];
    let t = ricker_trajectory(&theta, 20, 3, false);
    let mut n = 1.0f64;
    for (y, p) in t.observations.iter().zip(&t.populations) {
        n = 3.5f64.exp() * n * (-n).exp();
        assert_eq!(*p, n);
        assert_eq!(*y, 7.0 * n);
    }
    assert!(!t.clamped);
}

#[test]
fn runaway_population_is_clamped() {
    let t = ricker_trajectory(&[40.0, 0.0, 10.0], 3, 1, true);
    assert!(t.clamped);
    assert!(t.populations.iter().all(|p| *p <= POPULATION_CAP));
}

#[test]
fn gaussian_basics() {
    let g = TractableGaussian::new(3).unwrap();
    let ll = g.log_likelihood(&[0.5, -1.0, 2.0], &[0.5, -1.0, 2.0]).unwrap();
    assert!((ll + 1.5 * (2.0 * PI).ln()).abs() < 1e-14);
    let (m, _) = moments(&g, &[0.0, 0.0, 0.0], 10_000);
    assert!(m.iter().all(|v| v.abs() < 0.03));
}

#[test]
fn gaussian_posterior_is_normalized() {
    let g = TractableGaussian::new(1).unwrap();
    for x in [0.0, 2.5, -4.0] {
        let n = 200_000;
        let h = 6.0 / n as f64;
        let z: f64 = (0..n).map(|i| g.posterior_log_density(&[-3.0 + (i as f64 + 0.5) * h], &[x]).exp()).sum::<f64>() * h;
        assert!((z - 1.0).abs() < 1e-6, "{x}: {z}");
    }
}

#[test]
fn gaussian_posterior_draws_match_quadrature_moments() {
    let g = TractableGaussian::new(1).unwrap();
    let mut rng = stream(&[32]);
    for x in [0.0, 2.8, -7.0] {
        let draws = g.sample_posterior(&[x], 50_000, &mut rng);
        assert!(draws.iter().all(|d| g.prior().contains(d)));
        let mean = draws.iter().map(|d| d[0]).sum::<f64>() / draws.len() as f64;
        let n = 20_000;
        let h = 6.0 / n as f64;
        let grid = (0..n).map(|i| -3.0 + (i as f64 + 0.5) * h);
        let qmean: f64 = grid.clone().map(|t| t * g.posterior_log_density(&[t], &[x]).exp()).sum::<f64>() * h;
        let qvar: f64 = grid.map(|t| (t - qmean).powi(2) * g.posterior_log_density(&[t], &[x]).exp()).sum::<f64>() * h;
        assert!((mean - qmean).abs() < 5.0 * (qvar / 50_000.0).sqrt(), "{x}: {mean} vs {qmean}");
    }
}

#[test]
fn simulator_as_its_own_reference_has_unit_relative_mi() {
    let g = TractableGaussian::new(1).unwrap();
    let pool = g.prior().sample_matrix(500, &mut stream(&[33]));
    let r = relative_mi(&SimulatorLikelihood(&g), &SimulatorLikelihood(&g), &pool, 200, 200, &mut stream(&[34]));
    assert!((r.value - 1.0).abs() < 3.0 * r.std_error, "{r:?}");
}

#[test]
fn prior_box() {
    let b = PriorBox::new(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap();
    assert!(b.contains(&[0.5, 0.0]));
    assert!(!b.contains(&[1.5, 0.0]));
    assert!((b.log_density(&[0.5, 0.0]) + 2f64.ln()).abs() < 1e-15);
    assert_eq!(b.log_density(&[2.0, 0.0]), f64::NEG_INFINITY);
    assert!(PriorBox::new(vec![1.0], vec![0.0]).is_err());
    assert!(PriorBox::new(vec![0.0], vec![1.0, 2.0]).is_err());
    let mut rng = stream(&[35]);
    assert!((0..100).all(|_| b.contains(&b.sample(&mut rng))));
}

#[test]
fn config_parsing() {
    let c: SimulatorConfig = serde_json::from_str(r#"{"name": "grid_multimodal", "modes": 3}"#).unwrap();
    assert_eq!(
        c,
        SimulatorConfig::GridMultimodal {
            dims: 2,
            modes: 3,
            output_dim: 4,
            sigma: 0.3
        }
    );
    let back: SimulatorConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
    assert_eq!(back, c);
    assert!(serde_json::from_str::<SimulatorConfig>(r#"{"name": "cosine_toy", "nosie": 1}"#).is_err());
    assert!(serde_json::from_str::<SimulatorConfig>(r#"{"name": "slcp"}"#).is_err());
    assert_eq!(c.build().unwrap().x_dim(), 4);
}

#[cfg(unix)]
mod external {
    use super::*;

    fn sh(script: &str, x_dim: usize, timeout_ms: u64) -> ExternalSimulator {
        ExternalSimulator::new(
            vec!["sh".into(), "-c".into(), script.into()],
            PriorBox::cube(2, 0.0, 1.0),
            x_dim,
            Duration::from_millis(timeout_ms),
        )
        .unwrap()
    }

    const ECHO: &str = r#"sed -u -E 's/"theta":(\[[^]]*\]).*/"x":\1}/'"#;

    #[test]
    fn echo_child_is_the_identity() {
        let s = sh(ECHO, 2, 5000);
        for (i, t) in [[0.5, 0.25], [0.0, 1.0], [0.125, 0.75]].iter().enumerate() {
            assert_eq!(s.simulate(t, i as u64).unwrap(), t.to_vec());
        }
    }

    #[test]
    fn nan_output_is_rejected() {
        let s = sh(r#"sed -u -E 's/.*"id":([0-9]+).*/{"id":\1,"x":[NaN,0]}/'"#, 2, 5000);
        match s.simulate(&[0.5, 0.5], 0) {
            Err(SimulatorError::Malformed { raw, .. }) => assert!(raw.contains("NaN")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let s = sh(ECHO, 3, 5000);
        assert!(matches!(s.simulate(&[0.5, 0.5], 0), Err(SimulatorError::OutputDim { expected: 3, got: 2, .. })));
    }

    #[test]
    fn reported_errors_and_mismatched_ids() {
        let s = sh(r#"sed -u -E 's/.*"id":([0-9]+).*/{"id":\1,"error":"boom"}/'"#, 2, 5000);
        assert!(matches!(s.simulate(&[0.5, 0.5], 0), Err(SimulatorError::Reported(e)) if e == "boom"));
        let s = sh(r#"sed -u -E 's/.*/{"id":99,"x":[0,0]}/'"#, 2, 5000);
        assert!(matches!(s.simulate(&[0.5, 0.5], 0), Err(SimulatorError::Malformed { .. })));
    }

    #[test]
    fn hung_child_times_out_and_is_restarted() {
        let s = sh("read line; sleep 30", 2, 200);
        let start = std::time::Instant::now();
        assert!(matches!(s.simulate(&[0.5, 0.5], 0), Err(SimulatorError::Timeout(_))));
        assert!(start.elapsed() < Duration::from_secs(5));
        assert!(matches!(s.simulate(&[0.5, 0.5], 0), Err(SimulatorError::Timeout(_))));
    }

    #[test]
    fn killed_child_is_reported() {
        let s = sh("read line; kill -9 $$", 2, 2000);
        assert!(matches!(s.simulate(&[0.5, 0.5], 0), Err(SimulatorError::Exited(_))));
    }

    #[test]
    fn outside_the_box_never_reaches_the_child() {
        let s = sh("exit 1", 2, 100);
        assert!(matches!(s.simulate(&[2.0, 0.5], 0), Err(SimulatorError::OutsideBox { .. })));
    }
}

use dispml::blocksys::Variant;
use dispml::certify::{find_gamma, Component, HalfPlaneGrid, MaterialLaw};
use dispml::matlaw::{eval_epsilon, ComplexFreq, DispersionParams, PmlStretch};
use dispml::tdsim::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn pulse(position: f64, frequency: f64, bandwidth: f64, delay: f64) -> Pulse {
    Pulse {
        amplitude: 1.0,
        frequency,
        bandwidth,
        delay,
        phase: -std::f64::consts::FRAC_PI_2,
        position,
        width: 0.0,
        onset: 0.0,
        cutoff: None,
        continuous_ramp: None,
    }
}

fn vacuum(n: usize, dx: f64, steps: usize) -> SimConfig {
    SimConfig::new(Variant::Dispersion, DispersionParams::vacuum(), Grid1D::plain(n, dx), steps)
}

fn debye() -> DispersionParams {
    DispersionParams::vacuum().with_debye(1.0, 1.0)
}

#[test]
fn vacuum_arrival_time() {
    let dx = 0.1;
    let mut c = vacuum(400, dx, 0);
    c.dt = Some(0.05);
    let mut p = pulse(20.0, 0.0, 4.0, 2.0);
    p.phase = 0.0;
    c.sources.push(p);
    let probe = 300;
    c.n_steps = 440;
    c.record = vec![Diagnostic::Probe { node: probe }];
    let (_, s) = run(&c).unwrap();
    let (k, _) = s[0]
        .values
        .iter()
        .enumerate()
        .fold((0, 0.0), |a, (k, v)| if v.abs() > a.1 { (k, v.abs()) } else { a });
    let arrival = s[0].times[k] - 2.0;
    let expected = 10.0;
    assert!((arrival - expected).abs() <= 2.0 * dx, "{arrival}");
}

#[test]
fn uniform_upml_decays_at_sigma() {
    let sigma = 2.0;
    let mut c = SimConfig::new(
        Variant::DispersionUpml,
        DispersionParams::vacuum(),
        Grid1D::plain(200, 0.05),
        400,
    );
    c.grid.uniform = Some(PmlStretch::uniaxial(sigma));
    c.sources.push(Pulse {
        cutoff: Some(1.0),
        ..pulse(5.0, 6.0, 3.0, 0.5)
    });
    let dt = c.time_step();
    let mut sim = Simulator::new(&c).unwrap();
    let mut energy = Vec::new();
    let mut times = Vec::new();
    for _ in 0..c.n_steps {
        sim.step(None).unwrap();
        let t = sim.state().time;
        if t > 1.0 + 2.0 * dt {
            let e = sim.energies().field;
            if let Some(prev) = energy.last() {
                assert!(e < *prev, "energy must decrease strictly");
            }
            energy.push(e);
            times.push(t);
        }
    }
    let s = TimeSeries {
        name: "energy".into(),
        times,
        values: energy,
    };
    let fit = fit_decay_rate(&s, (1.5, 15.0), SeriesKind::Energy).unwrap();
    assert!((fit.rate / sigma - 1.0).abs() < 0.02, "{fit:?}");
    assert!((fit.slope / (-2.0 * sigma) - 1.0).abs() < 0.02);
}

#[test]
fn upml_is_conjugate_to_vacuum() {
    // e^{σt} u_σ solves the undamped problem with source e^{σt} f.
    let sigma = 2.0;
    let mut damped = SimConfig::new(
        Variant::DispersionUpml,
        DispersionParams::vacuum(),
        Grid1D::plain(200, 0.05),
        1000,
    );
    damped.dt = Some(0.01);
    damped.grid.uniform = Some(PmlStretch::uniaxial(sigma));
    damped.sources.push(Pulse {
        cutoff: Some(1.0),
        width: 0.2,
        ..pulse(5.0, 6.0, 3.0, 0.5)
    });
    let mut free = damped.clone();
    free.variant = Variant::Dispersion;
    free.grid.uniform = None;
    free.sources.clear();
    let mut a = Simulator::new(&damped).unwrap();
    let mut b = Simulator::new(&free).unwrap();
    let mut f = vec![0.0; 201];
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    for _ in 0..damped.n_steps {
        let th = a.state().time + 0.005;
        a.source_at(th, &mut f);
        f.iter_mut().for_each(|v| *v *= (sigma * th).exp());
        a.step(None).unwrap();
        b.step(Some(&f)).unwrap();
        let g = (sigma * a.state().time).exp();
        for (x, y) in a.state().e().iter().zip(b.state().e()) {
            worst = worst.max((g * x - y).abs());
            scale = scale.max(y.abs());
        }
    }
    assert!(worst <= 0.01 * scale, "{worst} vs {scale}");
}

fn harmonic_amplitude(times: &[f64], values: &[f64], omega: f64) -> f64 {
    // Least squares for a cos + b sin + c.
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for (t, v) in times.iter().zip(values) {
        let row = [(omega * t).cos(), (omega * t).sin(), 1.0];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * v;
        }
    }
    let a = nalgebra::Matrix3::from_fn(|i, j| ata[i][j]);
    let b = nalgebra::Vector3::from_fn(|i, _| atb[i]);
    let x = a.lu().solve(&b).unwrap();
    x[0].hypot(x[1])
}

#[test]
fn debye_steady_state_attenuation() {
    let p = debye();
    let omega = 1.0;
    let dx = 0.05;
    let n = 1200;
    let mut c = SimConfig::new(Variant::Dispersion, p.clone(), Grid1D::plain(n, dx), 0);
    let dt = c.time_step();
    c.n_steps = (70.0 / dt) as usize;
    c.sources.push(Pulse {
        phase: 0.0,
        continuous_ramp: Some(10.0),
        ..pulse(30.0, omega, 1.0, 0.0)
    });
    let (n1, n2) = (640, 740);
    c.record = vec![Diagnostic::Probe { node: n1 }, Diagnostic::Probe { node: n2 }];
    let (_, s) = run(&c).unwrap();
    let t_from = 70.0 - 4.0 * std::f64::consts::PI;
    let pick = |k: usize| -> (Vec<f64>, Vec<f64>) {
        s[k].times
            .iter()
            .zip(&s[k].values)
            .filter(|(t, _)| **t >= t_from)
            .map(|(t, v)| (*t, *v))
            .unzip()
    };
    let (t1, v1) = pick(0);
    let (t2, v2) = pick(1);
    let ratio = harmonic_amplitude(&t2, &v2, omega) / harmonic_amplitude(&t1, &v1, omega);
    let eps = eval_epsilon(&p, ComplexFreq::new(0.0, omega)).unwrap();
    let n_index = (eps * p.mu).sqrt();
    let expected = (-omega * n_index.im.abs() * (n2 - n1) as f64 * dx).exp();
    assert!((ratio / expected - 1.0).abs() < 0.02, "{ratio} vs {expected}");
}

#[test]
fn zero_pml_reproduces_plain_medium() {
    let mut plain = SimConfig::new(Variant::Dispersion, debye(), Grid1D::plain(300, 0.05), 600);
    plain.sources.push(pulse(7.5, 4.0, 2.0, 1.5));
    let mut cfs = plain.clone();
    cfs.variant = Variant::DispersionCfs;
    cfs.grid.pml = Some(PmlProfile {
        sigma_max: Some(0.0),
        ..PmlProfile::cfs(20, 0.0)
    });
    let (a, _) = run(&plain).unwrap();
    let (b, _) = run(&cfs).unwrap();
    let scale = a.e().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(scale > 0.0);
    for (x, y) in a.e().iter().zip(b.e()) {
        assert!((x - y).abs() <= 1e-12 * scale);
    }
    for (x, y) in a.h().iter().zip(b.h()) {
        assert!((x - y).abs() <= 1e-12 * scale);
    }
}

fn smooth_vacuum_run(level: u32) -> Vec<f64> {
    let k = 1usize << level;
    let dx = 0.2 / k as f64;
    let mut c = vacuum(50 * k, dx, 60 * k);
    c.dt = Some(0.5 * dx);
    c.sources.push(Pulse {
        width: 0.6,
        phase: 0.0,
        ..pulse(5.0, 2.0, 1.0, 3.0)
    });
    let (s, _) = run(&c).unwrap();
    s.e().into_iter().step_by(k).collect()
}

#[test]
fn vacuum_convergence_is_second_order() {
    let levels: Vec<Vec<f64>> = (0..6).map(smooth_vacuum_run).collect();
    let reference: Vec<f64> = levels[5].iter().zip(&levels[4]).map(|(f, c)| (4.0 * f - c) / 3.0).collect();
    let err = |u: &Vec<f64>| -> f64 { (u.iter().zip(&reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * 0.2).sqrt() };
    let errs: Vec<f64> = levels[..4].iter().map(err).collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 1.9, "orders for {errs:?}");
    }
}

#[test]
fn discrete_causality_is_bitwise() {
    let a_time = 2.0;
    let mut base = SimConfig::new(Variant::DispersionCfs, debye(), Grid1D::plain(200, 0.05), 200);
    base.grid.pml = Some(PmlProfile::cfs(16, 0.5));
    base.sources.push(Pulse {
        width: 0.3,
        ..pulse(5.0, 3.0, 1.0, 2.0)
    });
    let mut other = base.clone();
    other.sources[0].cutoff = Some(a_time);
    other.sources.push(Pulse {
        onset: a_time,
        ..pulse(3.0, 1.0, 1.0, 3.0)
    });
    let mut a = Simulator::new(&base).unwrap();
    let mut b = Simulator::new(&other).unwrap();
    let mut diverged = false;
    for _ in 0..200 {
        a.step(None).unwrap();
        b.step(None).unwrap();
        let (sa, sb) = (a.state(), b.state());
        if sa.time <= a_time {
            assert_eq!(sa.e_chain, sb.e_chain);
            assert_eq!(sa.h_chain, sb.h_chain);
        } else if sa.e_chain != sb.e_chain {
            diverged = true;
        }
    }
    assert!(diverged);
}

#[test]
fn runs_are_deterministic_and_fast() {
    let mut c = vacuum(512, 0.1, 2000);
    c.sources.push(pulse(25.6, 3.0, 1.0, 2.0));
    c.record = vec![Diagnostic::Energy, Diagnostic::Probe { node: 100 }];
    let t = Instant::now();
    let a = run(&c).unwrap();
    assert!(t.elapsed().as_secs_f64() < 1.0, "{:?}", t.elapsed());
    let b = run(&c).unwrap();
    assert_eq!(a, b);
}

#[test]
fn vacuum_energy_is_conserved() {
    let mut c = vacuum(200, 0.1, 1200);
    c.sources.push(Pulse {
        cutoff: Some(4.0),
        width: 0.5,
        ..pulse(10.0, 2.0, 1.0, 2.0)
    });
    c.record = vec![Diagnostic::Energy, Diagnostic::StateNorm];
    let (_, s) = run(&c).unwrap();
    let after: Vec<f64> = s[0].times.iter().zip(&s[0].values).filter(|(t, _)| **t > 4.5).map(|(_, v)| *v).collect();
    let e0 = after[0];
    assert!(e0 > 0.0);
    for e in &after {
        assert!((e - e0).abs() <= 1e-10 * e0);
    }
    assert_eq!(s[0].values, s[1].values);
}

/// Spread of ½Σdx(E² + H²) after the source is off.
fn unpaired_spread(dx: f64) -> f64 {
    let n = (20.0 / dx) as usize;
    let mut c = vacuum(n, dx, 0);
    c.dt = Some(0.5 * dx);
    c.n_steps = (30.0 / (0.5 * dx)) as usize;
    c.sources.push(Pulse {
        cutoff: Some(4.0),
        width: 0.5,
        phase: 0.0,
        ..pulse(10.0, 2.0, 1.0, 2.0)
    });
    let mut sim = Simulator::new(&c).unwrap();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for _ in 0..c.n_steps {
        sim.step(None).unwrap();
        if sim.state().time > 5.0 {
            let st = sim.state();
            // Time-centred: E averaged over the step, H at the half step.
            let e: f64 = st.e().iter().zip(&st.e_prev).map(|(a, b)| (0.5 * (a + b)).powi(2)).sum::<f64>()
                + st.h().iter().map(|v| v * v).sum::<f64>();
            let e = 0.5 * dx * e;
            lo = lo.min(e);
            hi = hi.max(e);
        }
    }
    (hi - lo) / hi
}

#[test]
fn unpaired_energy_drift_is_second_order() {
    let a = unpaired_spread(0.1);
    let b = unpaired_spread(0.05);
    assert!(a / b > 3.5, "{a} {b}");
}

fn reflection_setup(thickness: usize) -> (SimConfig, SimConfig) {
    let dx = 1.0;
    let phys = 120;
    let omega = 2.0 * std::f64::consts::PI / 20.0;
    let mut small = SimConfig::new(
        Variant::CfsVacuum,
        DispersionParams::vacuum(),
        Grid1D::plain(phys + 2 * thickness, dx),
        0,
    );
    small.grid.pml = Some(PmlProfile::cfs(thickness, 0.05 * omega));
    small.dt = Some(0.5 * dx);
    // Source at 40 cells into the physical region.
    let x_s = (thickness + 40) as f64 * dx;
    small.sources.push(pulse(x_s, omega, omega / 3.0, 45.0));
    small.n_steps = 2 * 230;
    let reference = embedded_reference(&small, 2 * phys);
    (small, reference)
}

#[test]
fn cfs_reflection_below_minus_sixty_db() {
    let (small, reference) = reflection_setup(16);
    let r = reflection_coefficient(&small, &reference).unwrap();
    assert!(r.r_db <= -60.0, "{r:?}");
}

#[test]
fn thicker_layers_reflect_less() {
    let r: Vec<f64> = [8, 16, 32]
        .iter()
        .map(|&t| {
            let (a, b) = reflection_setup(t);
            reflection_coefficient(&a, &b).unwrap().r_db
        })
        .collect();
    eprintln!("reflection by thickness 8/16/32: {r:?} dB");
    assert!(r[0] > r[1] && r[1] > r[2], "{r:?}");
}

#[test]
fn hard_wall_reflects_fully() {
    let (small, reference) = reflection_setup(0);
    let r = reflection_coefficient(&small, &reference).unwrap();
    assert!(r.r_db.abs() < 0.5, "{r:?}");
}

#[test]
fn long_window_is_rejected() {
    let (mut small, reference) = reflection_setup(16);
    small.n_steps *= 10;
    assert!(matches!(
        reflection_coefficient(&small, &reference),
        Err(TdsimError::WindowTooLong { .. })
    ));
}

#[test]
fn cfs_layers_drain_physical_energy() {
    let (mut c, _) = reflection_setup(16);
    c.n_steps = 3000;
    c.record = vec![Diagnostic::PhysicalEnergy];
    let (_, s) = run(&c).unwrap();
    let peak = s[0].values.iter().cloned().fold(0.0, f64::max);
    let last = *s[0].values.last().unwrap();
    assert!(last < 1e-6 * peak, "{last} vs {peak}");
}

#[test]
fn debye_cfs_rate_exceeds_certificate_floor() {
    let p = debye();
    let mut c = SimConfig::new(Variant::DispersionCfs, p.clone(), Grid1D::plain(200, 0.1), 3000);
    c.grid.pml = Some(PmlProfile::cfs(20, 1.0));
    c.sources.push(Pulse {
        cutoff: Some(6.0),
        ..pulse(10.0, 2.0, 1.0, 3.0)
    });
    c.record = vec![Diagnostic::StateNorm];
    let (_, s) = run(&c).unwrap();
    let fit = fit_decay_rate(&s[0], (100.0, 300.0), SeriesKind::Energy).unwrap();
    let law = MaterialLaw::new(p, PmlStretch::cfs(1.0, 1.0), Component::Both);
    let grid = HalfPlaneGrid::default_for(&law).with_origin_radius(0.05);
    let cert = dispml::certify::find_nu0_stability(&law, &grid, (0.0, 4.0)).unwrap();
    eprintln!("measured {:.4e}, certified {:.4e}", fit.rate, cert.nu0);
    assert!(fit.rate >= 0.5 * cert.nu0);
}

/// Weighted norm sqrt(Σ‖u_n‖² e^{−2ν t_n} dt) with spatial weight dx.
fn weighted(samples: &[(f64, f64)], nu: f64, dt: f64) -> f64 {
    samples.iter().map(|(t, sq)| sq * (-2.0 * nu * t).exp() * dt).sum::<f64>().sqrt()
}

#[test]
fn discrete_stability_estimate() {
    let nu = 0.5;
    let p = debye();
    let law = MaterialLaw::new(p.clone(), PmlStretch::NONE, Component::Both);
    let grid = HalfPlaneGrid::default_for(&law);
    let gamma = find_gamma(&law, nu, &grid).unwrap().gamma;
    assert!(gamma > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let dx = 0.05;
        let mut c = SimConfig::new(Variant::Dispersion, p.clone(), Grid1D::plain(400, dx), 600);
        for _ in 0..rng.gen_range(1..4) {
            c.sources.push(Pulse {
                amplitude: rng.gen_range(-2.0..2.0),
                frequency: rng.gen_range(0.0..6.0),
                bandwidth: rng.gen_range(0.5..3.0),
                delay: rng.gen_range(2.0..8.0),
                phase: rng.gen_range(0.0..6.28),
                position: rng.gen_range(2.0..18.0),
                width: rng.gen_range(0.1..1.0),
                onset: 0.0,
                cutoff: None,
                continuous_ramp: None,
            });
        }
        let mut sim = Simulator::new(&c).unwrap();
        let dt = sim.dt();
        let mut u = Vec::new();
        let mut f = Vec::new();
        let mut buf = vec![0.0; 401];
        for _ in 0..c.n_steps {
            let t_half = sim.state().time + 0.5 * dt;
            sim.source_at(t_half, &mut buf);
            f.push((t_half, dx * buf.iter().map(|v| v * v).sum::<f64>()));
            sim.step(None).unwrap();
            let st = sim.state();
            u.push((st.time, dx * st.e().iter().map(|v| v * v).sum::<f64>()));
            u.push((st.time - 0.5 * dt, dx * st.h().iter().map(|v| v * v).sum::<f64>()));
        }
        let nu_u = weighted(&u, nu, dt);
        let nu_f = weighted(&f, nu, dt);
        assert!(nu_u <= (1.0 + 5.0 * dt) * nu_f / gamma, "{nu_u} > {nu_f}/{gamma}");
    }
}

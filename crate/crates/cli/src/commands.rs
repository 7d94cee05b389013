use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use dispml::blocksys::{assemble_with, expand_rows, tf_equivalence_check, BlockSystem, S3Coupling, TfReport, Variant};
use dispml::certify::{
    check_m2m3, find_nu0_stability, slope_bound, Certificate, CertifyError, Component, HalfPlaneGrid, MaterialLaw,
};
use dispml::matlaw::PmlStretch;
use dispml::nlsolve::{picard_solve, weighted_norm, write_iteration_log, write_solution_csv, PicardOptions, PicardResult};
use dispml::tdsim::{
    embedded_reference, energy, fit_decay_rate, reflection_coefficient, run, write_series_csv, write_snapshot_csv, DecayFit,
    Energies, ReflectionReport, SeriesKind, TimeSeries,
};
use serde::{Deserialize, Serialize};

use crate::config::{self, AssembleConfig, CertifyConfig, Expectation, FixedpointConfig, SimulateConfig};
use crate::manifest::{write_json, RunManifest};
use crate::scenarios::CommandKind;
use crate::{CliError, Result};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub scenario: Option<String>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub expect: Option<Expectation>,
    pub paper_literal_s3: bool,
}

/// What a command reports back to the terminal.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: String,
    /// Set when the outputs were written but an expectation did not hold.
    pub mismatch: Option<String>,
}

impl Outcome {
    pub fn into_result(self) -> Result<String> {
        match self.mismatch {
            Some(m) => Err(CliError::Expectation(m)),
            None => Ok(self.summary),
        }
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn label<'a>(name: &'a Option<String>, origin: &'a str) -> &'a str {
    name.as_deref().unwrap_or(origin)
}

fn finish(kind: CommandKind, origin: &str, opts: &RunOptions, seed: Option<u64>, outputs: &[&str]) -> Result<()> {
    let m = RunManifest::new(
        kind.as_str(),
        origin,
        &opts.out,
        seed,
        outputs.iter().map(|s| s.to_string()).collect(),
    );
    write_json(&opts.out, "manifest.json", &m)
}

impl From<CertifyError> for CliError {
    fn from(e: CertifyError) -> Self {
        match e {
            CertifyError::InvalidGrid(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub scenario: String,
    pub law: MaterialLaw,
    pub nu_search: [f64; 2],
    pub certificate: Certificate,
    /// Accretive with a positive rate.
    pub stable: bool,
    pub expect: Option<Expectation>,
    pub expectation_met: Option<bool>,
}

pub fn certify(opts: &RunOptions) -> Result<Outcome> {
    let loaded = config::load::<CertifyConfig>(CommandKind::Certify, opts.config.as_deref(), opts.scenario.as_deref())?;
    let cfg = loaded.value;
    let name = label(&cfg.name, &loaded.origin).to_string();
    let [lo, hi] = cfg.nu_search;
    if !(cfg.origin_radius >= 0.0) || !(lo < hi) {
        return Err(CliError::Config("need origin_radius >= 0 and nu_search[0] < nu_search[1]".into()));
    }
    let law = MaterialLaw::new(cfg.material.clone(), cfg.stretch, cfg.component);
    let grid = cfg
        .grid
        .apply(HalfPlaneGrid::default_for(&law))
        .with_origin_radius(cfg.origin_radius);
    let cert = find_nu0_stability(&law, &grid, (lo, hi))?;
    let m2m3 = check_m2m3(&cfg.material);

    let stable = cert.is_accretive() && cert.nu0 > 0.0;
    let expect = opts.expect.or(cfg.expect);
    let met = expect.map(|e| (e == Expectation::Stable) == stable);

    prepare_out(&opts.out)?;
    let file = CertificateFile {
        scenario: name.clone(),
        law,
        nu_search: cfg.nu_search,
        certificate: cert.clone(),
        stable,
        expect,
        expectation_met: met,
    };
    write_json(&opts.out, "certificate.json", &file)?;
    write_json(&opts.out, "m2m3.json", &m2m3)?;
    finish(CommandKind::Certify, &loaded.origin, opts, None, &["certificate.json", "m2m3.json"])?;

    let mut summary = format!(
        "{name}: {:?} nu0={:.6e} gamma={:.6e}",
        cert.verdict, cert.nu0, cert.gamma
    );
    if let Some(d) = cert.slope_d {
        summary += &format!(" d={d:.6e}");
    }
    if let Some(w) = cert.counterexample {
        summary += &format!(" counterexample z={}{:+}i value={:.3e}", w.nu, w.t, w.value);
    }
    let mismatch = match (expect, met) {
        (Some(e), Some(ok)) => {
            summary += &format!(" [expect {}: {}]", expect_str(e), if ok { "ok" } else { "MISMATCH" });
            (!ok).then(|| format!("{name}: expected {}, got {}", expect_str(e), if stable { "stable" } else { "unstable" }))
        }
        _ => None,
    };
    Ok(Outcome { summary, mismatch })
}

fn expect_str(e: Expectation) -> &'static str {
    match e {
        Expectation::Stable => "stable",
        Expectation::Unstable => "unstable",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSystemFile {
    pub name: String,
    pub s3: S3Coupling,
    pub system: BlockSystem,
    pub rows: Vec<String>,
}

pub fn assemble(opts: &RunOptions) -> Result<Outcome> {
    let loaded = config::load::<AssembleConfig>(CommandKind::Assemble, opts.config.as_deref(), opts.scenario.as_deref())?;
    let cfg = loaded.value;
    let name = label(&cfg.name, &loaded.origin).to_string();
    let s3 = if opts.paper_literal_s3 { S3Coupling::Literal } else { cfg.s3 };
    let seed = opts.seed.unwrap_or(cfg.seed);
    if cfg.samples == 0 {
        return Err(CliError::Config("samples must be positive".into()));
    }
    let sys = assemble_with(cfg.variant, &cfg.material, &cfg.stretch, s3)?;
    let report: TfReport = tf_equivalence_check(&sys, &cfg.material, &cfg.stretch, cfg.samples, seed);

    prepare_out(&opts.out)?;
    let file = BlockSystemFile {
        name: name.clone(),
        s3,
        rows: expand_rows(&sys),
        system: sys,
    };
    write_json(&opts.out, "blocksystem.json", &file)?;
    write_json(&opts.out, "tf_report.json", &report)?;
    finish(CommandKind::Assemble, &loaded.origin, opts, Some(seed), &["blocksystem.json", "tf_report.json"])?;

    let verdict = if report.pass { "PASS" } else { "FAIL" };
    let summary = format!(
        "{name}: {verdict} dim={} max_rel_error E={:.3e} H={:.3e} over {} points (seed {seed})",
        file.system.layout.dim, report.max_rel_error_electric, report.max_rel_error_magnetic, report.samples
    );
    let mismatch = (!report.pass).then(|| format!("{name}: transfer-function check failed"));
    Ok(Outcome { summary, mismatch })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub name: String,
    pub samples: usize,
    pub first: f64,
    pub last: f64,
    pub min: f64,
    pub max: f64,
    pub max_abs: f64,
    pub time_of_max_abs: f64,
    pub rms: f64,
}

impl SeriesStats {
    fn of(s: &TimeSeries) -> Self {
        let n = s.values.len();
        let (k, max_abs) = s
            .values
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |a, (k, v)| if v.abs() > a.1 { (k, v.abs()) } else { a });
        Self {
            name: s.name.clone(),
            samples: n,
            first: s.values.first().copied().unwrap_or(0.0),
            last: s.values.last().copied().unwrap_or(0.0),
            min: s.values.iter().copied().fold(f64::INFINITY, f64::min),
            max: s.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            max_abs,
            time_of_max_abs: s.times.get(k).copied().unwrap_or(0.0),
            rms: if n == 0 { 0.0 } else { (s.values.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    pub series: String,
    pub window: [f64; 2],
    pub kind: SeriesKind,
    pub decay_rate: f64,
    pub fit: DecayFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSummary {
    pub series: String,
    pub after: f64,
    pub reference: f64,
    /// max |v − v_ref| / |v_ref| over the samples after `after`.
    pub relative: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub name: String,
    pub variant: Variant,
    pub dt: f64,
    pub n_steps: usize,
    pub final_time: f64,
    pub final_energies: Energies,
    pub series: Vec<SeriesStats>,
    pub decay: Option<DecaySummary>,
    pub reflection: Option<ReflectionReport>,
    pub drift: Option<DriftSummary>,
}

fn find_series<'a>(series: &'a [TimeSeries], name: &str) -> Result<&'a TimeSeries> {
    series
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| CliError::Config(format!("series `{name}` is not recorded (add it to sim.record)")))
}

pub fn simulate(opts: &RunOptions) -> Result<Outcome> {
    let loaded = config::load::<SimulateConfig>(CommandKind::Simulate, opts.config.as_deref(), opts.scenario.as_deref())?;
    let cfg = loaded.value;
    let name = label(&cfg.name, &loaded.origin).to_string();
    cfg.sim.validate()?;
    let (state, series) = run(&cfg.sim)?;

    let decay = match &cfg.decay_fit {
        Some(spec) => {
            let s = find_series(&series, &spec.series)?;
            let fit = fit_decay_rate(s, (spec.window[0], spec.window[1]), spec.kind)?;
            Some(DecaySummary {
                series: spec.series.clone(),
                window: spec.window,
                kind: spec.kind,
                decay_rate: fit.rate,
                fit,
            })
        }
        None => None,
    };
    let drift = match &cfg.drift {
        Some(spec) => {
            let s = find_series(&series, &spec.series)?;
            let after: Vec<f64> = s
                .times
                .iter()
                .zip(&s.values)
                .filter(|(t, _)| **t > spec.after)
                .map(|(_, v)| *v)
                .collect();
            let reference = *after
                .first()
                .ok_or_else(|| CliError::Config("drift window holds no samples".into()))?;
            let relative = after.iter().map(|v| (v - reference).abs()).fold(0.0, f64::max) / reference.abs();
            Some(DriftSummary {
                series: spec.series.clone(),
                after: spec.after,
                reference,
                relative,
                samples: after.len(),
            })
        }
        None => None,
    };
    let reflection = match &cfg.reflection {
        Some(spec) => Some(reflection_coefficient(&cfg.sim, &embedded_reference(&cfg.sim, spec.pad))?),
        None => None,
    };

    prepare_out(&opts.out)?;
    let mut outputs = vec!["timeseries.csv"];
    write_series_csv(&series, create(&opts.out, "timeseries.csv")?)?;
    if cfg.snapshot {
        write_snapshot_csv(&state, &cfg.sim.grid, create(&opts.out, "snapshot.csv")?)?;
        outputs.push("snapshot.csv");
    }
    let summary = SimSummary {
        name: name.clone(),
        variant: cfg.sim.variant,
        dt: cfg.sim.time_step(),
        n_steps: cfg.sim.n_steps,
        final_time: state.time,
        final_energies: energy(&state, &cfg.sim),
        series: series.iter().map(SeriesStats::of).collect(),
        decay,
        reflection,
        drift,
    };
    write_json(&opts.out, "summary.json", &summary)?;
    outputs.push("summary.json");
    finish(CommandKind::Simulate, &loaded.origin, opts, None, &outputs)?;

    let mut line = format!(
        "{name}: {} steps, dt={:.4e}, final energy={:.6e}",
        summary.n_steps, summary.dt, summary.final_energies.field
    );
    if let Some(d) = &summary.decay {
        line += &format!(" decay_rate={:.6e} (r2={:.6})", d.decay_rate, d.fit.r_squared);
    }
    if let Some(r) = &summary.reflection {
        line += &format!(" R_dB={:.2}", r.r_db);
    }
    if let Some(d) = &summary.drift {
        line += &format!(" drift={:.3e}", d.relative);
    }
    Ok(Outcome {
        summary: line,
        mismatch: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub nu: f64,
    pub iterations: usize,
    pub max_ratio: f64,
    /// max |E_ν − E_ν'| / max |E_ν|.
    pub max_rel_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedpointSummary {
    pub name: String,
    pub nu: f64,
    pub slope_d: f64,
    pub iterations: usize,
    pub converged: bool,
    pub lipschitz: f64,
    pub predicted_ratio: f64,
    pub predicted_contraction: bool,
    pub max_ratio: f64,
    pub residual: f64,
    pub ball_radius: f64,
    pub solution_norm: f64,
    pub compare: Option<Comparison>,
}

pub fn fixedpoint(opts: &RunOptions) -> Result<Outcome> {
    let loaded = config::load::<FixedpointConfig>(CommandKind::Fixedpoint, opts.config.as_deref(), opts.scenario.as_deref())?;
    let cfg = loaded.value;
    let name = label(&cfg.name, &loaded.origin).to_string();
    cfg.sim.validate()?;
    let dt = cfg.sim.time_step();
    let nl = cfg.nonlinearity.build(dt, &loaded.base_dir)?;
    let slope_d = match cfg.picard.slope_d {
        Some(d) => d,
        None => {
            let stretch = cfg.sim.grid.uniform.unwrap_or(PmlStretch::NONE);
            let law = MaterialLaw::new(cfg.sim.material.clone(), stretch, Component::Both);
            slope_bound(&law, &HalfPlaneGrid::default_for(&law))
                .ok_or_else(|| CliError::Config("no slope bound for this medium; set picard.slope_d".into()))?
        }
    };
    let g = cfg.sim.sources.clone();
    let solve = |nu: f64| -> Result<PicardResult> {
        Ok(picard_solve(
            &cfg.sim,
            &nl,
            &g,
            PicardOptions {
                nu,
                max_iter: cfg.picard.max_iter,
                tol: cfg.picard.tol,
                slope_d,
            },
        )?)
    };
    let res = solve(cfg.picard.nu)?;
    let compare = match cfg.picard.compare_nu {
        Some(nu) => {
            let other = solve(nu)?;
            let (a, b) = (res.e_signal(), other.e_signal());
            let scale = a.max_abs();
            Some(Comparison {
                nu,
                iterations: other.iterations,
                max_ratio: other.max_ratio(),
                max_rel_diff: if scale > 0.0 { a.sub(&b).max_abs() / scale } else { b.max_abs() },
            })
        }
        None => None,
    };

    prepare_out(&opts.out)?;
    write_iteration_log(&res.log, create(&opts.out, "iteration_log.csv")?)?;
    write_solution_csv(&res, create(&opts.out, "solution.csv")?)?;
    let summary = FixedpointSummary {
        name: name.clone(),
        nu: cfg.picard.nu,
        slope_d,
        iterations: res.iterations,
        converged: true,
        lipschitz: res.lipschitz,
        predicted_ratio: res.predicted_ratio,
        predicted_contraction: res.predicted_contraction,
        max_ratio: res.max_ratio(),
        residual: res.residual,
        ball_radius: res.ball_radius,
        solution_norm: weighted_norm(&res.solution),
        compare,
    };
    write_json(&opts.out, "fixedpoint.json", &summary)?;
    finish(
        CommandKind::Fixedpoint,
        &loaded.origin,
        opts,
        None,
        &["iteration_log.csv", "solution.csv", "fixedpoint.json"],
    )?;

    let mut line = format!(
        "{name}: converged in {} iterations, max ratio={:.4e} (predicted {:.4e}), residual={:.3e}",
        summary.iterations, summary.max_ratio, summary.predicted_ratio, summary.residual
    );
    if let Some(c) = &summary.compare {
        line += &format!(", nu={} vs {}: rel diff {:.3e}", summary.nu, c.nu, c.max_rel_diff);
    }
    Ok(Outcome {
        summary: line,
        mismatch: None,
    })
}

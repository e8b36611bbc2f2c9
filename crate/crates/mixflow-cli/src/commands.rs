//! Subcommand implementations.

use crate::output::{
    fmt_f64, write_manifest, write_snapshot, CsvWriter, OutputFormat, Snapshot,
};
use crate::scenario::{load_scenario, Overrides, Scenario};
use anyhow::{bail, Context, Result};
use mixflow_core::diffusion::{coercivity_constants, validate_c};
use mixflow_core::linalg::Mat;
use mixflow_core::linear::{freeze_coefficients, LinearStepper, RhsBundle, Trajectory};
use mixflow_core::mixture::{
    jacobian_a, jacobian_a_inv, psi_forward, psi_inverse, psi_inverse_point, thermo_point,
};
use mixflow_core::norms::{h1_norm, h2_norm};
use mixflow_core::picard::{
    clean_contraction_ratios, run_fixed_point, to_eulerian, PicardError,
};
use mixflow_core::verify::{
    flux_suite, matrix_identity_suite, round_trip_suite, SampleRanges,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use std::path::{Path, PathBuf};

pub fn verify_matrices(config: &Path, seed: u64, samples: usize) -> Result<i32> {
    let scenario = load_scenario(config, &Overrides::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges = SampleRanges::default();

    // pointwise checks along the scenario's initial state
    let mut worst_c = 0.0f64;
    let mut kernel_ok = true;
    let mut min_c1_margin = f64::INFINITY;
    let mut min_c2 = f64::INFINITY;
    let mut c1_analytic_min = f64::INFINITY;
    for i in 0..scenario.grid.len() {
        let rhos = scenario.initial.point(i);
        let bundle = mixflow_core::diffusion::build_bundle(&rhos, &scenario.params, &scenario.model)?;
        let t = thermo_point(&rhos, &scenario.params);
        let rep = validate_c(&bundle.c.entries, &t.y);
        worst_c = worst_c.max(rep.max_violation());
        kernel_ok &= rep.kernel_dimension == 1;
        let cc = coercivity_constants(&bundle, &rhos, &scenario.params);
        min_c1_margin = min_c1_margin.min(cc.c1_numeric - cc.c1_analytic);
        c1_analytic_min = c1_analytic_min.min(cc.c1_analytic);
        min_c2 = min_c2.min(cc.c2_numeric);
    }

    let suite = matrix_identity_suite::<f64, _>(&mut rng, samples, &ranges);
    let flux = flux_suite::<f64, _>(&mut rng, 20, 65);
    let passed = suite.passed
        && flux.passed
        && kernel_ok
        && worst_c <= 1e-10
        && min_c1_margin >= -1e-10
        && min_c2 > 0.0;
    let report = json!({
        "scenario": {
            "max_c_identity_violation": worst_c,
            "kernel_dimension_ok": kernel_ok,
            "coercivity": {
                "c1_analytic_min": c1_analytic_min,
                "c1_margin_min": min_c1_margin,
                "c2_numeric_min": min_c2,
            },
        },
        "matrix_suite": suite,
        "flux_suite": flux,
        "passed": passed,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if passed { 0 } else { 1 })
}

pub fn transform(config: &Path, seed: u64, samples: usize) -> Result<i32> {
    let scenario = load_scenario(config, &Overrides::default())?;
    let normal = psi_forward(&scenario.initial, &scenario.params)?;
    let back = psi_inverse(&normal, &scenario.params)?;
    let mut max_rel = 0.0f64;
    for (a, b) in scenario
        .initial
        .rho
        .iter()
        .flatten()
        .zip(back.rho.iter().flatten())
    {
        max_rel = max_rel.max(((a - b) / a).abs());
    }
    let mut max_jac = 0.0f64;
    for i in 0..scenario.grid.len() {
        let rhos = scenario.initial.point(i);
        let prod = jacobian_a(&rhos, &scenario.params)
            .matmul(&jacobian_a_inv(&rhos, &scenario.params));
        max_jac = max_jac.max(prod.sub(&Mat::identity(scenario.n_species())).max_abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let suite = round_trip_suite::<f64, _>(&mut rng, samples, &SampleRanges::default());
    let passed = suite.passed && max_rel <= 1e-10 && max_jac <= 1e-12;
    let report = json!({
        "scenario": {
            "max_round_trip_relative_error": max_rel,
            "max_jacobian_identity_error": max_jac,
        },
        "round_trip_suite": suite,
        "passed": passed,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if passed { 0 } else { 1 })
}

/// Snapshot of Lagrangian solver variables converted to output fields.
fn snapshot_from_level(
    scenario: &Scenario,
    frozen: &mixflow_core::linear::FrozenCoefficients<f64>,
    traj: &Trajectory<f64>,
    j: usize,
) -> Result<Snapshot> {
    let grid = &scenario.grid;
    let nn = grid.len();
    let n = scenario.n_species();
    let mut rho = vec![Vec::with_capacity(nn); n];
    let mut p = Vec::with_capacity(nn);
    for i in 0..nn {
        let h_i: Vec<f64> = traj.theta[j].iter().map(|f| f[i]).collect();
        let eta = traj.sigma[j][i] + frozen.rho0[i];
        let rhos = psi_inverse_point(eta, &h_i, &scenario.params, i)?;
        p.push(thermo_point(&rhos, &scenario.params).p);
        for (k, r) in rhos.into_iter().enumerate() {
            rho[k].push(r);
        }
    }
    Ok(Snapshot {
        t: j as f64 * traj.dt,
        x: grid.nodes(),
        rho,
        u: traj.v[j].clone(),
        h: traj.theta[j].clone(),
        p,
    })
}

pub fn solve_linear(config: &Path, out: &Path, format: OutputFormat) -> Result<i32> {
    let scenario = load_scenario(config, &Overrides::default())?;
    std::fs::create_dir_all(out)?;
    let (a1, a2) = scenario.bounds;
    let frozen = freeze_coefficients(&scenario.initial, &scenario.params, &scenario.model, a1, a2)?;
    let dt = scenario.t_horizon / scenario.n_steps as f64;
    let stepper = LinearStepper::new(
        frozen.clone(),
        &scenario.params,
        scenario.grid.clone(),
        dt,
        scenario.n_steps,
        scenario.picard.stepper,
    )?;
    let n = scenario.n_species();
    let nn = scenario.grid.len();
    let traj = stepper.solve(|_| RhsBundle::zero(n, nn))?;

    // per-step diagnostics
    let mut csv = CsvWriter::create(
        &out.join("steps.csv"),
        &[
            "t",
            "energy",
            "sigma_h1",
            "v_h2",
            "theta_h2_max",
            "bflux_residual_max",
        ],
    )?;
    let grid = &scenario.grid;
    let q = scenario.picard.idx.q;
    for j in 0..=scenario.n_steps {
        let energy = mixflow_core::linear::discrete_energy(
            &traj.sigma[j],
            &traj.v[j],
            &traj.theta[j],
            &frozen,
            grid,
        );
        let sigma_h1 = h1_norm(&traj.sigma[j], grid, q);
        let v_h2 = h2_norm(&traj.v[j], grid, q);
        let theta_h2 = traj.theta[j]
            .iter()
            .map(|f| h2_norm(f, grid, q))
            .fold(0.0f64, f64::max);
        // boundary flux residual against the homogeneous condition
        let mut bflux = 0.0f64;
        for k in 0..n - 1 {
            let mut left = 0.0;
            let mut right = 0.0;
            for l in 0..n - 1 {
                let (dl, dr) = grid.boundary_normal_deriv(&traj.theta[j][l]);
                left += frozen.b0[0][(k, l)] * dl;
                right += frozen.b0[nn - 1][(k, l)] * dr;
            }
            bflux = bflux.max(left.abs()).max(right.abs());
        }
        csv.row(&[
            fmt_f64(j as f64 * dt),
            fmt_f64(energy),
            fmt_f64(sigma_h1),
            fmt_f64(v_h2),
            fmt_f64(theta_h2),
            fmt_f64(bflux),
        ])?;
    }

    let mut files = vec!["steps.csv".to_string()];
    for j in (0..=scenario.n_steps).step_by(scenario.snapshot_stride) {
        let snap = snapshot_from_level(&scenario, &frozen, &traj, j)?;
        files.push(write_snapshot(out, j, &snap, format)?);
    }
    let norms = traj.norms(grid, scenario.picard.idx);
    write_manifest(
        out,
        files,
        &scenario.raw_bytes,
        json!({ "kind": "solve-linear", "norms": norms }),
    )?;
    Ok(0)
}

#[derive(Serialize)]
struct SolveSummary {
    converged: bool,
    iterations: usize,
    t_final: f64,
    mass_error: f64,
}

pub fn solve(config: &Path, out: &Path, format: OutputFormat) -> Result<i32> {
    let scenario = load_scenario(config, &Overrides::default())?;
    std::fs::create_dir_all(out)?;
    let result = run_fixed_point(
        &scenario.initial,
        &scenario.params,
        &scenario.model,
        &scenario.grid,
        scenario.t_horizon,
        scenario.n_steps,
        scenario.bounds,
        &scenario.picard,
    );
    let (sol, report) = match result {
        Ok(x) => x,
        Err(PicardError::NoContraction(report)) => {
            std::fs::write(
                out.join("contraction.json"),
                serde_json::to_vec_pretty(&*report)?,
            )?;
            bail!("fixed-point iteration did not contract; report written");
        }
        Err(e) => return Err(e.into()),
    };

    std::fs::write(
        out.join("contraction.json"),
        serde_json::to_vec_pretty(&report)?,
    )?;

    let mut csv = CsvWriter::create(
        &out.join("iterations.csv"),
        &[
            "iteration",
            "difference_norm",
            "ratio",
            "v0_max",
            "sup_sigma_h1",
            "sup_rho_dev",
            "delta_budget",
            "output_norm",
        ],
    )?;
    for (j, d) in report.d.iter().enumerate() {
        let ratio = if j == 0 {
            f64::NAN
        } else {
            report.q.get(j - 1).copied().unwrap_or(f64::NAN)
        };
        let diag = &report.diagnostics[j];
        csv.row(&[
            j.to_string(),
            fmt_f64(*d),
            fmt_f64(ratio),
            fmt_f64(diag.v0_max),
            fmt_f64(diag.sup_sigma_h1),
            fmt_f64(diag.sup_rho_dev),
            fmt_f64(diag.delta_budget),
            fmt_f64(diag.output_norm),
        ])?;
    }

    // flow-map budget of the converged trajectory per time level
    let mut fmcsv = CsvWriter::create(
        &out.join("flowmap.csv"),
        &["t", "delta_budget", "v0_max", "kv_max"],
    )?;
    for (j, st) in sol.flowmap.states.iter().enumerate() {
        fmcsv.row(&[
            fmt_f64(j as f64 * sol.dt),
            fmt_f64(st.delta_budget),
            fmt_f64(scenario.grid.norm_inf(&st.v0)),
            fmt_f64(scenario.grid.norm_inf(&st.kv)),
        ])?;
    }

    let snaps = to_eulerian(&sol, &scenario.params)?;
    let mut files = vec![
        "contraction.json".to_string(),
        "iterations.csv".to_string(),
        "flowmap.csv".to_string(),
    ];
    for (j, snap) in snaps.iter().enumerate() {
        if j % scenario.snapshot_stride != 0 {
            continue;
        }
        let out_snap = Snapshot {
            t: snap.t,
            x: scenario.grid.nodes(),
            rho: snap.rho_k.clone(),
            u: snap.u.clone(),
            h: snap.h.clone(),
            p: snap.pressure.clone(),
        };
        files.push(write_snapshot(out, j, &out_snap, format)?);
    }
    let summary = SolveSummary {
        converged: report.converged,
        iterations: report.iterations,
        t_final: report.t_final,
        mass_error: report.mass_error,
    };
    write_manifest(
        out,
        files,
        &scenario.raw_bytes,
        serde_json::to_value(&summary)?,
    )?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.converged { 0 } else { 1 })
}

#[derive(Debug, serde::Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub t: Option<Vec<f64>>,
    #[serde(default)]
    pub amp: Option<Vec<f64>>,
    #[serde(default)]
    pub n_interior: Option<Vec<usize>>,
    #[serde(default)]
    pub n_steps: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
struct SweepCase {
    index: usize,
    over: Overrides,
}

#[derive(Debug)]
struct SweepRow {
    index: usize,
    over: Overrides,
    converged: bool,
    iterations: usize,
    max_ratio: f64,
    mass_error: f64,
    residual: f64,
    halvings: usize,
}

pub fn sweep(config: &Path, grid_spec: &Path, out: &Path, jobs: usize) -> Result<i32> {
    let spec_text = std::fs::read_to_string(grid_spec)
        .with_context(|| format!("reading sweep spec {}", grid_spec.display()))?;
    let spec: SweepSpec = toml::from_str(&spec_text).context("parsing sweep spec")?;
    std::fs::create_dir_all(out)?;

    let ts = spec.t.unwrap_or_else(|| vec![f64::NAN]); // NaN = keep scenario value
    let amps = spec.amp.unwrap_or_else(|| vec![f64::NAN]);
    let grids = spec.n_interior.map_or(vec![None], |v| {
        v.into_iter().map(Some).collect()
    });
    let steps = spec.n_steps.map_or(vec![None], |v| {
        v.into_iter().map(Some).collect()
    });

    let mut cases = Vec::new();
    for &t in &ts {
        for &amp in &amps {
            for &g in &grids {
                for &s in &steps {
                    cases.push(SweepCase {
                        index: cases.len(),
                        over: Overrides {
                            t: (!t.is_nan()).then_some(t),
                            amp: (!amp.is_nan()).then_some(amp),
                            n_interior: g,
                            n_steps: s,
                        },
                    });
                }
            }
        }
    }

    let jobs = jobs.max(1);
    let mut rows: Vec<SweepRow> = Vec::with_capacity(cases.len());
    let chunks: Vec<Vec<SweepCase>> = cases
        .chunks((cases.len() + jobs - 1) / jobs.max(1))
        .map(|c| c.to_vec())
        .collect();
    let results = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for chunk in &chunks {
            handles.push(scope.spawn(move || {
                chunk
                    .iter()
                    .map(|case| run_sweep_case(config, out, case))
                    .collect::<Vec<_>>()
            }));
        }
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("sweep worker panicked"))
            .collect::<Vec<_>>()
    });
    for r in results {
        rows.push(r?);
    }
    rows.sort_by_key(|r| r.index);

    let mut csv = CsvWriter::create(
        &out.join("sweep.csv"),
        &[
            "case",
            "t",
            "amp",
            "n_interior",
            "n_steps",
            "converged",
            "iterations",
            "max_ratio",
            "mass_error",
            "residual",
            "halvings",
        ],
    )?;
    let mut all_ok = true;
    for r in &rows {
        all_ok &= r.converged;
        csv.row(&[
            r.index.to_string(),
            r.over.t.map_or("scenario".into(), fmt_f64),
            r.over.amp.map_or("scenario".into(), fmt_f64),
            r.over
                .n_interior
                .map_or("scenario".into(), |v| v.to_string()),
            r.over.n_steps.map_or("scenario".into(), |v| v.to_string()),
            r.converged.to_string(),
            r.iterations.to_string(),
            fmt_f64(r.max_ratio),
            fmt_f64(r.mass_error),
            fmt_f64(r.residual),
            r.halvings.to_string(),
        ])?;
    }
    Ok(if all_ok { 0 } else { 1 })
}

fn run_sweep_case(config: &Path, out: &Path, case: &SweepCase) -> Result<SweepRow> {
    let dir: PathBuf = out.join(format!("case_{:03}", case.index));
    std::fs::create_dir_all(&dir)?;
    let scenario = load_scenario(config, &case.over)?;
    let result = run_fixed_point(
        &scenario.initial,
        &scenario.params,
        &scenario.model,
        &scenario.grid,
        scenario.t_horizon,
        scenario.n_steps,
        scenario.bounds,
        &scenario.picard,
    );
    let report = match result {
        Ok((_, report)) => report,
        Err(PicardError::NoContraction(report)) => *report,
        Err(e) => return Err(e.into()),
    };
    std::fs::write(
        dir.join("contraction.json"),
        serde_json::to_vec_pretty(&report)?,
    )?;
    let max_ratio = clean_contraction_ratios(&report.d)
        .into_iter()
        .fold(f64::NAN, f64::max);
    Ok(SweepRow {
        index: case.index,
        over: case.over,
        converged: report.converged,
        iterations: report.iterations,
        max_ratio,
        mass_error: report.mass_error,
        residual: report.final_residual,
        halvings: report.t_halvings,
    })
}

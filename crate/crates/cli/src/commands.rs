//! One function per subcommand.  Each returns the process exit code on
//! success (0, or 3 when a statistical acceptance check failed) and a
//! `CoreError` otherwise; the caller maps errors onto exit codes.

use std::fs;
use std::path::Path;

use atlaslab::coefficients::{InitialDistribution, MarketModel, ValidationOptions};
use atlaslab::equilibrium::{EquilibriumModel, Phase, Zbar};
use atlaslab::error::{CoreError, Result};
use atlaslab::experiments::{self, io::format_float, RunWriter};
use atlaslab::numerics::QuadratureSpec;
use atlaslab::simulator::run;
use serde_json::json;

use crate::config::FileConfig;

/// Exit code for runs whose statistical acceptance check did not pass.
pub const EXIT_ACCEPTANCE_FAIL: i32 = 3;

fn build_eq(cfg: &FileConfig, model: &MarketModel<f64>) -> Result<EquilibriumModel<f64>> {
    EquilibriumModel::build(
        model.clone(),
        cfg.experiment.grid_points,
        QuadratureSpec::default(),
    )
}

/// Equilibrium needed only when sampling from it.
fn build_eq_if_needed(
    cfg: &FileConfig,
    model: &MarketModel<f64>,
) -> Result<Option<EquilibriumModel<f64>>> {
    if matches!(model.initial_law(), InitialDistribution::Equilibrium) {
        Ok(Some(build_eq(cfg, model)?))
    } else {
        Ok(None)
    }
}

/// Writes the normalized configuration next to the run directories, so a
/// re-run needs nothing but this file.
fn echo_config(cfg: &FileConfig, outdir: &Path) -> Result<()> {
    fs::create_dir_all(outdir)?;
    fs::write(outdir.join("config.json"), cfg.normalized_json()?)?;
    Ok(())
}

fn window(cfg: &FileConfig) -> (f64, f64) {
    (cfg.experiment.window[0], cfg.experiment.window[1])
}

/// Assumption report on stdout; exit 0 only when every check passes.
pub fn validate(cfg: &FileConfig) -> Result<i32> {
    let model = cfg.build_model()?;
    let opts = ValidationOptions {
        stability_n: cfg.sim.n,
        ..ValidationOptions::default()
    };
    let report = model.validate(&opts);
    for check in &report.checks {
        if check.pass {
            println!("{}: PASS ({})", check.assumption.label(), check.detail);
        } else {
            let at = check
                .witness_u
                .map(|u| format!(" at u = {u:.6}"))
                .unwrap_or_default();
            println!("{}: FAIL{at} ({})", check.assumption.label(), check.detail);
        }
    }
    println!(
        "sufficient margin gamma(0) > g > gamma(1): {}",
        if report.sufficient_margin { "yes" } else { "no" }
    );
    for w in &report.warnings {
        println!("note: {w}");
    }
    let (p_c, q_c) = model.critical_indices();
    println!(
        "g = {:.6}, p_c = {:.6}, q_c = {:.6}",
        model.mean_growth_rate(),
        p_c,
        q_c
    );
    Ok(if report.pass() { 0 } else { 1 })
}

fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (la, lb) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (la + (lb - la) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Closed-form tables: quantile function, long-term measure densities,
/// capital curve (when it exists), growth rates.
pub fn equilibrium(cfg: &FileConfig, outdir: &Path, p_flags: &[f64]) -> Result<i32> {
    echo_config(cfg, outdir)?;
    let model = cfg.build_model()?;
    let eq = build_eq(cfg, &model)?;

    let mut ps: Vec<f64> = if p_flags.is_empty() {
        cfg.experiment.p_grid.clone()
    } else {
        p_flags.to_vec()
    };
    ps.sort_by(|a, b| a.partial_cmp(b).expect("finite exponents"));
    ps.dedup();

    let mut writer = RunWriter::create(
        outdir,
        "equilibrium",
        json!({
            "model": model,
            "p_grid": ps,
            "grid_points": cfg.experiment.grid_points,
        }),
    )?;

    let grid = eq.psi_grid();
    let psi_rows: Vec<Vec<String>> = grid
        .xs()
        .iter()
        .zip(grid.ys())
        .map(|(&u, &psi)| vec![format_float(u), format_float(psi)])
        .collect();
    writer.csv("psi.csv", &["u", "psi"], &psi_rows)?;

    // Densities exist only below criticality; one column per such p.
    let mut measures = Vec::new();
    for &p in &ps {
        if eq.phase(p)? == Phase::Subcritical {
            measures.push((p, eq.long_term_measure(p)?));
        }
    }
    let labels: Vec<String> = measures.iter().map(|(p, _)| format!("p={p}")).collect();
    let mut header: Vec<&str> = vec!["u"];
    header.extend(labels.iter().map(|s| s.as_str()));
    let mut pibar_rows: Vec<Vec<String>> = Vec::with_capacity(999);
    for k in 1..1000 {
        let u = k as f64 / 1000.0;
        let mut row = vec![format_float(u)];
        for (_, meas) in &measures {
            let d = meas.density(u)?.expect("subcritical density");
            row.push(format_float(d));
        }
        pibar_rows.push(row);
    }
    writer.csv("pibar.csv", &header, &pibar_rows)?;

    let (p_c, q_c) = model.critical_indices();
    let mut notes: Vec<String> = Vec::new();
    if p_c > 1.0 {
        let mut us = logspace(1e-6, 0.05, 60);
        us.extend((1..19).map(|i| 0.05 + 0.9 * i as f64 / 19.0));
        us.extend(logspace(1e-6, 0.05, 60).into_iter().rev().map(|w| 1.0 - w));
        let curve = eq.capital_curve(&us)?;
        let rows: Vec<Vec<String>> = us
            .iter()
            .zip(&curve)
            .map(|(&u, &(log_u, log_mu))| {
                vec![
                    format_float(u),
                    format_float(log_mu.exp()),
                    format_float(log_u),
                    format_float(log_mu),
                ]
            })
            .collect();
        writer.csv("capital_curve.csv", &["u", "mu_bar", "log_u", "log_mu"], &rows)?;
    } else {
        notes.push(format!(
            "capital curve skipped: needs p_c > 1, model has p_c = {p_c}"
        ));
    }

    let report = eq.monotonicity_report(&ps)?;
    let growth_rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|row| {
            vec![
                format_float(row.p),
                row.phase.to_string(),
                format_float(row.g.midpoint()),
                format_float(row.g_star.midpoint()),
                format_float(row.reduction_residual),
            ]
        })
        .collect();
    writer.csv(
        "growth.csv",
        &["p", "phase", "G", "Gstar", "reduction_residual"],
        &growth_rows,
    )?;

    let zbar_rows: Vec<serde_json::Value> = ps
        .iter()
        .map(|&p| {
            let phase = eq.phase(p)?;
            let value = match eq.zbar(p)? {
                Zbar::Finite(z) => json!(z),
                Zbar::Divergent => json!("divergent"),
            };
            Ok(json!({"p": p, "phase": phase, "zbar": value}))
        })
        .collect::<Result<_>>()?;
    writer.summary(&json!({
        "g": model.mean_growth_rate(),
        "p_c": p_c,
        "q_c": q_c,
        "ybar": eq.ybar(),
        "mean_psi": eq.mean_psi(),
        "zbar": zbar_rows,
        "b_trend": report.b_trend,
        "sigma2_trend": report.sigma2_trend,
        "monotonicity_violations": report.violations,
        "notes": notes,
        "warnings": eq.warnings(),
    }))?;
    writer.finalize()?;

    println!(
        "equilibrium: {} exponents, p_c = {p_c:.6}, q_c = {q_c:.6}",
        ps.len()
    );
    Ok(0)
}

/// One particle run; snapshots to CSV.
pub fn simulate(cfg: &FileConfig, outdir: &Path) -> Result<i32> {
    echo_config(cfg, outdir)?;
    let model = cfg.build_model()?;
    let eq = build_eq_if_needed(cfg, &model)?;
    let sim = cfg.build_sim()?;

    let mut writer = RunWriter::create(
        outdir,
        "simulate",
        json!({"model": model, "sim": sim}),
    )?;

    let snap = run(&sim, &model, eq.as_ref())?;
    let n = snap.n as f64;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (t, state) in snap.times.iter().zip(&snap.states) {
        for (j, y) in state.iter().enumerate() {
            rows.push(vec![
                format_float(*t),
                (j + 1).to_string(),
                format_float((j + 1) as f64 / n),
                format_float(*y),
            ]);
        }
    }
    writer.csv("snapshots.csv", &["t", "rank", "u", "y_sorted"], &rows)?;
    writer.summary(&json!({
        "n": sim.n,
        "steps": sim.step_count()?,
        "snapshots": snap.times.len(),
        "seed": sim.seed,
    }))?;
    writer.finalize()?;

    println!(
        "simulate: n = {}, {} steps, {} snapshots",
        sim.n,
        sim.step_count()?,
        snap.times.len()
    );
    Ok(0)
}

pub fn chaos(cfg: &FileConfig, outdir: &Path) -> Result<i32> {
    echo_config(cfg, outdir)?;
    let model = cfg.build_model()?;
    let eq = build_eq(cfg, &model)?;
    let sim = cfg.build_sim()?;
    let summary = experiments::chaos_convergence(
        &model,
        &eq,
        &sim,
        &cfg.experiment.n_grid,
        cfg.experiment.replicas,
        outdir,
    )?;
    for cell in &summary.final_medians {
        println!(
            "chaos: n = {:6}, median W1 at t = {} is {:.5}",
            cell.n, summary.final_time, cell.median_w1
        );
    }
    let pass = cfg.experiment.n_grid.len() < 2 || summary.final_median_decreasing;
    if !pass {
        println!("chaos: FAIL, median W1 does not decrease with n");
    }
    Ok(if pass { 0 } else { EXIT_ACCEPTANCE_FAIL })
}

pub fn phase_scan(cfg: &FileConfig, outdir: &Path) -> Result<i32> {
    echo_config(cfg, outdir)?;
    let model = cfg.build_model()?;
    let eq = build_eq(cfg, &model)?;
    let sim = cfg.build_sim()?;
    let summary = experiments::phase_scan(
        &model,
        &eq,
        &sim,
        &cfg.experiment.p_grid,
        cfg.experiment.replicas,
        window(cfg),
        outdir,
    )?;
    for row in &summary.rows {
        println!(
            "phase scan: p = {:5.2} [{}], simulated {:.4}, closed {:.4}",
            row.p, row.phase, row.sim_window_mean, row.closed_value
        );
    }
    if !summary.stabilization_ok {
        println!("phase scan: FAIL, a subcritical cell did not stabilize");
    }
    Ok(if summary.stabilization_ok {
        0
    } else {
        EXIT_ACCEPTANCE_FAIL
    })
}

pub fn capital_curve(cfg: &FileConfig, outdir: &Path) -> Result<i32> {
    echo_config(cfg, outdir)?;
    let model = cfg.build_model()?;
    let eq = build_eq(cfg, &model)?;
    let sim = cfg.build_sim()?;
    let summary =
        experiments::capital_curve(&model, &eq, &sim, cfg.experiment.replicas, outdir)?;
    println!(
        "capital curve: closed slopes {:.4} / {:.4} (targets {:.4} / {:.4})",
        summary.closed_left.fitted,
        summary.closed_right.fitted,
        summary.closed_left.expected,
        summary.closed_right.expected
    );
    println!(
        "capital curve: empirical slopes {:.4} / {:.4}, sup log distance {:.4}",
        summary.empirical_left.fitted,
        summary.empirical_right.fitted,
        summary.sup_log_distance_median
    );
    if !summary.pass {
        println!("capital curve: FAIL, a fit left its tolerance band");
    }
    Ok(if summary.pass { 0 } else { EXIT_ACCEPTANCE_FAIL })
}

pub fn portfolio(cfg: &FileConfig, outdir: &Path) -> Result<i32> {
    echo_config(cfg, outdir)?;
    let model = cfg.build_model()?;
    let eq = build_eq(cfg, &model)?;
    let sim = cfg.build_sim()?;
    let summary = experiments::portfolio_race(
        &model,
        &eq,
        &sim,
        &cfg.experiment.p_grid,
        cfg.experiment.replicas,
        window(cfg),
        outdir,
    )?;
    for row in &summary.rows {
        println!(
            "portfolio: p = {:5.2} [{}], realized G {:.4} in [{:.4}, {:.4}], large-n {:.4}, closed {:.4}",
            row.p, row.phase, row.g_sim_mean, row.ci_lo, row.ci_hi, row.g_lln_mean, row.g_closed
        );
    }
    println!(
        "portfolio: closed argmax p = {}, simulated argmax p = {}",
        summary.argmax_closed_p, summary.argmax_sim_p
    );
    let pass = summary.max_subcritical_residual <= 1e-8;
    if !pass {
        println!(
            "portfolio: FAIL, reduction residual {:.3e} above 1e-8",
            summary.max_subcritical_residual
        );
    }
    Ok(if pass { 0 } else { EXIT_ACCEPTANCE_FAIL })
}

pub fn mean_drift(cfg: &FileConfig, outdir: &Path) -> Result<i32> {
    echo_config(cfg, outdir)?;
    let model = cfg.build_model()?;
    let eq = build_eq_if_needed(cfg, &model)?;
    let sim = cfg.build_sim()?;
    let summary = experiments::mean_drift(
        &model,
        eq.as_ref(),
        &sim,
        cfg.experiment.replicas,
        outdir,
    )?;
    println!(
        "mean drift: pooled {:.5}, target {:.5}, se {:.5} -> {}",
        summary.pooled_drift,
        summary.target_drift,
        summary.replica_se,
        if summary.pass { "PASS" } else { "FAIL" }
    );
    Ok(if summary.pass { 0 } else { EXIT_ACCEPTANCE_FAIL })
}

pub fn interversion(cfg: &FileConfig, outdir: &Path) -> Result<i32> {
    echo_config(cfg, outdir)?;
    let model = cfg.build_model()?;
    let eq = build_eq(cfg, &model)?;
    let sim = cfg.build_sim()?;
    let summary = experiments::interversion_probe(
        &model,
        &eq,
        &sim,
        &cfg.experiment.p_grid,
        cfg.experiment.replicas,
        window(cfg),
        cfg.experiment.tol,
        outdir,
    )?;
    for row in &summary.rows {
        println!(
            "interversion: p = {:5.2}, simulated {:.4}, closed {:.4}, |diff| {:.4} {}",
            row.p,
            row.simulated,
            row.closed,
            row.abs_diff,
            if row.within_tol { "ok" } else { "OUT" }
        );
    }
    Ok(if summary.all_within {
        0
    } else {
        EXIT_ACCEPTANCE_FAIL
    })
}

// Exit-code classification for core errors: configuration and assumption
// problems are the caller's fault (1), everything downstream is a runtime
// failure (2).
pub fn exit_code_for(err: &CoreError) -> i32 {
    match err {
        CoreError::Validation { .. }
        | CoreError::Config(_)
        | CoreError::Grid(_)
        | CoreError::Serde(_) => 1,
        _ => 2,
    }
}

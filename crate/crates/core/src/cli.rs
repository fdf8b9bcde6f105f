//! Subcommands behind the `levy-teugels` binary: each reads a [`RunConfig`] and writes a fixed file layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::bsde::{
    clark_ocone_reconstruct, mean_se, picard_iterate, solve_bsde, stability_check, BsdeData, BsdeSolution,
};
use crate::config::{OutputFormat, RunConfig};
use crate::error::{Error, Result};
use crate::levy_model::LevyModel;
use crate::multi_index::graded_lex_enumerate;
use crate::orthobasis::{build_basis, OrthoBasis};
use crate::pdie::{solve_linear_pdie, solve_nonlinear_pdie, GridSolution};
use crate::pricing::{model_hash, price_mc, price_pide, price_report, price_surface};
use crate::quadrature::Tolerance;
use crate::simulator::{teugels_increments, write_paths_csv, JumpSampler, TimeGrid};

/// Time levels kept in `solution.csv`.
const SOLUTION_LEVELS: usize = 10;
/// Time levels kept in the price surface.
const SURFACE_LEVELS: usize = 20;
/// z-score limit for the simulated martingale diagnostics.
const Z_LIMIT: f64 = 4.0;
/// Relative tolerance of the Feynman-Kac and PDIE/BSDE comparisons.
const REL_TOL: f64 = 0.02;
const STABILITY_SHIFTS: [f64; 3] = [1.0, 0.5, 0.25];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    /// Grid PDIE; nonlinear when a `bsde` section supplies the driver.
    Pdie,
    /// Regression BSDE solved backward in one pass.
    Bsde,
    /// Picard iteration of the regression BSDE.
    Picard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceMethod {
    Mc,
    Pide,
    /// Both pricers plus parity and martingale checks.
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Moments,
    Orthobasis,
    Simulate,
    Solve { method: Option<SolveMethod> },
    Price { method: PriceMethod, surface: bool },
    Verify,
}

/// Files written, failed checks and a text summary for stdout.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub failures: Vec<String>,
    pub summary: String,
}

/// Caps the global rayon pool; only the first call takes effect.
pub fn init_threads(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))
}

pub fn run(cmd: &Command, cfg: &RunConfig) -> Result<Outcome> {
    fs::create_dir_all(&cfg.output.directory)?;
    match cmd {
        Command::Moments => cmd_moments(cfg),
        Command::Orthobasis => cmd_orthobasis(cfg),
        Command::Simulate => cmd_simulate(cfg),
        Command::Solve { method } => cmd_solve(cfg, *method),
        Command::Price { method, surface } => cmd_price(cfg, *method, *surface),
        Command::Verify => cmd_verify(cfg),
    }
}

/// Writes a CSV table through `write`, converting it to JSON when asked. Returns the final path.
fn emit(cfg: &RunConfig, stem: &str, write: impl FnOnce(&Path) -> Result<()>) -> Result<PathBuf> {
    let dir = &cfg.output.directory;
    let csv_path = dir.join(format!("{stem}.csv"));
    write(&csv_path)?;
    match cfg.output.format {
        OutputFormat::Csv => Ok(csv_path),
        OutputFormat::Json => {
            let json_path = dir.join(format!("{stem}.json"));
            csv_to_json(&csv_path, &json_path)?;
            fs::remove_file(&csv_path)?;
            Ok(json_path)
        }
    }
}

/// `{"meta": [...], "rows": [{column: value}]}`; `#` lines go to `meta`, numeric cells become numbers.
pub fn csv_to_json(csv_path: &Path, json_path: &Path) -> Result<()> {
    let text = fs::read_to_string(csv_path)?;
    let meta: Vec<String> = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches('#').trim().to_string())
        .collect();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let mut obj = Map::new();
        for (k, v) in header.iter().zip(rec.iter()) {
            let value = match v.parse::<f64>() {
                Ok(x) if x.is_finite() => json!(x),
                _ if v.is_empty() => Value::Null,
                _ => json!(v),
            };
            obj.insert(k.clone(), value);
        }
        rows.push(Value::Object(obj));
    }
    write_json(json_path, &json!({ "meta": meta, "rows": rows }))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn basis_for(model: &LevyModel, cfg: &RunConfig, degree: u32) -> Result<OrthoBasis> {
    build_basis(model, degree, cfg.basis.tol)
}

/// `m_p = ∫ y^p ν(dy)` for `1 <= |p| <= 2D` in graded-lex order.
pub fn cmd_moments(cfg: &RunConfig) -> Result<Outcome> {
    let model = cfg.model.build()?;
    let tol = Tolerance::default();
    let indices: Vec<_> = graded_lex_enumerate(model.dim(), 2 * cfg.basis.degree)
        .into_iter()
        .filter(|p| p.degree() > 0)
        .collect();
    let values = indices
        .iter()
        .map(|p| model.moment(p, tol))
        .collect::<Result<Vec<_>>>()?;
    let path = emit(cfg, "moments", |out| {
        let mut w = csv::Writer::from_path(out)?;
        w.write_record(["p", "degree", "moment"])?;
        for (p, v) in indices.iter().zip(&values) {
            w.write_record([p.label(), p.degree().to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(Outcome {
        files: vec![path],
        summary: format!("{} moments up to degree {}", indices.len(), 2 * cfg.basis.degree),
        ..Default::default()
    })
}

/// Orthogonalised Teugels basis up to degree `D`, with the norms sidecar.
pub fn cmd_orthobasis(cfg: &RunConfig) -> Result<Outcome> {
    let model = cfg.model.build()?;
    let basis = basis_for(&model, cfg, cfg.basis.degree)?;
    let dir = &cfg.output.directory;
    let path = emit(cfg, "basis", |out| basis.write_csv(out))?;
    let norms_csv = dir.join("basis_norms.csv");
    let norms = match cfg.output.format {
        OutputFormat::Csv => norms_csv,
        OutputFormat::Json => {
            let p = dir.join("basis_norms.json");
            csv_to_json(&norms_csv, &p)?;
            fs::remove_file(&norms_csv)?;
            p
        }
    };
    let mut summary = Vec::new();
    basis.describe(&mut summary)?;
    Ok(Outcome {
        files: vec![path, norms],
        summary: String::from_utf8_lossy(&summary).into_owned(),
        ..Default::default()
    })
}

/// Jump paths of the compound-Poisson approximation.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Outcome> {
    let model = cfg.model.build()?;
    let s = &cfg.simulation;
    let sampler = JumpSampler::new(&model, s.eps)?;
    let paths = sampler.paths(s.horizon, s.seed, s.paths);
    let path = emit(cfg, "paths", |out| write_paths_csv(&paths, out))?;
    let jumps: usize = paths.iter().map(|p| p.jump_count()).sum();
    Ok(Outcome {
        files: vec![path],
        summary: format!(
            "{} paths, {} jumps, rate {:.6}, seed {}, eps {:e}",
            paths.len(),
            jumps,
            sampler.rate(),
            s.seed,
            s.eps
        ),
        ..Default::default()
    })
}

fn pdie_solution(cfg: &RunConfig, model: &LevyModel) -> Result<GridSolution> {
    let spec = cfg
        .pdie
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs a pdie section".into()))?;
    let grid = spec.grid()?;
    let g = spec.terminal.function();
    let terminal = |x: &[f64]| g(x);
    match &cfg.bsde {
        None => solve_linear_pdie(model, &terminal, &grid, cfg.simulation.horizon, spec.options()),
        Some(b) => {
            let driver = b.driver.driver();
            let basis = if driver.uses_z {
                Some(basis_for(model, cfg, b.degree)?.with_truncation(model, cfg.simulation.eps)?)
            } else {
                None
            };
            solve_nonlinear_pdie(
                model,
                &terminal,
                &driver,
                basis.as_ref(),
                &grid,
                cfg.simulation.horizon,
                spec.options(),
            )
        }
    }
}

fn bsde_data(cfg: &RunConfig, model: &LevyModel) -> Result<BsdeData> {
    let b = cfg
        .bsde
        .ok_or_else(|| Error::Config("this command needs a bsde section".into()))?;
    let s = &cfg.simulation;
    let basis = basis_for(model, cfg, b.degree)?;
    Ok(BsdeData::simulate(
        model,
        &basis,
        TimeGrid::new(s.horizon, s.steps)?,
        cfg.x0(),
        cfg.terminal().function(),
        b.driver.driver(),
        s.paths,
        s.seed,
        s.eps,
    )?
    .with_regression(b.regression()))
}

fn describe_bsde(sol: &BsdeSolution) -> String {
    let mut buf = Vec::new();
    let _ = crate::bsde::describe(sol, &mut buf);
    String::from_utf8_lossy(&buf).into_owned()
}

/// PDIE on the configured grid, or the regression BSDE.
pub fn cmd_solve(cfg: &RunConfig, method: Option<SolveMethod>) -> Result<Outcome> {
    let model = cfg.model.build()?;
    let method = method.unwrap_or(if cfg.pdie.is_some() {
        SolveMethod::Pdie
    } else {
        SolveMethod::Bsde
    });
    match method {
        SolveMethod::Pdie => {
            let sol = pdie_solution(cfg, &model)?;
            let stride = sol.time.steps().div_ceil(SOLUTION_LEVELS);
            let path = emit(cfg, "solution", |out| sol.write_csv(out, stride))?;
            let mut buf = Vec::new();
            sol.describe(&mut buf)?;
            let x0 = cfg.x0();
            let mut summary = String::from_utf8_lossy(&buf).into_owned();
            for k in 0..sol.components() {
                summary.push_str(&format!("theta_{k}(0, {x0:?}) = {}\n", sol.value(k, 0.0, &x0)));
            }
            Ok(Outcome {
                files: vec![path],
                summary,
                ..Default::default()
            })
        }
        SolveMethod::Bsde => {
            let data = bsde_data(cfg, &model)?;
            let sol = solve_bsde(&data)?;
            let path = emit(cfg, "solution", |out| sol.write_csv(out))?;
            Ok(Outcome {
                files: vec![path],
                summary: describe_bsde(&sol),
                ..Default::default()
            })
        }
        SolveMethod::Picard => {
            let data = bsde_data(cfg, &model)?;
            let b = cfg.bsde.expect("checked by bsde_data");
            let rep = picard_iterate(&data, b.beta(), b.picard_max_iters, b.picard_tol)?;
            let path = emit(cfg, "solution", |out| rep.solution.write_csv(out))?;
            let trace = emit(cfg, "picard", |out| rep.write_csv(out))?;
            let summary = format!(
                "{} Picard iterations, beta {}\n{}",
                rep.steps.len(),
                rep.beta,
                describe_bsde(&rep.solution)
            );
            Ok(Outcome {
                files: vec![path, trace],
                summary,
                ..Default::default()
            })
        }
    }
}

/// Risk-neutral option price; always writes `price.json`.
pub fn cmd_price(cfg: &RunConfig, method: PriceMethod, surface: bool) -> Result<Outcome> {
    let spec = cfg
        .pricing
        .as_ref()
        .ok_or_else(|| Error::Config("price needs a pricing section".into()))?;
    let model = cfg.model.build()?;
    let rn = model.clone().with_risk_neutral_drift()?;
    let market = spec.market();
    market.validate(model.dim())?;
    let payoff = spec.payoff.payoff();
    let pide_spec = spec.pide.unwrap_or_default();
    let s = &cfg.simulation;
    let grid_json = |nodes: &[usize], steps: usize| json!({ "h": pide_spec.h, "nodes": nodes, "steps": steps });
    let report = match method {
        PriceMethod::Mc => {
            let mc = price_mc(&rn, &market, &payoff, s.paths, s.seed, s.eps)?;
            json!({
                "price": mc.price, "stderr": mc.standard_error, "method": "mc",
                "model_hash": model_hash(&rn), "seed": s.seed, "grid": Value::Null,
                "payoff": payoff.label(), "paths": mc.paths, "eps": mc.eps,
            })
        }
        PriceMethod::Pide => {
            let p = price_pide(&rn, &market, &payoff, pide_spec)?;
            json!({
                "price": p.price, "stderr": Value::Null, "method": "pide",
                "model_hash": model_hash(&rn), "seed": Value::Null, "grid": grid_json(&p.nodes, p.steps),
                "payoff": payoff.label(),
            })
        }
        PriceMethod::Both => {
            let rep = price_report(&model, &market, &payoff, s.paths, s.seed, s.eps, pide_spec)?;
            let (price, grid) = match &rep.pide {
                Some(p) => (p.price, grid_json(&p.nodes, p.steps)),
                None => (rep.mc.price, Value::Null),
            };
            json!({
                "price": price, "stderr": rep.mc.standard_error, "method": "both",
                "model_hash": rep.model_hash, "seed": s.seed, "grid": grid,
                "payoff": rep.payoff, "report": rep,
            })
        }
    };
    let dir = &cfg.output.directory;
    let price_path = dir.join("price.json");
    write_json(&price_path, &report)?;
    let mut files = vec![price_path];
    if surface {
        let rows = price_surface(&rn, &market, &payoff, pide_spec, SURFACE_LEVELS)?;
        let path = emit(cfg, "price_surface", |out| {
            let mut w = csv::Writer::from_path(out)?;
            w.write_record(["t", "S", "V"])?;
            for r in &rows {
                w.write_record(r.iter().map(|v| v.to_string()))?;
            }
            w.flush()?;
            Ok(())
        })?;
        files.push(path);
    }
    Ok(Outcome {
        files,
        summary: format!("price {} ({:?})", report["price"], method),
        ..Default::default()
    })
}

/// One entry of `verify.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    /// `pass`, `fail` or `skipped`.
    pub status: String,
    pub detail: String,
    pub metrics: Value,
}

impl Check {
    fn from_result(name: &str, r: Result<(bool, String, Value)>) -> Self {
        let (status, detail, metrics) = match r {
            Ok((pass, detail, metrics)) => (if pass { "pass" } else { "fail" }, detail, metrics),
            Err(e) => ("fail", e.to_string(), Value::Null),
        };
        Self {
            name: name.into(),
            status: status.into(),
            detail,
            metrics,
        }
    }

    fn skipped(name: &str, why: &str) -> Self {
        Self {
            name: name.into(),
            status: "skipped".into(),
            detail: why.into(),
            metrics: Value::Null,
        }
    }
}

type CheckResult = Result<(bool, String, Value)>;

fn check_martingale(cfg: &RunConfig, model: &LevyModel) -> CheckResult {
    let tol = cfg.pricing.as_ref().map_or(1e-6, |p| p.martingale_tol);
    let residual = model.martingale_residual()?;
    let worst = residual.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    Ok((
        worst < tol,
        format!("max |E e^X(1) - 1| residual {worst:.3e}, tolerance {tol:e}"),
        json!({ "residual": residual, "tolerance": tol }),
    ))
}

fn check_teugels(cfg: &RunConfig, model: &LevyModel) -> CheckResult {
    let s = &cfg.simulation;
    let basis = basis_for(model, cfg, cfg.basis.degree)?.with_truncation(model, s.eps)?;
    let grid = TimeGrid::new(s.horizon, s.steps)?;
    let sampler = JumpSampler::new(model, s.eps)?;
    let rows: Vec<Vec<f64>> = sampler
        .paths(s.horizon, s.seed, s.paths)
        .iter()
        .map(|p| teugels_increments(p, &basis, &grid).map(|inc| inc.orthonormal(&basis)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let kept = rows.first().map_or(0, Vec::len);
    let dt = grid.dt();
    let z = |v: Vec<f64>, target: f64| {
        let (m, se) = mean_se(&v);
        if se > 0.0 {
            (m - target).abs() / se
        } else if (m - target).abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    let (mut worst_mean, mut worst_bracket) = (0.0f64, 0.0f64);
    for p in 0..kept {
        worst_mean = worst_mean.max(z(rows.iter().map(|r| r[p]).collect(), 0.0));
        for q in 0..=p {
            let target = if p == q { dt } else { 0.0 };
            worst_bracket = worst_bracket.max(z(rows.iter().map(|r| r[p] * r[q]).collect(), target));
        }
    }
    Ok((
        worst_mean <= Z_LIMIT && worst_bracket <= Z_LIMIT,
        format!("{kept} directions, max mean z {worst_mean:.2}, max bracket z {worst_bracket:.2}"),
        json!({ "directions": kept, "mean_z": worst_mean, "bracket_z": worst_bracket, "limit": Z_LIMIT }),
    ))
}

fn check_feynman_kac(cfg: &RunConfig, model: &LevyModel) -> CheckResult {
    let spec = cfg.pdie.as_ref().expect("caller checks the pdie section");
    let s = &cfg.simulation;
    let g = spec.terminal.function();
    let sol = solve_linear_pdie(model, &|x: &[f64]| g(x), &spec.grid()?, s.horizon, spec.options())?;
    let x0 = cfg.x0();
    let pde = sol.value(0, 0.0, &x0);
    let sampler = JumpSampler::new(model, s.eps)?;
    let vals: Vec<f64> = sampler
        .terminals(s.horizon, s.seed, s.paths)
        .iter()
        .map(|x| {
            let y: Vec<f64> = x.iter().zip(&x0).map(|(a, b)| a + b).collect();
            g(&y)[0]
        })
        .collect();
    let (mc, se) = mean_se(&vals);
    let bound = (REL_TOL * mc.abs()).max(3.0 * se);
    Ok((
        (pde - mc).abs() <= bound,
        format!("PDIE {pde:.6} MC {mc:.6} ± {se:.2e}, bound {bound:.2e}"),
        json!({ "pdie": pde, "mc": mc, "stderr": se, "bound": bound }),
    ))
}

fn check_clark_ocone(cfg: &RunConfig, model: &LevyModel) -> CheckResult {
    let spec = cfg.pdie.as_ref().expect("caller checks the pdie section");
    let s = &cfg.simulation;
    let g = spec.terminal.function();
    let sol = solve_linear_pdie(model, &|x: &[f64]| g(x), &spec.grid()?, s.horizon, spec.options())?;
    let degrees: Vec<u32> = (1..=cfg.basis.degree).collect();
    let mut rms = Vec::new();
    let mut se = Vec::new();
    for &d in &degrees {
        let basis = basis_for(model, cfg, d)?;
        let data = BsdeData::simulate(
            model,
            &basis,
            TimeGrid::new(s.horizon, s.steps)?,
            cfg.x0(),
            g.clone(),
            crate::pdie::DriverFunction::zero(),
            s.paths,
            s.seed,
            s.eps,
        )?;
        let rep = clark_ocone_reconstruct(&sol, &data)?;
        rms.push(rep.rms);
        se.push(rep.standard_error);
    }
    let last = rms.len() - 1;
    let pass = rms[last] <= rms[0] + 3.0 * se[last].hypot(se[0]);
    Ok((
        pass,
        format!("residual RMS by degree {rms:?}"),
        json!({ "degrees": degrees, "rms": rms, "stderr": se }),
    ))
}

fn check_contraction(cfg: &RunConfig, data: &BsdeData) -> CheckResult {
    let b = cfg.bsde.expect("caller checks the bsde section");
    let rep = picard_iterate(data, b.beta(), b.picard_max_iters, b.picard_tol)?;
    let ratios: Vec<f64> = rep.steps.iter().skip(1).filter_map(|s| s.ratio).collect();
    let worst = ratios.iter().fold(0.0f64, |a, r| a.max(*r));
    Ok((
        worst < 1.0,
        format!("{} iterations, worst ratio {worst:.3}", rep.steps.len()),
        json!({ "iterations": rep.steps.len(), "ratios": ratios, "beta": rep.beta }),
    ))
}

fn check_stability(cfg: &RunConfig, data: &BsdeData) -> CheckResult {
    let b = cfg.bsde.expect("caller checks the bsde section");
    let rep = stability_check(data, &STABILITY_SHIFTS, b.beta())?;
    let bounded = rep.lhs.iter().zip(&rep.terminal_bound).all(|(l, t)| l <= t);
    let quadratic = rep.ratios.iter().all(|r| (3.0..=5.0).contains(r));
    Ok((
        bounded && quadratic,
        format!(
            "lhs {:?}, bound {:?}, ratios {:?}",
            rep.lhs, rep.terminal_bound, rep.ratios
        ),
        serde_json::to_value(&rep)?,
    ))
}

fn check_pdie_bsde(cfg: &RunConfig, model: &LevyModel, data: &BsdeData) -> CheckResult {
    let bsde = solve_bsde(data)?;
    let pde = pdie_solution(cfg, model)?;
    let mut sq = Vec::new();
    for k in 0..data.grid.steps() {
        let t = data.grid.time(k);
        for i in 0..data.paths() {
            for c in 0..data.components() {
                sq.push((bsde.y[k][i][c] - pde.value(c, t, data.state(i, k))).powi(2));
            }
        }
    }
    let (ms, se_ms) = mean_se(&sq);
    let rms = ms.sqrt();
    let se = if rms > 0.0 { se_ms / (2.0 * rms) } else { 0.0 };
    let xi: Vec<f64> = (0..data.paths())
        .map(|i| data.terminal_value(i).iter().map(|v| v * v).sum())
        .collect();
    let scale = mean_se(&xi).0.sqrt();
    let bound = (REL_TOL * scale).max(3.0 * se);
    Ok((
        rms <= bound,
        format!("RMS {rms:.3e}, bound {bound:.3e}"),
        json!({ "rms": rms, "stderr": se, "scale": scale, "bound": bound }),
    ))
}

/// Runs every applicable check and writes `verify.json`; failures are listed in the outcome.
pub fn cmd_verify(cfg: &RunConfig) -> Result<Outcome> {
    let model = cfg.model.build()?;
    let pdie_ok = cfg.pdie.is_some() && model.dim() <= 2;
    let mut checks = Vec::new();
    checks.push(match &cfg.pricing {
        Some(_) => Check::from_result("martingale_condition", check_martingale(cfg, &model)),
        None => Check::skipped("martingale_condition", "no pricing section"),
    });
    checks.push(Check::from_result("teugels_martingales", check_teugels(cfg, &model)));
    if pdie_ok {
        checks.push(Check::from_result("feynman_kac", check_feynman_kac(cfg, &model)));
        checks.push(Check::from_result("clark_ocone_trend", check_clark_ocone(cfg, &model)));
    } else {
        checks.push(Check::skipped("feynman_kac", "no pdie section or dimension above 2"));
        checks.push(Check::skipped(
            "clark_ocone_trend",
            "no pdie section or dimension above 2",
        ));
    }
    if cfg.bsde.is_some() {
        match bsde_data(cfg, &model) {
            Ok(data) => {
                checks.push(Check::from_result("picard_contraction", check_contraction(cfg, &data)));
                checks.push(Check::from_result("stability", check_stability(cfg, &data)));
                checks.push(if pdie_ok {
                    Check::from_result("pdie_bsde_consistency", check_pdie_bsde(cfg, &model, &data))
                } else {
                    Check::skipped("pdie_bsde_consistency", "no pdie section or dimension above 2")
                });
            }
            Err(e) => {
                for name in ["picard_contraction", "stability", "pdie_bsde_consistency"] {
                    checks.push(Check::from_result(name, Err(Error::Config(e.to_string()))));
                }
            }
        }
    } else {
        for name in ["picard_contraction", "stability", "pdie_bsde_consistency"] {
            checks.push(Check::skipped(name, "no bsde section"));
        }
    }
    let failures: Vec<String> = checks
        .iter()
        .filter(|c| c.status == "fail")
        .map(|c| c.name.clone())
        .collect();
    let path = cfg.output.directory.join("verify.json");
    write_json(
        &path,
        &json!({ "pass": failures.is_empty(), "failures": failures, "seed": cfg.simulation.seed, "checks": checks }),
    )?;
    let summary = checks
        .iter()
        .map(|c| format!("{:<24} {:<7} {}", c.name, c.status, c.detail))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(Outcome {
        files: vec![path],
        failures,
        summary,
    })
}

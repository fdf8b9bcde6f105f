//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#![allow(clippy::needless_range_loop)]

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use levy_teugels::bsde::{
    clark_ocone_reconstruct, mean_se, picard_iterate, solve_bsde, stability_check, BsdeData, TerminalFn,
};
use levy_teugels::levy_model::{
    common_jump_intensity, poisson_copula_measure, ClaytonCopulaParams, LevyModel, MarginalMeasure, MeixnerParams,
};
use levy_teugels::orthobasis::{build_basis, gram_schmidt, GramMatrix, DEFAULT_PRUNE_TOL};
use levy_teugels::pdie::{solve_linear_pdie, solve_nonlinear_pdie, DriverFunction, PdieOptions, SpaceGrid};
use levy_teugels::pricing::{price_report, MarketSpec, Payoff, PideSpec};
use levy_teugels::simulator::{teugels_increments, JumpSampler, TimeGrid, DEFAULT_EPS};
use levy_teugels::{multi_index::graded_lex_enumerate, MultiIndex, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (usize, &'static str, fn() -> Result<Outcome>);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn meixner(alpha: f64) -> LevyModel {
    LevyModel::meixner(MeixnerParams::new(alpha, 0.0, 1.0, 0.0).unwrap()).unwrap()
}

fn atomic() -> LevyModel {
    poisson_copula_measure(1.0, 1.0, ClaytonCopulaParams::new(1.0, 1.0).unwrap()).unwrap()
}

fn atomic_payoff(x: &[f64]) -> Vec<f64> {
    vec![(-(x[0] * x[0] + x[1] * x[1]) / 8.0).exp()]
}

/// `f(t, y, z) = C (sin y + cos z_1) / 2`, Lipschitz constant `C`.
fn fixture_driver(c: f64) -> DriverFunction {
    DriverFunction::new(c, true, move |_, y, z| vec![0.5 * c * (y[0].sin() + z[0][0].cos())])
}

fn atomic_grid(h: f64) -> SpaceGrid {
    SpaceGrid::with_spacing(&[-4.0, -4.0], &[12.0, 12.0], h, &[0.0, 0.0]).unwrap()
}

fn c1_poisson_degeneracy() -> Result<Outcome> {
    let m = LevyModel::zero(1)?.with_copula(vec![MarginalMeasure::PoissonUnitJump { intensity: 1.0 }], None)?;
    let b = build_basis(&m, 4, DEFAULT_PRUNE_TOL)?;
    let mut worst = 0.0f64;
    let mut all_pruned = true;
    for (k, p) in b.order().iter().enumerate() {
        if p.degree() >= 2 {
            all_pruned &= !b.kept_mask()[k];
            worst = worst.max(b.norms_sq()[k]);
        }
    }
    outcome(
        all_pruned && worst < 1e-12,
        format!("degree>=2 pruned={all_pruned}, max norm²={worst:.2e}"),
    )
}

fn c2_common_intensity() -> Result<Outcome> {
    let p = ClaytonCopulaParams::new(1.0, 1.0)?;
    let a = common_jump_intensity(1.0, 1.0, &p);
    let b = common_jump_intensity(2.0, 1.0, &p);
    let pass = (a - 0.25).abs() <= 1e-12 && (b - 4.0 / 27.0).abs() <= 1e-12;
    outcome(
        pass,
        format!("c(1,1)={a:.15}, c(2,1)={b:.15} (4/27={:.15})", 4.0 / 27.0),
    )
}

fn c3_meixner_moment() -> Result<Outcome> {
    let m = LevyModel::meixner(MeixnerParams::new(1.0, 0.0, 1.0, 0.0)?)?;
    let m2 = m.moment(&MultiIndex::new(vec![2]), Default::default())?;
    outcome(
        (m2 - 0.5).abs() <= 1e-6,
        format!("m2={m2:.10}, |m2-0.5|={:.2e}", (m2 - 0.5).abs()),
    )
}

fn mgs_oracle(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = a.len();
    let mut q = a.to_vec();
    let mut coef: Vec<Vec<f64>> = (0..cols)
        .map(|k| (0..cols).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
        .collect();
    for k in 0..cols {
        for j in 0..k {
            let qq: f64 = q[j].iter().map(|v| v * v).sum();
            let r = q[j].iter().zip(&q[k]).map(|(x, y)| x * y).sum::<f64>() / qq;
            let qj = q[j].clone();
            let cj = coef[j].clone();
            q[k].iter_mut().zip(&qj).for_each(|(x, y)| *x -= r * y);
            coef[k].iter_mut().zip(&cj).for_each(|(x, y)| *x -= r * y);
        }
    }
    coef
}

fn c4_gram_schmidt_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let size = rng.random_range(5..=15);
        let rows = size + 5;
        let a: Vec<Vec<f64>> = (0..size)
            .map(|_| (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let entries = (0..size)
            .map(|i| {
                (0..size)
                    .map(|j| a[i].iter().zip(&a[j]).map(|(x, y)| x * y).sum())
                    .collect()
            })
            .collect();
        let g = GramMatrix {
            order: graded_lex_enumerate(size, 1),
            entries,
        };
        let b = gram_schmidt(&g, DEFAULT_PRUNE_TOL)?;
        let oracle = mgs_oracle(&a);
        for i in 0..size {
            for j in 0..size {
                worst = worst.max((b.coeffs()[i][j] - oracle[i][j]).abs());
            }
        }
    }
    outcome(worst <= 1e-10, format!("100 matrices, max entry gap {worst:.2e}"))
}

fn c5_teugels_diagnostics() -> Result<Outcome> {
    let model = meixner(0.5);
    let basis = build_basis(&model, 3, DEFAULT_PRUNE_TOL)?.with_truncation(&model, DEFAULT_EPS)?;
    let grid = TimeGrid::new(1.0, 10)?;
    let sampler = JumpSampler::new(&model, DEFAULT_EPS)?;
    let paths = sampler.paths(1.0, 5, 100_000);
    let rows: Vec<Vec<f64>> = paths
        .iter()
        .map(|p| teugels_increments(p, &basis, &grid).map(|inc| inc.orthonormal(&basis)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let kept = rows[0].len();
    let dt = grid.dt();
    let mut worst_mean = 0.0f64;
    let mut worst_bracket = 0.0f64;
    for p in 0..kept {
        let v: Vec<f64> = rows.iter().map(|r| r[p]).collect();
        let (m, se) = mean_se(&v);
        worst_mean = worst_mean.max(m.abs() / se);
        for q in 0..=p {
            let prod: Vec<f64> = rows.iter().map(|r| r[p] * r[q]).collect();
            let (m, se) = mean_se(&prod);
            let target = if p == q { dt } else { 0.0 };
            worst_bracket = worst_bracket.max((m - target).abs() / se);
        }
    }
    outcome(
        worst_mean <= 3.0 && worst_bracket <= 3.0,
        format!("{kept} directions, max |mean|/SE={worst_mean:.2}, max |bracket-δΔt|/SE={worst_bracket:.2}"),
    )
}

fn c6_feynman_kac() -> Result<Outcome> {
    let tol_check = |pde: f64, mc: f64, se: f64| (pde - mc).abs() <= (0.01 * mc.abs()).max(3.0 * se);
    // (a) 1-D Meixner
    let model = meixner(0.5);
    let g = |x: &[f64]| vec![(-x[0] * x[0]).exp() + 0.5 * x[0]];
    let grid = SpaceGrid::with_spacing(&[-4.0], &[4.0], 0.01, &[0.0])?;
    let sol = solve_linear_pdie(&model, &g, &grid, 1.0, PdieOptions::default())?;
    let pde_a = sol.value(0, 0.0, &[0.0]);
    let sampler = JumpSampler::new(&model, DEFAULT_EPS)?;
    let vals: Vec<f64> = sampler.terminals(1.0, 6, 100_000).iter().map(|x| g(x)[0]).collect();
    let (mc_a, se_a) = mean_se(&vals);
    // (b) 2-D atomic Poisson copula
    let model = atomic();
    let sol = solve_linear_pdie(
        &model,
        &atomic_payoff,
        &atomic_grid(0.1),
        1.0,
        PdieOptions {
            steps: Some(200),
            ..Default::default()
        },
    )?;
    let pde_b = sol.value(0, 0.0, &[0.0, 0.0]);
    let sampler = JumpSampler::new(&model, DEFAULT_EPS)?;
    let vals: Vec<f64> = sampler
        .terminals(1.0, 7, 100_000)
        .iter()
        .map(|x| atomic_payoff(x)[0])
        .collect();
    let (mc_b, se_b) = mean_se(&vals);
    outcome(
        tol_check(pde_a, mc_a, se_a) && tol_check(pde_b, mc_b, se_b),
        format!("(a) PDIE {pde_a:.5} MC {mc_a:.5}±{se_a:.1e}; (b) PDIE {pde_b:.5} MC {mc_b:.5}±{se_b:.1e}"),
    )
}

fn atomic_data(basis_degree: u32, steps: usize, paths: usize, driver: DriverFunction) -> Result<BsdeData> {
    let model = atomic();
    let basis = build_basis(&model, basis_degree, DEFAULT_PRUNE_TOL)?;
    let g: TerminalFn = Arc::new(atomic_payoff);
    BsdeData::simulate(
        &model,
        &basis,
        TimeGrid::new(1.0, steps)?,
        vec![0.0, 0.0],
        g,
        driver,
        paths,
        8,
        DEFAULT_EPS,
    )
}

fn c7_picard() -> Result<Outcome> {
    let c = 0.5;
    let beta = 4.0 * c * c + 1.0;
    let data = atomic_data(2, 20, 20_000, fixture_driver(c))?;
    let rep = picard_iterate(&data, beta, 25, 1e-4)?;
    let ratios: Vec<f64> = rep.steps.iter().skip(1).filter_map(|s| s.ratio).collect();
    let worst = ratios.iter().cloned().fold(0.0f64, f64::max);
    outcome(
        !ratios.is_empty() && worst <= 0.65,
        format!(
            "{} iterations, ratios {:?}",
            rep.steps.len(),
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn c8_stability() -> Result<Outcome> {
    let data = atomic_data(2, 20, 20_000, fixture_driver(0.5))?;
    let rep = stability_check(&data, &[1.0, 0.5, 0.25], 2.0)?;
    let pass = rep.ratios.iter().all(|r| (3.4..=4.6).contains(r));
    outcome(pass, format!("lhs {:?}, ratios {:?}", rep.lhs, rep.ratios))
}

fn c9_pdie_bsde() -> Result<Outcome> {
    let steps = 20;
    let driver = fixture_driver(0.5);
    let data = atomic_data(2, steps, 20_000, driver.clone())?;
    let bsde = solve_bsde(&data)?;
    let model = atomic();
    let pde = solve_nonlinear_pdie(
        &model,
        &atomic_payoff,
        &driver,
        Some(&data.basis),
        &atomic_grid(0.1),
        1.0,
        PdieOptions {
            steps: Some(steps * 10),
            ..Default::default()
        },
    )?;
    let mut sq = Vec::new();
    for k in 0..steps {
        let t = data.grid.time(k);
        for i in 0..data.paths() {
            let d = bsde.y[k][i][0] - pde.value(0, t, data.state(i, k));
            sq.push(d * d);
        }
    }
    let (ms, se_ms) = mean_se(&sq);
    let rms = ms.sqrt();
    let se = se_ms / (2.0 * rms.max(1e-300));
    let xi: Vec<f64> = (0..data.paths()).map(|i| data.terminal_value(i)[0].powi(2)).collect();
    let scale = mean_se(&xi).0.sqrt();
    let bound = (0.02 * scale).max(3.0 * se);
    outcome(
        rms <= bound,
        format!("RMS {rms:.2e}, bound {bound:.2e} (scale {scale:.3}, SE {se:.1e})"),
    )
}

fn c10_clark_ocone() -> Result<Outcome> {
    let model = atomic();
    let pde = solve_linear_pdie(
        &model,
        &atomic_payoff,
        &atomic_grid(0.05),
        1.0,
        PdieOptions {
            steps: Some(640),
            ..Default::default()
        },
    )?;
    let mut table = Vec::new();
    let mut pass = true;
    let mut prev_d2 = f64::INFINITY;
    for steps in [10, 20, 40] {
        let mut r = [0.0; 2];
        for (i, d) in [1u32, 2].into_iter().enumerate() {
            let data = atomic_data(d, steps, 5_000, DriverFunction::zero())?;
            r[i] = clark_ocone_reconstruct(&pde, &data)?.rms;
        }
        pass &= r[1] < r[0] && r[1] < prev_d2;
        prev_d2 = r[1];
        table.push(format!("N={steps}: D1 {:.3e} D2 {:.3e}", r[0], r[1]));
    }
    outcome(pass, table.join("; "))
}

fn c11_pricing() -> Result<Outcome> {
    let model = meixner(0.5);
    let market = MarketSpec {
        s0: vec![100.0],
        r: 0.05,
        maturity: 1.0,
        strike: 100.0,
    };
    let rep = price_report(
        &model,
        &market,
        &Payoff::Call,
        1_000_000,
        9,
        DEFAULT_EPS,
        PideSpec::default(),
    )?;
    let gap = rep.relative_gap.unwrap_or(f64::INFINITY);
    let mc_par = rep.mc_parity.as_ref().map_or(f64::INFINITY, |p| p.relative_error);
    let pide_par = rep.pide_parity.as_ref().map_or(f64::INFINITY, |p| p.relative_error);
    let mart = rep.martingale_residual[0].abs();
    let pide = rep.pide.as_ref().map_or(f64::NAN, |p| p.price);
    outcome(
        gap < 0.01 && mc_par < 5e-3 && pide_par < 5e-3 && mart < 1e-6,
        format!(
            "PIDE {pide:.4} MC {:.4}±{:.1e} gap {:.3}%; parity MC {:.2e} PIDE {:.2e}; martingale {mart:.1e}",
            rep.mc.price,
            rep.mc.standard_error,
            100.0 * gap,
            mc_par,
            pide_par
        ),
    )
}

const C12_MEIXNER: &str = r#"{
  "model": {"dimension": 1, "marginals": [{"kind": "meixner", "params": {"alpha": 0.5, "beta": 0.0, "delta": 1.0}}]},
  "basis": {"degree": 2},
  "simulation": {"paths": 2000, "seed": 12, "steps": 5},
  "pdie": {"lower": [-3.0], "upper": [3.0], "nodes": [121], "terminal": {"kind": "gaussian", "width": 1.0}},
  "pricing": {"s0": [100.0], "r": 0.05, "strike": 100.0, "payoff": {"kind": "call"}, "pide": {"h": 0.05}}
}"#;

const C12_ATOMIC: &str = r#"{
  "model": {"dimension": 2, "poisson_copula": {"lambda1": 1.0, "lambda2": 1.0, "mu": 1.0, "eta": 1.0}},
  "basis": {"degree": 2},
  "simulation": {"paths": 1000, "seed": 12, "steps": 5},
  "pdie": {"lower": [-4.0, -4.0], "upper": [12.0, 12.0], "nodes": [41, 41], "steps": 40,
           "terminal": {"kind": "gaussian", "width": 2.0}},
  "bsde": {"driver": {"kind": "sine_cosine", "c": 0.5}, "degree": 2}
}"#;

fn c12_reproducibility() -> Result<Outcome> {
    let root = std::env::temp_dir().join(format!("levy-teugels-c12-{}", std::process::id()));
    std::fs::create_dir_all(&root)?;
    let configs = [("meixner", C12_MEIXNER), ("atomic", C12_ATOMIC)];
    for (name, text) in configs {
        std::fs::write(root.join(format!("{name}.json")), text)?;
    }
    let runs: &[(&str, &[&str])] = &[
        ("meixner", &["moments"]),
        ("meixner", &["orthobasis"]),
        ("meixner", &["simulate"]),
        ("meixner", &["simulate", "--format", "json"]),
        ("meixner", &["price", "--surface"]),
        ("meixner", &["solve"]),
        ("atomic", &["solve", "--method", "bsde"]),
        ("atomic", &["solve", "--method", "picard"]),
        ("atomic", &["verify"]),
    ];
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for (i, (cfg, args)) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let dir = root.join(format!("run{i}_{rep}"));
            let status = std::process::Command::new(env!("CARGO_BIN_EXE_levy-teugels"))
                .args(*args)
                .arg("--config")
                .arg(root.join(format!("{cfg}.json")))
                .arg("--out")
                .arg(&dir)
                .output()?;
            if !dir.exists() {
                return outcome(
                    false,
                    format!("{args:?} wrote nothing: {}", String::from_utf8_lossy(&status.stderr)),
                );
            }
            let mut files: Vec<_> = std::fs::read_dir(&dir)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            files.sort();
            let contents = files
                .iter()
                .map(|f| Ok((f.file_name().unwrap().to_owned(), std::fs::read(f)?)))
                .collect::<std::io::Result<Vec<_>>>()?;
            outputs.push(contents);
        }
        compared += outputs[0].len();
        if outputs[0] != outputs[1] {
            mismatches.push(format!("{args:?}"));
        }
    }
    let _ = std::fs::remove_dir_all(&root);
    outcome(
        mismatches.is_empty() && compared > 0,
        format!(
            "{} commands, {compared} files compared, mismatches {mismatches:?}",
            runs.len()
        ),
    )
}

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: Vec<Criterion> = vec![
        (1, "Poisson degeneracy", c1_poisson_degeneracy),
        (2, "common jump intensity", c2_common_intensity),
        (3, "Meixner second moment", c3_meixner_moment),
        (4, "Gram-Schmidt oracle", c4_gram_schmidt_oracle),
        (5, "Teugels diagnostics", c5_teugels_diagnostics),
        (6, "Feynman-Kac agreement", c6_feynman_kac),
        (7, "Picard contraction", c7_picard),
        (8, "stability scaling", c8_stability),
        (9, "PDIE/BSDE consistency", c9_pdie_bsde),
        (10, "Clark-Ocone reconstruction", c10_clark_ocone),
        (11, "pricing cross-check", c11_pricing),
        (12, "reproducibility", c12_reproducibility),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} [{}] {name}: {detail} ({secs:.1}s)",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

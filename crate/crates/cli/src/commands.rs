//! One function per subcommand. Each fills a [`RunDir`] and returns the
//! effective parameter tree for the manifest.

use crate::config::*;
use crate::run::RunDir;
use anyhow::{anyhow, bail};
use kpzlab::airy::{apply_r, stationarity_drift, surrogate_ensemble, FieldGrid, SurrogateSpec};
use kpzlab::coalescing::{coalescing_stack, empty_interval_test};
use kpzlab::estimators::*;
use kpzlab::export::{exponent_rows, inviscid_snapshot_rows, viscous_snapshot_rows, write_f64_columns, Plot, Series, EXPONENT_HEADERS};
use kpzlab::geometry::{strip_from_origins, OriginTracker};
use kpzlab::inviscid::{detect_shocks, lax_oleinik_step, track_shocks, ShockRecord};
use kpzlab::polymer::{controlled_chain, gibbs_exact, max_tv_at_kicks, total_variation, viscous_controls, EnergyFunctional, LatticePathSpace};
use kpzlab::renorm::{doubling_levels, estimate_alpha, renorm_sweep, SweepMode};
use kpzlab::viscous::{heat_step, kick_step, velocity_from_z, GradientMethod};
use kpzlab::{Error, Grid, PartitionField, SolutionField, StripConfig, StripStack, ViscousConfig};
use serde::Serialize;
use std::f64::consts::PI;

fn initial_psi(init: &InitCfg, grid: &Grid) -> Vec<f64> {
    match init {
        InitCfg::Flat => vec![0.0; grid.n],
        InitCfg::Sine { amplitude, k } => (0..grid.n).map(|i| amplitude * (2.0 * PI * *k as f64 * grid.x(i) / grid.period).sin()).collect(),
    }
}

#[derive(Serialize)]
struct ShockRow {
    time: i64,
    position: f64,
    birth_time: i64,
    age: i64,
}

pub fn simulate(cfg: &SimulateCfg, run: &mut RunDir) -> anyhow::Result<()> {
    let grid = Grid::new(cfg.grid_n, cfg.forcing.period)?;
    let f = cfg.forcing.field(cfg.master_seed);
    f.validate()?;
    cfg.hamiltonian.validate()?;
    if cfg.snapshot_every == 0 {
        bail!(ConfigError("at `snapshot_every`: must be at least 1".into()));
    }
    if let Some(w) = period_guard(grid.period, cfg.steps as f64 * f.dt) {
        run.warnings.push(w);
    }
    let psi = initial_psi(&cfg.init, &grid);
    let width = 1 + (cfg.steps.max(1) as f64).log10() as usize;
    let name = |t: usize| format!("snapshots/phi_{t:0width$}");
    let last_phi: Vec<f64>;
    if cfg.nu > 0.0 {
        if !cfg.hamiltonian.is_quadratic() {
            bail!(ConfigError("at `hamiltonian`: the viscous solver needs the quadratic Hamiltonian".into()));
        }
        let vc = ViscousConfig::new(cfg.nu, grid, f.dt)?;
        let mut z = PartitionField::from_psi(grid, cfg.nu, cfg.slope_b, &psi, 0);
        for t in 0..=cfg.steps {
            if t > 0 {
                let kick = f.sample_kick(t as i64, &grid)?;
                z = kick_step(&heat_step(&z, &vc)?, &kick, &vc)?;
            }
            if t % cfg.snapshot_every == 0 || t == cfg.steps {
                let u = velocity_from_z(&z, &vc, GradientMethod::Spectral).u;
                run.write_table(&name(t), &["x", "log_z", "phi", "u"], &viscous_snapshot_rows(&z, cfg.nu, &u))?;
            }
        }
        last_phi = z.phi(cfg.nu);
    } else {
        let mut s = SolutionField::from_psi(grid, f.dt, cfg.slope_b, psi, 0);
        let mut shocks: Vec<ShockRecord> = Vec::new();
        let mut shock_rows = Vec::new();
        let mut strips: Vec<StripConfig> = Vec::new();
        let mut tracker = OriginTracker::new(grid, 0);
        let mut last_snap = 0usize;
        for t in 0..=cfg.steps {
            if t > 0 {
                let kick = f.sample_kick(t as i64, &grid)?;
                s = lax_oleinik_step(&s, &kick, &cfg.hamiltonian)?;
                s.normalize_gauge();
                tracker.advance(&s);
                if let Some(sc) = &cfg.shocks {
                    let fresh = detect_shocks(&s, sc.jump_threshold, 0.0);
                    shocks = if t == 1 { fresh } else { track_shocks(&shocks, &fresh, sc.merge_radius_cells * grid.h(), grid.period)? };
                }
            }
            if t % cfg.snapshot_every == 0 || t == cfg.steps {
                run.write_table(&name(t), &["x", "phi", "u", "backpointer"], &inviscid_snapshot_rows(&s))?;
                shock_rows.extend(shocks.iter().map(|q| ShockRow { time: t as i64, position: q.position, birth_time: q.birth_time, age: q.age() }));
                if let (Some(cells), true) = (cfg.strip_cluster_cells, t > 0) {
                    match strip_from_origins(&grid, &tracker.origins, t as f64 * f.dt, last_snap as f64 * f.dt, cells * grid.h()) {
                        Ok(e) => {
                            run.warnings.extend(e.warnings);
                            strips.push(e.strip);
                        }
                        Err(Error::Resolution(m)) => run.warnings.push(format!("no strip for ({last_snap}, {t}]: {m}")),
                        Err(e) => return Err(e.into()),
                    }
                    tracker = OriginTracker::new(grid, t as i64);
                }
                last_snap = t;
            }
        }
        if cfg.shocks.is_some() {
            run.write_json("shocks.json", &shock_rows)?;
        }
        if cfg.strip_cluster_cells.is_some() {
            // newest strip on top, the order the composition expects
            strips.reverse();
            run.write_json("strips.json", &strips)?;
        }
        last_phi = s.phi();
    }
    let plot = Plot::linear("final potential", "x", "phi").with_series(Series { label: "phi".into(), x: grid.nodes(), y: last_phi, err: None });
    run.write_plot("phi_final.svg", &plot)
}

fn alpha_plot(pts: &[(f64, f64)], alpha: f64, title: &str) -> Plot {
    let (n, d): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
    let fit = kpzlab::stats::loglog(&n, &d).ok();
    let mut p = Plot::loglog(title, "strips composed n", "cross density").with_series(Series { label: format!("alpha = {alpha:.4}"), x: n.clone(), y: d, err: None });
    p.fit = fit.map(|f| (f.intercept, f.slope, n[0], n[n.len() - 1]));
    p
}

pub fn renorm(cfg: &RenormCfg, run: &mut RunDir) -> anyhow::Result<()> {
    let stack = match &cfg.source {
        StripSource::Coalescing { dx, period, n_strips } => coalescing_stack(cfg.master_seed, *dx, *period, *n_strips)?,
        StripSource::File { path } => {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("at `source.path`: {path}: {e}")))?;
            let strips: Vec<StripConfig> = parse(&text)?;
            for s in &strips {
                s.validate()?;
            }
            StripStack { strips, alpha_target: None }
        }
    };
    let pts = match cfg.mode {
        ModeCfg::Incremental => {
            let sweep = renorm_sweep(&stack, SweepMode::Incremental)?;
            run.write_json("strips_out.json", &sweep.stack.strips)?;
            sweep.densities
        }
        ModeCfg::Doubling => doubling_levels(&stack.strips)?,
    };
    run.write_table("densities", &["n", "density"], &pts.iter().map(|p| vec![p.0, p.1]).collect::<Vec<_>>())?;
    let fit_pts: Vec<(f64, f64)> = pts.iter().copied().filter(|p| p.0 >= cfg.fit_min_n).collect();
    let (alpha, se) = estimate_alpha(&fit_pts)?;
    let est = ExponentEstimate {
        name: "alpha".into(),
        value: alpha,
        stderr: se,
        fit_range: (fit_pts[0].0, fit_pts[fit_pts.len() - 1].0),
        n_replicas: 1,
        diagnostics: Default::default(),
    };
    run.write_records("exponents", &EXPONENT_HEADERS, &exponent_rows(&[est]))?;
    println!("alpha = {alpha:.4} +- {se:.4}");
    run.write_plot("density.svg", &alpha_plot(&fit_pts, alpha, "cross density under composition"))
}

pub fn coalesce(cfg: &CoalesceCfg, run: &mut RunDir) -> anyhow::Result<()> {
    let mut rows = Vec::new();
    let mut mc = Series { label: "monte carlo".into(), err: Some(vec![]), ..Default::default() };
    let mut pf = Series { label: "pfaffian".into(), ..Default::default() };
    for (k, g) in cfg.geometries.iter().enumerate() {
        let r = empty_interval_test(cfg.master_seed.wrapping_add(k as u64), cfg.dx, cfg.t, g, cfg.replicas)?;
        let label: Vec<String> = g.iter().map(|(a, b)| format!("[{a} {b}]")).collect();
        let z = (r.mc - r.pfaffian) / r.se.max(f64::MIN_POSITIVE);
        println!("{}: mc {:.5} +- {:.5}, pfaffian {:.5}, z {z:.2}", label.join(" "), r.mc, r.se, r.pfaffian);
        rows.push(vec![label.join(" "), g.len().to_string(), format!("{:?}", r.mc), format!("{:?}", r.se), format!("{:?}", r.pfaffian), format!("{z:?}")]);
        mc.x.push(k as f64);
        mc.y.push(r.mc);
        mc.err.as_mut().expect("set").push(r.se);
        pf.x.push(k as f64);
        pf.y.push(r.pfaffian);
    }
    run.write_records("empty_interval", &["geometry", "n", "mc", "se", "pfaffian", "z"], &rows)?;
    run.write_plot("empty_interval.svg", &Plot::linear("empty-interval probability", "geometry", "probability").with_series(mc).with_series(pf))
}

fn exponent_plot(name: &str, t: &[f64], y: &[f64], est: &ExponentEstimate, slope_scale: f64) -> Plot {
    let mut p = Plot::loglog(name, "T", name).with_series(Series { label: format!("{} = {:.3} +- {:.3}", est.name, est.value, est.stderr), x: t.to_vec(), y: y.to_vec(), err: None });
    let (lo, hi) = est.fit_range;
    let k = t.iter().position(|&v| v >= lo).unwrap_or(0);
    let slope = est.value * slope_scale;
    p.fit = Some((y[k].log10() - slope * t[k].log10(), slope, lo, hi));
    p
}

fn scaling_products(data: &ScalingData, fit_range: Option<(f64, f64)>, run: &mut RunDir, out: &mut Vec<ExponentEstimate>) -> anyhow::Result<()> {
    let (xi, xi_dens) = estimate_xi(data, fit_range)?;
    let med: Vec<f64> = (0..data.t_list.len())
        .map(|k| kpzlab::stats::median(&data.replicas.iter().flat_map(|r| r.displacement[k].iter().copied()).collect::<Vec<_>>()))
        .collect();
    run.write_plot("xi.svg", &exponent_plot("median displacement", &data.t_list, &med, &xi, 1.0))?;
    let mut cols = vec![data.t_list.clone(), med];
    let mut headers = vec!["t", "median_displacement"];
    out.push(xi.clone());
    if let Some(d) = xi_dens {
        let agree = (d.value - xi.value).abs() / (d.stderr.powi(2) + xi.stderr.powi(2)).sqrt();
        if agree > 2.0 {
            run.warnings.push(format!("wandering routes differ by {agree:.1} joint SE"));
        }
        out.push(ExponentEstimate { name: "xi_density".into(), ..d });
    }
    match estimate_chi(data, ChiRoute::PointToLine, fit_range) {
        Ok(chi) => {
            let var: Vec<f64> = (0..data.t_list.len())
                .map(|k| kpzlab::stats::sample_variance(&data.replicas.iter().flat_map(|r| r.raw_action[k].iter().copied()).collect::<Vec<_>>()))
                .collect();
            run.write_plot("chi.svg", &exponent_plot("action variance", &data.t_list, &var, &chi, 2.0))?;
            // the relation ties both exponents at the same scales
            let common = estimate_chi(data, ChiRoute::PointToLine, Some(xi.fit_range))?;
            let (gap, se) = scaling_relation(&xi, &common);
            if gap.abs() > se {
                run.warnings.push(format!("chi - (2 xi - 1) = {gap:.3} over {:?} exceeds the joint SE {se:.3}", xi.fit_range));
            }
            cols.push(var);
            headers.push("action_variance");
            out.push(chi);
        }
        Err(Error::InsufficientStatistics(_)) => {}
        Err(e) => return Err(e.into()),
    }
    let rows: Vec<Vec<f64>> = (0..data.t_list.len()).map(|k| cols.iter().map(|c| c[k]).collect()).collect();
    run.write_table("scaling", &headers, &rows)
}

pub fn exponents(cfg: &ExponentsCfg, run: &mut RunDir) -> anyhow::Result<()> {
    let mut out: Vec<ExponentEstimate> = Vec::new();
    let seed = cfg.master_seed;
    if let Some(sc) = &cfg.scaling {
        let c = ScalingConfig {
            forcing: sc.forcing.field(seed),
            grid: Grid::new(sc.grid_n, sc.forcing.period)?,
            ham: cfg.hamiltonian.clone(),
            t_list: sc.t_list.clone(),
            replicas: sc.replicas,
            endpoint_stride: sc.endpoint_stride,
            cluster_tol: 4.0 * sc.forcing.period / sc.grid_n as f64,
        };
        let data = scaling_run(&c)?;
        run.warnings.extend(data.warnings.iter().cloned());
        run.write_json("scaling_data.json", &data)?;
        scaling_products(&data, sc.fit_range, run, &mut out)?;
    }
    if let Some(path) = &cfg.stored {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("at `stored`: {path}: {e}")))?;
        let data: ScalingData = serde_json::from_str(&text).map_err(|e| ConfigError(format!("at `stored`: {path}: {e}")))?;
        scaling_products(&data, None, run, &mut out)?;
    }
    if let Some(fp) = &cfg.free_polymer {
        let groups = free_polymer_displacements(seed, fp.nu, &fp.t_list, fp.replicas, fp.paths)?;
        let data = ScalingData {
            t_list: fp.t_list.clone(),
            replicas: groups.into_iter().map(|g| ScalingReplica { displacement: g, action: vec![], raw_action: vec![], dot_density: vec![] }).collect(),
            warnings: vec![],
        };
        run.write_json("free_polymer_data.json", &data)?;
        let (xi, _) = estimate_xi(&data, None)?;
        out.push(ExponentEstimate { name: "xi_free".into(), ..xi });
    }
    if let Some(sh) = &cfg.shape {
        let est = estimate_shape(&ShapeConfig {
            forcing: sh.forcing.field(seed),
            grid: Grid::new(sh.grid_n, sh.forcing.period)?,
            ham: cfg.hamiltonian.clone(),
            t_steps: sh.t_steps,
            replicas: sh.replicas,
            a_grid: sh.a_grid.clone(),
            nu: sh.nu,
        })?;
        run.warnings.extend(est.warnings.iter().cloned());
        let rows: Vec<Vec<f64>> = (0..est.slopes.len()).map(|k| vec![est.slopes[k], est.s_hat[k], est.s_se[k]]).collect();
        run.write_table("shape", &["a", "s_hat", "s_se"], &rows)?;
        run.write_json("shape.json", &est)?;
        println!("shape curvature {:.4} +- {:.4}", est.quadratic_fit.1, est.quadratic_se.1);
        let mut p = Plot::linear("shape function", "a", "S(a)").with_series(Series { label: "S_hat".into(), x: est.slopes.clone(), y: est.s_hat.clone(), err: Some(est.s_se.clone()) });
        let (s0, c) = est.quadratic_fit;
        p = p.with_series(Series { label: "quadratic fit".into(), x: est.slopes.clone(), y: est.slopes.iter().map(|a| s0 + 0.5 * c * a * a).collect(), err: None });
        run.write_plot("shape.svg", &p)?;
        if !sh.b_grid.is_empty() {
            let lt = legendre_transform(&est.slopes, &est.s_hat, Some(&est.s_se), &sh.b_grid)?;
            if lt.hull_flag {
                run.warnings.push("convex hull moved the shape estimate by more than 3 SE".into());
            }
            let rows: Vec<Vec<f64>> = (0..lt.b.len()).map(|k| vec![lt.b[k], lt.h_eff[k], lt.argmax[k]]).collect();
            run.write_table("effective_hamiltonian", &["b", "h_eff", "a_of_b"], &rows)?;
        }
    }
    if let Some(ag) = &cfg.ages {
        let f = ag.forcing.field(seed);
        let grid = Grid::new(ag.grid_n, ag.forcing.period)?;
        let data = shock_age_run(&AgeRunConfig {
            forcing: f.clone(),
            grid,
            ham: cfg.hamiltonian.clone(),
            burn_in: ag.burn_in,
            horizon: ag.horizon,
            sample_every: ag.sample_every,
            jump_threshold: ag.jump_threshold,
            merge_radius: 0.25 * grid.h(),
            replicas: ag.replicas,
        })?;
        if data.rate_imbalance() > 0.1 {
            run.warnings.push(format!("shock births {} and deaths {} differ by more than 10%; burn-in may be short", data.births, data.deaths));
        }
        let range = ag.fit_range.unwrap_or((4.0 * f.dt, ag.horizon as f64 * f.dt / 8.0));
        let shock = age_tail(&data.shock_ages, ag.bins_per_decade, range.0, Some(range), Some(f.dt))?;
        println!(
            "shock ages: slope {:.3} +- {:.3}, curvature p {:.3e}, {} tail events",
            shock.estimate.value, shock.estimate.stderr, shock.curvature_p, shock.tail_events
        );
        let rows: Vec<Vec<f64>> = shock.bins.iter().map(|b| vec![b.0, b.1, b.2 as f64]).collect();
        run.write_table("shock_age_histogram", &["age", "density", "count"], &rows)?;
        let bins: Vec<_> = shock.bins.iter().filter(|b| b.2 > 0).collect();
        let mut p = Plot::loglog("shock age density", "age", "q_s").with_series(Series {
            label: format!("slope {:.3}", shock.estimate.value),
            x: bins.iter().map(|b| b.0).collect(),
            y: bins.iter().map(|b| b.1).collect(),
            err: None,
        });
        let k = bins.iter().position(|b| b.0 >= range.0).unwrap_or(0);
        p.fit = Some((bins[k].1.log10() - shock.estimate.value * bins[k].0.log10(), shock.estimate.value, range.0, range.1));
        run.write_plot("shock_ages.svg", &p)?;
        let mut est = shock.estimate.clone();
        est.n_replicas = ag.replicas;
        est.diagnostics.insert("curvature".into(), shock.curvature);
        est.diagnostics.insert("curvature_p".into(), shock.curvature_p);
        est.diagnostics.insert("tail_events".into(), shock.tail_events as f64);
        out.push(est);
        match age_tail(&data.minimiser_lifetimes, ag.bins_per_decade, range.0, Some(range), Some(f.dt)) {
            Ok(m) => out.push(ExponentEstimate { name: "age_tail_minimiser".into(), n_replicas: ag.replicas, ..m.estimate }),
            Err(Error::InsufficientStatistics(m)) => run.warnings.push(format!("minimiser lifetimes: {m}")),
            Err(e) => return Err(e.into()),
        }
    }
    if let Some(sg) = &cfg.sigma {
        let grid = Grid::new(sg.grid_n, sg.forcing.period)?;
        let slices = global_solution_slices(&sg.forcing.field(seed), grid, &cfg.hamiltonian, sg.pullback_steps, sg.replicas)?;
        let rep = estimate_sigma(&slices, grid.h(), &sg.lags)?;
        if rep.nonlinear_flag {
            run.warnings.push(format!("increment variance is not linear in the lag (R2 = {:.3})", rep.r2));
        }
        let mut est = rep.estimate.clone();
        est.diagnostics.insert("r2".into(), rep.r2);
        est.diagnostics.insert("ks_pvalue".into(), rep.ks_pvalue);
        out.push(est);
    }
    if let Some(ly) = &cfg.lyapunov {
        let rep = estimate_lyapunov(&LyapunovConfig {
            forcing: ly.forcing.field(seed),
            grid: Grid::new(ly.grid_n, ly.forcing.period)?,
            ham: cfg.hamiltonian.clone(),
            horizon: ly.horizon,
            separations: ly.separations.clone(),
            pairs_per_separation: ly.pairs_per_separation,
            replicas: ly.replicas,
            window: ly.window,
        })?;
        out.push(rep.lambda);
        out.extend(rep.onset);
    }
    if out.is_empty() {
        bail!(ConfigError("no estimator section present".into()));
    }
    for e in &out {
        println!("{}: {:.4} +- {:.4} over [{}, {}]", e.name, e.value, e.stderr, e.fit_range.0, e.fit_range.1);
    }
    run.write_records("exponents", &EXPONENT_HEADERS, &exponent_rows(&out))?;
    run.write_json("exponents_detail.json", &out)
}

/// Returns whether the check passed.
pub fn polymer_check(cfg: &PolymerCheckCfg, run: &mut RunDir) -> anyhow::Result<bool> {
    let grid = Grid::new(cfg.grid_n, cfg.forcing.period)?;
    let f = cfg.forcing.field(cfg.master_seed);
    let space = LatticePathSpace::new(grid, cfg.nu, f.dt, cfg.substeps, cfg.kicks)?;
    let energy = EnergyFunctional::from_forcing(&f, &space, vec![0.0; grid.n])?;
    let endpoint = cfg.endpoint.unwrap_or(grid.n / 2);
    if endpoint >= grid.n {
        bail!(ConfigError(format!("at `endpoint`: node {endpoint} outside the grid of {}", grid.n)));
    }
    let gibbs = gibbs_exact(&space, &energy, endpoint, false)?;
    let u = viscous_controls(&space, &energy)?;
    let chain = controlled_chain(&space, &u, endpoint)?;
    let rows: Vec<Vec<f64>> = (0..=space.n_kicks)
        .map(|j| vec![j as f64, total_variation(&gibbs.marginals[j * space.substeps], &chain.marginals[j * space.substeps])])
        .collect();
    run.write_table("tv_by_kick", &["kick", "tv"], &rows)?;
    let tv = max_tv_at_kicks(&space, &gibbs, &chain);
    let pass = tv <= cfg.tolerance;
    println!("{} max TV = {tv:.6} (tolerance {})", if pass { "PASS" } else { "FAIL" }, cfg.tolerance);
    Ok(pass)
}

#[derive(Serialize)]
struct EnsembleSidecar<'a> {
    layout: &'static str,
    count: usize,
    n: usize,
    half_width: f64,
    targets: (f64, f64),
    seeds: &'a [Vec<u64>],
}

pub fn airy(cfg: &AiryCfg, run: &mut RunDir) -> anyhow::Result<()> {
    let grid = FieldGrid::new(cfg.half_width, cfg.n)?;
    let spec = SurrogateSpec { sigma: cfg.sigma, corr_len: cfg.corr_len };
    let mut ens = surrogate_ensemble(grid, spec, cfg.master_seed, cfg.count, cfg.targets);
    let mut rows = Vec::new();
    for it in 1..=cfg.iterations {
        let o = apply_r(&ens, None)?;
        if o.mask_fraction > 0.05 {
            run.warnings.push(format!("iteration {it}: boundary mask fraction {:.3} exceeds 5%", o.mask_fraction));
        }
        let drift = stationarity_drift(&o.ensemble);
        rows.push(vec![it as f64, o.constants.c, o.constants.delta, o.constants.mu, o.mask_fraction, drift]);
        println!("iteration {it}: C {:.5} delta {:.5} mu {:.5} mask {:.4}", o.constants.c, o.constants.delta, o.constants.mu, o.mask_fraction);
        ens = o.ensemble;
        if ens.len() < 2 && it < cfg.iterations {
            return Err(anyhow!(Error::InsufficientStatistics(format!("ensemble exhausted after {it} iterations"))));
        }
    }
    run.write_table("constants", &["iteration", "c", "delta", "mu", "mask_fraction", "stationarity_drift"], &rows)?;
    let mut buf = Vec::new();
    write_f64_columns(&mut buf, &ens.fields)?;
    run.write_bytes("ensemble.f64", &buf)?;
    run.write_json(
        "ensemble.json",
        &EnsembleSidecar { layout: "little-endian f64, row-major [realization][i * n + j]", count: ens.len(), n: ens.grid.n, half_width: ens.grid.half_width, targets: ens.targets, seeds: &ens.seeds },
    )
}

use crate::config::{grid, Family, KoperTask, RunConfig, SeriesFormat};
use crate::error::{CliError, EXIT_FLAGGED};
use bnews_core::estimator::{warning_scan, write_warning_csv, WindowPolicy};
use bnews_core::koper::{self, InvariantSweep, KoperConfig};
use bnews_core::rdsim::{self, NoiseModel, RandomMap, SimOptions, TimeSeries};
use bnews_core::rng;
use bnews_core::setvalued::{self, examples, BifurcationKind, BifurcationReport, Interval, ScanOptions};
use rayon::prelude::*;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub struct Ctx<'a> {
    pub config: &'a RunConfig,
    pub out: PathBuf,
    pub dt_check: bool,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Opens `name` in the output directory and writes the config header.
    fn create(&self, name: &str, title: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.path(name);
        let f = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(f);
        writeln!(w, "# bnews {title}")?;
        writeln!(w, "# rng: {}", rng::RNG_ALGORITHM)?;
        for l in self.config.comment_lines() {
            writeln!(w, "{l}")?;
        }
        Ok(w)
    }

    fn gnuplot(&self, name: &str, script: &str) -> Result<(), CliError> {
        if self.config.gnuplot {
            std::fs::write(self.path(name), script)?;
        }
        Ok(())
    }
}

fn family_map(family: Family, alpha: f64, slope: f64) -> (Box<dyn Fn(f64) -> f64 + Send + Sync>, Interval) {
    match family {
        Family::Linear => (Box::new(move |x| slope * x + alpha), Interval { lo: -100.0, hi: 100.0 }),
        Family::Pitchfork => (Box::new(move |x: f64| 0.5 * alpha * x.atan() + 0.5 * x), Interval { lo: -10.0, hi: 10.0 }),
        Family::Doubling => (Box::new(move |x| -x * x + alpha), Interval { lo: -0.5, hi: 1.5 }),
    }
}

fn family_name(f: Family) -> &'static str {
    match f {
        Family::Linear => "linear",
        Family::Pitchfork => "pitchfork",
        Family::Doubling => "doubling",
    }
}

fn random_map(family: Family, alpha: f64, slope: f64, noise: &NoiseModel, domain: Option<(f64, f64)>) -> RandomMap {
    let (f, dom) = family_map(family, alpha, slope);
    let dom = domain.map(|(lo, hi)| Interval { lo, hi }).unwrap_or(dom);
    RandomMap::additive(format!("{}(alpha={alpha:?})", family_name(family)), f, noise, dom)
}

fn indexed_name(file: &str, i: usize, count: usize) -> String {
    if count == 1 {
        return file.to_string();
    }
    let p = Path::new(file);
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    match p.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_{i}.{ext}"),
        None => format!("{stem}_{i}"),
    }
}

pub fn cmd_simulate(ctx: &Ctx) -> Result<i32, CliError> {
    let c = &ctx.config.simulate;
    let map = random_map(c.family, c.alpha, c.slope, &c.noise, c.domain);
    let opts = SimOptions { burn_in: c.burn_in, guard: None };
    let runs = rdsim::simulate_many(&map, &c.noise, c.x0, c.n, &opts, c.seed, c.count);
    let comments: Vec<String> = ctx.config.comment_lines().iter().map(|l| l[2..].to_string()).collect();
    for (i, run) in runs.into_iter().enumerate() {
        let mut s = run?;
        s.meta.params.insert("run".into(), i.to_string());
        let path = ctx.path(&indexed_name(&c.file, i, c.count));
        match c.format {
            SeriesFormat::Csv => s.write_csv(&path, &comments)?,
            SeriesFormat::Bnts => {
                let mut meta = serde_json::to_value(&s.meta).expect("metadata serializes");
                meta["config"] = serde_json::Value::String(ctx.config.to_toml());
                rdsim::write_bnts(&path, 1, s.samples(), &meta.to_string())?;
            }
        }
        let sup = rdsim::empirical_support(&s);
        eprintln!("{}: {} samples, support [{:.6}, {:.6}]", path.display(), s.len(), sup.lo, sup.hi);
    }
    ctx.gnuplot(
        "simulate.gp",
        &format!("set datafile commentschars '#'\nset key off\nplot '{}' every ::1 using 0:1 with dots\n", indexed_name(&c.file, 0, c.count)),
    )?;
    Ok(0)
}

fn kind_name(k: BifurcationKind) -> &'static str {
    match k {
        BifurcationKind::BoundarySaddleNode => "boundary-saddle-node",
        BifurcationKind::CompositionSaddleNode => "composition-saddle-node",
        BifurcationKind::None => "none",
    }
}

fn write_scan_csv<W: Write>(w: &mut W, reports: &[BifurcationReport]) -> std::io::Result<()> {
    writeln!(w, "alpha_star,kind,bracket_lo,bracket_hi,components_before,components_after,hausdorff_jump,derivative_at_tangency,conditions_hold")?;
    for r in reports {
        let deriv = r
            .composition_derivative
            .or_else(|| r.tangencies.first().map(|t| t.1.slope))
            .map(|d| format!("{d:?}"))
            .unwrap_or_default();
        let cond = r.conditions.as_ref().map(|c| (c.all() as u8).to_string()).unwrap_or_default();
        writeln!(
            w,
            "{:?},{},{:?},{:?},{},{},{:?},{deriv},{cond}",
            r.alpha_star,
            kind_name(r.kind),
            r.bracket.0,
            r.bracket.1,
            r.components_before,
            r.components_after,
            r.hausdorff_jump
        )?;
    }
    for r in reports.iter().filter(|r| r.error.is_some()) {
        writeln!(w, "# alpha={:?}: {}", r.alpha_star, r.error.as_deref().unwrap())?;
    }
    Ok(())
}

pub fn cmd_scan(ctx: &Ctx) -> Result<i32, CliError> {
    let c = &ctx.config.scan;
    let family = match c.family {
        Family::Pitchfork => examples::pitchfork(c.sigma),
        Family::Doubling => examples::doubling(c.sigma),
        Family::Linear => examples::linear(c.slope, c.sigma),
    }
    .map_err(|e| CliError::Config(e.to_string()))?;
    let grid = grid(c.alpha_min, c.alpha_max, c.n_alpha)?;
    let opts = ScanOptions { jump_tol: c.jump_tol, ..Default::default() };
    let reports = setvalued::bifurcation_scan(&family, &grid, &opts)?;
    let json = serde_json::json!({ "config": ctx.config, "reports": reports });
    std::fs::write(ctx.path(&format!("{}.json", c.file)), serde_json::to_string_pretty(&json).expect("report serializes"))?;
    let mut w = ctx.create(&format!("{}.csv", c.file), "bifurcation scan")?;
    write_scan_csv(&mut w, &reports)?;
    w.flush()?;
    let found: Vec<_> = reports.iter().filter(|r| r.kind != BifurcationKind::None).collect();
    eprintln!("{} bifurcation(s) on {} grid points", found.len(), grid.len());
    for r in &found {
        eprintln!("  alpha* = {:.10} ({}), components {} -> {}", r.alpha_star, kind_name(r.kind), r.components_before, r.components_after);
    }
    Ok(0)
}

fn read_series(path: &Path) -> Result<TimeSeries, CliError> {
    let is_bin = path.extension().and_then(|e| e.to_str()) == Some("bnts");
    let r = if is_bin { TimeSeries::read_bnts(path) } else { TimeSeries::read_csv(path) };
    r.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Series per α: simulated from the configured family, or read from files
/// (paths relative to the config directory or the working directory).
pub fn warn_series(config: &RunConfig, base: Option<&Path>) -> Result<Vec<(f64, TimeSeries)>, CliError> {
    let c = &config.warn;
    if !c.series.is_empty() {
        return c
            .series
            .iter()
            .map(|s| {
                let p = Path::new(&s.file);
                let p = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.to_path_buf(),
                };
                Ok((s.alpha, read_series(&p)?))
            })
            .collect();
    }
    let alphas = grid(c.alpha_min, c.alpha_max, c.n_alpha)?;
    let noise = NoiseModel::uniform(-c.sigma, c.sigma)?;
    let opts = SimOptions { burn_in: c.burn_in, guard: None };
    alphas
        .par_iter()
        .enumerate()
        .map(|(i, &a)| {
            let map = random_map(c.family, a, c.slope, &noise, None);
            let s = rdsim::simulate(&map, &noise, c.x0, c.n, &opts, rng::split_seed(c.seed, i as u64))?;
            Ok((a, s))
        })
        .collect()
}

pub fn cmd_warn(ctx: &Ctx, base: Option<&Path>) -> Result<i32, CliError> {
    let c = &ctx.config.warn;
    let data = warn_series(ctx.config, base)?;
    let policy: WindowPolicy = c.policy.into();
    let rows = warning_scan(&data, &policy, c.threshold)?;
    let mut w = ctx.create(&c.file, "warning scan")?;
    write_warning_csv(&mut w, &rows)?;
    w.flush()?;
    ctx.gnuplot(
        "warn.gp",
        &format!(
            "set datafile separator ','\nset datafile commentschars '#'\nset xlabel 'alpha'\nset ylabel 'D'\nplot '{}' using 1:2 every ::1 with linespoints title 'D', {} title 'threshold'\n",
            c.file, c.threshold
        ),
    )?;
    let flagged: Vec<f64> = rows.iter().filter(|r| r.flag).map(|r| r.alpha).collect();
    if flagged.is_empty() {
        eprintln!("no warning on {} parameter values", rows.len());
        Ok(0)
    } else {
        eprintln!("warning raised at alpha = {flagged:?}");
        Ok(EXIT_FLAGGED)
    }
}

pub fn cmd_koper(ctx: &Ctx) -> Result<i32, CliError> {
    let c = &ctx.config.koper;
    let model: KoperConfig = c.model;
    let sec = &c.section;
    let has = |t: KoperTask| c.tasks.contains(&t);

    if has(KoperTask::ReturnMap) {
        let (a, b) = sec.z_range;
        let zs = grid(a, b, c.z_grid_n)?;
        let cloud = koper::stochastic_return_cloud(&model.deterministic(), sec, &zs, 1)?;
        let mut w = ctx.create("koper_return_map.csv", "deterministic return map")?;
        koper::write_cloud_csv(&mut w, &[cloud])?;
        w.flush()?;
        ctx.gnuplot(
            "koper_return_map.gp",
            "set datafile separator ','\nset datafile commentschars '#'\nset xlabel 'z'\nplot 'koper_return_map.csv' using 2:3 every ::1 with points pt 7 ps 0.3 title 'p', x title ''\n",
        )?;
        eprintln!("return map: {} points at lambda = {}", zs.len(), model.lambda);
    }

    if has(KoperTask::Cloud) {
        let (a, b) = sec.z_range;
        let zs = grid(a, b, c.z_grid_n.min(81))?;
        let clouds = c
            .cloud_lambdas
            .iter()
            .map(|&l| koper::stochastic_return_cloud(&model.with_lambda(l), sec, &zs, c.n_per_z))
            .collect::<Result<Vec<_>, _>>()?;
        let mut w = ctx.create("koper_cloud.csv", "stochastic return map")?;
        koper::write_cloud_csv(&mut w, &clouds)?;
        w.flush()?;
        eprintln!("cloud: {} samples", clouds.iter().map(|c| c.total).sum::<usize>());
    }

    let mut sweep: Option<InvariantSweep> = None;
    if has(KoperTask::Sweep) || has(KoperTask::Derivative) {
        let lambdas = c.lambdas()?;
        let s = koper::invariant_set_sweep(&model, sec, &lambdas, &c.orbit, c.jump_factor)?;
        let mut w = ctx.create("koper_sweep.csv", "invariant-set sweep")?;
        koper::write_sweep_csv(&mut w, &s)?;
        w.flush()?;
        ctx.gnuplot(
            "koper_sweep.gp",
            "set datafile separator ','\nset datafile commentschars '#'\nset xlabel 'lambda'\nplot 'koper_sweep.csv' using 1:3 every ::1 with lines title 'lo', '' using 1:4 every ::1 with lines title 'hi'\n",
        )?;
        match &s.jump {
            Some(j) => eprintln!("sweep: jump between lambda = {} and {} (step {:.4}, median {:.2e})", j.lambda_before, j.lambda_after, j.step, j.median_step),
            None => eprintln!("sweep: no jump detected"),
        }
        sweep = Some(s);
    }

    let mut deterministic = Vec::new();
    if has(KoperTask::Deterministic) {
        let lambdas: Vec<f64> = c.lambdas()?.into_iter().step_by(c.deriv_stride).collect();
        for r in koper::deterministic_derivative_sweep(&model, sec, &lambdas, c.fixed_point_tol) {
            match r {
                Ok(d) => deterministic.push(d),
                Err(e) => eprintln!("deterministic: {e}"),
            }
        }
    }

    let mut rows = Vec::new();
    if has(KoperTask::Derivative) {
        let s = sweep.as_ref().expect("sweep computed above");
        let sub = InvariantSweep { rows: s.rows.iter().step_by(c.deriv_stride).cloned().collect(), jump: s.jump };
        rows = koper::boundary_derivative_sweep(&model, sec, &sub, c.n_real, c.eps_fd, &WindowPolicy::default());
        if let Some(r) = rows.iter().find(|r| r.d_lambda.is_some_and(|d| d >= 1.0)) {
            eprintln!("derivative: d_lambda first reaches 1 at lambda = {}", r.lambda);
        }
    }
    if !rows.is_empty() || !deterministic.is_empty() {
        let mut w = ctx.create("koper_derivative.csv", "boundary derivative")?;
        koper::write_derivative_csv(&mut w, &rows, &deterministic)?;
        w.flush()?;
    }

    if has(KoperTask::Trajectory) {
        let z0 = c.orbit.z0;
        let t = koper::trajectory(z0, &model, sec, c.trajectory_time, c.trajectory_stride, 0)?;
        koper::write_trajectory_bnts(&ctx.path("koper_trajectory.bnts"), &t, &model)?;
    }

    if ctx.dt_check {
        let chk = koper::dt_convergence_check(&model, sec, c.fixed_point_tol)?;
        let mut w = ctx.create("koper_dt_check.csv", "time-step convergence")?;
        writeln!(w, "dt,z_star,slope")?;
        writeln!(w, "{:?},{:?},{:?}", chk.dt, chk.at_dt.z_star, chk.at_dt.slope)?;
        writeln!(w, "{:?},{:?},{:?}", chk.dt / 2.0, chk.at_half.z_star, chk.at_half.slope)?;
        w.flush()?;
        eprintln!(
            "dt check at lambda = {}: |dz*| = {:.3e}, |dslope| = {:.3e}",
            model.lambda,
            chk.z_change(),
            chk.slope_change()
        );
    }
    Ok(0)
}

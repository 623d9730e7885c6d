use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use ftucker::data::{csv_header, format_value, gen_synthetic, read_index_csv, synthetic_truth, NoiseLevel};
use ftucker::kernel::MaternHyper;
use ftucker::model::{fit as fit_model, FitConfig, FittedModel, IterationRecord, Metrics};
use ftucker::{Dataset, Error, Result};
use serde::Serialize;

use crate::{EvalArgs, ExportArgs, FitArgs, PredictArgs, SynthArgs};

/// Summary of one `fit` run. Everything except `timings` is a function of
/// the inputs and the seed.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub data: String,
    pub observations: usize,
    pub modes: usize,
    pub seed: u64,
    pub threads: usize,
    pub config: FitConfig<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
    /// Errors of the predictive mean on the training data.
    pub metrics: Metrics,
    pub timings: Timings,
}

#[derive(Debug, Serialize)]
pub struct Timings {
    pub load_seconds: f64,
    pub fit_seconds: f64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn usage(msg: String) -> Error {
    Error::InvalidArgument(msg)
}

/// Column count of a CSV header, minus the value column.
fn modes_from_header(path: &Path) -> Result<usize> {
    let mut line = String::new();
    BufReader::new(File::open(path)?).read_line(&mut line)?;
    let cols = line.trim().split(',').filter(|c| !c.trim().is_empty()).count();
    if cols < 2 {
        return Err(Error::Malformed {
            line: 1,
            msg: format!("expected at least one index column and a value column, found {cols} columns"),
        });
    }
    Ok(cols - 1)
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let noise = match a.noise_sd {
        Some(sd) => NoiseLevel::StdDev(sd),
        None => NoiseLevel::Variance(a.noise_var),
    };
    if a.grid < 2 {
        return Err(usage(format!("--grid must be at least 2, got {}", a.grid)));
    }
    let data = gen_synthetic::<f64>(a.n, noise, a.seed)?;
    fs::create_dir_all(&a.out)?;
    data.save_csv(a.out.join("data.csv"))?;

    let mut w = create(&a.out.join("truth.csv"))?;
    writeln!(w, "{}", csv_header(2, true))?;
    let step = 1.0 / (a.grid - 1) as f64;
    for i in 0..a.grid {
        for j in 0..a.grid {
            let (x1, x2) = (i as f64 * step, j as f64 * step);
            writeln!(
                w,
                "{},{},{}",
                format_value(x1),
                format_value(x2),
                format_value(synthetic_truth(x1, x2))
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

fn fit_config(a: &FitArgs, modes: usize) -> Result<FitConfig<f64>> {
    let ranks = match a.rank.len() {
        1 => vec![a.rank[0]; modes],
        n if n == modes => a.rank.clone(),
        n => return Err(usage(format!("--rank lists {n} ranks for {modes} modes"))),
    };
    let kernel = MaternHyper::new(a.nu, a.lengthscale, a.variance)?;
    let mut cfg = FitConfig::uniform(modes, 1, kernel);
    cfg.ranks = ranks;
    cfg.kind = a.kind.into();
    cfg.moment_mode = a.moment_mode.into();
    cfg.a0 = a.a0;
    cfg.b0 = a.b0;
    cfg.max_iters = a.iters;
    cfg.tol = a.tol;
    cfg.damping = a.damping;
    cfg.warmup_iters = a.warmup;
    cfg.seed = a.seed;
    cfg.validate()?;
    Ok(cfg)
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let modes = match a.modes {
        Some(k) => k,
        None => modes_from_header(&a.data)?,
    };
    let t0 = Instant::now();
    let data = Dataset::load_csv(&a.data, modes)?;
    let load_seconds = t0.elapsed().as_secs_f64();
    let cfg = fit_config(a, modes)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.threads)
        .build()
        .map_err(|e| usage(format!("cannot start {} threads: {e}", a.threads)))?;
    let t1 = Instant::now();
    let model = pool.install(|| fit_model(&data, &cfg))?;
    let fit_seconds = t1.elapsed().as_secs_f64();
    log::info!(
        "fit {} observations in {fit_seconds:.3}s, {} iterations, converged {}",
        data.len(),
        model.iterations(),
        model.converged
    );
    let metrics = pool.install(|| model.evaluate(&data))?;

    fs::create_dir_all(&a.out)?;
    model.save_json(a.out.join("model.json"))?;
    write_json(&a.out.join("metrics.json"), &metrics)?;
    let mut w = create(&a.out.join("trace.csv"))?;
    writeln!(w, "iteration,delta,e_tau,train_rmse,clamped")?;
    for r in &model.trace {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.iteration,
            format_value(r.delta),
            format_value(r.e_tau),
            format_value(r.train_rmse),
            r.clamped
        )?;
    }
    w.flush()?;
    let manifest = RunManifest {
        tool: "ftucker",
        version: env!("CARGO_PKG_VERSION"),
        data: a.data.display().to_string(),
        observations: data.len(),
        modes,
        seed: cfg.seed,
        threads: pool.current_num_threads(),
        converged: model.converged,
        iterations: model.iterations(),
        trace: model.trace.clone(),
        config: cfg,
        metrics,
        timings: Timings {
            load_seconds,
            fit_seconds,
        },
    };
    write_json(&a.out.join("manifest.json"), &manifest)
}

fn load_model(path: &Path) -> Result<FittedModel<f64>> {
    FittedModel::load_json(path)
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let modes = model.modes();
    let rows = read_index_csv::<f64>(&a.index, modes)?;
    let mut w = create(&a.out)?;
    let mut header = csv_header(modes, false);
    header.push_str(if a.with_var { ",mean,var" } else { ",mean" });
    writeln!(w, "{header}")?;
    for idx in &rows {
        let mut line: Vec<String> = idx.iter().map(|&x| format_value(x)).collect();
        if a.with_var {
            let (m, v) = model.predict(idx)?;
            line.push(format_value(m));
            line.push(format_value(v));
        } else {
            line.push(format_value(model.predict_mean(idx)?));
        }
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = Dataset::load_csv(&a.data, model.modes())?;
    let metrics = model.evaluate(&data)?;
    match &a.out {
        Some(p) => write_json(p, &metrics),
        None => {
            println!("{}", serde_json::to_string_pretty(&metrics)?);
            Ok(())
        }
    }
}

pub fn export_traj(a: &ExportArgs) -> Result<()> {
    if a.grid == 0 {
        return Err(usage("--grid must be positive".into()));
    }
    let model = load_model(&a.model)?;
    fs::create_dir_all(&a.out)?;
    for k in 0..model.modes() {
        let r = model.rescale[k];
        let grid: Vec<f64> = if a.grid == 1 {
            vec![r.min]
        } else {
            let step = (r.max - r.min) / (a.grid - 1) as f64;
            (0..a.grid).map(|i| r.min + i as f64 * step).collect()
        };
        let traj = model.export_trajectory(k, &grid)?;
        let rank = model.config.ranks[k];
        let mut w = create(&a.out.join(format!("mode_{}.csv", k + 1)))?;
        let mut cols = vec!["index".to_string()];
        cols.extend((1..=rank).map(|r| format!("mean_{r}")));
        cols.extend((1..=rank).map(|r| format!("std_{r}")));
        writeln!(w, "{}", cols.join(","))?;
        for p in &traj {
            let line: Vec<String> = std::iter::once(p.index)
                .chain(p.mean.iter().copied())
                .chain(p.std.iter().copied())
                .map(format_value)
                .collect();
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()?;
    }
    Ok(())
}

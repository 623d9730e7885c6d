//! Fits the two-mode synthetic surface and reports reconstruction error on a
//! 50×50 grid.
//!
//! `cargo run --release --example synthetic -- [n] [seed]`
//!
//! `ITERS` overrides the iteration cap; `NOISE_SD` switches the noise level
//! to a standard deviation.

use ftucker::data::{gen_synthetic, synthetic_truth, NoiseLevel};
use ftucker::model::fit;
use ftucker::{FitConfig, MaternHyper};

fn main() -> ftucker::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(650, |s| s.parse().expect("n"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let data = gen_synthetic::<f64>(
        n,
        match std::env::var("NOISE_SD") {
            Ok(v) => NoiseLevel::StdDev(v.parse().expect("NOISE_SD")),
            Err(_) => NoiseLevel::Variance(0.02),
        },
        seed,
    )?;
    let mut cfg = FitConfig::uniform(2, 1, MaternHyper::new(1.5, 0.1, 1.0)?);
    cfg.seed = seed;
    if let Ok(v) = std::env::var("ITERS") {
        cfg.max_iters = v.parse().expect("ITERS");
    }
    let t0 = std::time::Instant::now();
    let model = fit(&data, &cfg)?;
    let elapsed = t0.elapsed();
    for r in &model.trace {
        println!(
            "iter {:>3} delta {:.3e} E[tau] {:>9.4} train_rmse {:.4}",
            r.iteration, r.delta, r.e_tau, r.train_rmse
        );
    }
    let grid: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
    let mut se = 0.0;
    for &a in &grid {
        for &b in &grid {
            let r = model.predict_mean(&[a, b])? - synthetic_truth(a, b);
            se += r * r;
        }
    }
    println!(
        "n={n} converged={} iters={} grid_rmse={:.4} time={:.2?}",
        model.converged,
        model.iterations(),
        (se / 2500.0).sqrt(),
        elapsed
    );
    Ok(())
}

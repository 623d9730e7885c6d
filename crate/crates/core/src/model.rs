//! Model fitting, prediction and persistence.
//!
//! [`fit`] alternates over the modes. For mode `k` it computes every
//! observation's message factors from a frozen snapshot of the posterior,
//! damps them against the previous round, refreshes `q(τ)` and `q(W)`, merges
//! the mode-`k` factors into one pseudo-observation per node and reruns the
//! Kalman/RTS pass of that mode's chain.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cep::{
    damp, damp_tau, design_moments, design_vector_excl, factor_moments, message_tau, message_w,
    message_z, update_q_tau, update_q_w, CorePosterior, CoreView, FactorMoments, ModelKind,
    MomentMode, TauMessage, TauPosterior,
};
use crate::chain::{interpolate, smooth, ChainPosterior, InterpolationMode, ModeChain};
use crate::data::{Dataset, Rescale};
use crate::error::{Error, Result};
use crate::kernel::{matern_to_sde, MaternHyper};
use crate::linalg::{dot, kron_all_vec, GaussianBelief, GaussianNat, TuckerCore};
use crate::scalar::Scalar;

/// Z, τ and (Tucker only) W message of one observation.
type ObsMessages<T> = (GaussianNat<T>, TauMessage<T>, Option<GaussianNat<T>>);

/// Settings of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FitConfig<T> {
    /// Rank `r_k` of every mode.
    pub ranks: Vec<usize>,
    /// Prior of every mode's latent functions.
    pub kernels: Vec<MaternHyper<T>>,
    /// Gamma prior on the noise precision, shape/rate.
    pub a0: T,
    pub b0: T,
    pub max_iters: usize,
    /// Threshold on the largest absolute change of the projected factor
    /// means, the core mean and `E[τ]` between iterations.
    pub tol: T,
    /// Weight of the new message in the damped update, in `(0, 1]`.
    pub damping: T,
    pub kind: ModelKind,
    pub moment_mode: MomentMode,
    /// Leading iterations that use plug-in moments regardless of
    /// `moment_mode`. Starting from prior-scale factor variances, exact
    /// moments shrink every factor to zero before the data can pull it away.
    #[serde(default)]
    pub warmup_iters: usize,
    pub interpolation: InterpolationMode,
    pub seed: u64,
    /// Std-dev of the perturbation added to the initial factor means.
    pub init_noise_std: T,
    /// Tucker only: hold `vec(W)` at this value instead of inferring it.
    #[serde(default)]
    pub fixed_core: Option<Vec<T>>,
}

impl<T: Scalar> FitConfig<T> {
    /// Same rank and kernel on every mode, defaults elsewhere.
    pub fn uniform(modes: usize, rank: usize, kernel: MaternHyper<T>) -> Self {
        Self {
            ranks: vec![rank; modes],
            kernels: vec![kernel; modes],
            a0: T::one(),
            b0: T::one(),
            max_iters: 50,
            tol: T::lit(1e-4),
            damping: T::lit(0.7),
            kind: ModelKind::Tucker,
            moment_mode: MomentMode::Exact,
            warmup_iters: 5,
            interpolation: InterpolationMode::Joint,
            seed: 0,
            init_noise_std: T::lit(0.1),
            fixed_core: None,
        }
    }

    pub fn modes(&self) -> usize {
        self.ranks.len()
    }

    pub fn core_dim(&self) -> usize {
        self.ranks.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.ranks.is_empty() {
            return bad("at least one mode is required".into());
        }
        if self.ranks.contains(&0) {
            return bad(format!("ranks must be at least 1, got {:?}", self.ranks));
        }
        if self.kernels.len() != self.ranks.len() {
            return bad(format!(
                "{} kernels for {} modes",
                self.kernels.len(),
                self.ranks.len()
            ));
        }
        for k in &self.kernels {
            k.validate()?;
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.tol > T::zero()) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.damping > T::zero() && self.damping <= T::one()) {
            return bad(format!("damping must lie in (0, 1], got {}", self.damping));
        }
        if !(self.a0 > T::zero() && self.b0 > T::zero()) {
            return bad(format!("a0, b0 must be positive, got {}, {}", self.a0, self.b0));
        }
        if !(self.init_noise_std >= T::zero()) {
            return bad("init_noise_std must be non-negative".into());
        }
        if self.kind == ModelKind::Cp && self.ranks.iter().any(|&r| r != self.ranks[0]) {
            return bad(format!("CP needs equal ranks, got {:?}", self.ranks));
        }
        if let Some(core) = &self.fixed_core {
            if self.kind == ModelKind::Cp {
                return bad("fixed_core applies to Tucker only".into());
            }
            if core.len() != self.core_dim() {
                return bad(format!(
                    "fixed core has {} values, ranks need {}",
                    core.len(),
                    self.core_dim()
                ));
            }
        }
        Ok(())
    }
}

/// Per-observation message factors.
#[derive(Debug, Clone)]
pub struct Messages<T> {
    /// `z[k][n]`: factor on `H·Z^k` at entry `n`'s node.
    pub z: Vec<Vec<GaussianNat<T>>>,
    pub tau: Vec<TauMessage<T>>,
    /// Factors on `vec(W)`; empty when the core is not inferred.
    pub w: Vec<GaussianNat<T>>,
}

/// One outer iteration of the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub delta: f64,
    pub e_tau: f64,
    pub train_rmse: f64,
    /// Negative noise-rate messages dropped from `q(τ)` in this iteration.
    pub clamped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
}

/// Posterior of one mode's factors at a grid index, original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrajectoryPoint<T> {
    pub index: T,
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

/// Result of [`fit`]; immutable and safe to share across threads.
#[derive(Debug, Clone)]
pub struct FittedModel<T> {
    pub config: FitConfig<T>,
    pub rescale: Vec<Rescale<T>>,
    pub chains: Vec<ModeChain<T>>,
    pub factors: Vec<ChainPosterior<T>>,
    pub tau: TauPosterior<T>,
    pub core: CorePosterior<T>,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
    /// Final messages; not persisted.
    pub messages: Option<Messages<T>>,
}

fn build_chains<T: Scalar>(cfg: &FitConfig<T>, nodes: &[Vec<T>]) -> Result<Vec<ModeChain<T>>> {
    nodes
        .iter()
        .zip(cfg.kernels.iter().zip(&cfg.ranks))
        .map(|(idx, (hyper, &r))| ModeChain::new(idx.clone(), matern_to_sde(hyper)?.blockdiag_expand(r)?))
        .collect()
}

fn initial_core<T: Scalar>(cfg: &FitConfig<T>) -> Result<CorePosterior<T>> {
    Ok(match (cfg.kind, &cfg.fixed_core) {
        (ModelKind::Cp, _) => {
            CorePosterior::fixed(&TuckerCore::identity_diagonal(cfg.ranks[0], cfg.modes())?)
        }
        (ModelKind::Tucker, Some(v)) => {
            CorePosterior::fixed(&TuckerCore::from_vec(cfg.ranks.clone(), v.clone())?)
        }
        (ModelKind::Tucker, None) => CorePosterior::prior(cfg.core_dim()),
    })
}

/// `vec(W)ᵀ(u¹ ⊗ … ⊗ u^K)` or, for CP, `Σ_r ∏_k u^k_r`.
fn multilinear<T: Scalar>(kind: ModelKind, core_mean: &[T], factors: &[&[T]]) -> T {
    match kind {
        ModelKind::Tucker => dot(core_mean, &kron_all_vec(factors)),
        ModelKind::Cp => (0..factors[0].len())
            .map(|r| factors.iter().fold(T::one(), |p, u| p * u[r]))
            .sum(),
    }
}

fn node_moments<T: Scalar>(
    chains: &[ModeChain<T>],
    posts: &[ChainPosterior<T>],
    mode: MomentMode,
) -> Result<Vec<Vec<FactorMoments<T>>>> {
    chains
        .iter()
        .zip(posts)
        .map(|(c, p)| {
            p.smoothed
                .par_iter()
                .map(|b| factor_moments(b, c.h(), mode))
                .collect()
        })
        .collect()
}

fn projected_means<T: Scalar>(chains: &[ModeChain<T>], posts: &[ChainPosterior<T>]) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (c, p) in chains.iter().zip(posts) {
        for b in &p.smoothed {
            out.extend(c.h().matvec(&b.mean)?);
        }
    }
    Ok(out)
}

fn max_abs_change<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

/// Runs the alternating message-passing / smoothing loop on `data`.
pub fn fit<T: Scalar>(data: &Dataset<T>, cfg: &FitConfig<T>) -> Result<FittedModel<T>> {
    cfg.validate()?;
    let modes = cfg.modes();
    if data.modes() != modes {
        return Err(Error::InvalidArgument(format!(
            "config has {modes} modes, data has {}",
            data.modes()
        )));
    }
    if data.is_empty() {
        return Err(Error::Empty("no training entries".into()));
    }
    let n_obs = data.len();
    let nodes: Vec<Vec<T>> = (0..modes).map(|k| data.nodes(k).to_vec()).collect();
    let chains = build_chains(cfg, &nodes)?;
    let learn_core = cfg.kind == ModelKind::Tucker && cfg.fixed_core.is_none();
    let core_dim = cfg.core_dim();
    let ys = data.values();
    let gamma = cfg.damping;

    // prior-only chain pass, then perturb the factor means
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut posts = Vec::with_capacity(modes);
    for (k, chain) in chains.iter().enumerate() {
        let zeros = vec![GaussianNat::zero(cfg.ranks[k]); chain.len()];
        let mut post = smooth(chain, &zeros)?;
        let d = chain.ssm().base.state_dim();
        for b in &mut post.smoothed {
            for r in 0..cfg.ranks[k] {
                b.mean[r * d] += cfg.init_noise_std * T::lit(normal.sample(&mut rng));
            }
        }
        posts.push(post);
    }
    let mut core = initial_core(cfg)?;
    if learn_core {
        // a zero core mean zeroes every factor message; start from a prior draw
        for m in &mut core.mu {
            *m = T::lit(normal.sample(&mut rng));
        }
    }
    let mut msgs = Messages {
        z: cfg.ranks.iter().map(|&r| vec![GaussianNat::zero(r); n_obs]).collect(),
        tau: vec![TauMessage::initial(); n_obs],
        w: if learn_core {
            vec![GaussianNat::zero(core_dim); n_obs]
        } else {
            Vec::new()
        },
    };
    // q(τ) starts as the prior times the initial (3/2, 0) messages
    let mut tau = update_q_tau(cfg.a0, cfg.b0, &msgs.tau)?.posterior;

    let mut trace = Vec::new();
    let mut converged = false;
    for iteration in 1..=cfg.max_iters {
        let prev_proj = projected_means(&chains, &posts)?;
        let prev_mu = core.mu.clone();
        let prev_tau = tau.mean();
        let mut clamped = 0;
        let moment_mode = if iteration <= cfg.warmup_iters {
            MomentMode::Plugin
        } else {
            cfg.moment_mode
        };

        for k in 0..modes {
            let ctx = |e: Error| Error::Inference {
                iteration,
                mode: k,
                reason: e.to_string(),
            };
            let moments = node_moments(&chains, &posts, moment_mode).map_err(ctx)?;
            let core_mean = TuckerCore::from_vec(cfg.ranks.clone(), core.mu.clone()).map_err(ctx)?;
            let view = match cfg.kind {
                ModelKind::Tucker => CoreView::Tucker {
                    mean: &core_mean,
                    posterior: &core,
                },
                ModelKind::Cp => CoreView::Cp,
            };
            let e_tau = tau.mean();

            // message phase: pure map over observations
            let fresh: Vec<ObsMessages<T>> = (0..n_obs)
                .into_par_iter()
                .map(|n| {
                    let pos = data.positions(n);
                    let f: Vec<&FactorMoments<T>> =
                        (0..modes).map(|j| &moments[j][pos[j]]).collect();
                    let y = ys[n];
                    let (ea, eaa) = design_vector_excl(view, &f, k)?;
                    let z = damp(&msgs.z[k][n], &message_z(y, e_tau, &ea, &eaa), gamma)?;
                    let dm = design_moments(view, &f)?;
                    let t = damp_tau(&msgs.tau[n], &message_tau(y, &dm), gamma)?;
                    let w = if learn_core {
                        Some(damp(&msgs.w[n], &message_w(y, e_tau, &dm)?, gamma)?)
                    } else {
                        None
                    };
                    Ok((z, t, w))
                })
                .collect::<Result<_>>()
                .map_err(ctx)?;
            for (n, (z, t, w)) in fresh.into_iter().enumerate() {
                msgs.z[k][n] = z;
                msgs.tau[n] = t;
                if let Some(w) = w {
                    msgs.w[n] = w;
                }
            }

            let upd = update_q_tau(cfg.a0, cfg.b0, &msgs.tau).map_err(ctx)?;
            tau = upd.posterior;
            clamped += upd.clamped;
            if learn_core {
                core = update_q_w(core_dim, &msgs.w).map_err(ctx)?;
            }

            // fixed-order merge into one pseudo-observation per node
            let mut obs = vec![GaussianNat::zero(cfg.ranks[k]); chains[k].len()];
            for n in 0..n_obs {
                obs[data.positions(n)[k]].add_assign(&msgs.z[k][n]).map_err(ctx)?;
            }
            posts[k] = smooth(&chains[k], &obs).map_err(ctx)?;
        }

        let proj = projected_means(&chains, &posts)?;
        let delta = max_abs_change(&proj, &prev_proj)
            .max(max_abs_change(&core.mu, &prev_mu))
            .max((tau.mean() - prev_tau).abs());
        let train_rmse = train_rmse(data, &chains, &posts, cfg.kind, &core.mu)?;
        log::debug!(
            "iteration {iteration}: delta={:.3e} E[tau]={:.4} train_rmse={train_rmse:.4e}",
            delta.as_f64(),
            tau.mean()
        );
        trace.push(IterationRecord {
            iteration,
            delta: delta.as_f64(),
            e_tau: tau.mean().as_f64(),
            train_rmse,
            clamped,
        });
        if iteration > cfg.warmup_iters && delta < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(FittedModel {
        config: cfg.clone(),
        rescale: data.rescale().to_vec(),
        chains,
        factors: posts,
        tau,
        core,
        trace,
        converged,
        messages: Some(msgs),
    })
}

fn train_rmse<T: Scalar>(
    data: &Dataset<T>,
    chains: &[ModeChain<T>],
    posts: &[ChainPosterior<T>],
    kind: ModelKind,
    core_mean: &[T],
) -> Result<f64> {
    let means: Vec<Vec<Vec<T>>> = chains
        .iter()
        .zip(posts)
        .map(|(c, p)| p.smoothed.iter().map(|b| c.h().matvec(&b.mean)).collect())
        .collect::<Result<_>>()?;
    let sse: f64 = data
        .entries()
        .iter()
        .enumerate()
        .map(|(n, e)| {
            let pos = data.positions(n);
            let u: Vec<&[T]> = (0..pos.len()).map(|k| means[k][pos[k]].as_slice()).collect();
            let r = (multilinear(kind, core_mean, &u) - e.value).as_f64();
            r * r
        })
        .sum();
    Ok((sse / data.len() as f64).sqrt())
}

impl<T: Scalar> FittedModel<T> {
    pub fn modes(&self) -> usize {
        self.chains.len()
    }

    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    fn check_index(&self, index: &[T]) -> Result<()> {
        if index.len() != self.modes() {
            return Err(Error::InvalidArgument(format!(
                "index has {} components, model has {} modes",
                index.len(),
                self.modes()
            )));
        }
        Ok(())
    }

    /// Posterior state of mode `k` at an index in original units.
    pub fn state_at(&self, k: usize, x: T) -> Result<GaussianBelief<T>> {
        if k >= self.modes() {
            return Err(Error::InvalidArgument(format!("mode {k} out of range")));
        }
        interpolate(
            &self.chains[k],
            &self.factors[k],
            self.rescale[k].apply(x),
            self.config.interpolation,
        )
    }

    /// Mean and covariance of `U^k = H·Z^k` at an index in original units.
    pub fn factor_at(&self, k: usize, x: T) -> Result<FactorMoments<T>> {
        let b = self.state_at(k, x)?;
        let h = self.chains[k].h();
        Ok(FactorMoments {
            mean: h.matvec(&b.mean)?,
            second: h.sandwich(&b.cov)?,
        })
    }

    /// Predictive mean of the tensor entry at `index` (original units).
    pub fn predict_mean(&self, index: &[T]) -> Result<T> {
        self.check_index(index)?;
        let f = (0..self.modes())
            .map(|k| self.factor_at(k, index[k]))
            .collect::<Result<Vec<_>>>()?;
        let u: Vec<&[T]> = f.iter().map(|m| m.mean.as_slice()).collect();
        Ok(multilinear(self.config.kind, &self.core.mu, &u))
    }

    /// First-order predictive variance, including the noise `1/E[τ]`.
    pub fn predict_var(&self, index: &[T]) -> Result<T> {
        Ok(self.predict(index)?.1)
    }

    /// Predictive mean and variance.
    pub fn predict(&self, index: &[T]) -> Result<(T, T)> {
        self.check_index(index)?;
        let modes = self.modes();
        let f = (0..modes)
            .map(|k| self.factor_at(k, index[k]))
            .collect::<Result<Vec<_>>>()?;
        let u: Vec<&[T]> = f.iter().map(|m| m.mean.as_slice()).collect();
        let mean = multilinear(self.config.kind, &self.core.mu, &u);
        // gradients w.r.t. each U^k at the means
        let plug: Vec<FactorMoments<T>> = f
            .iter()
            .map(|m| FactorMoments {
                mean: m.mean.clone(),
                second: crate::linalg::Matrix::outer(&m.mean, &m.mean),
            })
            .collect();
        let refs: Vec<&FactorMoments<T>> = plug.iter().collect();
        let core_mean = TuckerCore::from_vec(self.config.ranks.clone(), self.core.mu.clone())?;
        let view = match self.config.kind {
            ModelKind::Tucker => CoreView::Tucker {
                mean: &core_mean,
                posterior: &self.core,
            },
            ModelKind::Cp => CoreView::Cp,
        };
        let mut var = T::one() / self.tau.mean();
        for k in 0..modes {
            let (g, _) = design_vector_excl(view, &refs, k)?;
            var += dot(&g, &f[k].second.matvec(&g)?);
        }
        if self.config.kind == ModelKind::Tucker {
            let b = kron_all_vec(&u);
            var += dot(&b, &self.core.s.matvec(&b)?);
        }
        Ok((mean, var))
    }

    /// Factor posterior of mode `k` along `grid` (original units).
    pub fn export_trajectory(&self, k: usize, grid: &[T]) -> Result<Vec<TrajectoryPoint<T>>> {
        grid.iter()
            .map(|&x| {
                let f = self.factor_at(k, x)?;
                Ok(TrajectoryPoint {
                    index: x,
                    std: f.second.diag().into_iter().map(|v| v.max(T::zero()).sqrt()).collect(),
                    mean: f.mean,
                })
            })
            .collect()
    }

    /// RMSE and MAE of [`Self::predict_mean`] over `test`.
    pub fn evaluate(&self, test: &Dataset<T>) -> Result<Metrics> {
        if test.is_empty() {
            return Err(Error::Empty("test set has no entries".into()));
        }
        let preds: Vec<T> = test
            .entries()
            .par_iter()
            .map(|e| self.predict_mean(&e.index))
            .collect::<Result<_>>()?;
        let truth = test.values();
        Ok(metrics(&preds, &truth))
    }

    pub fn to_file(&self) -> ModelFile<T> {
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            config: self.config.clone(),
            rescale: self.rescale.clone(),
            nodes: self.chains.iter().map(|c| c.indexes().to_vec()).collect(),
            factors: self.factors.clone(),
            tau: self.tau,
            core: self.core.clone(),
            trace: self.trace.clone(),
            converged: self.converged,
        }
    }

    pub fn from_file(file: ModelFile<T>) -> Result<Self> {
        if file.format != MODEL_FORMAT {
            return Err(Error::InvalidArgument(format!("unknown model format {:?}", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported model version {}",
                file.version
            )));
        }
        file.config.validate()?;
        let chains = build_chains(&file.config, &file.nodes)?;
        let modes = file.config.modes();
        if file.rescale.len() != modes || file.factors.len() != modes {
            return Err(Error::InvalidArgument("model file is inconsistent".into()));
        }
        for (c, p) in chains.iter().zip(&file.factors) {
            if p.smoothed.len() != c.len() || p.cross.len() + 1 != c.len() {
                return Err(Error::InvalidArgument("chain posterior length mismatch".into()));
            }
        }
        if file.core.dim() != file.config.core_dim() {
            return Err(Error::InvalidArgument("core dimension mismatch".into()));
        }
        Ok(Self {
            config: file.config,
            rescale: file.rescale,
            chains,
            factors: file.factors,
            tau: file.tau,
            core: file.core,
            trace: file.trace,
            converged: file.converged,
            messages: None,
        })
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &self.to_file())?;
        w.flush()?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let file: ModelFile<T> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Self::from_file(file)
    }
}

pub fn metrics<T: Scalar>(pred: &[T], truth: &[T]) -> Metrics {
    let n = pred.len().max(1) as f64;
    let (se, ae) = pred.iter().zip(truth).fold((0.0, 0.0), |(se, ae), (&p, &y)| {
        let r = (p - y).as_f64();
        (se + r * r, ae + r.abs())
    });
    Metrics {
        rmse: (se / n).sqrt(),
        mae: ae / n,
    }
}

pub const MODEL_FORMAT: &str = "ftucker-model";
pub const MODEL_VERSION: u32 = 1;

/// On-disk form of a [`FittedModel`]. Chains are rebuilt from the node
/// indexes and the kernel settings; messages are not stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ModelFile<T> {
    pub format: String,
    pub version: u32,
    pub config: FitConfig<T>,
    pub rescale: Vec<Rescale<T>>,
    /// Sorted rescaled node indexes per mode.
    pub nodes: Vec<Vec<T>>,
    pub factors: Vec<ChainPosterior<T>>,
    pub tau: TauPosterior<T>,
    pub core: CorePosterior<T>,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
}

//! Observations of a continuous-indexed tensor.
//!
//! Entries keep their indexes in original units. Each mode is min-max rescaled
//! to `[0, 1]` and the rescaled values are deduplicated into the sorted node
//! list of that mode's chain.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::chain::{node_position, unique_sorted};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Entry<T> {
    /// Index tuple in original units.
    pub index: Vec<T>,
    pub value: T,
}

/// Affine map of one mode onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Rescale<T> {
    pub min: T,
    pub max: T,
}

impl<T: Scalar> Rescale<T> {
    /// `x ↦ x`; keeps indexes in original units.
    pub fn identity() -> Self {
        Self {
            min: T::zero(),
            max: T::one(),
        }
    }

    pub fn fit(values: impl IntoIterator<Item = T>) -> Option<Self> {
        let mut it = values.into_iter();
        let first = it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x)));
        Some(Self { min, max })
    }

    /// Rescaled value; a degenerate range maps everything to 0.
    pub fn apply(&self, x: T) -> T {
        let span = self.max - self.min;
        if span > T::zero() {
            (x - self.min) / span
        } else {
            T::zero()
        }
    }

    pub fn span(&self) -> T {
        self.max - self.min
    }
}

/// Observations plus the per-mode chain structure derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    modes: usize,
    entries: Vec<Entry<T>>,
    rescale: Vec<Rescale<T>>,
    nodes: Vec<Vec<T>>,
    /// `positions[n][k]`: node of entry `n` in mode `k`.
    positions: Vec<Vec<usize>>,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset, fitting the min-max rescaling from the entries.
    pub fn new(modes: usize, entries: Vec<Entry<T>>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("dataset has no entries".into()));
        }
        check_entries(modes, &entries)?;
        let rescale = (0..modes)
            .map(|k| Rescale::fit(entries.iter().map(|e| e.index[k])).expect("nonempty"))
            .collect();
        Self::with_rescale(modes, entries, rescale)
    }

    /// Builds a dataset under a given rescaling (e.g. a parent dataset's).
    pub fn with_rescale(modes: usize, entries: Vec<Entry<T>>, rescale: Vec<Rescale<T>>) -> Result<Self> {
        if modes == 0 {
            return Err(Error::InvalidArgument("a tensor needs at least one mode".into()));
        }
        if rescale.len() != modes {
            return Err(Error::InvalidArgument(format!(
                "{} rescale entries for {modes} modes",
                rescale.len()
            )));
        }
        check_entries(modes, &entries)?;
        let nodes: Vec<Vec<T>> = (0..modes)
            .map(|k| {
                let scaled: Vec<T> = entries.iter().map(|e| rescale[k].apply(e.index[k])).collect();
                unique_sorted(&scaled)
            })
            .collect();
        let positions = entries
            .iter()
            .map(|e| {
                (0..modes)
                    .map(|k| {
                        node_position(&nodes[k], rescale[k].apply(e.index[k]))
                            .expect("every rescaled index has a node")
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            modes,
            entries,
            rescale,
            nodes,
            positions,
        })
    }

    /// Keeps indexes in original units (identity rescaling).
    pub fn unscaled(modes: usize, entries: Vec<Entry<T>>) -> Result<Self> {
        Self::with_rescale(modes, entries, vec![Rescale::identity(); modes])
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn rescale(&self) -> &[Rescale<T>] {
        &self.rescale
    }

    /// Sorted unique rescaled indexes of mode `k`.
    pub fn nodes(&self, k: usize) -> &[T] {
        &self.nodes[k]
    }

    pub fn positions(&self, n: usize) -> &[usize] {
        &self.positions[n]
    }

    pub fn values(&self) -> Vec<T> {
        self.entries.iter().map(|e| e.value).collect()
    }

    /// Rescaled index tuple of entry `n`.
    pub fn scaled_index(&self, n: usize) -> Vec<T> {
        self.entries[n]
            .index
            .iter()
            .zip(&self.rescale)
            .map(|(&x, r)| r.apply(x))
            .collect()
    }

    /// Random train/test split; both halves keep this dataset's rescaling.
    pub fn split(&self, train_frac: f64, seed: u64) -> Result<(Self, Self)> {
        if !(train_frac > 0.0 && train_frac < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train fraction must lie in (0, 1), got {train_frac}"
            )));
        }
        let n = self.len();
        let n_train = (train_frac * n as f64).round() as usize;
        if n_train == 0 || n_train == n {
            return Err(Error::InvalidArgument(format!(
                "splitting {n} entries at {train_frac} leaves an empty side"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let pick = |ids: &[usize]| -> Vec<Entry<T>> {
            ids.iter().map(|&i| self.entries[i].clone()).collect()
        };
        let train = Self::with_rescale(self.modes, pick(&order[..n_train]), self.rescale.clone())?;
        let test = Self::with_rescale(self.modes, pick(&order[n_train..]), self.rescale.clone())?;
        Ok((train, test))
    }

    /// Writes `i_1,…,i_K,y` with 17 significant digits.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{}", csv_header(self.modes, true))?;
        for e in &self.entries {
            let mut line = String::new();
            for &x in &e.index {
                line.push_str(&format_value(x));
                line.push(',');
            }
            line.push_str(&format_value(e.value));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>, modes: usize) -> Result<Self> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        Self::parse_csv(&text, modes)
    }

    pub fn parse_csv(text: &str, modes: usize) -> Result<Self> {
        let rows = parse_rows(text, modes + 1, modes + 1)?;
        let entries = rows
            .into_iter()
            .map(|mut r| {
                let value = r.pop().expect("K+1 columns");
                Entry { index: r, value }
            })
            .collect();
        Self::new(modes, entries)
    }
}

fn check_entries<T: Scalar>(modes: usize, entries: &[Entry<T>]) -> Result<()> {
    for (n, e) in entries.iter().enumerate() {
        if e.index.len() != modes {
            return Err(Error::InvalidArgument(format!(
                "entry {n} has {} indexes, expected {modes}",
                e.index.len()
            )));
        }
        if e.index.iter().chain(std::iter::once(&e.value)).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("entry {n} is not finite")));
        }
    }
    Ok(())
}

/// Reads index tuples from a headered CSV with `K` columns, or `K + 1` when a
/// trailing value column is present (it is ignored).
pub fn read_index_csv<T: Scalar>(path: impl AsRef<Path>, modes: usize) -> Result<Vec<Vec<T>>> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_index_csv(&text, modes)
}

pub fn parse_index_csv<T: Scalar>(text: &str, modes: usize) -> Result<Vec<Vec<T>>> {
    let mut rows = parse_rows(text, modes, modes + 1)?;
    for r in &mut rows {
        r.truncate(modes);
    }
    Ok(rows)
}

/// `i_1,…,i_K[,y]`.
pub fn csv_header(modes: usize, with_value: bool) -> String {
    let mut cols: Vec<String> = (1..=modes).map(|k| format!("i_{k}")).collect();
    if with_value {
        cols.push("y".into());
    }
    cols.join(",")
}

/// Scientific notation with 17 significant digits; parses back to the same `f64`.
pub fn format_value<T: Scalar>(x: T) -> String {
    format!("{:.16e}", x.as_f64())
}

/// Parses a headered numeric CSV whose rows have between `min_cols` and
/// `max_cols` columns (all rows the same width as the header).
pub fn parse_rows<T: Scalar>(text: &str, min_cols: usize, max_cols: usize) -> Result<Vec<Vec<T>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let width = rdr.headers()?.len();
    if text.trim().is_empty() {
        return Err(Error::Empty("file has no header".into()));
    }
    if width < min_cols || width > max_cols {
        return Err(Error::Malformed {
            line: 1,
            msg: format!("header has {width} columns, expected {min_cols}..={max_cols}"),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Malformed {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width {
            return Err(Error::Malformed {
                line,
                msg: format!("{} columns, expected {width}", rec.len()),
            });
        }
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(T::lit)
                    .ok_or_else(|| Error::Malformed {
                        line,
                        msg: format!("not a finite number: {s:?}"),
                    })
            })
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Empty("file has a header but no rows".into()));
    }
    Ok(rows)
}

/// First synthetic mode function, `exp(−2x)·sin(3πx/2)`.
pub fn synthetic_u1(x: f64) -> f64 {
    (-2.0 * x).exp() * (1.5 * std::f64::consts::PI * x).sin()
}

/// Second synthetic mode function, `sin²(2πx)·cos(2πx)`.
pub fn synthetic_u2(x: f64) -> f64 {
    let t = 2.0 * std::f64::consts::PI * x;
    t.sin().powi(2) * t.cos()
}

/// Noiseless value of the synthetic rank-1 surface.
pub fn synthetic_truth(i1: f64, i2: f64) -> f64 {
    synthetic_u1(i1) * synthetic_u2(i2)
}

/// How the noise level of [`gen_synthetic`] is read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    Variance(f64),
    StdDev(f64),
}

impl NoiseLevel {
    pub fn std_dev(self) -> f64 {
        match self {
            Self::Variance(v) => v.sqrt(),
            Self::StdDev(s) => s,
        }
    }
}

/// Samples `n` index pairs uniformly on `[0,1]²` with
/// `y = U¹(i₁)·U²(i₂) + ε`.
pub fn gen_synthetic<T: Scalar>(n: usize, noise: NoiseLevel, seed: u64) -> Result<Dataset<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let sd = noise.std_dev();
    if !(sd >= 0.0) || !sd.is_finite() {
        return Err(Error::InvalidArgument(format!("invalid noise level {noise:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let entries = (0..n)
        .map(|_| {
            let i1: f64 = rng.random();
            let i2: f64 = rng.random();
            let eps = sd * normal.sample(&mut rng);
            Entry {
                index: vec![T::lit(i1), T::lit(i2)],
                value: T::lit(synthetic_truth(i1, i2) + eps),
            }
        })
        .collect();
    Dataset::new(2, entries)
}

//! Linear execution-time models `T(x) = alpha * x + beta` over image size,
//! least-squares fitting, and size-binned duration statistics.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::designs::{DesignId, TaskKind};
use crate::{Error, Result};

/// Lower bound on a sampled task duration, in seconds.
pub const DURATION_FLOOR_S: f64 = 0.001;

/// Per-bin noise override: `std_s[k]` applies to sizes in
/// `[lo_mb + k * width_mb, lo_mb + (k + 1) * width_mb)`. Sizes outside the
/// table use the nearest bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseTable {
    pub lo_mb: f64,
    pub width_mb: f64,
    pub std_s: Vec<f64>,
}

impl NoiseTable {
    fn std_for(&self, size_mb: f64) -> f64 {
        let k = ((size_mb - self.lo_mb) / self.width_mb).floor();
        let k = k.clamp(0.0, (self.std_s.len() - 1) as f64) as usize;
        self.std_s[k]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecTimeModel {
    /// Seconds per MB.
    pub alpha: f64,
    /// Seconds.
    pub beta: f64,
    /// Standard deviation of the additive Gaussian noise, seconds.
    pub noise_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_table: Option<NoiseTable>,
}

impl ExecTimeModel {
    pub fn new(alpha: f64, beta: f64, noise_std: f64) -> Self {
        ExecTimeModel {
            alpha,
            beta,
            noise_std,
            noise_table: None,
        }
    }

    /// Same line with the noise switched off.
    pub fn noiseless(&self) -> Self {
        ExecTimeModel {
            noise_std: 0.0,
            noise_table: None,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha.is_finite()
            && self.beta.is_finite()
            && self.noise_std.is_finite()
            && self.alpha >= 0.0
            && self.beta >= 0.0
            && self.noise_std >= 0.0
            && (self.alpha > 0.0 || self.beta > 0.0);
        if !ok {
            return Err(Error::Config(format!(
                "execution-time model needs alpha >= 0, beta >= 0, noise_std >= 0 and a positive line, got {self:?}"
            )));
        }
        if let Some(table) = &self.noise_table {
            if table.std_s.is_empty()
                || table.width_mb.is_nan()
                || table.width_mb <= 0.0
                || table.std_s.iter().any(|s| !(s.is_finite() && *s >= 0.0))
            {
                return Err(Error::Config(format!("invalid noise table {table:?}")));
            }
        }
        Ok(())
    }

    fn noise_std_at(&self, size_mb: f64) -> f64 {
        match &self.noise_table {
            Some(table) => table.std_for(size_mb),
            None => self.noise_std,
        }
    }
}

fn check_size(size_mb: f64) -> Result<()> {
    if size_mb > 0.0 && size_mb.is_finite() {
        Ok(())
    } else {
        Err(Error::Input(format!("image size must be positive, got {size_mb}")))
    }
}

/// Mean duration in seconds for an image of `size_mb`.
pub fn predict_mean(model: &ExecTimeModel, size_mb: f64) -> Result<f64> {
    check_size(size_mb)?;
    Ok(model.alpha * size_mb + model.beta)
}

/// Draws one noisy duration, floored at [`DURATION_FLOOR_S`].
pub fn sample_duration<R: Rng + ?Sized>(
    model: &ExecTimeModel,
    size_mb: f64,
    rng: &mut R,
) -> Result<f64> {
    let mean = predict_mean(model, size_mb)?;
    let std = model.noise_std_at(size_mb);
    if std == 0.0 {
        return Ok(mean.max(DURATION_FLOOR_S));
    }
    let noise = Normal::new(0.0, std)
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?
        .sample(rng);
    Ok((mean + noise).max(DURATION_FLOOR_S))
}

/// Models for each (design, task kind) pair.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelRegistry(pub BTreeMap<DesignId, BTreeMap<TaskKind, ExecTimeModel>>);

impl ModelRegistry {
    /// The six fitted parameter sets of the reference experiments, with the
    /// noise set to each fit's standard error.
    pub fn reference() -> Self {
        let mut reg = ModelRegistry::default();
        reg.insert(DesignId::D1, TaskKind::Tiling, ExecTimeModel::new(1.92e-2, 60.49, 1.93));
        reg.insert(DesignId::D1, TaskKind::Counting, ExecTimeModel::new(5.21e-2, 128.53, 5.73));
        reg.insert(DesignId::D2, TaskKind::Tiling, ExecTimeModel::new(3.174e-2, 64.81, 5.50));
        reg.insert(DesignId::D2, TaskKind::Counting, ExecTimeModel::new(4.71e-2, 95.83, 5.96));
        reg.insert(DesignId::D2A, TaskKind::Tiling, ExecTimeModel::new(2.74e-2, 49.03, 3.89));
        reg.insert(DesignId::D2A, TaskKind::Counting, ExecTimeModel::new(4.8e-2, 87.36, 6.19));
        reg
    }

    pub fn insert(&mut self, design: DesignId, kind: TaskKind, model: ExecTimeModel) {
        self.0.entry(design).or_default().insert(kind, model);
    }

    pub fn get(&self, design: DesignId, kind: TaskKind) -> Result<&ExecTimeModel> {
        self.0
            .get(&design)
            .and_then(|m| m.get(&kind))
            .ok_or_else(|| Error::Config(format!("no {kind} model registered for design {design}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (DesignId, TaskKind, &ExecTimeModel)> {
        self.0
            .iter()
            .flat_map(|(d, m)| m.iter().map(move |(k, model)| (*d, *k, model)))
    }

    pub fn validate(&self) -> Result<()> {
        self.iter().try_for_each(|(_, _, m)| m.validate())
    }

    pub fn without_noise(&self) -> Self {
        let mut reg = ModelRegistry::default();
        for (d, k, m) in self.iter() {
            reg.insert(d, k, m.noiseless());
        }
        reg
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reg: ModelRegistry = crate::io::read_json(path)?;
        reg.validate()?;
        Ok(reg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }
}

/// Equal-width size bins over `[lo_mb, hi_mb]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub lo_mb: f64,
    pub hi_mb: f64,
    pub width_mb: f64,
}

impl Default for BinSpec {
    /// 125 MB bins over [50, 2800] MB: 22 bins.
    fn default() -> Self {
        BinSpec {
            lo_mb: 50.0,
            hi_mb: 2800.0,
            width_mb: 125.0,
        }
    }
}

impl BinSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.width_mb > 0.0 && self.width_mb.is_finite()) {
            return Err(Error::Input(format!("bin width must be positive, got {}", self.width_mb)));
        }
        if self.hi_mb.is_nan() || self.lo_mb.is_nan() || self.hi_mb <= self.lo_mb {
            return Err(Error::Input(format!(
                "bin range [{}, {}] is empty",
                self.lo_mb, self.hi_mb
            )));
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        ((self.hi_mb - self.lo_mb) / self.width_mb).ceil() as usize
    }

    pub fn edges(&self, index: usize) -> (f64, f64) {
        let lo = self.lo_mb + index as f64 * self.width_mb;
        (lo, lo + self.width_mb)
    }

    /// Zero-based bin of `size_mb`; lower edges inclusive, and the last bin
    /// also includes `hi_mb`. `None` outside the range.
    pub fn index_of(&self, size_mb: f64) -> Option<usize> {
        if !(size_mb >= self.lo_mb && size_mb <= self.hi_mb) {
            return None;
        }
        let k = ((size_mb - self.lo_mb) / self.width_mb).floor() as usize;
        Some(k.min(self.count() - 1))
    }
}

/// Summary statistics of one bin. `std` uses the n - 1 convention (0 for a
/// single sample); quartiles interpolate linearly between order statistics;
/// whiskers are the most extreme samples within 1.5 IQR of the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeBin {
    /// One-based bin number.
    pub number: usize,
    pub lower_mb: f64,
    pub upper_mb: f64,
    pub samples: Vec<f64>,
    pub stats: Option<BinStats>,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn describe(samples: &[f64]) -> Option<BinStats> {
    if samples.is_empty() {
        return None;
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let whisker_lo = sorted
        .iter()
        .copied()
        .find(|s| *s >= q1 - 1.5 * iqr)
        .unwrap_or(q1);
    let whisker_hi = sorted
        .iter()
        .rev()
        .copied()
        .find(|s| *s <= q3 + 1.5 * iqr)
        .unwrap_or(q3);
    Some(BinStats {
        n,
        mean,
        std,
        q1,
        median,
        q3,
        whisker_lo,
        whisker_hi,
    })
}

/// Groups `(size_mb, duration_s)` pairs into size bins and summarises each.
/// Empty bins are kept with `stats: None`.
pub fn bin_by_size(pairs: &[(f64, f64)], bins: &BinSpec) -> Result<Vec<SizeBin>> {
    bins.validate()?;
    let mut out: Vec<SizeBin> = (0..bins.count())
        .map(|k| {
            let (lower_mb, upper_mb) = bins.edges(k);
            SizeBin {
                number: k + 1,
                lower_mb,
                upper_mb,
                samples: Vec::new(),
                stats: None,
            }
        })
        .collect();
    for (i, &(size, duration)) in pairs.iter().enumerate() {
        let k = bins.index_of(size).ok_or_else(|| {
            Error::Input(format!(
                "pair #{i} ({size}, {duration}) lies outside [{}, {}]",
                bins.lo_mb, bins.hi_mb
            ))
        })?;
        out[k].samples.push(duration);
    }
    for bin in &mut out {
        bin.stats = describe(&bin.samples);
    }
    Ok(out)
}

/// Renders bins as CSV `bin_lo,bin_hi,n,mean,std,q1,median,q3`; statistics
/// of empty bins are left blank.
pub fn bins_csv(bins: &[SizeBin]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["bin_lo", "bin_hi", "n", "mean", "std", "q1", "median", "q3"])?;
    for bin in bins {
        let mut row = vec![bin.lower_mb.to_string(), bin.upper_mb.to_string()];
        match &bin.stats {
            Some(s) => {
                row.push(s.n.to_string());
                row.extend([s.mean, s.std, s.q1, s.median, s.q3].iter().map(f64::to_string));
            }
            None => {
                row.push("0".into());
                row.extend(std::iter::repeat_n(String::new(), 5));
            }
        }
        wtr.write_record(&row)?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::Input(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Keeps the pairs whose size falls in one-based bins `first..=last`.
pub fn restrict_to_representative_bins(
    pairs: &[(f64, f64)],
    bins: &BinSpec,
    first: usize,
    last: usize,
) -> Result<Vec<(f64, f64)>> {
    bins.validate()?;
    if first == 0 || first > last || last > bins.count() {
        return Err(Error::Input(format!(
            "bin range [{first}, {last}] is not within 1..={}",
            bins.count()
        )));
    }
    Ok(pairs
        .iter()
        .copied()
        .filter(|(size, _)| {
            bins.index_of(*size)
                .is_some_and(|k| (first - 1..last).contains(&k))
        })
        .collect())
}

/// Bins that carry the linear trend in the reference data (4 through 18 of
/// the default 22).
pub const REPRESENTATIVE_BINS: (usize, usize) = (4, 18);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub alpha: f64,
    pub beta: f64,
    pub r_squared: f64,
    /// Standard error of the estimate, `sqrt(SSE / (n - 2))`.
    pub s_error: f64,
    pub n_points: usize,
}

impl FitResult {
    pub fn as_model(&self) -> ExecTimeModel {
        ExecTimeModel::new(self.alpha, self.beta, self.s_error)
    }
}

/// Ordinary least-squares line through `(size_mb, duration_s)` pairs.
pub fn fit_linear(pairs: &[(f64, f64)]) -> Result<FitResult> {
    let n = pairs.len();
    if n < 3 {
        return Err(Error::Fit(format!("need at least 3 points, got {n}")));
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Input("non-finite value in fitting data".into()));
    }
    let nf = n as f64;
    let x_mean = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let y_mean = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (sxx, sxy, syy) = pairs.iter().fold((0.0, 0.0, 0.0), |(sxx, sxy, syy), (x, y)| {
        let dx = x - x_mean;
        let dy = y - y_mean;
        (sxx + dx * dx, sxy + dx * dy, syy + dy * dy)
    });
    if sxx == 0.0 {
        return Err(Error::Fit("all sizes are equal; slope is undefined".into()));
    }
    let alpha = sxy / sxx;
    let beta = y_mean - alpha * x_mean;
    let sse: f64 = pairs
        .iter()
        .map(|(x, y)| (y - (alpha * x + beta)).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(FitResult {
        alpha,
        beta,
        r_squared,
        s_error: (sse / (nf - 2.0)).sqrt(),
        n_points: n,
    })
}

/// Parses `size_mb,duration_s` CSV (header required).
pub fn parse_pairs<R: std::io::Read>(reader: R) -> Result<Vec<(f64, f64)>> {
    #[derive(Deserialize)]
    struct Row {
        size_mb: f64,
        duration_s: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize::<Row>()
        .enumerate()
        .map(|(i, row)| {
            row.map(|r| (r.size_mb, r.duration_s))
                .map_err(|e| Error::Input(format!("pairs row {}: {e}", i + 1)))
        })
        .collect()
}

pub fn pairs_csv(pairs: &[(f64, f64)]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["size_mb", "duration_s"])?;
    for (x, y) in pairs {
        wtr.write_record([x.to_string(), y.to_string()])?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::Input(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

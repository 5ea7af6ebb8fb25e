//! Image datasets: synthetic generation and CSV manifests.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Identifier of one input image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub String);

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ImageId {
    fn from(s: &str) -> Self {
        ImageId(s.to_owned())
    }
}

/// One input image. Size is the only covariate of the execution-time model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSpec {
    pub id: ImageId,
    pub size_mb: f64,
}

impl ImageSpec {
    pub fn new(id: impl Into<String>, size_mb: f64) -> Self {
        ImageSpec {
            id: ImageId(id.into()),
            size_mb,
        }
    }
}

/// Parameters of a synthetic dataset: normally distributed sizes truncated
/// to `[min_mb, max_mb]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub count: usize,
    pub mean_mb: f64,
    pub std_mb: f64,
    pub min_mb: f64,
    pub max_mb: f64,
    pub seed: u64,
}

impl WorkloadSpec {
    /// Size distribution of the 3,097-image reference dataset, scaled down to
    /// `count` images.
    pub fn reference(count: usize, seed: u64) -> Self {
        WorkloadSpec {
            count,
            mean_mb: 1304.85,
            std_mb: 512.68,
            min_mb: 50.0,
            max_mb: 2770.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.mean_mb, self.std_mb, self.min_mb, self.max_mb]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("workload parameters must be finite".into()));
        }
        if self.std_mb <= 0.0 {
            return Err(Error::Config(format!(
                "std_mb must be positive, got {}",
                self.std_mb
            )));
        }
        if self.min_mb <= 0.0 {
            return Err(Error::Config(format!(
                "min_mb must be positive, got {}",
                self.min_mb
            )));
        }
        if self.max_mb <= self.min_mb {
            return Err(Error::Config(format!(
                "max_mb ({}) must exceed min_mb ({})",
                self.max_mb, self.min_mb
            )));
        }
        Ok(())
    }
}

/// Upper bound on rejected draws per image before the spec is declared
/// unsatisfiable (e.g. a mean many deviations outside the bounds).
const MAX_REJECTIONS: usize = 1_000_000;

/// Draws `spec.count` image sizes from `N(mean, std)`, redrawing any sample
/// that falls outside `[min_mb, max_mb]`.
pub fn generate_workload(spec: &WorkloadSpec) -> Result<Vec<ImageSpec>> {
    spec.validate()?;
    let normal = Normal::new(spec.mean_mb, spec.std_mb)
        .map_err(|e| Error::Config(format!("size distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.count.max(1).to_string().len().max(5);
    let mut images = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let mut attempts = 0;
        let size = loop {
            let x = normal.sample(&mut rng);
            if x >= spec.min_mb && x <= spec.max_mb {
                break x;
            }
            attempts += 1;
            if attempts >= MAX_REJECTIONS {
                return Err(Error::Config(format!(
                    "could not draw a size in [{}, {}] from N({}, {}) after {MAX_REJECTIONS} attempts",
                    spec.min_mb, spec.max_mb, spec.mean_mb, spec.std_mb
                )));
            }
        };
        images.push(ImageSpec::new(format!("img{:0width$}", i + 1), size));
    }
    Ok(images)
}

#[derive(Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    size_mb: f64,
}

/// Checks image ids are unique and sizes positive.
pub fn validate_images(images: &[ImageSpec]) -> Result<()> {
    let mut seen = HashSet::with_capacity(images.len());
    for img in images {
        if !(img.size_mb > 0.0 && img.size_mb.is_finite()) {
            return Err(Error::Input(format!(
                "image {} has non-positive size {}",
                img.id, img.size_mb
            )));
        }
        if !seen.insert(&img.id) {
            return Err(Error::Input(format!("duplicate image id {}", img.id)));
        }
    }
    Ok(())
}

/// Parses a manifest (`id,size_mb` CSV with header) from any reader.
pub fn parse_manifest<R: std::io::Read>(reader: R) -> Result<Vec<ImageSpec>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if !headers.is_empty() && (headers.get(0) != Some("id") || headers.get(1) != Some("size_mb")) {
        return Err(Error::Input(format!(
            "manifest header must be `id,size_mb`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut images = Vec::new();
    for (line, row) in rdr.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(|e| Error::Input(format!("manifest row {}: {e}", line + 1)))?;
        images.push(ImageSpec::new(row.id, row.size_mb));
    }
    validate_images(&images)?;
    Ok(images)
}

/// Loads a workload manifest, preserving file order.
pub fn load_workload(path: &Path) -> Result<Vec<ImageSpec>> {
    let text = crate::io::read_to_string(path)?;
    parse_manifest(text.as_bytes())
}

pub fn manifest_bytes(images: &[ImageSpec]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["id", "size_mb"])?;
    for img in images {
        wtr.write_record([img.id.0.as_str(), &img.size_mb.to_string()])?;
    }
    wtr.into_inner()
        .map_err(|e| Error::Input(format!("manifest buffer: {e}")))
}

pub fn write_manifest(path: &Path, images: &[ImageSpec]) -> Result<()> {
    crate::io::write_atomic(path, &manifest_bytes(images)?)
}

/// Content hash of a workload (ids, sizes and order), used to check that
/// reports being compared ran on the same data.
pub fn fingerprint(images: &[ImageSpec]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for img in images {
        hasher.update(img.id.0.as_bytes());
        hasher.update(b"\0");
        hasher.update(img.size_mb.to_bits().to_le_bytes());
    }
    hasher
        .finalize()
        .iter()
        .take(16)
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn total_mb(images: &[ImageSpec]) -> f64 {
    images.iter().map(|i| i.size_mb).sum()
}

//! Dataset manifests, splitting, batching and preprocessing with a sidecar
//! cache.
//!
//! A dataset is a directory holding `manifest.json`, one spec JSON per
//! category and the labeled PNGs. Paths inside the manifest are relative to
//! the manifest's directory.
//!
//! ```json
//! {
//!   "specs": { "lamp": "lamp/lamp.json" },
//!   "records": [ { "path": "lamp/lamp_0000.png", "category": "lamp", "split": "train" } ]
//! }
//! ```

mod cache;
mod synth;

pub use cache::{read_cache, write_cache, CACHE_MAGIC, CACHE_VERSION};
pub use synth::{gen_synthetic, SynthConfig, Template};

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sketchio::{preprocess, CategorySpec, LabeledPointSet};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub path: PathBuf,
    pub category: String,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    /// Spec JSON path per category.
    pub specs: BTreeMap<String, PathBuf>,
    pub records: Vec<Record>,
}

impl Manifest {
    /// Checks that paths are unique and every category has a spec.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(&r.path) {
                return Err(Error::InvalidManifest(format!(
                    "duplicate path {}",
                    r.path.display()
                )));
            }
            if !self.specs.contains_key(&r.category) {
                return Err(Error::InvalidManifest(format!(
                    "{} has category {:?} without a spec",
                    r.path.display(),
                    r.category
                )));
            }
        }
        Ok(())
    }

    /// Reads `dir/manifest.json`, or the file itself if `path` is a file.
    pub fn load(path: &Path) -> Result<Self> {
        let file = manifest_path(path);
        let text = std::fs::read_to_string(&file)
            .map_err(|e| Error::io(format!("reading {}", file.display()), e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json {
            context: file.display().to_string(),
            source: e,
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let file = manifest_path(path);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&file, text + "\n")
            .map_err(|e| Error::io(format!("writing {}", file.display()), e))
    }

    /// Category specs, resolved against the manifest's directory.
    pub fn load_specs(&self, root: &Path) -> Result<BTreeMap<String, CategorySpec>> {
        self.specs
            .iter()
            .map(|(cat, p)| {
                let spec = CategorySpec::load(&root.join(p))?;
                if spec.category() != cat {
                    return Err(Error::InvalidManifest(format!(
                        "spec {} is for {:?}, manifest says {cat:?}",
                        p.display(),
                        spec.category()
                    )));
                }
                Ok((cat.clone(), spec))
            })
            .collect()
    }

    pub fn categories(&self) -> Vec<&str> {
        self.specs.keys().map(String::as_str).collect()
    }

    /// Adds or replaces everything belonging to `other`'s categories.
    pub fn merge(&mut self, other: Manifest) {
        self.records
            .retain(|r| !other.specs.contains_key(&r.category));
        self.specs.extend(other.specs);
        self.records.extend(other.records);
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Directory that manifest paths are relative to.
pub fn dataset_root(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

/// Seeded per-category split: `round(fraction * n)` records of each category
/// go to train, the rest to test. Record order is preserved.
pub fn split(manifest: &Manifest, train_fraction: f64, seed: u64) -> Result<Manifest> {
    if manifest.records.is_empty() {
        return Err(Error::EmptyManifest);
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidManifest(format!(
            "train fraction {train_fraction} not in (0, 1)"
        )));
    }
    let mut by_cat: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        by_cat.entry(&r.category).or_default().push(i);
    }
    let mut out = manifest.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for idx in by_cat.values_mut() {
        idx.shuffle(&mut rng);
        let n_train = (train_fraction * idx.len() as f64).round() as usize;
        for (k, &i) in idx.iter().enumerate() {
            out.records[i].split = if k < n_train {
                Split::Train
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}

/// Shuffled index chunks for one epoch. The permutation is drawn from
/// stream `epoch` of a generator seeded with `seed`; the last chunk may be
/// short.
pub fn batches(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// A preprocessed labeled sketch.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub path: PathBuf,
    pub category: String,
    pub num_classes: usize,
    pub points: LabeledPointSet,
}

/// Which records [`load_samples`] reads.
#[derive(Clone, Debug, Default)]
pub struct Selection<'a> {
    pub split: Option<Split>,
    pub category: Option<&'a str>,
}

/// Preprocessing parameters. With `use_cache`, point sets are read from and
/// written to `<image>.<n_points>.pts` next to each image.
#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    pub canvas: usize,
    pub n_points: usize,
    pub use_cache: bool,
}

/// Loads and preprocesses the selected records in manifest order.
pub fn load_samples(
    root: &Path,
    manifest: &Manifest,
    specs: &BTreeMap<String, CategorySpec>,
    sel: &Selection,
    opts: LoadOptions,
) -> Result<Vec<Sample>> {
    manifest
        .records
        .iter()
        .filter(|r| sel.split.is_none_or(|s| s == r.split))
        .filter(|r| sel.category.is_none_or(|c| c == r.category))
        .map(|r| {
            let spec = specs
                .get(&r.category)
                .ok_or_else(|| Error::InvalidManifest(format!("no spec for {:?}", r.category)))?;
            let path = root.join(&r.path);
            let points = load_points(&path, spec, opts)?;
            Ok(Sample {
                path,
                category: r.category.clone(),
                num_classes: spec.num_classes(),
                points,
            })
        })
        .collect()
}

/// Preprocesses one image, going through the sidecar cache when enabled.
pub fn load_points(path: &Path, spec: &CategorySpec, opts: LoadOptions) -> Result<LabeledPointSet> {
    if !opts.use_cache {
        return Ok(preprocess(path, spec, opts.canvas, opts.n_points)?.1);
    }
    let image_bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let key = cache::CacheKey::new(&image_bytes, spec, opts.canvas, opts.n_points);
    let sidecar = cache::sidecar_path(path, opts.n_points);
    if let Some(pts) = read_cache(&sidecar, &key)? {
        return Ok(pts);
    }
    let pts = preprocess(path, spec, opts.canvas, opts.n_points)?.1;
    write_cache(&sidecar, &key, &pts)?;
    Ok(pts)
}

#[cfg(test)]
mod tests;

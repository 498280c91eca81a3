//! Synthetic feature stores with planted category and attribute structure.
//!
//! Each row for combination `(c, a)` is the category prototype in the
//! category block, the attribute prototype in the attribute block and zeros
//! in the noise block, plus isotropic Gaussian noise over every dimension,
//! then L2-normalized. Prototypes are uniform on the unit sphere of their
//! block.

use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::store::{FeatureStore, Label};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n_categories: usize,
    pub n_attributes: usize,
    pub per_combo: usize,
    pub dim_category: usize,
    pub dim_attribute: usize,
    pub dim_noise: usize,
    pub noise_sigma: f64,
    /// Attributes are split into this many contiguous families
    /// (e.g. colour-like and action-like).
    pub n_families: usize,
    /// `(category, attribute)` combinations left out of the store.
    pub dropped: Vec<(u32, u32)>,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            n_categories: 4,
            n_attributes: 4,
            per_combo: 20,
            dim_category: 16,
            dim_attribute: 16,
            dim_noise: 32,
            noise_sigma: 0.15,
            n_families: 2,
            dropped: Vec::new(),
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn dim(&self) -> usize {
        self.dim_category + self.dim_attribute + self.dim_noise
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_categories < 2 {
            return Err(Error::param("n_categories", "must be at least 2"));
        }
        if self.n_attributes < 2 {
            return Err(Error::param("n_attributes", "must be at least 2"));
        }
        if self.per_combo == 0 {
            return Err(Error::param("per_combo", "must be positive"));
        }
        if self.dim_category == 0 {
            return Err(Error::param("dim_category", "must be positive"));
        }
        if self.dim_attribute == 0 {
            return Err(Error::param("dim_attribute", "must be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::param("noise_sigma", "must be finite and >= 0"));
        }
        if self.n_families == 0 || self.n_families > self.n_attributes {
            return Err(Error::param(
                "n_families",
                "must be between 1 and n_attributes",
            ));
        }
        for &(c, a) in &self.dropped {
            if c as usize >= self.n_categories || a as usize >= self.n_attributes {
                return Err(Error::param(
                    "dropped",
                    format!("combination ({c}, {a}) is out of range"),
                ));
            }
        }
        Ok(())
    }
}

/// Dimension ranges of each block plus the attribute family partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMap {
    pub category: Range<usize>,
    pub attribute: Range<usize>,
    pub noise: Range<usize>,
    pub families: Vec<Vec<u32>>,
}

impl GroupMap {
    pub fn family_of(&self, attribute: u32) -> Option<usize> {
        self.families.iter().position(|f| f.contains(&attribute))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("group map serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

fn unit_gaussian<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn generate(spec: &GenSpec) -> Result<(FeatureStore, GroupMap)> {
    spec.validate()?;
    let dim = spec.dim();
    let cat_block = 0..spec.dim_category;
    let attr_block = spec.dim_category..spec.dim_category + spec.dim_attribute;
    let noise_block = attr_block.end..dim;

    let mut proto_rng = rng::stream(spec.seed, Stream::Prototypes);
    let cat_protos: Vec<Vec<f64>> = (0..spec.n_categories)
        .map(|_| unit_gaussian(&mut proto_rng, spec.dim_category))
        .collect();
    let attr_protos: Vec<Vec<f64>> = (0..spec.n_attributes)
        .map(|_| unit_gaussian(&mut proto_rng, spec.dim_attribute))
        .collect();

    let mut combos = Vec::new();
    for c in 0..spec.n_categories as u32 {
        for a in 0..spec.n_attributes as u32 {
            if !spec.dropped.contains(&(c, a)) {
                combos.push((c, a));
            }
        }
    }

    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for &(c, a) in &combos {
        for i in 0..spec.per_combo {
            let row_index = rows.len();
            let mut noise = rng::row_stream(spec.seed, row_index);
            let mut row = vec![0.0; dim];
            row[cat_block.clone()].copy_from_slice(&cat_protos[c as usize]);
            row[attr_block.clone()].copy_from_slice(&attr_protos[a as usize]);
            if spec.noise_sigma > 0.0 {
                for v in row.iter_mut() {
                    let z: f64 = noise.sample(StandardNormal);
                    *v += spec.noise_sigma * z;
                }
            }
            ids.push(format!("c{c}_a{a}_{i:03}"));
            rows.push(row);
            labels.push(Label {
                category: c,
                attribute: a,
            });
        }
    }

    let store = FeatureStore::from_rows(ids, rows)?.with_labels(labels)?;
    let families = family_partition(spec.n_attributes, spec.n_families);
    Ok((
        store,
        GroupMap {
            category: cat_block,
            attribute: attr_block,
            noise: noise_block,
            families,
        },
    ))
}

/// Contiguous, near-equal split of `0..n_attributes`.
fn family_partition(n_attributes: usize, n_families: usize) -> Vec<Vec<u32>> {
    let base = n_attributes / n_families;
    let extra = n_attributes % n_families;
    let mut out = Vec::with_capacity(n_families);
    let mut next = 0u32;
    for f in 0..n_families {
        let size = base + usize::from(f < extra);
        out.push((next..next + size as u32).collect());
        next += size as u32;
    }
    out
}

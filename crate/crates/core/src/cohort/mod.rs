//! Synthetic labeled coronary trees with matching volumes, the main-branch
//! removal attack, and the on-disk cohort manifest.

mod raster;
mod template;

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use raster::{rasterize_volume, ClipReport, RasterParams};
pub use template::{generate_tree, rule_violations, BranchInfo, BranchRule, GeneratedTree, TreeTemplate};

use crate::condition::{ScalarType, Volume};
use crate::error::{Error, Result};
use crate::geometry::{CenterlineTree, Vec3};
use crate::labels::AnatomicalLabel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub trees: usize,
    pub seed: u64,
    pub raster: RasterParams,
    pub template: TreeTemplate,
    /// Fraction of trees losing a main branch in the attacked copy.
    pub attack_fraction: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            trees: 200,
            seed: 0,
            raster: RasterParams::default(),
            template: TreeTemplate::default(),
            attack_fraction: 0.2,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 {
            return Err(Error::Config("cohort needs at least one tree".into()));
        }
        if !(0.0..=1.0).contains(&self.attack_fraction) {
            return Err(Error::Config(format!(
                "attack fraction {} outside [0, 1]",
                self.attack_fraction
            )));
        }
        if !(self.raster.spacing > 0.0) || self.raster.dims.contains(&0) {
            return Err(Error::Config("volume dims and spacing must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CohortTree {
    pub id: String,
    pub tree: GeneratedTree,
    pub volume: Volume,
    pub clip: ClipReport,
    pub attacked: bool,
    /// Branch labels deleted by the attack.
    pub removed: Vec<AnatomicalLabel>,
}

impl CohortTree {
    pub fn labels(&self) -> Vec<AnatomicalLabel> {
        self.tree.branches.iter().map(|b| b.label).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub spec: CohortSpec,
    pub trees: Vec<CohortTree>,
}

fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Generates tree `index` of a cohort; a pure function of the spec.
pub fn generate_cohort_tree(spec: &CohortSpec, index: usize) -> Result<CohortTree> {
    let mut rng = tree_rng(spec.seed, index);
    let [nx, ny, nz] = spec.raster.dims;
    let center = Vec3::new(nx as f64, ny as f64, nz as f64) * 0.5 - Vec3::new(0.5, 0.5, 0.5);
    let tree = generate_tree(&mut rng, &spec.template, center);
    let (volume, clip) = rasterize_volume(&tree, &spec.raster, &mut rng)?;
    Ok(CohortTree {
        id: format!("tree{index:04}"),
        tree,
        volume,
        clip,
        attacked: false,
        removed: Vec::new(),
    })
}

pub fn generate_cohort(spec: &CohortSpec) -> Result<Cohort> {
    spec.validate()?;
    let trees = (0..spec.trees)
        .map(|i| generate_cohort_tree(spec, i))
        .collect::<Result<_>>()?;
    Ok(Cohort {
        spec: spec.clone(),
        trees,
    })
}

/// Deletes branch `k`; its children become roots.
fn remove_branch(tree: &mut GeneratedTree, k: usize) {
    tree.centerlines.branches.remove(k);
    tree.branches.remove(k);
    for b in &mut tree.branches {
        b.parent = match b.parent {
            Some(p) if p == k => None,
            Some(p) if p > k => Some(p - 1),
            other => other,
        };
    }
}

/// Picks `round(fraction · n)` trees uniformly and removes either the LM or
/// the RCA centerline from each, chosen with equal odds. Volumes and the
/// labels of the remaining branches are untouched.
pub fn apply_data_attack(cohort: &Cohort, fraction: f64, seed: u64) -> Result<Cohort> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("attack fraction {fraction} outside [0, 1]")));
    }
    let mut out = cohort.clone();
    let n = out.trees.len();
    let count = (fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let tree = &mut out.trees[i];
        let first = if rng.random_bool(0.5) {
            AnatomicalLabel::Lm
        } else {
            AnatomicalLabel::Rca
        };
        let second = if first == AnatomicalLabel::Lm {
            AnatomicalLabel::Rca
        } else {
            AnatomicalLabel::Lm
        };
        let target = [first, second]
            .into_iter()
            .find(|l| tree.tree.branches.iter().any(|b| b.label == *l));
        if let Some(label) = target {
            let k = tree
                .tree
                .branches
                .iter()
                .position(|b| b.label == label)
                .expect("present");
            remove_branch(&mut tree.tree, k);
            tree.attacked = true;
            tree.removed.push(label);
        }
    }
    out.spec.attack_fraction = fraction;
    Ok(out)
}

pub const COHORT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestTree {
    pub id: String,
    /// Paths relative to the manifest directory.
    pub centerline: String,
    pub volume: String,
    pub labels: Vec<AnatomicalLabel>,
    pub parents: Vec<Option<usize>>,
    pub radii: Vec<f64>,
    pub attacked: bool,
    pub removed: Vec<AnatomicalLabel>,
    pub clipped_points: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub version: u32,
    pub spec: CohortSpec,
    pub trees: Vec<ManifestTree>,
}

pub const MANIFEST_NAME: &str = "cohort.json";

impl Cohort {
    /// Writes `cohort.json` plus one centerline file and one volume per tree
    /// under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let tree_dir = dir.join("trees");
        fs::create_dir_all(&tree_dir).map_err(|e| Error::io(&tree_dir, e))?;
        let mut entries = Vec::with_capacity(self.trees.len());
        for t in &self.trees {
            let centerline = format!("trees/{}.centerline.json", t.id);
            let volume = format!("trees/{}.volume.json", t.id);
            t.tree.centerlines.save(&dir.join(&centerline))?;
            t.volume.save(&dir.join(&volume), ScalarType::F32)?;
            entries.push(ManifestTree {
                id: t.id.clone(),
                centerline,
                volume,
                labels: t.labels(),
                parents: t.tree.branches.iter().map(|b| b.parent).collect(),
                radii: t.tree.branches.iter().map(|b| b.radius).collect(),
                attacked: t.attacked,
                removed: t.removed.clone(),
                clipped_points: t.clip.clipped_points.clone(),
            });
        }
        let manifest = CohortManifest {
            version: COHORT_FORMAT_VERSION,
            spec: self.spec.clone(),
            trees: entries,
        };
        let path = dir.join(MANIFEST_NAME);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    /// Reads a cohort written by [`Cohort::save`]; `path` is the manifest or
    /// its directory.
    pub fn load(path: &Path) -> Result<Cohort> {
        let manifest_path = if path.is_dir() {
            path.join(MANIFEST_NAME)
        } else {
            path.to_path_buf()
        };
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: CohortManifest = serde_json::from_str(&text)?;
        if manifest.version != COHORT_FORMAT_VERSION {
            return Err(Error::format(
                &manifest_path,
                format!("unsupported cohort version {}", manifest.version),
            ));
        }
        let mut trees = Vec::with_capacity(manifest.trees.len());
        for e in manifest.trees {
            let centerlines = CenterlineTree::load(&dir.join(&e.centerline))?;
            if centerlines.branches.len() != e.labels.len()
                || e.parents.len() != e.labels.len()
                || e.radii.len() != e.labels.len()
            {
                return Err(Error::format(
                    &manifest_path,
                    format!("tree {} has inconsistent branch metadata", e.id),
                ));
            }
            let branches = e
                .labels
                .iter()
                .zip(&e.parents)
                .zip(&e.radii)
                .map(|((&label, &parent), &radius)| BranchInfo {
                    label,
                    parent,
                    radius,
                })
                .collect();
            trees.push(CohortTree {
                id: e.id,
                tree: GeneratedTree {
                    centerlines,
                    branches,
                },
                volume: Volume::load(&dir.join(&e.volume))?,
                clip: ClipReport {
                    clipped_points: e.clipped_points,
                },
                attacked: e.attacked,
                removed: e.removed,
            });
        }
        Ok(Cohort {
            spec: manifest.spec,
            trees,
        })
    }
}

//! Synthetic datasets and point-cloud files.
//!
//! A dataset lives under `<root>/<family>/` with one PLY per cloud at
//! `<split>/<index>.ply` and a `manifest.json` describing every item.

pub mod ply;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud3;
use crate::error::{Error, Result};
use crate::numeric::Scalar;

pub use ply::{read_ply, write_ply, PlyCloud};
pub use synth::{gen_scene, gen_torus, gen_torus_raw, ObjectSpec, SceneSpec, Shape, TorusSpec};

pub const MANIFEST_FORMAT: &str = "tearnet-dataset";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Torus,
    Playground,
}

impl Family {
    pub fn dir_name(self) -> &'static str {
        match self {
            Family::Torus => "torus",
            Family::Playground => "playground",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// What to generate. Named presets cover the shipped experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    pub family: Family,
    pub train: usize,
    pub test: usize,
    pub points: usize,
    /// Playground dimension K (playground family only).
    #[serde(default)]
    pub playground: usize,
    /// Object counts drawn uniformly from this inclusive range.
    #[serde(default)]
    pub min_objects: usize,
    #[serde(default)]
    pub max_objects: usize,
}

impl DatasetConfig {
    /// 300 tori, genus balanced over {1, 2, 3}.
    pub fn torus() -> Self {
        Self {
            name: "torus".into(),
            family: Family::Torus,
            train: 300,
            test: 0,
            points: 2048,
            playground: 0,
            min_objects: 0,
            max_objects: 0,
        }
    }

    /// 16 tori for overfitting runs.
    pub fn torus_overfit() -> Self {
        Self {
            name: "torus-overfit".into(),
            train: 16,
            ..Self::torus()
        }
    }

    /// 3 x 3 playground, 1 to 9 objects, 300 train / 60 test scenes.
    pub fn kimo3_mini() -> Self {
        Self {
            name: "kimo3-mini".into(),
            family: Family::Playground,
            train: 300,
            test: 60,
            points: 2048,
            playground: 3,
            min_objects: 1,
            max_objects: 9,
        }
    }

    /// 2 x 2 playground with one or two objects, for overfitting.
    pub fn pairs() -> Self {
        Self {
            name: "pairs".into(),
            train: 16,
            test: 0,
            playground: 2,
            min_objects: 1,
            max_objects: 2,
            ..Self::kimo3_mini()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "torus" => Ok(Self::torus()),
            "torus-overfit" => Ok(Self::torus_overfit()),
            "kimo3-mini" => Ok(Self::kimo3_mini()),
            "pairs" => Ok(Self::pairs()),
            other => Err(Error::invalid(format!(
                "unknown dataset preset `{other}` (known: torus, torus-overfit, kimo3-mini, pairs)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points == 0 {
            return Err(Error::invalid("clouds need at least one point"));
        }
        if self.family == Family::Playground {
            let cells = self.playground * self.playground;
            if self.min_objects == 0 || self.min_objects > self.max_objects || self.max_objects > cells {
                return Err(Error::invalid(format!(
                    "object range {}..={} does not fit a {}x{} playground",
                    self.min_objects, self.max_objects, self.playground, self.playground
                )));
            }
        }
        Ok(())
    }
}

/// Generator input for one cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ItemSpec {
    Torus(TorusSpec),
    Scene(SceneSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    /// Stable id across splits (`<split>-<index>`).
    pub id: String,
    pub split: Split,
    pub index: usize,
    /// Path relative to the manifest directory.
    pub path: String,
    pub spec: ItemSpec,
    /// Object count (scenes) or genus (tori).
    pub count: usize,
    /// Shape-presence flags, in [`Shape::ALL`] order (scenes only).
    #[serde(default)]
    pub presence: Vec<bool>,
}

/// Generation constants recorded for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub cell_width: f64,
    pub cell_fill: f64,
    pub scale_jitter: (f64, f64),
    pub torus_ring_radius: f64,
    pub torus_tube_radius: f64,
}

impl Default for Constants {
    fn default() -> Self {
        let t = TorusSpec::new(1, 1, 0);
        Self {
            cell_width: synth::CELL_WIDTH,
            cell_fill: synth::CELL_FILL,
            scale_jitter: synth::SCALE_JITTER,
            torus_ring_radius: t.ring_radius,
            torus_tube_radius: t.tube_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: DatasetConfig,
    pub seed: u64,
    pub constants: Constants,
    pub items: Vec<Item>,
}

impl Manifest {
    /// Item specs for `config` and `seed`, without touching the disk.
    pub fn plan(config: &DatasetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut items = Vec::with_capacity(config.train + config.test);
        for split in [Split::Train, Split::Test] {
            let total = match split {
                Split::Train => config.train,
                Split::Test => config.test,
            };
            // balanced labels, shuffled
            let labels: Vec<usize> = match config.family {
                Family::Torus => (0..total).map(|i| 1 + i % 3).collect(),
                Family::Playground => {
                    let span = config.max_objects - config.min_objects + 1;
                    (0..total).map(|i| config.min_objects + i % span).collect()
                }
            };
            let mut labels = labels;
            labels.shuffle(&mut rng);
            for (index, &count) in labels.iter().enumerate() {
                let item_seed: u64 = rng.gen();
                let spec = match config.family {
                    Family::Torus => ItemSpec::Torus(TorusSpec::new(count, config.points, item_seed)),
                    Family::Playground => ItemSpec::Scene(SceneSpec::random(
                        config.playground,
                        count,
                        config.points,
                        item_seed,
                    )?),
                };
                let presence = match &spec {
                    ItemSpec::Scene(s) => Shape::ALL.iter().map(|&sh| s.contains(sh)).collect(),
                    ItemSpec::Torus(_) => Vec::new(),
                };
                items.push(Item {
                    id: format!("{}-{index}", split.name()),
                    split,
                    index,
                    path: format!("{}/{index}.ply", split.name()),
                    spec,
                    count,
                    presence,
                });
            }
        }
        Ok(Self {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            config: config.clone(),
            seed,
            constants: Constants::default(),
            items,
        })
    }

    pub fn items(&self, split: Split) -> impl Iterator<Item = &Item> {
        self.items.iter().filter(move |i| i.split == split)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::Mismatch(format!(
                "{} is `{}` v{}, expected `{MANIFEST_FORMAT}` v{MANIFEST_VERSION}",
                path.display(),
                m.format,
                m.version
            )));
        }
        Ok(m)
    }
}

/// Generate the cloud (and per-point labels) for one item.
pub fn generate_item(item: &Item) -> Result<(PointCloud3<f64>, Vec<usize>)> {
    match &item.spec {
        ItemSpec::Torus(t) => {
            let c = gen_torus(t)?;
            let counts = synth::split_counts(t.points, t.genus);
            let labels = counts
                .iter()
                .enumerate()
                .flat_map(|(i, &n)| std::iter::repeat(i).take(n))
                .collect();
            Ok((c, labels))
        }
        ItemSpec::Scene(s) => gen_scene(s),
    }
}

/// Write every cloud of `config` under `<root>/<family>/` and then the
/// manifest. Returns the manifest path.
pub fn gen_dataset(root: &Path, config: &DatasetConfig, seed: u64) -> Result<PathBuf> {
    let manifest = Manifest::plan(config, seed)?;
    let dir = root.join(config.family.dir_name());
    for split in [Split::Train, Split::Test] {
        let d = dir.join(split.name());
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    manifest.items.par_iter().try_for_each(|item| -> Result<()> {
        let (cloud, labels) = generate_item(item)?;
        let labels: Vec<i64> = labels.into_iter().map(|l| l as i64).collect();
        write_ply(&dir.join(&item.path), &cloud, Some(("object", &labels)))
    })?;
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// A manifest plus the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub dir: PathBuf,
}

/// One loaded cloud.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub item: Item,
    pub cloud: PointCloud3<T>,
}

impl Dataset {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        let dir = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(Self { manifest, dir })
    }

    pub fn load<T: Scalar>(&self, split: Split) -> Result<Vec<Sample<T>>> {
        let items: Vec<&Item> = self.manifest.items(split).collect();
        items
            .par_iter()
            .map(|item| {
                let ply = read_ply::<T>(&self.dir.join(&item.path))?;
                if ply.cloud.len() != self.manifest.config.points {
                    return Err(Error::Mismatch(format!(
                        "{} holds {} points, manifest says {}",
                        item.path,
                        ply.cloud.len(),
                        self.manifest.config.points
                    )));
                }
                Ok(Sample {
                    item: (*item).clone(),
                    cloud: ply.cloud,
                })
            })
            .collect()
    }
}

//! Phantom datasets on disk: `train_000.spvol`, ... plus `manifest.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::RunConfig;
use crate::env::StartSampler;
use crate::error::{Error, Result};
use crate::geom::{TangentPoint, Vec3};
use crate::volume::{generate_phantom, load_volume, save_volume, Volume};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::config(format!("unknown split {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub split: Split,
    /// File name relative to the dataset directory.
    pub file: String,
    pub seed: u64,
}

/// Dataset index. `mean` and `std` are the per-axis mean and population
/// standard deviation of the training ground-truth tangent points.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub mean: Vec3,
    pub std: Vec3,
}

fn vec3_text(v: Vec3) -> String {
    format!("{:?},{:?},{:?}", v.x, v.y, v.z)
}

fn parse_vec3(s: &str) -> Result<Vec3> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(format!("bad vector {s:?}")))?;
    match parts[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => Err(Error::format(format!("bad vector {s:?}"))),
    }
}

impl Manifest {
    pub fn sampler(&self) -> StartSampler {
        StartSampler {
            mean: self.mean,
            std: self.std,
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# split file seed\n");
        let _ = writeln!(s, "mean = {}", vec3_text(self.mean));
        let _ = writeln!(s, "std = {}", vec3_text(self.std));
        for e in &self.entries {
            let _ = writeln!(s, "volume = {} {} {}", e.split.name(), e.file, e.seed);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (mut mean, mut std, mut entries) = (None, None, Vec::new());
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("bad manifest line {line:?}")))?;
            match k.trim() {
                "mean" => mean = Some(parse_vec3(v)?),
                "std" => std = Some(parse_vec3(v)?),
                "volume" => {
                    let f: Vec<&str> = v.split_whitespace().collect();
                    let [split, file, seed] = f[..] else {
                        return Err(Error::format(format!("bad volume line {line:?}")));
                    };
                    entries.push(ManifestEntry {
                        split: Split::parse(split).map_err(|e| Error::format(e.to_string()))?,
                        file: file.to_string(),
                        seed: seed.parse().map_err(|_| Error::format(format!("bad seed {seed:?}")))?,
                    });
                }
                other => return Err(Error::format(format!("unknown manifest key {other:?}"))),
            }
        }
        Ok(Manifest {
            entries,
            mean: mean.ok_or_else(|| Error::format("manifest lacks mean"))?,
            std: std.ok_or_else(|| Error::format("manifest lacks std"))?,
        })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        Manifest::from_text(&fs::read_to_string(dir.as_ref().join(MANIFEST_FILE))?)
    }
}

/// Loaded dataset split: volumes with their names.
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let manifest = Manifest::load(&dir)?;
        Ok(Dataset { dir, manifest })
    }

    /// Volumes of one split in manifest order, loaded in parallel.
    pub fn load(&self, split: Split) -> Result<Vec<(String, Volume)>> {
        let entries: Vec<&ManifestEntry> = self.manifest.split(split).collect();
        entries
            .par_iter()
            .map(|e| Ok((e.file.clone(), load_volume(self.dir.join(&e.file))?)))
            .collect()
    }
}

/// Generates every phantom of `cfg` into `cfg.out`. Phantom seeds are
/// drawn from a generator seeded with `cfg.seed`.
pub fn cmd_generate(cfg: &RunConfig) -> Result<Manifest> {
    if cfg.train_count == 0 {
        return Err(Error::config("train_count must be positive"));
    }
    cfg.phantom(0).validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries = Vec::new();
    for (split, n) in [
        (Split::Train, cfg.train_count),
        (Split::Val, cfg.val_count),
        (Split::Test, cfg.test_count),
    ] {
        for i in 0..n {
            entries.push(ManifestEntry {
                split,
                file: format!("{}_{i:03}.spvol", split.name()),
                seed: rng.gen(),
            });
        }
    }
    fs::create_dir_all(&cfg.out)?;
    let targets: Vec<(Split, TangentPoint)> = entries
        .par_iter()
        .map(|e| {
            let vol = generate_phantom(&cfg.phantom(e.seed))?;
            save_volume(&vol, cfg.out.join(&e.file))?;
            Ok((e.split, vol.gt_tangent()))
        })
        .collect::<Result<_>>()?;
    let train: Vec<TangentPoint> = targets
        .iter()
        .filter(|(s, _)| *s == Split::Train)
        .map(|(_, t)| *t)
        .collect();
    let sampler = StartSampler::from_targets(&train)?;
    let manifest = Manifest {
        entries,
        mean: sampler.mean,
        std: sampler.std,
    };
    fs::write(cfg.out.join(MANIFEST_FILE), manifest.to_text())?;
    log::info!("generated {} phantoms in {}", manifest.entries.len(), cfg.out.display());
    Ok(manifest)
}

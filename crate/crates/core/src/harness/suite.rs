use std::collections::BTreeSet;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::SuiteConfig;
use super::HarnessError;
use crate::gridworld::{generate_scene, SceneSpec, SceneTemplate, SceneType};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(HarnessError::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Train, validation and test rooms; pairwise disjoint.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSuite {
    pub train: Vec<SceneSpec>,
    pub val: Vec<SceneSpec>,
    pub test: Vec<SceneSpec>,
}

/// Fingerprint of the layout, ignoring identifiers and seeds.
fn layout_digest(s: &SceneSpec) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(format!("{:?}|{}|{}|{:?}|", s.scene_type, s.width, s.height, s.walls));
    for o in &s.objects {
        h.update(format!("{},{},{};", o.category, o.x, o.y));
    }
    h.finalize().into()
}

impl SceneSuite {
    pub fn split(&self, split: Split) -> &[SceneSpec] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Fails if any room id or layout appears in more than one split.
    pub fn check_disjoint(&self) -> Result<(), HarnessError> {
        let mut ids = BTreeSet::new();
        let mut layouts = BTreeSet::new();
        for split in [Split::Train, Split::Val, Split::Test] {
            for s in self.split(split) {
                if !ids.insert(s.scene_id.clone()) || !layouts.insert(layout_digest(s)) {
                    return Err(HarnessError::SplitOverlap(s.scene_id.clone()));
                }
            }
        }
        Ok(())
    }

    /// Procedural suite: per scene type, consecutive seeds fill train, val
    /// and test in that order.
    pub fn generate(cfg: &SuiteConfig) -> Result<Self, HarnessError> {
        let mut suite = SceneSuite { train: vec![], val: vec![], test: vec![] };
        for (t, &scene_type) in SceneType::ALL.iter().enumerate() {
            let template = SceneTemplate::builtin(scene_type, cfg.pair_probability);
            let per_type = cfg.train_per_type + cfg.val_per_type + cfg.test_per_type;
            for i in 0..per_type {
                let seed = cfg
                    .seed
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add(((t as u64) << 32) | i as u64);
                let scene = generate_scene(seed, &template)?;
                let dest = if i < cfg.train_per_type {
                    &mut suite.train
                } else if i < cfg.train_per_type + cfg.val_per_type {
                    &mut suite.val
                } else {
                    &mut suite.test
                };
                dest.push(scene);
            }
        }
        suite.check_disjoint()?;
        Ok(suite)
    }

    /// Reads `train/`, `val/` and `test/` subdirectories of scene files.
    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let suite = SceneSuite {
            train: load_scene_dir(&dir.join("train"))?,
            val: load_scene_dir(&dir.join("val"))?,
            test: load_scene_dir(&dir.join("test"))?,
        };
        suite.check_disjoint()?;
        Ok(suite)
    }

    pub fn save(&self, dir: &Path) -> Result<(), HarnessError> {
        for split in [Split::Train, Split::Val, Split::Test] {
            save_scene_dir(&dir.join(split.as_str()), self.split(split))?;
        }
        Ok(())
    }
}

/// Scene files of a directory in file-name order; missing directory is empty.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<SceneSpec>, HarnessError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| Ok(SceneSpec::from_json(&std::fs::read_to_string(p)?)?))
        .collect()
}

pub fn save_scene_dir(dir: &Path, scenes: &[SceneSpec]) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    // Index prefix keeps file-name order equal to suite order.
    for (i, s) in scenes.iter().enumerate() {
        std::fs::write(dir.join(format!("{i:04}-{}.json", s.scene_id)), s.to_json())?;
    }
    Ok(())
}

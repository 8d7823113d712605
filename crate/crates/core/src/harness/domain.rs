//! What the harness needs to know about each environment, and the instance
//! bank: generated instances per size and split, their files and manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::{csv_header_comment, EnvKind, ExperimentConfig};
use crate::bnb::{self, BestBound, BnbEnv, BnbInstance, Graph};
use crate::maze::{self, FeatureManhattan, Maze, MazeEnv};
use crate::search::{Environment, Policy};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn index(self) -> u64 {
        self as u64
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|x| x.name() == s)
    }
}

pub trait Domain: Environment + Default + Copy
where
    Self::Instance: Clone + Send,
{
    const KIND: EnvKind;
    const EXT: &'static str;

    fn generate(cfg: &ExperimentConfig, size: usize, split: Split, count: usize, seed: u64)
        -> Result<Vec<Self::Instance>>;
    fn save(inst: &Self::Instance, path: &Path) -> Result<()>;
    /// Loads and validates one instance file.
    fn load(path: &Path) -> Result<Self::Instance>;
    /// The demonstrator at the base size and the unlearned baseline.
    fn expert() -> Box<dyn Policy<Self::State>>;
    fn optimum(_: &Self::Instance) -> Option<usize> {
        None
    }
}

impl Domain for MazeEnv {
    const KIND: EnvKind = EnvKind::Maze;
    const EXT: &'static str = "maze";

    fn generate(_: &ExperimentConfig, size: usize, split: Split, count: usize, seed: u64) -> Result<Vec<Maze>> {
        (0..count)
            .map(|i| maze::kruskal_generate(size, rng::derive(seed, &[size as u64, split.index(), i as u64])))
            .collect()
    }

    fn save(inst: &Maze, path: &Path) -> Result<()> {
        inst.save(path)
    }

    fn load(path: &Path) -> Result<Maze> {
        Maze::load(path)
    }

    fn expert() -> Box<dyn Policy<maze::MazeState>> {
        Box::new(FeatureManhattan)
    }
}

impl Domain for BnbEnv {
    const KIND: EnvKind = EnvKind::Bnb;
    const EXT: &'static str = "graph";

    fn generate(cfg: &ExperimentConfig, size: usize, split: Split, count: usize, seed: u64) -> Result<Vec<BnbInstance>> {
        bnb::generate_instances(size, cfg.instances.degree, count, split.index(), seed)
    }

    fn save(inst: &BnbInstance, path: &Path) -> Result<()> {
        inst.graph.save(path)
    }

    fn load(path: &Path) -> Result<BnbInstance> {
        let id = path.file_stem().map_or("graph".into(), |s| s.to_string_lossy().into_owned());
        BnbInstance::new(id, Graph::load(path)?).solved()
    }

    fn expert() -> Box<dyn Policy<bnb::BnbState>> {
        Box::new(BestBound)
    }

    fn optimum(inst: &BnbInstance) -> Option<usize> {
        inst.optimum
    }
}

#[derive(Debug, Clone)]
pub struct SizeSet<I> {
    pub size: usize,
    pub train: Vec<I>,
    pub validation: Vec<I>,
    pub test: Vec<I>,
}

impl<I> SizeSet<I> {
    pub fn split(&self, s: Split) -> &[I] {
        match s {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, s: Split) -> &mut Vec<I> {
        match s {
            Split::Train => &mut self.train,
            Split::Validation => &mut self.validation,
            Split::Test => &mut self.test,
        }
    }
}

/// Instances for every curriculum size.
#[derive(Debug, Clone)]
pub struct InstanceBank<I> {
    pub sets: Vec<SizeSet<I>>,
}

impl<I> InstanceBank<I> {
    pub fn get(&self, size: usize) -> Result<&SizeSet<I>> {
        self.sets
            .iter()
            .find(|s| s.size == size)
            .ok_or_else(|| Error::Config(format!("no instances of size {size}")))
    }
}

pub fn generate_bank<D: Domain>(cfg: &ExperimentConfig) -> Result<InstanceBank<D::Instance>>
where
    D::Instance: Clone + Send,
{
    let seed = cfg.seeds().instances;
    let counts = [cfg.instances.train, cfg.instances.validation, cfg.instances.test];
    let sets = cfg
        .curriculum
        .sizes
        .iter()
        .map(|&size| {
            let mut set = SizeSet { size, train: Vec::new(), validation: Vec::new(), test: Vec::new() };
            for (split, &count) in Split::ALL.iter().zip(&counts) {
                *set.split_mut(*split) = D::generate(cfg, size, *split, count, seed)?;
            }
            Ok(set)
        })
        .collect::<Result<_>>()?;
    Ok(InstanceBank { sets })
}

pub const MANIFEST: &str = "manifest.csv";

/// Writes every instance under `dir/size-<s>/<split>/` and a manifest
/// listing them. Returns the manifest path.
pub fn save_bank<D: Domain>(bank: &InstanceBank<D::Instance>, dir: &Path, seed: u64) -> Result<PathBuf>
where
    D::Instance: Clone + Send,
{
    let mut manifest = csv_header_comment(seed);
    manifest.push_str("split,size,file,optimum\n");
    for set in &bank.sets {
        for split in Split::ALL {
            let sub = dir.join(format!("size-{}", set.size)).join(split.name());
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for inst in set.split(split) {
                let rel = format!("size-{}/{}/{}.{}", set.size, split.name(), D::default().instance_id(inst), D::EXT);
                D::save(inst, &dir.join(&rel))?;
                let opt = D::optimum(inst).map_or(String::new(), |o| o.to_string());
                let _ = writeln!(manifest, "{},{},{rel},{opt}", split.name(), set.size);
            }
        }
    }
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads the bank back from `dir/manifest.csv`, validating every instance
/// and any recorded optimum.
pub fn load_bank<D: Domain>(dir: &Path) -> Result<InstanceBank<D::Instance>>
where
    D::Instance: Clone + Send,
{
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut sets: Vec<SizeSet<D::Instance>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("split,") {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let [split, size, file, opt] = cols[..] else {
            return Err(Error::parse(i + 1, "expected split,size,file,optimum"));
        };
        let split = Split::parse(split).ok_or_else(|| Error::parse(i + 1, format!("unknown split {split:?}")))?;
        let size: usize = size.parse().map_err(|_| Error::parse(i + 1, "bad size"))?;
        let inst = D::load(&dir.join(file))?;
        if !opt.is_empty() {
            let want: usize = opt.parse().map_err(|_| Error::parse(i + 1, "bad optimum"))?;
            if D::optimum(&inst) != Some(want) {
                return Err(Error::Invalid(format!("{file}: recorded optimum {want} does not match the solver")));
            }
        }
        let set = match sets.iter().position(|s| s.size == size) {
            Some(k) => &mut sets[k],
            None => {
                sets.push(SizeSet { size, train: Vec::new(), validation: Vec::new(), test: Vec::new() });
                sets.last_mut().expect("just pushed")
            }
        };
        set.split_mut(split).push(inst);
    }
    sets.sort_by_key(|s| s.size);
    Ok(InstanceBank { sets })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(env: EnvKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults(env);
        c.instances.train = 3;
        c.instances.validation = 1;
        c.instances.test = 2;
        c.curriculum.sizes = match env {
            EnvKind::Maze => vec![7, 9],
            EnvKind::Bnb => vec![8, 10],
        };
        c
    }

    fn round_trip<D: Domain>(cfg: &ExperimentConfig, tag: &str)
    where
        D::Instance: Clone + Send + PartialEq + std::fmt::Debug,
    {
        let dir = std::env::temp_dir().join(format!("retro-bank-{tag}-{}", std::process::id()));
        let bank = generate_bank::<D>(cfg).unwrap();
        let manifest = save_bank::<D>(&bank, &dir, 1).unwrap();
        let text = std::fs::read_to_string(&manifest).unwrap();
        assert_eq!(text.lines().filter(|l| l.contains("size-")).count(), 12);
        let back = load_bank::<D>(&dir).unwrap();
        for (a, b) in bank.sets.iter().zip(&back.sets) {
            assert_eq!(a.train, b.train);
            assert_eq!(a.test, b.test);
        }
        // same seed, same bytes
        let again = dir.join("again");
        save_bank::<D>(&generate_bank::<D>(cfg).unwrap(), &again, 1).unwrap();
        assert_eq!(std::fs::read_to_string(again.join(MANIFEST)).unwrap(), text);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn maze_bank_round_trip() {
        round_trip::<MazeEnv>(&small(EnvKind::Maze), "maze");
    }

    #[test]
    fn bnb_bank_round_trip() {
        round_trip::<BnbEnv>(&small(EnvKind::Bnb), "bnb");
    }

    #[test]
    fn splits_are_disjoint() {
        let bank = generate_bank::<MazeEnv>(&small(EnvKind::Maze)).unwrap();
        let s = bank.get(9).unwrap();
        for m in &s.test {
            assert!(s.train.iter().all(|t| t.id != m.id));
        }
    }
}

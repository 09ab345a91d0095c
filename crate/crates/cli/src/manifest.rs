use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use proposal_scorer::config::load_scoring_config;
use proposal_scorer::metrics::ScoringConfig;
use proposal_scorer::proposals::ProposalSet;
use proposal_scorer::scene::{load_scene, Mode, Scene};

use crate::{CliError, InputArgs};

/// Files named directly, plus the sorted `*.json` files of any directory.
pub fn expand_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let entries = std::fs::read_dir(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            let mut files: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && f.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            out.extend(files);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(CliError::Input(format!("{}: no such file or directory", p.display())));
        }
    }
    Ok(out)
}

/// Resolved inputs of a scoring run.
#[derive(Clone, Debug)]
pub struct RunManifest {
    pub scenes: Vec<PathBuf>,
    /// Paired with `scenes`; `None` scores each scene's expert.
    pub proposals: Option<Vec<PathBuf>>,
    pub config: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub jobs: usize,
    pub out: PathBuf,
}

pub(crate) struct SceneJob {
    pub label: String,
    pub scene: Scene,
    pub proposals: ProposalSet,
    pub cfg: ScoringConfig,
}

impl RunManifest {
    pub fn resolve(args: &InputArgs) -> Result<Self, CliError> {
        let scenes = expand_inputs(&args.scenes)?;
        let proposals = if args.proposals.is_empty() {
            None
        } else {
            let p = expand_inputs(&args.proposals)?;
            if p.len() != scenes.len() {
                return Err(CliError::Input(format!("{} proposal files for {} scenes", p.len(), scenes.len())));
            }
            Some(p)
        };
        if let Some(c) = &args.config {
            if !c.is_file() {
                return Err(CliError::Input(format!("{}: config file not found", c.display())));
            }
        }
        let jobs = match args.jobs {
            Some(j) => j as usize,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        Ok(Self { scenes, proposals, config: args.config.clone(), mode: args.mode, jobs, out: args.out.clone() })
    }

    pub fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        rayon::ThreadPoolBuilder::new().num_threads(self.jobs).build().map_err(|e| CliError::Internal(format!("thread pool: {e}")))
    }

    fn config_for(&self, mode: Mode, cache: &mut BTreeMap<Mode, ScoringConfig>) -> Result<ScoringConfig, CliError> {
        if let Some(cfg) = cache.get(&mode) {
            return Ok(cfg.clone());
        }
        let cfg = match &self.config {
            Some(p) => load_scoring_config(mode, p).map_err(|e| CliError::Input(e.to_string()))?,
            None => ScoringConfig::for_mode(mode),
        };
        cache.insert(mode, cfg.clone());
        Ok(cfg)
    }

    pub(crate) fn load(&self) -> Result<Vec<SceneJob>, CliError> {
        let mut configs = BTreeMap::new();
        let mut jobs = Vec::with_capacity(self.scenes.len());
        for (i, path) in self.scenes.iter().enumerate() {
            let label = path.display().to_string();
            let scene = load_scene(path).map_err(|e| match e {
                proposal_scorer::scene::SceneError::Io { .. } => CliError::Input(e.to_string()),
                other => CliError::Input(format!("{label}: {other}")),
            })?;
            if let Some(m) = self.mode {
                if scene.mode != m {
                    return Err(CliError::Input(format!("{label}: scene mode {} does not match --mode {m}", scene.mode)));
                }
            }
            let proposals = match &self.proposals {
                Some(files) => ProposalSet::load(&files[i]).map_err(|e| CliError::Input(e.to_string()))?,
                None => {
                    let expert = scene.expert.clone().ok_or_else(|| {
                        CliError::Input(format!("{label}: scene has no expert trajectory and no proposals were given"))
                    })?;
                    ProposalSet::single(expert).map_err(|e| CliError::Input(format!("{label}: expert: {e}")))?
                }
            };
            let cfg = self.config_for(scene.mode, &mut configs)?;
            jobs.push(SceneJob { label, scene, proposals, cfg });
        }
        Ok(jobs)
    }
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: cannot create output directory: {e}", dir.display())))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

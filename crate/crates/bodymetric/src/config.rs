//! Run configuration: an optional TOML file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use bodymetric_core::defaults;
use bodymetric_core::detect::check_thresholds;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{BoxFormat, EmbeddingFormat};

/// Keys accepted in a config file. Every key is optional; flags win.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub det: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub emb: Option<PathBuf>,
    pub protocol: Option<PathBuf>,
    pub media: Option<PathBuf>,
    pub iou: Option<Vec<f64>>,
    pub far: Option<Vec<f64>>,
    pub ranks: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub format: Option<EmbeddingFormat>,
    pub box_format: Option<BoxFormat>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Resolved settings of one run, echoed into its manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub det: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub emb: Option<PathBuf>,
    pub protocol: Option<PathBuf>,
    pub media: Option<PathBuf>,
    pub iou_thresholds: Vec<f64>,
    pub far_targets: Vec<f64>,
    pub ranks: Vec<usize>,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub format: Option<EmbeddingFormat>,
    pub box_format: BoxFormat,
}

/// Flag values before merging; `None` / empty means "not given".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub det: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub emb: Option<PathBuf>,
    pub protocol: Option<PathBuf>,
    pub media: Option<PathBuf>,
    pub iou: Vec<f64>,
    pub far: Vec<f64>,
    pub ranks: Vec<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub format: Option<EmbeddingFormat>,
    pub box_format: Option<BoxFormat>,
}

fn nonempty<T>(v: Vec<T>) -> Option<Vec<T>> {
    (!v.is_empty()).then_some(v)
}

impl RunConfig {
    pub fn resolve(flags: Overrides) -> Result<Self> {
        let file = match &flags.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let cfg = Self {
            det: flags.det.or(file.det),
            gt: flags.gt.or(file.gt),
            emb: flags.emb.or(file.emb),
            protocol: flags.protocol.or(file.protocol),
            media: flags.media.or(file.media),
            iou_thresholds: nonempty(flags.iou).or(file.iou).unwrap_or_else(|| defaults::IOU_THRESHOLDS.to_vec()),
            far_targets: nonempty(flags.far).or(file.far).unwrap_or_else(|| defaults::FAR_TARGETS.to_vec()),
            ranks: nonempty(flags.ranks).or(file.ranks).unwrap_or_else(|| defaults::RANKS.to_vec()),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            out: flags.out.or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            threads: flags.threads.or(file.threads).unwrap_or(1),
            format: flags.format.or(file.format),
            box_format: flags.box_format.or(file.box_format).unwrap_or_default(),
        };
        check_thresholds(&cfg.iou_thresholds)?;
        if let Some(f) = cfg.far_targets.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::Config(format!("FAR target {f} outside [0, 1]")));
        }
        if cfg.ranks.contains(&0) {
            return Err(Error::Config("ranks start at 1".into()));
        }
        Ok(cfg)
    }

    /// Required input path, with a message naming the missing flag.
    pub fn require<'a>(&self, path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        path.as_deref().ok_or_else(|| Error::Config(format!("{flag} is required")))
    }

    pub fn ensure_out_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_match_reporting_setup() {
        let c = RunConfig::resolve(Overrides::default()).unwrap();
        assert_eq!(c.iou_thresholds, vec![0.35, 0.5, 0.7]);
        assert_eq!(c.far_targets, vec![1e-4, 1e-3, 1e-2, 1e-1]);
        assert_eq!(c.ranks, vec![1, 5, 10, 20]);
    }

    #[test]
    fn flags_override_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "iou = [0.5]\nseed = 11\nfar = [0.01]").unwrap();
        let c = RunConfig::resolve(Overrides { config: Some(f.path().into()), seed: Some(3), ..Default::default() })
            .unwrap();
        assert_eq!(c.iou_thresholds, vec![0.5]);
        assert_eq!(c.far_targets, vec![0.01]);
        assert_eq!(c.seed, 3);
    }

    #[test]
    fn bad_values_rejected() {
        assert!(RunConfig::resolve(Overrides { iou: vec![1.5], ..Default::default() }).is_err());
        assert!(RunConfig::resolve(Overrides { far: vec![-0.1], ..Default::default() }).is_err());
        assert!(RunConfig::resolve(Overrides { ranks: vec![0], ..Default::default() }).is_err());
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "bogus = 1").unwrap();
        assert!(RunConfig::resolve(Overrides { config: Some(f.path().into()), ..Default::default() }).is_err());
    }
}

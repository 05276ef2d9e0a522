//! `key = value` configuration with namespaced keys.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys and
//! out-of-range values are rejected when the file is loaded.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cos::CosParams;
use crate::dataset::{SaliencyParams, SplitMode, SplitSpec};
use crate::error::{Error, Result};
use crate::gbvs::GbvsParams;
use crate::mask::RoiParams;
use crate::spectral::SpeParams;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub gbvs: GbvsParams,
    pub spe: SpeParams,
    pub cos: CosParams,
    pub roi: RoiParams,
    pub split: SplitSpec,
    pub augment_multiplier: usize,
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{raw}`")))
}

impl Config {
    pub fn saliency(&self) -> SaliencyParams {
        SaliencyParams {
            gbvs: self.gbvs.clone(),
            spe: self.spe.clone(),
            cos: self.cos.clone(),
        }
    }

    /// Sets the seed of every seeded component.
    pub fn set_seed(&mut self, seed: u64) {
        self.cos.seed = seed;
        self.split.seed = seed;
    }

    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "gbvs.work_size" => self.gbvs.work_size = value(key, raw)?,
            "gbvs.sigma" => self.gbvs.sigma = Some(value(key, raw)?),
            "gbvs.epsilon" => self.gbvs.epsilon = value(key, raw)?,
            "gbvs.lambda" => self.gbvs.lambda = value(key, raw)?,
            "gbvs.tol" => self.gbvs.tol = value(key, raw)?,
            "gbvs.max_iter" => self.gbvs.max_iter = value(key, raw)?,
            "spe.work_size" => {
                let n: usize = value(key, raw)?;
                self.spe.work_height = n;
                self.spe.work_width = n;
            }
            "spe.work_height" => self.spe.work_height = value(key, raw)?,
            "spe.work_width" => self.spe.work_width = value(key, raw)?,
            "spe.mean_filter_size" => self.spe.mean_filter_size = value(key, raw)?,
            "spe.gauss_sigma" => self.spe.gauss_sigma = value(key, raw)?,
            "spe.eps_log" => self.spe.eps_log = value(key, raw)?,
            "cos.k_single" => self.cos.k_single = value(key, raw)?,
            "cos.k_multi" => self.cos.k_multi = value(key, raw)?,
            "cos.sigma_s" => self.cos.sigma_s = value(key, raw)?,
            "cos.max_iter" => self.cos.max_iter = value(key, raw)?,
            "cos.max_side" => self.cos.max_side = value(key, raw)?,
            "roi.alpha" => self.roi.alpha = value(key, raw)?,
            "roi.rho" => self.roi.rho = value(key, raw)?,
            "roi.min_coverage" => self.roi.min_coverage = value(key, raw)?,
            "split.train_per_class" => self.split.train_per_class = value(key, raw)?,
            "split.repetitions" => self.split.repetitions = value(key, raw)?,
            "split.mode" => {
                self.split.mode = match raw.to_ascii_lowercase().as_str() {
                    "random_per_class" => SplitMode::RandomPerClass,
                    "fixed_lists" => SplitMode::FixedLists {
                        train: PathBuf::new(),
                        val: None,
                        test: PathBuf::new(),
                    },
                    _ => {
                        return Err(Error::Config(format!(
                            "`split.mode`: expected `random_per_class` or `fixed_lists`, got `{raw}`"
                        )))
                    }
                }
            }
            "split.train_list" | "split.val_list" | "split.test_list" => {
                let SplitMode::FixedLists { train, val, test } = &mut self.split.mode else {
                    return Err(Error::Config(format!("`{key}` requires `split.mode = fixed_lists` first")));
                };
                let p = PathBuf::from(raw);
                match key {
                    "split.train_list" => *train = p,
                    "split.val_list" => *val = Some(p),
                    _ => *test = p,
                }
            }
            "augment.multiplier" => self.augment_multiplier = value(key, raw)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.gbvs.validate()?;
        self.spe.validate()?;
        self.cos.validate()?;
        self.roi.validate()?;
        self.split.validate()?;
        if let SplitMode::FixedLists { train, test, .. } = &self.split.mode {
            if train.as_os_str().is_empty() || test.as_os_str().is_empty() {
                return Err(Error::Config(
                    "`split.mode = fixed_lists` needs `split.train_list` and `split.test_list`".into(),
                ));
            }
        }
        Ok(())
    }

    /// Parses config text on top of the defaults. Relative list paths
    /// resolve against `base_dir`.
    pub fn parse(text: &str, path_label: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = Config::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let wrap = |e: Error| Error::Parse {
                path: path_label.to_string(),
                line: i + 1,
                message: e.to_string(),
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| wrap(Error::Config(format!("expected `key = value`, got `{line}`"))))?;
            let (k, v) = (k.trim(), v.trim());
            let v = if k.ends_with("_list") {
                base_dir.join(v).to_string_lossy().into_owned()
            } else {
                v.to_string()
            };
            cfg.set(k, &v).map_err(wrap)?;
        }
        cfg.validate().map_err(|e| Error::Config(format!("{path_label}: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, &path.display().to_string(), base)
    }

    /// Every key with its current value, in a form [`Config::parse`] accepts.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("gbvs.work_size", self.gbvs.work_size.to_string());
        kv("gbvs.sigma", self.gbvs.sigma().to_string());
        kv("gbvs.epsilon", self.gbvs.epsilon.to_string());
        kv("gbvs.lambda", self.gbvs.lambda.to_string());
        kv("gbvs.tol", self.gbvs.tol.to_string());
        kv("gbvs.max_iter", self.gbvs.max_iter.to_string());
        kv("spe.work_height", self.spe.work_height.to_string());
        kv("spe.work_width", self.spe.work_width.to_string());
        kv("spe.mean_filter_size", self.spe.mean_filter_size.to_string());
        kv("spe.gauss_sigma", self.spe.gauss_sigma.to_string());
        kv("spe.eps_log", self.spe.eps_log.to_string());
        kv("cos.k_single", self.cos.k_single.to_string());
        kv("cos.k_multi", self.cos.k_multi.to_string());
        kv("cos.sigma_s", self.cos.sigma_s.to_string());
        kv("cos.max_iter", self.cos.max_iter.to_string());
        kv("cos.max_side", self.cos.max_side.to_string());
        kv("roi.alpha", self.roi.alpha.to_string());
        kv("roi.rho", self.roi.rho.to_string());
        kv("roi.min_coverage", self.roi.min_coverage.to_string());
        kv("split.train_per_class", self.split.train_per_class.to_string());
        kv("split.repetitions", self.split.repetitions.to_string());
        match &self.split.mode {
            SplitMode::RandomPerClass => kv("split.mode", "random_per_class".into()),
            SplitMode::FixedLists { train, val, test } => {
                kv("split.mode", "fixed_lists".into());
                kv("split.train_list", train.display().to_string());
                if let Some(v) = val {
                    kv("split.val_list", v.display().to_string());
                }
                kv("split.test_list", test.display().to_string());
            }
        }
        kv("augment.multiplier", self.augment_multiplier.to_string());
        out
    }
}

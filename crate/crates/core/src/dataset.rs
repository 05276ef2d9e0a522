//! Corpus scanning, saliency-derived variants, train/test splits and
//! offline augmentation.
//!
//! A dataset root holds one directory per class. Every record of a manifest
//! carries a path relative to the manifest's root directory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Component, Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::augment;
use crate::cos::{cos_saliency, CosParams};
use crate::error::{Error, Result};
use crate::gbvs::{gbvs_saliency, GbvsParams};
use crate::imaging::{is_supported_image, load_image, save_image, GrayMap, RasterImage};
use crate::mask::{derive_images, RoiParams};
use crate::spectral::{spe_saliency, SpeParams};

/// Stable seed for one purpose, derived from the master seed and a list of
/// discriminators. Independent of iteration order and of other samples.
pub fn derive_seed(master: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    None,
    Gbvs,
    Cos,
    Spe,
}

impl Method {
    pub const SALIENCY: [Method; 3] = [Method::Gbvs, Method::Cos, Method::Spe];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::None => "NONE",
            Method::Gbvs => "GBVS",
            Method::Cos => "COS",
            Method::Spe => "SPE",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NONE" => Ok(Method::None),
            "GBVS" => Ok(Method::Gbvs),
            "COS" => Ok(Method::Cos),
            "SPE" | "SPECTRAL" => Ok(Method::Spe),
            _ => Err(Error::invalid(format!("unknown saliency method `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Derivation {
    Original,
    Fg,
    Roi,
    FgRoi,
}

impl Derivation {
    pub const DERIVED: [Derivation; 3] = [Derivation::Fg, Derivation::Roi, Derivation::FgRoi];

    pub fn as_str(self) -> &'static str {
        match self {
            Derivation::Original => "ORIGINAL",
            Derivation::Fg => "FG",
            Derivation::Roi => "ROI",
            Derivation::FgRoi => "FG_ROI",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ORIGINAL" => Ok(Derivation::Original),
            "FG" => Ok(Derivation::Fg),
            "ROI" => Ok(Derivation::Roi),
            "FG_ROI" => Ok(Derivation::FgRoi),
            _ => Err(Error::invalid(format!("unknown derivation `{s}`"))),
        }
    }
}

/// `(NONE, ORIGINAL)` or a saliency method with a derived image kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VariantId {
    method: Method,
    derivation: Derivation,
}

impl VariantId {
    pub const ORIGINAL: VariantId = VariantId {
        method: Method::None,
        derivation: Derivation::Original,
    };

    pub fn new(method: Method, derivation: Derivation) -> Result<Self> {
        if (method == Method::None) != (derivation == Derivation::Original) {
            return Err(Error::invalid(format!(
                "invalid variant {}/{}",
                method.as_str(),
                derivation.as_str()
            )));
        }
        Ok(Self { method, derivation })
    }

    /// The original followed by the nine derived variants.
    pub fn all() -> Vec<VariantId> {
        let mut v = vec![Self::ORIGINAL];
        for m in Method::SALIENCY {
            for d in Derivation::DERIVED {
                v.push(Self { method: m, derivation: d });
            }
        }
        v
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn derivation(&self) -> Derivation {
        self.derivation
    }

    pub fn is_original(&self) -> bool {
        *self == Self::ORIGINAL
    }

    /// Directory of this variant below a dataset root.
    pub fn dir(&self) -> PathBuf {
        if self.is_original() {
            PathBuf::from("ORIGINAL")
        } else {
            Path::new(self.method.as_str()).join(self.derivation.as_str())
        }
    }
}

impl std::fmt::Display for VariantId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.method.as_str(), self.derivation.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

impl SplitRole {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitRole::Train => "train",
            SplitRole::Val => "val",
            SplitRole::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitRole::Train),
            "val" => Some(SplitRole::Val),
            "test" => Some(SplitRole::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Path of the original image relative to the class root, `/`-separated.
    pub sample_id: String,
    /// File location relative to the manifest root, `/`-separated.
    pub path: String,
    pub label: String,
    pub variant: VariantId,
    pub split: Option<SplitRole>,
    pub repetition: Option<usize>,
}

impl ManifestRecord {
    fn sort_key(&self) -> (Option<usize>, VariantId, &str, Option<SplitRole>, &str) {
        (self.repetition, self.variant, &self.sample_id, self.split, &self.path)
    }
}

pub const MANIFEST_HEADER: &str = "sample_id\tpath\tlabel\tmethod\tderivation\tsplit\trepetition";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    /// Directory that record paths are relative to.
    pub root: PathBuf,
    /// Free-form `# ` lines written above the header.
    pub notes: Vec<String>,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, mut records: Vec<ManifestRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert((r.repetition, r.variant, r.sample_id.as_str(), r.split, r.path.as_str())) {
                return Err(Error::invalid(format!("duplicate record for `{}` ({})", r.sample_id, r.variant)));
            }
        }
        Ok(Self {
            root: root.into(),
            notes: Vec::new(),
            records,
        })
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn originals(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(|r| r.variant.is_original())
    }

    pub fn count_variant(&self, v: VariantId) -> usize {
        self.records.iter().filter(|r| r.variant == v).count()
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(record.path.replace('/', std::path::MAIN_SEPARATOR_STR))
    }

    /// TSV text with record paths relative to `root`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for n in &self.notes {
            let _ = writeln!(out, "# {n}");
        }
        let _ = writeln!(out, "{MANIFEST_HEADER}");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.sample_id,
                r.path,
                r.label,
                r.variant.method.as_str(),
                r.variant.derivation.as_str(),
                r.split.map_or("-", SplitRole::as_str),
                r.repetition.map_or_else(|| "-".to_string(), |x| x.to_string())
            );
        }
        out
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>, path_label: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: path_label.to_string(),
            line,
            message,
        };
        let mut notes = Vec::new();
        let mut records = Vec::new();
        let mut header_seen = false;
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            if let Some(note) = line.strip_prefix('#') {
                notes.push(note.trim_start().to_string());
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !header_seen {
                if line != MANIFEST_HEADER {
                    return Err(perr(ln, format!("expected header `{MANIFEST_HEADER}`")));
                }
                header_seen = true;
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(perr(ln, format!("expected 7 columns, found {}", f.len())));
            }
            let method = Method::parse(f[3]).map_err(|e| perr(ln, e.to_string()))?;
            let derivation = Derivation::parse(f[4]).map_err(|e| perr(ln, e.to_string()))?;
            let variant = VariantId::new(method, derivation).map_err(|e| perr(ln, e.to_string()))?;
            let split = match f[5] {
                "-" => None,
                s => Some(SplitRole::parse(s).ok_or_else(|| perr(ln, format!("unknown split `{s}`")))?),
            };
            let repetition = match f[6] {
                "-" => None,
                s => Some(s.parse().map_err(|_| perr(ln, format!("bad repetition `{s}`")))?),
            };
            records.push(ManifestRecord {
                sample_id: f[0].to_string(),
                path: f[1].to_string(),
                label: f[2].to_string(),
                variant,
                split,
                repetition,
            });
        }
        if !header_seen {
            return Err(perr(1, "missing manifest header".into()));
        }
        let mut m = Self::new(root, records)?;
        m.notes = notes;
        Ok(m)
    }

    /// Reads a manifest; record paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root, &path.display().to_string())
    }

    /// Writes the manifest, rewriting record paths relative to the target's directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let prefix = relative_dir(&dir, &self.root)?;
        let mut rebased = self.clone();
        if !prefix.is_empty() {
            for r in &mut rebased.records {
                r.path = format!("{prefix}/{}", r.path);
            }
        }
        fs::write(path, rebased.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    let base = if p.as_os_str().is_empty() { Path::new(".") } else { p };
    fs::canonicalize(base).map_err(|e| Error::io(base, e))
}

/// `/`-separated path leading from `from` to `to`; empty when they coincide.
fn relative_dir(from: &Path, to: &Path) -> Result<String> {
    let (from, to) = (absolute(from)?, absolute(to)?);
    let a: Vec<Component> = from.components().collect();
    let b: Vec<Component> = to.components().collect();
    let common = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut parts: Vec<String> = vec!["..".into(); a.len() - common];
    parts.extend(b[common..].iter().map(|c| c.as_os_str().to_string_lossy().into_owned()));
    Ok(parts.join("/"))
}

fn rel_string(rel: &Path) -> String {
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// One ORIGINAL record per decodable image below `root/<class>/`.
/// Undecodable files are skipped with a warning and returned as well.
pub fn scan_dataset(root: &Path) -> Result<(DatasetManifest, Vec<String>)> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut classes = Vec::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(root, e))?;
        if e.file_type().map_err(|err| Error::io(e.path(), err))?.is_dir() {
            classes.push(e.file_name().to_string_lossy().into_owned());
        }
    }
    classes.sort();
    if classes.is_empty() {
        return Err(Error::invalid(format!("{}: no class directories found", root.display())));
    }

    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for class in &classes {
        let class_dir = root.join(class);
        let mut files: Vec<PathBuf> = WalkDir::new(&class_dir)
            .sort_by_file_name()
            .into_iter()
            .filter_map(|e| match e {
                Ok(e) => Some(e),
                Err(err) => {
                    warnings.push(format!("{}: {err}", class_dir.display()));
                    None
                }
            })
            .filter(|e| e.file_type().is_file())
            .map(|e| e.into_path())
            .collect();
        files.sort();
        let before = records.len();
        for f in files {
            if !is_supported_image(&f) {
                continue;
            }
            if let Err(e) = image::image_dimensions(&f) {
                let w = format!("{}: skipped, not decodable ({e})", f.display());
                log::warn!("{w}");
                warnings.push(w);
                continue;
            }
            let rel = rel_string(f.strip_prefix(root).expect("walked below root"));
            records.push(ManifestRecord {
                sample_id: rel.clone(),
                path: rel,
                label: class.clone(),
                variant: VariantId::ORIGINAL,
                split: None,
                repetition: None,
            });
        }
        if records.len() == before {
            return Err(Error::invalid(format!(
                "{}: class directory `{class}` has no decodable images",
                root.display()
            )));
        }
    }
    Ok((DatasetManifest::new(root, records)?, warnings))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SaliencyParams {
    pub gbvs: GbvsParams,
    pub spe: SpeParams,
    pub cos: CosParams,
}

impl SaliencyParams {
    pub fn validate(&self) -> Result<()> {
        self.gbvs.validate()?;
        self.spe.validate()?;
        self.cos.validate()
    }
}

/// Single-image saliency map of the requested method.
pub fn compute_saliency(method: Method, img: &RasterImage, params: &SaliencyParams) -> Result<GrayMap> {
    match method {
        Method::Gbvs => gbvs_saliency(img, &params.gbvs),
        Method::Spe => spe_saliency(img, &params.spe),
        Method::Cos => Ok(cos_saliency(std::slice::from_ref(img), &params.cos)?
            .pop()
            .expect("one map per image")),
        Method::None => Err(Error::invalid("no saliency method selected")),
    }
}

/// A variant group that could not be produced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivationFailure {
    pub sample_id: String,
    pub method: Method,
    pub message: String,
}

pub fn failures_tsv(failures: &[DerivationFailure]) -> String {
    let mut out = String::from("sample_id\tmethod\terror\n");
    for f in failures {
        let _ = writeln!(out, "{}\t{}\t{}", f.sample_id, f.method.as_str(), f.message.replace(['\t', '\n'], " "));
    }
    out
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    Ok(())
}

fn derive_one(
    src: &DatasetManifest,
    rec: &ManifestRecord,
    out: &Path,
    params: &SaliencyParams,
    roi: &RoiParams,
) -> Result<(Vec<ManifestRecord>, Vec<DerivationFailure>)> {
    let source = src.resolve(rec);
    let original_rel = format!("ORIGINAL/{}", rec.sample_id);
    let original_out = out.join(&original_rel);
    ensure_parent(&original_out)?;
    fs::copy(&source, &original_out).map_err(|e| Error::io(&source, e))?;
    let mut records = vec![ManifestRecord {
        path: original_rel,
        ..rec.clone()
    }];
    let mut failures = Vec::new();
    let img = match load_image(&source) {
        Ok(img) => img,
        Err(e) => {
            for m in Method::SALIENCY {
                failures.push(DerivationFailure {
                    sample_id: rec.sample_id.clone(),
                    method: m,
                    message: e.to_string(),
                });
            }
            return Ok((records, failures));
        }
    };
    for method in Method::SALIENCY {
        let derived = compute_saliency(method, &img, params).and_then(|s| derive_images(&img, &s, roi));
        let derived = match derived {
            Ok(d) => d,
            Err(e) => {
                log::warn!("{}: {} saliency failed: {e}", rec.sample_id, method.as_str());
                failures.push(DerivationFailure {
                    sample_id: rec.sample_id.clone(),
                    method,
                    message: e.to_string(),
                });
                continue;
            }
        };
        for (derivation, image) in [
            (Derivation::Fg, &derived.fg),
            (Derivation::Roi, &derived.roi),
            (Derivation::FgRoi, &derived.fg_roi),
        ] {
            let variant = VariantId { method, derivation };
            let rel = format!("{}/{}", rel_string(&variant.dir()), rec.sample_id);
            let path = out.join(&rel);
            ensure_parent(&path)?;
            save_image(image, &path)?;
            records.push(ManifestRecord {
                path: rel,
                variant,
                ..rec.clone()
            });
        }
    }
    Ok((records, failures))
}

/// Writes `ORIGINAL/<id>` copies and `<METHOD>/<DERIVATION>/<id>` images
/// below `out` and returns the manifest rooted there. Saliency failures skip
/// the affected variants and are returned; I/O failures abort.
///
/// `jobs` bounds the worker threads; the result does not depend on it.
pub fn derive_datasets(
    manifest: &DatasetManifest,
    out: &Path,
    params: &SaliencyParams,
    roi: &RoiParams,
    jobs: usize,
) -> Result<(DatasetManifest, Vec<DerivationFailure>)> {
    params.validate()?;
    roi.validate()?;
    let originals: Vec<&ManifestRecord> = manifest.originals().collect();
    if originals.is_empty() {
        return Err(Error::invalid("manifest has no ORIGINAL records"));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    let results: Vec<Result<(Vec<ManifestRecord>, Vec<DerivationFailure>)>> = pool.install(|| {
        originals
            .par_iter()
            .map(|rec| derive_one(manifest, rec, out, params, roi))
            .collect()
    });
    let mut records = Vec::with_capacity(originals.len() * 10);
    let mut failures = Vec::new();
    for r in results {
        let (recs, fails) = r?;
        records.extend(recs);
        failures.extend(fails);
    }
    Ok((DatasetManifest::new(out, records)?, failures))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SplitMode {
    RandomPerClass,
    /// List files hold one sample id (relative original path) per line.
    FixedLists {
        train: PathBuf,
        val: Option<PathBuf>,
        test: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_per_class: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub mode: SplitMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_per_class: 20,
            repetitions: 5,
            seed: 0,
            mode: SplitMode::RandomPerClass,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_per_class == 0 {
            return Err(Error::Config("split.train_per_class must be >= 1".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("split.repetitions must be >= 1".into()));
        }
        Ok(())
    }
}

/// Role of every original sample id in one repetition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitAssignment {
    pub repetition: usize,
    pub roles: BTreeMap<String, SplitRole>,
}

impl SplitAssignment {
    pub fn ids(&self, role: SplitRole) -> BTreeSet<&str> {
        self.roles
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

fn read_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.trim().replace('\\', "/"))
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect())
}

/// Splits defined on ORIGINAL sample ids.
pub fn split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<Vec<SplitAssignment>> {
    spec.validate()?;
    let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in manifest.originals() {
        by_class.entry(&r.label).or_default().push(&r.sample_id);
    }
    if by_class.is_empty() {
        return Err(Error::invalid("manifest has no ORIGINAL records to split"));
    }
    match &spec.mode {
        SplitMode::RandomPerClass => {
            let small: Vec<String> = by_class
                .iter()
                .filter(|(_, ids)| ids.len() <= spec.train_per_class)
                .map(|(c, ids)| format!("`{c}` ({} images)", ids.len()))
                .collect();
            if !small.is_empty() {
                return Err(Error::invalid(format!(
                    "classes need more than {} images for a per-class split: {}",
                    spec.train_per_class,
                    small.join(", ")
                )));
            }
            Ok((0..spec.repetitions)
                .map(|rep| {
                    let mut roles = BTreeMap::new();
                    for (class, ids) in &by_class {
                        let mut ids = ids.clone();
                        ids.sort_unstable();
                        let seed = derive_seed(spec.seed, &["split", &rep.to_string(), class]);
                        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                        for (i, id) in ids.iter().enumerate() {
                            let role = if i < spec.train_per_class { SplitRole::Train } else { SplitRole::Test };
                            roles.insert(id.to_string(), role);
                        }
                    }
                    SplitAssignment { repetition: rep, roles }
                })
                .collect())
        }
        SplitMode::FixedLists { train, val, test } => {
            let known: BTreeSet<&str> = by_class.values().flatten().copied().collect();
            let mut roles = BTreeMap::new();
            let lists = [(SplitRole::Train, Some(train)), (SplitRole::Val, val.as_ref()), (SplitRole::Test, Some(test))];
            for (role, path) in lists {
                let Some(path) = path else { continue };
                for id in read_list(path)? {
                    if !known.contains(id.as_str()) {
                        return Err(Error::invalid(format!("{}: `{id}` is not in the manifest", path.display())));
                    }
                    if let Some(prev) = roles.insert(id.clone(), role) {
                        return Err(Error::invalid(format!(
                            "{}: `{id}` is already listed as {}",
                            path.display(),
                            prev.as_str()
                        )));
                    }
                }
            }
            let unlisted = known.len() - roles.len();
            if unlisted > 0 {
                log::warn!("{unlisted} images appear in no split list and are left out");
            }
            Ok(vec![SplitAssignment { repetition: 0, roles }])
        }
    }
}

/// Copies the split onto every variant: a derived record takes the role of
/// its original. Records whose original has no role are dropped.
pub fn apply_splits(manifest: &DatasetManifest, splits: &[SplitAssignment]) -> Result<DatasetManifest> {
    let mut records = Vec::with_capacity(manifest.records.len() * splits.len());
    for s in splits {
        for r in &manifest.records {
            if let Some(role) = s.roles.get(&r.sample_id) {
                records.push(ManifestRecord {
                    split: Some(*role),
                    repetition: Some(s.repetition),
                    ..r.clone()
                });
            }
        }
    }
    let mut m = DatasetManifest::new(&manifest.root, records)?;
    m.notes = manifest.notes.clone();
    Ok(m)
}

fn augmented_name(path: &str, i: usize) -> String {
    let (dir, file) = path.rsplit_once('/').map_or(("", path), |(d, f)| (d, f));
    let name = match file.rsplit_once('.') {
        Some((stem, ext)) if !stem.is_empty() => format!("{stem}__aug{i}.{ext}"),
        _ => format!("{file}__aug{i}"),
    };
    if dir.is_empty() {
        name
    } else {
        format!("{dir}/{name}")
    }
}

/// Materializes one repetition below `out/rep<r>/<split>/`. Training images
/// are copied and get `multiplier` augmented siblings `<stem>__aug<i>`;
/// other splits are copied unchanged. Augmentation seeds depend only on the
/// master seed, the sample id and the copy index.
pub fn materialize_training_set(
    manifest: &DatasetManifest,
    repetition: usize,
    out: &Path,
    multiplier: usize,
    seed: u64,
    jobs: usize,
) -> Result<DatasetManifest> {
    let selected: Vec<&ManifestRecord> = manifest
        .records
        .iter()
        .filter(|r| r.repetition == Some(repetition) && r.split.is_some())
        .collect();
    if selected.is_empty() {
        return Err(Error::invalid(format!("manifest has no split records for repetition {repetition}")));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    let results: Vec<Result<Vec<ManifestRecord>>> = pool.install(|| {
        selected
            .par_iter()
            .map(|r| {
                let role = r.split.expect("filtered on split");
                let src = manifest.resolve(r);
                let rel = format!("rep{repetition}/{}/{}", role.as_str(), rel_string(&r.variant.dir()));
                let rel = format!("{rel}/{}", r.sample_id);
                let dst = out.join(&rel);
                ensure_parent(&dst)?;
                fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
                let mut recs = vec![ManifestRecord {
                    path: rel.clone(),
                    ..(*r).clone()
                }];
                if role == SplitRole::Train && multiplier > 0 {
                    let img = load_image(&src)?;
                    for i in 0..multiplier {
                        let s = derive_seed(seed, &["augment", &r.sample_id, &i.to_string()]);
                        let aug = augment::apply(&img, &augment::sample_spec(s));
                        let aug_rel = augmented_name(&rel, i);
                        save_image(&aug, &out.join(&aug_rel))?;
                        recs.push(ManifestRecord {
                            sample_id: augmented_name(&r.sample_id, i),
                            path: aug_rel,
                            ..(*r).clone()
                        });
                    }
                }
                Ok(recs)
            })
            .collect()
    });
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    let mut m = DatasetManifest::new(out, records)?;
    m.notes = vec![format!("augmentation: offline, multiplier={multiplier}, repetition={repetition}")];
    Ok(m)
}

/// Sample-id to label map of the test records of one repetition and variant.
pub fn truth_labels(manifest: &DatasetManifest, repetition: usize, variant: VariantId) -> HashMap<String, String> {
    manifest
        .records
        .iter()
        .filter(|r| r.repetition == Some(repetition) && r.variant == variant && r.split == Some(SplitRole::Test))
        .map(|r| (r.sample_id.clone(), r.label.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_variants() {
        let all = VariantId::all();
        assert_eq!(all.len(), 10);
        assert_eq!(all.iter().collect::<BTreeSet<_>>().len(), 10);
        assert!(VariantId::new(Method::None, Derivation::Fg).is_err());
        assert!(VariantId::new(Method::Gbvs, Derivation::Original).is_err());
        assert_eq!(VariantId::new(Method::Cos, Derivation::FgRoi).unwrap().dir(), Path::new("COS/FG_ROI"));
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        let a = derive_seed(7, &["split", "0", "ants"]);
        assert_eq!(a, derive_seed(7, &["split", "0", "ants"]));
        assert_ne!(a, derive_seed(7, &["split", "1", "ants"]));
        assert_ne!(a, derive_seed(8, &["split", "0", "ants"]));
        // Length prefixes keep concatenations apart.
        assert_ne!(derive_seed(0, &["ab", "c"]), derive_seed(0, &["a", "bc"]));
    }

    #[test]
    fn augmented_names() {
        assert_eq!(augmented_name("a/b/x.png", 2), "a/b/x__aug2.png");
        assert_eq!(augmented_name("x", 0), "x__aug0");
        assert_eq!(augmented_name(".hidden", 1), ".hidden__aug1");
    }

    fn record(id: &str, label: &str, variant: VariantId) -> ManifestRecord {
        ManifestRecord {
            sample_id: id.into(),
            path: format!("{}/{id}", rel_string(&variant.dir())),
            label: label.into(),
            variant,
            split: None,
            repetition: None,
        }
    }

    #[test]
    fn manifest_text_roundtrip() {
        let v = VariantId::new(Method::Spe, Derivation::Roi).unwrap();
        let mut m = DatasetManifest::new(
            "/data",
            vec![record("b/2.png", "b", v), record("a/1.png", "a", VariantId::ORIGINAL)],
        )
        .unwrap();
        m.notes.push("note".into());
        let text = m.to_tsv();
        assert!(text.starts_with("# note\nsample_id\tpath"));
        assert_eq!(DatasetManifest::parse(&text, "/data", "m").unwrap(), m);
    }

    #[test]
    fn split_partitions_and_propagates() {
        let mut recs = Vec::new();
        for i in 0..40 {
            recs.push(record(&format!("moth/{i:02}.png"), "moth", VariantId::ORIGINAL));
            recs.push(record(&format!("moth/{i:02}.png"), "moth", VariantId::new(Method::Gbvs, Derivation::Fg).unwrap()));
        }
        for i in 0..25 {
            recs.push(record(&format!("ant/{i:02}.png"), "ant", VariantId::ORIGINAL));
        }
        let m = DatasetManifest::new("/x", recs).unwrap();
        let spec = SplitSpec {
            seed: 3,
            ..SplitSpec::default()
        };
        let splits = split(&m, &spec).unwrap();
        assert_eq!(splits.len(), 5);
        for s in &splits {
            let moth_train = s.ids(SplitRole::Train).iter().filter(|id| id.starts_with("moth/")).count();
            assert_eq!(moth_train, 20);
            assert_eq!(s.ids(SplitRole::Test).len(), 20 + 5);
        }
        assert_ne!(splits[0], splits[1]);
        assert_eq!(splits, split(&m, &spec).unwrap());

        let applied = apply_splits(&m, &splits).unwrap();
        assert_eq!(applied.records.len(), 5 * m.records.len());
        let orig: HashMap<(usize, &str), SplitRole> = applied
            .records
            .iter()
            .filter(|r| r.variant.is_original())
            .map(|r| ((r.repetition.unwrap(), r.sample_id.as_str()), r.split.unwrap()))
            .collect();
        for r in &applied.records {
            assert_eq!(r.split.unwrap(), orig[&(r.repetition.unwrap(), r.sample_id.as_str())]);
        }
    }

    #[test]
    fn small_class_is_named() {
        let recs = (0..20).map(|i| record(&format!("tiny/{i}.png"), "tiny", VariantId::ORIGINAL)).collect();
        let m = DatasetManifest::new("/x", recs).unwrap();
        let err = split(&m, &SplitSpec::default()).unwrap_err().to_string();
        assert!(err.contains("tiny"), "{err}");
    }
}

//! Sum-rule fusion of classifier score matrices and imbalanced-class metrics.
//!
//! Score files are produced by externally trained networks. A file looks like
//!
//! ```text
//! #classes<TAB>name1<TAB>...<TAB>nameC
//! #model<TAB>model_id<TAB>arch=DN;method=GBVS;derivation=FG
//! sample_id<TAB>v1<TAB>...<TAB>vC
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Softmax rows whose sum is further than this from 1 produce a warning.
pub const SOFTMAX_TOLERANCE: f64 = 0.01;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ModelTags {
    pub arch: String,
    pub method: String,
    pub derivation: String,
}

impl ModelTags {
    pub fn new(arch: &str, method: &str, derivation: &str) -> Self {
        Self {
            arch: arch.into(),
            method: method.into(),
            derivation: derivation.into(),
        }
    }

    fn parse(s: &str) -> std::result::Result<Self, String> {
        let mut tags = ModelTags::default();
        for part in s.split(';').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("malformed tag `{part}`, expected key=value"))?;
            let v = v.trim().to_string();
            match k.trim() {
                "arch" => tags.arch = v,
                "method" => tags.method = v,
                "derivation" => tags.derivation = v,
                other => return Err(format!("unknown tag `{other}`")),
            }
        }
        Ok(tags)
    }

    fn field(&self, field: TagField) -> &str {
        match field {
            TagField::Arch => &self.arch,
            TagField::Method => &self.method,
            TagField::Derivation => &self.derivation,
        }
    }
}

impl std::fmt::Display for ModelTags {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "arch={};method={};derivation={}", self.arch, self.method, self.derivation)
    }
}

/// Per-sample class scores of one model, `S x C`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub model_id: String,
    pub tags: ModelTags,
    sample_ids: Vec<String>,
    class_names: Vec<String>,
    scores: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(
        model_id: impl Into<String>,
        tags: ModelTags,
        sample_ids: Vec<String>,
        class_names: Vec<String>,
        scores: Vec<f64>,
    ) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::invalid("score matrix needs at least one class"));
        }
        if scores.len() != sample_ids.len() * class_names.len() {
            return Err(Error::invalid(format!(
                "{} scores do not fill {} samples x {} classes",
                scores.len(),
                sample_ids.len(),
                class_names.len()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("score matrix has non-finite values"));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = sample_ids.iter().find(|s| !seen.insert(s.as_str())) {
            return Err(Error::invalid(format!("duplicate sample id `{dup}`")));
        }
        Ok(Self {
            model_id: model_id.into(),
            tags,
            sample_ids,
            class_names,
            scores,
        })
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.n_classes();
        &self.scores[i * c..(i + 1) * c]
    }

    pub fn row_of(&self, sample_id: &str) -> Option<&[f64]> {
        self.sample_ids.iter().position(|s| s == sample_id).map(|i| self.row(i))
    }

    pub fn scaled(&self, factor: f64) -> ScoreMatrix {
        ScoreMatrix {
            scores: self.scores.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Indices of rows whose sum is not within [`SOFTMAX_TOLERANCE`] of 1.
    pub fn non_softmax_rows(&self) -> Vec<usize> {
        (0..self.n_samples())
            .filter(|&i| (self.row(i).iter().sum::<f64>() - 1.0).abs() > SOFTMAX_TOLERANCE)
            .collect()
    }

    /// Serializes to the score file format. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str("#classes");
        for c in &self.class_names {
            out.push('\t');
            out.push_str(c);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "#model\t{}\t{}", self.model_id, self.tags);
        for (i, id) in self.sample_ids.iter().enumerate() {
            out.push_str(id);
            for v in self.row(i) {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

/// Parses a score file. Rows that do not look like softmax output are
/// reported as warnings, not errors.
pub fn parse_scores(text: &str, path: &str) -> Result<(ScoreMatrix, Vec<String>)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let (ln, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty score file"))?;
    let mut fields = header.split('\t');
    if fields.next() != Some("#classes") {
        return Err(parse_err(path, ln, "expected `#classes` header"));
    }
    let class_names: Vec<String> = fields.map(str::to_string).collect();
    if class_names.is_empty() || class_names.iter().any(|c| c.is_empty()) {
        return Err(parse_err(path, ln, "class list is empty or has blank names"));
    }

    let (ln, model_line) = lines
        .next()
        .ok_or_else(|| parse_err(path, 2, "missing `#model` line"))?;
    let parts: Vec<&str> = model_line.split('\t').collect();
    if parts.first() != Some(&"#model") || parts.len() < 2 || parts.len() > 3 || parts[1].is_empty() {
        return Err(parse_err(path, ln, "expected `#model<TAB>id<TAB>tags`"));
    }
    let model_id = parts[1].to_string();
    let tags = match parts.get(2) {
        Some(t) => ModelTags::parse(t).map_err(|m| parse_err(path, ln, m))?,
        None => ModelTags::default(),
    };

    let n_classes = class_names.len();
    let mut sample_ids = Vec::new();
    let mut scores = Vec::new();
    let mut seen = HashMap::new();
    let mut warnings = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default();
        if id.is_empty() {
            return Err(parse_err(path, ln, "missing sample id"));
        }
        if let Some(prev) = seen.insert(id.to_string(), ln) {
            return Err(parse_err(path, ln, format!("duplicate sample id `{id}` (first on line {prev})")));
        }
        let values = fields
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, ln, format!("non-numeric score `{t}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != n_classes {
            return Err(parse_err(
                path,
                ln,
                format!("expected {n_classes} scores, found {}", values.len()),
            ));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SOFTMAX_TOLERANCE {
            warnings.push(format!("{path}:{ln}: scores sum to {sum:.4}, not a softmax row"));
        }
        sample_ids.push(id.to_string());
        scores.extend(values);
    }
    let matrix = ScoreMatrix::new(model_id, tags, sample_ids, class_names, scores)?;
    Ok((matrix, warnings))
}

pub fn load_scores(path: &Path) -> Result<ScoreMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (m, warnings) = parse_scores(&text, &path.display().to_string())?;
    for w in warnings {
        log::warn!("{w}");
    }
    Ok(m)
}

fn describe_difference(a: &BTreeSet<&str>, b: &BTreeSet<&str>, a_name: &str, b_name: &str) -> String {
    let only_a: Vec<_> = a.difference(b).copied().collect();
    let only_b: Vec<_> = b.difference(a).copied().collect();
    format!(
        "only in {a_name}: [{}]; only in {b_name}: [{}]",
        only_a.join(", "),
        only_b.join(", ")
    )
}

/// Elementwise sum of the members, rows in ascending sample id order.
///
/// Each cell adds the member values in ascending order, so the result does
/// not depend on member order.
pub fn sum_rule(matrices: &[&ScoreMatrix]) -> Result<ScoreMatrix> {
    let first = *matrices
        .first()
        .ok_or_else(|| Error::invalid("sum rule needs at least one score matrix"))?;
    let ids: BTreeSet<&str> = first.sample_ids.iter().map(String::as_str).collect();
    for m in &matrices[1..] {
        if m.class_names != first.class_names {
            return Err(Error::Alignment(format!(
                "class lists of `{}` and `{}` differ: [{}] vs [{}]",
                first.model_id,
                m.model_id,
                first.class_names.join(", "),
                m.class_names.join(", ")
            )));
        }
        let other: BTreeSet<&str> = m.sample_ids.iter().map(String::as_str).collect();
        if other != ids {
            return Err(Error::Alignment(format!(
                "sample ids of `{}` and `{}` differ: {}",
                first.model_id,
                m.model_id,
                describe_difference(&ids, &other, &first.model_id, &m.model_id)
            )));
        }
    }

    let index: Vec<HashMap<&str, usize>> = matrices
        .iter()
        .map(|m| m.sample_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect())
        .collect();
    let n_classes = first.n_classes();
    let mut scores = Vec::with_capacity(ids.len() * n_classes);
    let mut cell = Vec::with_capacity(matrices.len());
    for id in &ids {
        for c in 0..n_classes {
            cell.clear();
            cell.extend(matrices.iter().zip(&index).map(|(m, idx)| m.row(idx[id])[c]));
            cell.sort_by(f64::total_cmp);
            scores.push(cell.iter().sum());
        }
    }

    let mut members: Vec<&str> = matrices.iter().map(|m| m.model_id.as_str()).collect();
    members.sort_unstable();
    let common = |f: TagField| {
        let v = first.tags.field(f);
        if matrices.iter().all(|m| m.tags.field(f) == v) {
            v.to_string()
        } else {
            "mixed".to_string()
        }
    };
    ScoreMatrix::new(
        members.join("+"),
        ModelTags {
            arch: common(TagField::Arch),
            method: common(TagField::Method),
            derivation: common(TagField::Derivation),
        },
        ids.iter().map(|s| s.to_string()).collect(),
        first.class_names.clone(),
        scores,
    )
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LabelVector {
    pub sample_ids: Vec<String>,
    pub labels: Vec<String>,
}

impl LabelVector {
    pub fn new(sample_ids: Vec<String>, labels: Vec<String>) -> Result<Self> {
        if sample_ids.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} sample ids but {} labels",
                sample_ids.len(),
                labels.len()
            )));
        }
        Ok(Self { sample_ids, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (s, l) in self.sample_ids.iter().zip(&self.labels) {
            let _ = writeln!(out, "{s}\t{l}");
        }
        out
    }
}

/// Parses `sample_id<TAB>label` lines.
pub fn parse_truth(text: &str, path: &str) -> Result<LabelVector> {
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, label) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, ln, "expected `sample_id<TAB>label`"))?;
        if id.is_empty() || label.is_empty() || label.contains('\t') {
            return Err(parse_err(path, ln, "expected `sample_id<TAB>label`"));
        }
        if let Some(prev) = seen.insert(id.to_string(), ln) {
            return Err(parse_err(path, ln, format!("duplicate sample id `{id}` (first on line {prev})")));
        }
        ids.push(id.to_string());
        labels.push(label.to_string());
    }
    LabelVector::new(ids, labels)
}

pub fn load_truth(path: &Path) -> Result<LabelVector> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_truth(&text, &path.display().to_string())
}

/// Arg-max class per sample; ties go to the lowest class index.
pub fn predict(matrix: &ScoreMatrix) -> LabelVector {
    let labels = (0..matrix.n_samples())
        .map(|i| {
            let row = matrix.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            matrix.class_names[best].clone()
        })
        .collect();
    LabelVector {
        sample_ids: matrix.sample_ids.clone(),
        labels,
    }
}

/// `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn from_indices(class_names: Vec<String>, pred: &[usize], truth: &[usize]) -> Self {
        let c = class_names.len();
        let mut counts = vec![vec![0; c]; c];
        for (&p, &t) in pred.iter().zip(truth) {
            counts[t][p] += 1;
        }
        Self { class_names, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// `(tp, fp, fn, tn)` of the one-vs-all problem for class `c`.
    pub fn one_vs_all(&self, c: usize) -> (usize, usize, usize, usize) {
        let tp = self.counts[c][c];
        let col: usize = self.counts.iter().map(|row| row[c]).sum();
        let row: usize = self.counts[c].iter().sum();
        let fp = col - tp;
        let fnn = row - tp;
        (tp, fp, fnn, self.total() - tp - fp - fnn)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tpr: f64,
    pub tnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub weighted_f_score: f64,
    pub weighted_g_mean: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn metrics_from_confusion(confusion: ConfusionMatrix) -> MetricsReport {
    let total = confusion.total();
    let correct: usize = (0..confusion.class_names.len()).map(|c| confusion.counts[c][c]).sum();
    let per_class: Vec<ClassMetrics> = confusion
        .class_names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let (tp, fp, fnn, tn) = confusion.one_vs_all(c);
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fnn);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            let tnr = ratio(tn, tn + fp);
            ClassMetrics {
                class: name.clone(),
                support: tp + fnn,
                precision,
                recall,
                f1,
                tpr: recall,
                tnr,
            }
        })
        .collect();
    let weight = |m: &ClassMetrics| m.support as f64 / total as f64;
    MetricsReport {
        accuracy: ratio(correct, total),
        weighted_f_score: per_class.iter().map(|m| weight(m) * m.f1).sum(),
        weighted_g_mean: per_class.iter().map(|m| weight(m) * (m.tpr * m.tnr).sqrt()).sum(),
        per_class,
        confusion,
    }
}

/// Pairs predictions with ground truth by sample id; both must cover the same samples.
fn align(pred: &LabelVector, truth: &LabelVector) -> Result<Vec<(String, String)>> {
    let truth_map: HashMap<&str, &str> = truth
        .sample_ids
        .iter()
        .map(String::as_str)
        .zip(truth.labels.iter().map(String::as_str))
        .collect();
    let pred_ids: BTreeSet<&str> = pred.sample_ids.iter().map(String::as_str).collect();
    let truth_ids: BTreeSet<&str> = truth_map.keys().copied().collect();
    if pred_ids != truth_ids || pred_ids.len() != pred.len() {
        return Err(Error::Alignment(format!(
            "predictions and ground truth cover different samples: {}",
            describe_difference(&pred_ids, &truth_ids, "predictions", "truth")
        )));
    }
    Ok(pred
        .sample_ids
        .iter()
        .zip(&pred.labels)
        .map(|(id, p)| (p.clone(), truth_map[id.as_str()].to_string()))
        .collect())
}

/// Full report over `class_names`; labels outside the list are rejected.
/// An empty class list means "every label seen", sorted.
pub fn evaluate(pred: &LabelVector, truth: &LabelVector, class_names: &[String]) -> Result<MetricsReport> {
    let pairs = align(pred, truth)?;
    if pairs.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty prediction set"));
    }
    let classes: Vec<String> = if class_names.is_empty() {
        pairs
            .iter()
            .flat_map(|(p, t)| [p.clone(), t.clone()])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        class_names.to_vec()
    };
    let index: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let lookup = |label: &str| {
        index
            .get(label)
            .copied()
            .ok_or_else(|| Error::invalid(format!("label `{label}` is not one of the known classes")))
    };
    let mut p_idx = Vec::with_capacity(pairs.len());
    let mut t_idx = Vec::with_capacity(pairs.len());
    for (p, t) in &pairs {
        p_idx.push(lookup(p)?);
        t_idx.push(lookup(t)?);
    }
    Ok(metrics_from_confusion(ConfusionMatrix::from_indices(classes, &p_idx, &t_idx)))
}

pub fn accuracy(pred: &LabelVector, truth: &LabelVector) -> Result<f64> {
    Ok(evaluate(pred, truth, &[])?.accuracy)
}

pub fn weighted_f_score(pred: &LabelVector, truth: &LabelVector) -> Result<f64> {
    Ok(evaluate(pred, truth, &[])?.weighted_f_score)
}

pub fn weighted_g_mean(pred: &LabelVector, truth: &LabelVector) -> Result<f64> {
    Ok(evaluate(pred, truth, &[])?.weighted_g_mean)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TagField {
    Arch,
    Method,
    Derivation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TagFilter {
    pub field: TagField,
    pub value: String,
}

impl TagFilter {
    fn matches(&self, tags: &ModelTags) -> bool {
        tags.field(self.field).eq_ignore_ascii_case(&self.value)
    }

    /// Maps a row-name token (`Spectral`, `FG_ROI`, `DN`, ...) to a tag filter.
    pub fn from_token(token: &str) -> Self {
        let upper = token.to_ascii_uppercase();
        let (field, value) = match upper.as_str() {
            "SPECTRAL" | "SPE" => (TagField::Method, "SPE"),
            "GBVS" => (TagField::Method, "GBVS"),
            "COS" => (TagField::Method, "COS"),
            "FG" => (TagField::Derivation, "FG"),
            "ROI" => (TagField::Derivation, "ROI"),
            "FG_ROI" | "FG-ROI" => (TagField::Derivation, "FG_ROI"),
            "ORIGINAL" | "ORIGINALIMAGE" => (TagField::Derivation, "ORIGINAL"),
            _ => (TagField::Arch, token),
        };
        Self {
            field,
            value: value.to_string(),
        }
    }
}

/// A named ensemble: an optional explicit member list, required tags, and
/// excluded tags.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EnsembleSpec {
    pub name: String,
    pub include: Option<Vec<String>>,
    pub require: Vec<TagFilter>,
    pub exclude: Vec<TagFilter>,
}

impl EnsembleSpec {
    pub fn all(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            include: None,
            require: Vec::new(),
            exclude: Vec::new(),
        }
    }

    pub fn members(name: impl Into<String>, ids: Vec<String>) -> Self {
        Self {
            include: Some(ids),
            ..Self::all(name)
        }
    }

    /// Parses table row names:
    ///
    /// - `AllSum`: every model;
    /// - `FusionSum(DN)` or `FusionSum[DN]`: every model of architecture `DN`;
    /// - a `\TOKEN` suffix excludes a method (`Spectral`, `GBVS`, `COS`),
    ///   a derivation (`FG`, `ROI`, `FG_ROI`, `ORIGINAL`) or an architecture.
    pub fn parse(name: &str) -> Result<Self> {
        let mut parts = name.split('\\');
        let base = parts.next().unwrap_or_default().trim();
        let mut spec = Self::all(name);
        if base.eq_ignore_ascii_case("AllSum") {
        } else if let Some(arch) = base
            .strip_prefix("FusionSum")
            .and_then(|rest| {
                rest.strip_prefix('(')
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| rest.strip_prefix('[').and_then(|r| r.strip_suffix(']')))
            })
            .filter(|a| !a.is_empty())
        {
            spec.require.push(TagFilter {
                field: TagField::Arch,
                value: arch.to_string(),
            });
        } else {
            return Err(Error::Config(format!(
                "ensemble `{name}`: base must be `AllSum` or `FusionSum(<arch>)`"
            )));
        }
        for token in parts {
            if token.trim().is_empty() {
                return Err(Error::Config(format!("ensemble `{name}` has an empty exclusion")));
            }
            spec.exclude.push(TagFilter::from_token(token.trim()));
        }
        Ok(spec)
    }

    pub fn selects(&self, m: &ScoreMatrix) -> bool {
        self.include.as_ref().is_none_or(|ids| ids.contains(&m.model_id))
            && self.require.iter().all(|f| f.matches(&m.tags))
            && !self.exclude.iter().any(|f| f.matches(&m.tags))
    }

    pub fn resolve<'a>(&self, matrices: &'a [ScoreMatrix]) -> Result<Vec<&'a ScoreMatrix>> {
        let members: Vec<&ScoreMatrix> = matrices.iter().filter(|m| self.selects(m)).collect();
        if members.is_empty() {
            return Err(Error::Config(format!(
                "ensemble `{}` selects no score matrix",
                self.name
            )));
        }
        Ok(members)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub name: String,
    pub members: Vec<String>,
    pub metrics: MetricsReport,
}

pub fn evaluate_matrix(matrix: &ScoreMatrix, truth: &LabelVector) -> Result<MetricsReport> {
    evaluate(&predict(matrix), truth, matrix.class_names())
}

/// One row per spec, in spec order, then one row per individual matrix.
pub fn ensemble_report(specs: &[EnsembleSpec], matrices: &[ScoreMatrix], truth: &LabelVector) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::with_capacity(specs.len() + matrices.len());
    for spec in specs {
        let members = spec.resolve(matrices)?;
        let fused = sum_rule(&members)?;
        rows.push(ReportRow {
            name: spec.name.clone(),
            members: members.iter().map(|m| m.model_id.clone()).collect(),
            metrics: evaluate_matrix(&fused, truth)?,
        });
    }
    for m in matrices {
        rows.push(ReportRow {
            name: m.model_id.clone(),
            members: vec![m.model_id.clone()],
            metrics: evaluate_matrix(m, truth)?,
        });
    }
    Ok(rows)
}

pub fn report_tsv(rows: &[ReportRow]) -> String {
    let mut out = String::from("name\tmembers\taccuracy\tweighted_f_score\tweighted_g_mean\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            r.name,
            r.members.join(","),
            r.metrics.accuracy,
            r.metrics.weighted_f_score,
            r.metrics.weighted_g_mean
        );
    }
    out
}

pub fn report_json(rows: &[ReportRow]) -> String {
    serde_json::to_string_pretty(rows).expect("report rows serialize")
}

const TABLE_METHODS: [&str; 3] = ["COS", "GBVS", "SPE"];
const TABLE_DERIVATIONS: [&str; 3] = ["FG", "ROI", "FG_ROI"];

/// Accuracy grid laid out like the published tables: one column per
/// architecture, one row per (method, derivation), then the original images,
/// the per-architecture fusions and finally the extra ensembles in the
/// first column. Cells are percentages; missing models leave the cell empty.
pub fn accuracy_table(matrices: &[ScoreMatrix], truth: &LabelVector, extra: &[EnsembleSpec]) -> Result<String> {
    let mut archs: Vec<&str> = Vec::new();
    for m in matrices {
        if !archs.contains(&m.tags.arch.as_str()) {
            archs.push(&m.tags.arch);
        }
    }
    let pct = |m: &ScoreMatrix| -> Result<String> { Ok(format!("{:.2}", 100.0 * evaluate_matrix(m, truth)?.accuracy)) };
    let find = |arch: &str, method: &str, derivation: &str| {
        matrices.iter().find(|m| {
            m.tags.arch == arch
                && m.tags.method.eq_ignore_ascii_case(method)
                && m.tags.derivation.eq_ignore_ascii_case(derivation)
        })
    };
    let fused_cell = |spec: &EnsembleSpec| -> Result<String> {
        let members: Vec<&ScoreMatrix> = matrices.iter().filter(|m| spec.selects(m)).collect();
        if members.is_empty() {
            return Ok(String::new());
        }
        pct(&sum_rule(&members)?)
    };

    let mut out = String::from("\t");
    for a in &archs {
        let _ = write!(out, "\t{a}");
    }
    out.push('\n');
    let mut grid_rows: BTreeMap<usize, (String, String, Vec<String>)> = BTreeMap::new();
    let mut idx = 0;
    for method in TABLE_METHODS {
        for (d, derivation) in TABLE_DERIVATIONS.iter().enumerate() {
            let cells = archs
                .iter()
                .map(|a| find(a, method, derivation).map(pct).transpose().map(Option::unwrap_or_default))
                .collect::<Result<Vec<_>>>()?;
            let label = if d == 0 { method.to_string() } else { String::new() };
            grid_rows.insert(idx, (label, derivation.to_string(), cells));
            idx += 1;
        }
    }
    let original = archs
        .iter()
        .map(|a| find(a, "NONE", "ORIGINAL").map(pct).transpose().map(Option::unwrap_or_default))
        .collect::<Result<Vec<_>>>()?;
    grid_rows.insert(idx, ("OriginalImage".into(), String::new(), original));
    idx += 1;
    for (label, exclude) in [("FusionSum", None), ("FusionSum\\FG_ROI", Some("FG_ROI"))] {
        let cells = archs
            .iter()
            .map(|a| {
                let mut spec = EnsembleSpec::parse(&format!("FusionSum({a})"))?;
                if let Some(tok) = exclude {
                    spec.exclude.push(TagFilter::from_token(tok));
                }
                fused_cell(&spec)
            })
            .collect::<Result<Vec<_>>>()?;
        grid_rows.insert(idx, (label.into(), String::new(), cells));
        idx += 1;
    }
    for (label, sub, cells) in grid_rows.values() {
        let _ = write!(out, "{label}\t{sub}");
        for c in cells {
            let _ = write!(out, "\t{c}");
        }
        out.push('\n');
    }
    for spec in extra {
        let members = spec.resolve(matrices)?;
        let _ = writeln!(out, "{}\t\t{}", spec.name, pct(&sum_rule(&members)?)?);
    }
    Ok(out)
}

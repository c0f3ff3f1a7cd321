//! Logit-lens token maps, keyword segmentation with neighbor voting, and
//! the counting statistics read off a token map.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::numerics::{softmax_in_place, Matrix};
use crate::{Error, Result, Scalar};

pub const BACKGROUND: &str = "background";
pub const OTHERS: &str = "others";
pub const BACKGROUND_COLOR: [u8; 3] = [0, 0, 0];
pub const OTHERS_COLOR: [u8; 3] = [128, 128, 128];

/// One grid cell: the two most probable tokens and their probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenCell {
    pub top1: String,
    pub top2: String,
    pub p1: f64,
    pub p2: f64,
}

impl TokenCell {
    /// Cell whose two candidates are the same token, with `p1 = 1`, `p2 = 0`.
    pub fn plain(token: &str) -> Self {
        Self {
            top1: token.to_owned(),
            top2: token.to_owned(),
            p1: 1.0,
            p2: 0.0,
        }
    }

    pub fn with_second(top1: &str, top2: &str) -> Self {
        Self {
            top1: top1.to_owned(),
            top2: top2.to_owned(),
            p1: 0.5,
            p2: 0.5,
        }
    }
}

/// Row-major `height × width` grid of decoded tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenMap {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<TokenCell>,
}

impl TokenMap {
    pub fn new(height: usize, width: usize, cells: Vec<TokenCell>) -> Result<Self> {
        let tm = Self { height, width, cells };
        tm.validate()?;
        Ok(tm)
    }

    /// Grid of single-candidate cells, one string per cell.
    pub fn from_tokens(height: usize, width: usize, tokens: &[&str]) -> Result<Self> {
        Self::new(height, width, tokens.iter().map(|t| TokenCell::plain(t)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.height * self.width != self.cells.len() {
            return Err(Error::invalid(
                "cells",
                format!("{} cells for a {}x{} map", self.cells.len(), self.height, self.width),
            ));
        }
        if self.cells.is_empty() {
            return Err(Error::EmptyInput);
        }
        for (i, c) in self.cells.iter().enumerate() {
            let ok = (0.0..=1.0).contains(&c.p1) && (0.0..=1.0).contains(&c.p2) && c.p1 >= c.p2;
            if !ok {
                return Err(Error::invalid("cells", format!("cell {i}: need 1 >= p1 >= p2 >= 0")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, i: usize, j: usize) -> &TokenCell {
        &self.cells[i * self.width + j]
    }

    /// Raster-scan top-1 sequence.
    pub fn top1(&self) -> Vec<&str> {
        self.cells.iter().map(|c| c.top1.as_str()).collect()
    }
}

/// Indices of the largest and second-largest entries; ties go to the lower index.
fn top_two<T: Scalar>(p: &[T]) -> (usize, usize) {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    let mut second = usize::from(best == 0);
    for (i, &x) in p.iter().enumerate() {
        if i != best && x > p[second] {
            second = i;
        }
    }
    (best, second)
}

/// Reads each embedding row through the unembedding `w_u` (`D × |vocab|`).
pub fn logit_lens<T: Scalar>(
    v: &Matrix<T>,
    w_u: &Matrix<T>,
    vocab: &[String],
    height: usize,
    width: usize,
) -> Result<TokenMap> {
    if v.cols() != w_u.rows() {
        return Err(Error::DimensionMismatch {
            expected: w_u.rows(),
            got: v.cols(),
        });
    }
    if w_u.cols() != vocab.len() {
        return Err(Error::DimensionMismatch {
            expected: w_u.cols(),
            got: vocab.len(),
        });
    }
    if vocab.len() < 2 {
        return Err(Error::invalid("vocab", "needs at least two tokens"));
    }
    if height * width != v.rows() {
        return Err(Error::invalid(
            "height",
            format!("{height}x{width} grid does not hold {} embeddings", v.rows()),
        ));
    }
    let logits = v.matmul(w_u)?;
    let cells = logits
        .iter_rows()
        .map(|row| {
            let mut p = row.to_vec();
            softmax_in_place(&mut p);
            let (a, b) = top_two(&p);
            TokenCell {
                top1: vocab[a].clone(),
                top2: vocab[b].clone(),
                p1: p[a].as_f64(),
                p2: p[b].as_f64(),
            }
        })
        .collect();
    TokenMap::new(height, width, cells)
}

/// Builtin meaninglessness: empty, or only ASCII punctuation and whitespace.
pub fn default_meaningless(token: &str) -> bool {
    token.chars().all(|c| c.is_ascii_punctuation() || c.is_whitespace())
}

/// Keyword sets, colors and synonym classes. Maps keep file order, which
/// decides which object wins when a token appears in several sets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordConfig {
    pub objects: IndexMap<String, Vec<String>>,
    #[serde(default)]
    pub representative: IndexMap<String, Vec<String>>,
    #[serde(default)]
    pub attributes: IndexMap<String, Vec<String>>,
    #[serde(default)]
    pub colors: IndexMap<String, [u8; 3]>,
    /// Replaces the builtin punctuation/whitespace rule when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meaningless: Option<Vec<String>>,
    #[serde(default)]
    pub synonyms: IndexMap<String, Vec<String>>,
}

impl KeywordConfig {
    /// Checks the config and returns warnings about tokens claimed by more
    /// than one object.
    pub fn validate(&self) -> Result<Vec<String>> {
        for name in self.objects.keys() {
            if name == BACKGROUND || name == OTHERS {
                return Err(Error::invalid("objects", format!("\"{name}\" is a reserved label")));
            }
        }
        if matches!(&self.meaningless, Some(m) if m.is_empty()) {
            return Err(Error::invalid("meaningless", "set must not be empty"));
        }
        let mut warnings = Vec::new();
        let mut owner: IndexMap<&str, &str> = IndexMap::new();
        for (obj, words) in &self.objects {
            for w in words {
                match owner.get(w.as_str()) {
                    Some(&first) if first != obj => {
                        warnings.push(format!("keyword \"{w}\" listed under \"{first}\" and \"{obj}\"; using \"{first}\""))
                    }
                    Some(_) => {}
                    None => {
                        owner.insert(w, obj);
                    }
                }
            }
        }
        Ok(warnings)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// First object (in config order) whose keyword set holds `token`.
    pub fn object_for(&self, token: &str) -> Option<&str> {
        self.objects
            .iter()
            .find(|(_, words)| words.iter().any(|w| w == token))
            .map(|(name, _)| name.as_str())
    }

    pub fn is_meaningless(&self, token: &str) -> bool {
        match &self.meaningless {
            Some(set) => set.iter().any(|m| m == token),
            None => default_meaningless(token),
        }
    }

    pub fn color(&self, label: &str) -> Result<[u8; 3]> {
        if let Some(&c) = self.colors.get(label) {
            return Ok(c);
        }
        match label {
            BACKGROUND => Ok(BACKGROUND_COLOR),
            OTHERS => Ok(OTHERS_COLOR),
            _ => Err(Error::MissingColor(label.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<String>,
}

impl LabelMap {
    pub fn label(&self, i: usize, j: usize) -> &str {
        &self.labels[i * self.width + j]
    }
}

fn resolve_unclassified(tm: &TokenMap, i: usize, j: usize, cfg: &KeywordConfig) -> String {
    // token -> (count, cumulative distance)
    let mut votes: IndexMap<&str, (usize, usize)> = IndexMap::new();
    for di in -1i64..=1 {
        for dj in -1i64..=1 {
            let (ni, nj) = (i as i64 + di, j as i64 + dj);
            if (di, dj) == (0, 0) || ni < 0 || nj < 0 || ni >= tm.height as i64 || nj >= tm.width as i64 {
                continue;
            }
            let token = tm.cell(ni as usize, nj as usize).top1.as_str();
            if cfg.is_meaningless(token) {
                continue;
            }
            let e = votes.entry(token).or_default();
            e.0 += 1;
            e.1 += (di.abs() + dj.abs()) as usize;
        }
    }
    let winner = votes
        .iter()
        .min_by(|(ta, (ca, da)), (tb, (cb, db))| cb.cmp(ca).then(da.cmp(db)).then(ta.cmp(tb)))
        .map(|(t, _)| *t);
    match winner {
        None => BACKGROUND.to_owned(),
        Some(t) => cfg.object_for(t).unwrap_or(OTHERS).to_owned(),
    }
}

/// Keyword cells take their object directly; every other cell votes among
/// its meaningful 8-neighbors (ties: lower cumulative Manhattan distance,
/// then token text).
pub fn label_map(tm: &TokenMap, cfg: &KeywordConfig) -> LabelMap {
    let mut labels = Vec::with_capacity(tm.len());
    for i in 0..tm.height {
        for j in 0..tm.width {
            let label = match cfg.object_for(&tm.cell(i, j).top1) {
                Some(obj) => obj.to_owned(),
                None => resolve_unclassified(tm, i, j, cfg),
            };
            labels.push(label);
        }
    }
    LabelMap {
        height: tm.height,
        width: tm.width,
        labels,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMap {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl SegMap {
    pub fn pixel(&self, i: usize, j: usize) -> [u8; 3] {
        self.pixels[i * self.width + j]
    }

    /// Binary PPM (P6), one pixel per cell.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().flatten());
        out
    }

    pub fn write_ppm(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_ppm())?;
        Ok(())
    }
}

pub fn render_seg_map(lm: &LabelMap, cfg: &KeywordConfig) -> Result<SegMap> {
    let pixels = lm.labels.iter().map(|l| cfg.color(l)).collect::<Result<_>>()?;
    Ok(SegMap {
        height: lm.height,
        width: lm.width,
        pixels,
    })
}

fn union<'a>(sets: &'a IndexMap<String, Vec<String>>) -> HashSet<&'a str> {
    sets.values().flatten().map(String::as_str).collect()
}

fn fraction(tm: &TokenMap, set: &HashSet<&str>) -> f64 {
    if tm.is_empty() {
        return 0.0;
    }
    let hits = tm.cells.iter().filter(|c| set.contains(c.top1.as_str())).count();
    hits as f64 / tm.len() as f64
}

/// `(r_A, r_R)`: share of cells whose top-1 token is an attribute word /
/// a representative word of any object.
pub fn word_ratios(tm: &TokenMap, cfg: &KeywordConfig) -> (f64, f64) {
    (
        fraction(tm, &union(&cfg.attributes)),
        fraction(tm, &union(&cfg.representative)),
    )
}

pub fn emergence_rate<S: AsRef<str>>(tm: &TokenMap, names: &[S]) -> f64 {
    fraction(tm, &names.iter().map(AsRef::as_ref).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Top-1 only.
    Strict,
    /// Top-1 and top-2.
    Loose,
}

/// Whether any scanned token is `class` itself or one of its synonyms.
pub fn synonym_answer(tm: &TokenMap, class: &str, cfg: &KeywordConfig, mode: MatchMode) -> Result<bool> {
    let syns = cfg
        .synonyms
        .get(class)
        .ok_or_else(|| Error::UnknownClass(class.to_owned()))?;
    let hit = |t: &str| t == class || syns.iter().any(|s| s == t);
    Ok(tm.cells.iter().any(|c| hit(&c.top1) || (mode == MatchMode::Loose && hit(&c.top2))))
}

/// Plain-text grid of labels, one row per line, for quick inspection.
pub fn format_label_grid(lm: &LabelMap) -> String {
    let mut s = String::new();
    for i in 0..lm.height {
        let row: Vec<&str> = (0..lm.width).map(|j| lm.label(i, j)).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

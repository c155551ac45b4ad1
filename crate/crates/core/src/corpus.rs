//! Streaming CONLL-U ingestion and grammatical value statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use crate::baseline::{percentile_test, sample_baseline, BaselineSample, Verdict, DEFAULT_SAMPLES};
use crate::error::{Error, Result};
use crate::information::{agr_discriminability, entropy, kl_divergence, CategoricalDistribution};

/// Bin for tokens that do not carry a feature.
pub const UNMARKED: &str = "∅";
pub const GENDER: &str = "Gender";
pub const NUMBER: &str = "Number";
pub const DUAL: &str = "Dual";
/// Fraction of malformed token lines above which parsing fails.
pub const MALFORMED_LIMIT: f64 = 0.01;

const KEPT_LINE_NUMBERS: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenRecord {
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub feats: BTreeMap<String, String>,
}

impl TokenRecord {
    pub fn feat(&self, key: &str) -> Option<&str> {
        self.feats.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    pub lines: usize,
    pub sentences: usize,
    pub tokens: usize,
    /// Multiword ranges and empty nodes.
    pub skipped: usize,
    pub malformed: usize,
    /// First malformed line numbers (1-based).
    pub malformed_lines: Vec<usize>,
}

impl ParseStats {
    fn candidates(&self) -> usize {
        self.tokens + self.skipped + self.malformed
    }

    /// Fails when more than 1% of token lines were malformed.
    pub fn check(&self) -> Result<()> {
        if self.malformed as f64 > MALFORMED_LIMIT * self.candidates() as f64 {
            return Err(Error::Malformed {
                malformed: self.malformed,
                total: self.candidates(),
                lines: self.malformed_lines.clone(),
            });
        }
        Ok(())
    }
}

enum Line {
    Token(TokenRecord),
    Skip,
    Malformed,
}

fn parse_feats(s: &str) -> Option<BTreeMap<String, String>> {
    let mut feats = BTreeMap::new();
    if s == "_" {
        return Some(feats);
    }
    for pair in s.split('|') {
        let (k, v) = pair.split_once('=')?;
        if k.is_empty() || v.is_empty() || feats.insert(k.to_string(), v.to_string()).is_some() {
            return None;
        }
    }
    Some(feats)
}

fn parse_token_line(line: &str) -> Line {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 10 || fields.iter().any(|f| f.is_empty()) {
        return Line::Malformed;
    }
    let id = fields[0];
    let numeric = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if let Some((a, b)) = id.split_once('-').or_else(|| id.split_once('.')) {
        return if numeric(a) && numeric(b) {
            Line::Skip
        } else {
            Line::Malformed
        };
    }
    if !numeric(id) {
        return Line::Malformed;
    }
    match parse_feats(fields[5]) {
        Some(feats) => Line::Token(TokenRecord {
            form: fields[1].to_string(),
            lemma: fields[2].to_string(),
            upos: fields[3].to_string(),
            feats,
        }),
        None => Line::Malformed,
    }
}

/// Iterator over the tokens of a CONLL-U stream.
///
/// I/O failures end the iteration; call [`ConlluReader::finish`] afterwards
/// to surface them together with the malformed-line check.
pub struct ConlluReader<R> {
    input: R,
    buf: Vec<u8>,
    stats: ParseStats,
    in_sentence: bool,
    error: Option<io::Error>,
    path: PathBuf,
}

impl<R: BufRead> ConlluReader<R> {
    pub fn new(input: R) -> Self {
        Self {
            input,
            buf: Vec::with_capacity(256),
            stats: ParseStats::default(),
            in_sentence: false,
            error: None,
            path: PathBuf::from("<stream>"),
        }
    }

    fn with_path(mut self, path: &Path) -> Self {
        self.path = path.to_path_buf();
        self
    }

    pub fn stats(&self) -> &ParseStats {
        &self.stats
    }

    pub fn finish(self) -> Result<ParseStats> {
        if let Some(e) = self.error {
            return Err(Error::io(self.path, e));
        }
        self.stats.check()?;
        Ok(self.stats)
    }

    fn malformed(&mut self) {
        self.stats.malformed += 1;
        if self.stats.malformed_lines.len() < KEPT_LINE_NUMBERS {
            self.stats.malformed_lines.push(self.stats.lines);
        }
    }
}

impl<R: BufRead> Iterator for ConlluReader<R> {
    type Item = TokenRecord;

    fn next(&mut self) -> Option<TokenRecord> {
        if self.error.is_some() {
            return None;
        }
        loop {
            self.buf.clear();
            match self.input.read_until(b'\n', &mut self.buf) {
                Ok(0) => {
                    if self.in_sentence {
                        self.stats.sentences += 1;
                        self.in_sentence = false;
                    }
                    return None;
                }
                Ok(_) => {}
                Err(e) => {
                    self.error = Some(e);
                    return None;
                }
            }
            self.stats.lines += 1;
            let Ok(line) = std::str::from_utf8(&self.buf) else {
                self.malformed();
                continue;
            };
            let line = line.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() {
                if self.in_sentence {
                    self.stats.sentences += 1;
                    self.in_sentence = false;
                }
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            self.in_sentence = true;
            match parse_token_line(line) {
                Line::Token(t) => {
                    self.stats.tokens += 1;
                    return Some(t);
                }
                Line::Skip => self.stats.skipped += 1,
                Line::Malformed => self.malformed(),
            }
        }
    }
}

/// Tokens of an in-memory or streamed CONLL-U document.
pub fn parse_conllu<R: BufRead>(input: R) -> ConlluReader<R> {
    ConlluReader::new(input)
}

/// Opens a CONLL-U file, decompressing gzip input detected by its magic bytes.
pub fn open_conllu(path: &Path) -> Result<ConlluReader<Box<dyn BufRead + Send>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::with_capacity(1 << 16, file);
    let gz = reader
        .fill_buf()
        .map_err(|e| Error::io(path, e))?
        .starts_with(&[0x1f, 0x8b]);
    let input: Box<dyn BufRead + Send> = if gz {
        Box::new(BufReader::with_capacity(1 << 16, MultiGzDecoder::new(reader)))
    } else {
        Box::new(reader)
    };
    Ok(ConlluReader::new(input).with_path(path))
}

/// A lemma set, or every lemma.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Allowlist {
    All,
    Lemmas(HashSet<String>),
}

impl Allowlist {
    pub fn contains(&self, lemma: &str) -> bool {
        match self {
            Allowlist::All => true,
            Allowlist::Lemmas(s) => s.contains(lemma),
        }
    }

    /// One lemma per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        Allowlist::Lemmas(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }
}

impl<S: Into<String>> FromIterator<S> for Allowlist {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Allowlist::Lemmas(iter.into_iter().map(Into::into).collect())
    }
}

/// `(gender, number)` with [`UNMARKED`] for a missing feature.
pub type Cell = (String, String);

/// Gender × number token counts with per-lemma breakdown.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GrammarCountTable {
    pub language: String,
    pub subset: String,
    cells: BTreeMap<Cell, u64>,
    types: HashMap<String, BTreeMap<Cell, u64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRow {
    pub gender: String,
    pub number: String,
    pub tokens: u64,
    pub types: u64,
}

fn cell_of(t: &TokenRecord) -> Cell {
    (
        t.feat(GENDER).unwrap_or(UNMARKED).to_string(),
        t.feat(NUMBER).unwrap_or(UNMARKED).to_string(),
    )
}

impl GrammarCountTable {
    pub fn new(language: impl Into<String>, subset: impl Into<String>) -> Self {
        Self {
            language: language.into(),
            subset: subset.into(),
            ..Self::default()
        }
    }

    pub fn add(&mut self, lemma: &str, cell: Cell, count: u64) {
        if count == 0 {
            return;
        }
        let per = match self.types.get_mut(lemma) {
            Some(p) => p,
            None => self.types.entry(lemma.to_string()).or_default(),
        };
        *per.entry(cell.clone()).or_insert(0) += count;
        *self.cells.entry(cell).or_insert(0) += count;
    }

    /// Adds the counts of `other`; associative and commutative.
    pub fn merge(&mut self, other: &GrammarCountTable) {
        for (lemma, cells) in &other.types {
            for (cell, &c) in cells {
                self.add(lemma, cell.clone(), c);
            }
        }
    }

    pub fn cells(&self) -> &BTreeMap<Cell, u64> {
        &self.cells
    }

    pub fn cell(&self, gender: &str, number: &str) -> u64 {
        self.cells
            .get(&(gender.to_string(), number.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn lemma_cells(&self, lemma: &str) -> Option<&BTreeMap<Cell, u64>> {
        self.types.get(lemma)
    }

    pub fn lemmas(&self) -> BTreeSet<&str> {
        self.types.keys().map(String::as_str).collect()
    }

    pub fn total_tokens(&self) -> u64 {
        self.cells.values().sum()
    }

    pub fn type_count(&self) -> usize {
        self.types.len()
    }

    /// Number of lemmas observed in a cell.
    pub fn cell_types(&self, cell: &Cell) -> u64 {
        self.types.values().filter(|m| m.contains_key(cell)).count() as u64
    }

    /// Whether any token carries a value of the feature.
    pub fn marks(&self, feature: Feature) -> bool {
        self.cells.keys().any(|c| feature.value(c) != UNMARKED)
    }

    /// Counts restricted to the given lemmas.
    pub fn restrict(&self, lemmas: &Allowlist, subset: impl Into<String>) -> Self {
        let mut out = Self::new(self.language.clone(), subset);
        for (lemma, cells) in &self.types {
            if lemmas.contains(lemma) {
                for (cell, &c) in cells {
                    out.add(lemma, cell.clone(), c);
                }
            }
        }
        out
    }

    pub fn rows(&self) -> Vec<CountRow> {
        let mut types: BTreeMap<&Cell, u64> = BTreeMap::new();
        for cells in self.types.values() {
            for cell in cells.keys() {
                *types.entry(cell).or_insert(0) += 1;
            }
        }
        self.cells
            .iter()
            .map(|(cell, &tokens)| CountRow {
                gender: cell.0.clone(),
                number: cell.1.clone(),
                tokens,
                types: types.get(cell).copied().unwrap_or(0),
            })
            .collect()
    }

    /// CSV with header `gender,number,tokens,types`, sorted by cell.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Counts NOUN tokens whose lemma is allowed; `animate` further restricts the lemmas.
pub fn build_counts<I>(
    tokens: I,
    noun_allowlist: &Allowlist,
    animate_allowlist: Option<&Allowlist>,
) -> GrammarCountTable
where
    I: IntoIterator<Item = TokenRecord>,
{
    let subset = if animate_allowlist.is_some() { "animate" } else { "all" };
    let mut table = GrammarCountTable::new("", subset);
    for t in tokens {
        if t.upos != "NOUN" || !noun_allowlist.contains(&t.lemma) {
            continue;
        }
        if animate_allowlist.is_some_and(|a| !a.contains(&t.lemma)) {
            continue;
        }
        let cell = cell_of(&t);
        table.add(&t.lemma, cell, 1);
    }
    table
}

/// Grid a lemma must cover to enter the paired animate subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingRule {
    pub genders: Vec<String>,
    pub numbers: Vec<String>,
}

impl Default for PairingRule {
    fn default() -> Self {
        Self {
            genders: vec!["Fem".into(), "Masc".into()],
            numbers: vec!["Sing".into(), "Plur".into()],
        }
    }
}

impl PairingRule {
    pub fn with_dual(mut self) -> Self {
        self.numbers.push(DUAL.into());
        self
    }
}

/// Animate lemmas attested in every cell of the pairing grid.
///
/// A language that never marks gender only needs number coverage.
pub fn build_animate_pairs(
    table_all: &GrammarCountTable,
    animate_lemmas: &Allowlist,
    rule: &PairingRule,
) -> GrammarCountTable {
    let genders: &[String] = if table_all.marks(Feature::Gender) {
        &rule.genders
    } else {
        &[]
    };
    let covers = |cells: &BTreeMap<Cell, u64>| {
        rule.numbers.iter().all(|n| {
            if genders.is_empty() {
                cells.iter().any(|(c, &k)| &c.1 == n && k > 0)
            } else {
                genders
                    .iter()
                    .all(|g| cells.get(&(g.clone(), n.clone())).is_some_and(|&k| k > 0))
            }
        })
    };
    let mut out = GrammarCountTable::new(table_all.language.clone(), "animate");
    for (lemma, cells) in &table_all.types {
        if animate_lemmas.contains(lemma) && covers(cells) {
            for (cell, &c) in cells {
                out.add(lemma, cell.clone(), c);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Gender,
    Number,
}

impl Feature {
    fn value(self, cell: &Cell) -> &str {
        match self {
            Feature::Gender => &cell.0,
            Feature::Number => &cell.1,
        }
    }
}

mod bits {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t.eq_ignore_ascii_case("inf") => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got {t:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    /// Observed values, or the pinned inventory size.
    pub n_values: usize,
    pub values: Vec<String>,
    pub probs: Vec<f64>,
    pub tokens: u64,
    pub max_h: f64,
    pub h: f64,
    pub agr_d: f64,
    /// `KL(uniform || observed)`; `"inf"` when a pinned value is unobserved.
    #[serde(with = "bits")]
    pub d_kl: f64,
    pub p_value: Option<f64>,
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub gender: Option<FeatureReport>,
    pub number: Option<FeatureReport>,
    pub overall: Option<FeatureReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageReport {
    pub language: String,
    pub subset: String,
    pub tokens: u64,
    pub types: usize,
    pub gender: Option<FeatureReport>,
    pub number: Option<FeatureReport>,
    pub overall: Option<FeatureReport>,
    /// Same features with unmarked tokens as their own value.
    pub with_unmarked: FeatureSet,
    pub baseline_n: usize,
    pub baseline_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Inventory {
    pub gender: Option<usize>,
    pub number: Option<usize>,
    pub overall: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub baseline_n: usize,
    pub baseline_seed: u64,
    pub exclude_dual: bool,
    pub inventory: Inventory,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            baseline_n: DEFAULT_SAMPLES,
            baseline_seed: 0,
            exclude_dual: false,
            inventory: Inventory::default(),
        }
    }
}

struct Baselines<'a> {
    cfg: &'a ReportConfig,
    cache: HashMap<usize, BaselineSample>,
}

impl Baselines<'_> {
    fn get(&mut self, k: usize) -> Result<&BaselineSample> {
        if !self.cache.contains_key(&k) {
            let b = sample_baseline(k, self.cfg.baseline_n, self.cfg.baseline_seed)?;
            self.cache.insert(k, b);
        }
        Ok(&self.cache[&k])
    }
}

fn feature_report(
    counts: BTreeMap<String, u64>,
    pinned: Option<usize>,
    baselines: &mut Baselines,
) -> Result<Option<FeatureReport>> {
    let counts: BTreeMap<String, u64> = counts.into_iter().filter(|(_, c)| *c > 0).collect();
    let tokens: u64 = counts.values().sum();
    if tokens == 0 {
        return Ok(None);
    }
    let mut values: Vec<String> = counts.keys().cloned().collect();
    let mut weights: Vec<f64> = counts.values().map(|&c| c as f64).collect();
    if let Some(k) = pinned {
        if k < values.len() {
            return Err(Error::validation(format!(
                "inventory of {k} values but {} observed",
                values.len()
            )));
        }
        for i in values.len()..k {
            values.push(format!("unobserved{i}"));
            weights.push(0.0);
        }
    }
    let observed = CategoricalDistribution::from_weights(values.clone(), &weights)?;
    let n = values.len();
    let h = entropy(&observed);
    let d_kl = kl_divergence(&CategoricalDistribution::uniform_like(values.clone())?, &observed)?;
    let (p_value, verdict) = if n >= 2 {
        let r = percentile_test(d_kl, baselines.get(n)?)?;
        (Some(r.p_value), Some(r.verdict))
    } else {
        (None, None)
    };
    Ok(Some(FeatureReport {
        n_values: n,
        values,
        probs: observed.probs().to_vec(),
        tokens,
        max_h: (n as f64).log2(),
        h,
        agr_d: agr_discriminability(h)?,
        d_kl,
        p_value,
        verdict,
    }))
}

fn feature_set(
    table: &GrammarCountTable,
    cfg: &ReportConfig,
    with_unmarked: bool,
    baselines: &mut Baselines,
) -> Result<FeatureSet> {
    let marks_g = table.marks(Feature::Gender);
    let marks_n = table.marks(Feature::Number);
    // A value is kept when its feature is marked by the language at all and,
    // unless unmarked tokens are requested, when the token carries it.
    let keep = |v: &str, marked: bool| marked && (with_unmarked || v != UNMARKED);
    let mut gender = BTreeMap::new();
    let mut number = BTreeMap::new();
    let mut overall = BTreeMap::new();
    for ((g, n), &c) in table.cells() {
        if cfg.exclude_dual && n == DUAL {
            continue;
        }
        let (kg, kn) = (keep(g, marks_g), keep(n, marks_n));
        if kg {
            *gender.entry(g.clone()).or_insert(0) += c;
        }
        if kn {
            *number.entry(n.clone()).or_insert(0) += c;
        }
        let joint = match (marks_g, marks_n) {
            (true, true) if kg && kn => Some(format!("{g}+{n}")),
            (true, false) if kg => Some(g.clone()),
            (false, true) if kn => Some(n.clone()),
            _ => None,
        };
        if let Some(key) = joint {
            *overall.entry(key).or_insert(0) += c;
        }
    }
    Ok(FeatureSet {
        gender: feature_report(gender, cfg.inventory.gender, baselines)?,
        number: feature_report(number, cfg.inventory.number, baselines)?,
        overall: feature_report(overall, cfg.inventory.overall, baselines)?,
    })
}

/// Entropy, divergence from uniform and significance for gender, number and both.
pub fn report(table: &GrammarCountTable, cfg: &ReportConfig) -> Result<LanguageReport> {
    if table.total_tokens() == 0 {
        return Err(Error::validation(format!(
            "no tokens counted for {} ({})",
            table.language, table.subset
        )));
    }
    let mut baselines = Baselines {
        cfg,
        cache: HashMap::new(),
    };
    let plain = feature_set(table, cfg, false, &mut baselines)?;
    let with_unmarked = feature_set(table, cfg, true, &mut baselines)?;
    Ok(LanguageReport {
        language: table.language.clone(),
        subset: table.subset.clone(),
        tokens: table.total_tokens(),
        types: table.type_count(),
        gender: plain.gender,
        number: plain.number,
        overall: plain.overall,
        with_unmarked,
        baseline_n: cfg.baseline_n,
        baseline_seed: cfg.baseline_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, lemma: &str, upos: &str, feats: &str) -> String {
        format!("{id}\t{lemma}x\t{lemma}\t{upos}\t_\t{feats}\t0\troot\t_\t_\n")
    }

    #[test]
    fn parses_token_line() {
        let text = "# text = gatos\n1\tgatos\tgato\tNOUN\t_\tGender=Masc|Number=Plur\t0\troot\t_\t_\n\n";
        let mut r = parse_conllu(text.as_bytes());
        let t = r.next().unwrap();
        assert_eq!(t.lemma, "gato");
        assert_eq!(t.upos, "NOUN");
        assert_eq!(t.feat("Gender"), Some("Masc"));
        assert_eq!(t.feat("Number"), Some("Plur"));
        assert!(r.next().is_none());
        let stats = r.finish().unwrap();
        assert_eq!(stats.tokens, 1);
        assert_eq!(stats.sentences, 1);
    }

    #[test]
    fn skips_comments_ranges_and_empty_nodes() {
        let text = format!(
            "# sent_id = 1\n{}{}{}{}\n",
            line("1-2", "del", "_", "_"),
            line("1", "de", "ADP", "_"),
            line("2", "el", "DET", "Gender=Masc"),
            line("2.1", "x", "NOUN", "_"),
        );
        let mut r = parse_conllu(text.as_bytes());
        let toks: Vec<_> = r.by_ref().collect();
        assert_eq!(toks.len(), 2);
        assert!(toks[0].feats.is_empty());
        let s = r.finish().unwrap();
        assert_eq!(s.skipped, 2);
        assert_eq!(s.malformed, 0);
    }

    #[test]
    fn malformed_lines_are_counted_and_bounded() {
        let mut text = String::new();
        for i in 0..199 {
            text.push_str(&line(&(i + 1).to_string(), "gato", "NOUN", "Number=Sing"));
        }
        text.push_str("1\tbroken line\n");
        let mut r = parse_conllu(text.as_bytes());
        assert_eq!(r.by_ref().count(), 199);
        let s = r.finish().unwrap();
        assert_eq!(s.malformed, 1);
        assert_eq!(s.malformed_lines, vec![200]);

        text.push_str(&line("x", "gato", "NOUN", "_"));
        text.push_str(&line("1", "gato", "NOUN", "Gender"));
        let mut r = parse_conllu(text.as_bytes());
        r.by_ref().for_each(drop);
        match r.finish() {
            Err(Error::Malformed { malformed, lines, .. }) => {
                assert_eq!(malformed, 3);
                assert_eq!(lines, vec![200, 201, 202]);
            }
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_feature_keys_are_malformed() {
        assert!(parse_feats("Gender=Masc|Gender=Fem").is_none());
        assert!(parse_feats("_").unwrap().is_empty());
        assert!(parse_feats("A=b|C=d").is_some());
    }

    fn tok(lemma: &str, upos: &str, g: Option<&str>, n: Option<&str>) -> TokenRecord {
        let mut feats = BTreeMap::new();
        if let Some(g) = g {
            feats.insert(GENDER.to_string(), g.to_string());
        }
        if let Some(n) = n {
            feats.insert(NUMBER.to_string(), n.to_string());
        }
        TokenRecord {
            form: lemma.into(),
            lemma: lemma.into(),
            upos: upos.into(),
            feats,
        }
    }

    #[test]
    fn counts_cells_and_types() {
        let mut toks = vec![tok("gato", "NOUN", Some("Masc"), Some("Plur")); 3];
        toks.push(tok("gata", "NOUN", Some("Fem"), Some("Sing")));
        toks.push(tok("correr", "VERB", None, Some("Sing")));
        toks.push(tok("mesa", "NOUN", Some("Fem"), Some("Sing")));
        let nouns: Allowlist = ["gato", "gata"].into_iter().collect();
        let t = build_counts(toks.clone(), &nouns, None);
        assert_eq!(t.cell("Masc", "Plur"), 3);
        assert_eq!(t.cell("Fem", "Sing"), 1);
        assert_eq!(t.cells().len(), 2);
        assert_eq!(t.type_count(), 2);
        assert_eq!(t.total_tokens(), 4);

        let all = build_counts(toks.clone(), &Allowlist::All, None);
        assert_eq!(all.cell("Fem", "Sing"), 2);
        let animate: Allowlist = ["gata"].into_iter().collect();
        let a = build_counts(toks, &Allowlist::All, Some(&animate));
        assert_eq!(a.subset, "animate");
        assert_eq!(a.total_tokens(), 1);
    }

    #[test]
    fn unmarked_features_get_their_own_bin() {
        let toks = vec![
            tok("dog", "NOUN", None, Some("Sing")),
            tok("dog", "NOUN", None, Some("Plur")),
            tok("sheep", "NOUN", None, None),
        ];
        let t = build_counts(toks, &Allowlist::All, None);
        assert_eq!(t.cell(UNMARKED, "Sing"), 1);
        assert_eq!(t.cell(UNMARKED, UNMARKED), 1);
        assert!(!t.marks(Feature::Gender));
        assert!(t.marks(Feature::Number));
    }

    #[test]
    fn merge_is_commutative() {
        let mut a = GrammarCountTable::new("es", "all");
        a.add("gato", ("Masc".into(), "Sing".into()), 2);
        let mut b = GrammarCountTable::new("es", "all");
        b.add("gata", ("Fem".into(), "Sing".into()), 1);
        b.add("gato", ("Masc".into(), "Sing".into()), 1);
        let mut ab = a.clone();
        ab.merge(&b);
        let mut ba = b.clone();
        ba.merge(&a);
        assert_eq!(ab.cells(), ba.cells());
        assert_eq!(ab.cell("Masc", "Sing"), 3);
        assert_eq!(ab.rows()[1].types, 1);
    }

    #[test]
    fn csv_layout() {
        let mut t = GrammarCountTable::new("es", "all");
        t.add("gato", ("Masc".into(), "Sing".into()), 2);
        t.add("perro", ("Masc".into(), "Sing".into()), 1);
        t.add("gata", ("Fem".into(), "Plur".into()), 1);
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "gender,number,tokens,types\nFem,Plur,1,1\nMasc,Sing,3,2\n"
        );
    }

    #[test]
    fn uniform_report() {
        let mut t = GrammarCountTable::new("xx", "all");
        for (g, n) in [("Fem", "Sing"), ("Fem", "Plur"), ("Masc", "Sing"), ("Masc", "Plur")] {
            t.add("a", (g.into(), n.into()), 25);
        }
        let r = report(&t, &ReportConfig::default()).unwrap();
        let o = r.overall.unwrap();
        assert_eq!(o.n_values, 4);
        assert!((o.h - 2.0).abs() < 1e-12);
        assert_eq!(o.d_kl, 0.0);
        assert_eq!(o.verdict, Some(Verdict::DoubleDagger));
        assert!((r.gender.unwrap().h - 1.0).abs() < 1e-12);
    }

    #[test]
    fn english_shape() {
        let mut t = GrammarCountTable::new("en", "all");
        t.add("dog", (UNMARKED.into(), "Sing".into()), 70);
        t.add("dog", (UNMARKED.into(), "Plur".into()), 30);
        t.add("sheep", (UNMARKED.into(), UNMARKED.into()), 5);
        let r = report(&t, &ReportConfig::default()).unwrap();
        assert!(r.gender.is_none());
        let n = r.number.unwrap();
        assert_eq!(n.n_values, 2);
        assert_eq!(r.overall.unwrap(), n);
        assert!(r.with_unmarked.gender.is_none());
        assert_eq!(r.with_unmarked.number.unwrap().n_values, 3);
    }

    #[test]
    fn pinned_inventory_gives_infinite_divergence() {
        let mut t = GrammarCountTable::new("xx", "all");
        t.add("a", ("Masc".into(), "Sing".into()), 5);
        t.add("a", ("Fem".into(), "Sing".into()), 5);
        let cfg = ReportConfig {
            inventory: Inventory {
                gender: Some(3),
                ..Inventory::default()
            },
            ..ReportConfig::default()
        };
        let r = report(&t, &cfg).unwrap();
        let g = r.gender.unwrap();
        assert_eq!(g.n_values, 3);
        assert_eq!(g.d_kl, f64::INFINITY);
        assert_eq!(g.verdict, Some(Verdict::NotSignificant));
        let json = serde_json::to_string(&g).unwrap();
        assert!(json.contains("\"d_kl\":\"inf\""));
        let back: FeatureReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);

        let cfg = ReportConfig {
            inventory: Inventory {
                gender: Some(1),
                ..Inventory::default()
            },
            ..ReportConfig::default()
        };
        assert!(report(&t, &cfg).is_err());
    }

    #[test]
    fn dual_can_be_excluded() {
        let mut t = GrammarCountTable::new("sl", "all");
        t.add("a", ("Masc".into(), "Sing".into()), 5);
        t.add("a", ("Masc".into(), "Dual".into()), 1);
        t.add("a", ("Masc".into(), "Plur".into()), 5);
        assert_eq!(
            report(&t, &ReportConfig::default()).unwrap().number.unwrap().n_values,
            3
        );
        let cfg = ReportConfig {
            exclude_dual: true,
            ..ReportConfig::default()
        };
        let r = report(&t, &cfg).unwrap();
        assert_eq!(r.number.unwrap().n_values, 2);
        assert_eq!(r.tokens, 11);
    }

    #[test]
    fn empty_table_is_an_error() {
        assert!(report(&GrammarCountTable::new("xx", "all"), &ReportConfig::default()).is_err());
    }

    #[test]
    fn animate_pairs() {
        let mut t = GrammarCountTable::new("es", "all");
        for (g, n) in [("Fem", "Sing"), ("Fem", "Plur"), ("Masc", "Sing"), ("Masc", "Plur")] {
            t.add("amigo", (g.into(), n.into()), 2);
        }
        t.add("camello", ("Masc".into(), "Sing".into()), 3);
        t.add("camello", ("Masc".into(), "Plur".into()), 1);
        let animate: Allowlist = ["amigo", "camello"].into_iter().collect();
        let p = build_animate_pairs(&t, &animate, &PairingRule::default());
        assert_eq!(p.lemmas().into_iter().collect::<Vec<_>>(), vec!["amigo"]);
        assert_eq!(p.total_tokens(), 8);

        let mut en = GrammarCountTable::new("en", "all");
        en.add("friend", (UNMARKED.into(), "Sing".into()), 1);
        en.add("friend", (UNMARKED.into(), "Plur".into()), 1);
        en.add("camel", (UNMARKED.into(), "Sing".into()), 1);
        let animate: Allowlist = ["friend", "camel"].into_iter().collect();
        let p = build_animate_pairs(&en, &animate, &PairingRule::default());
        assert_eq!(p.lemmas().into_iter().collect::<Vec<_>>(), vec!["friend"]);
    }

    #[test]
    fn gzip_input_is_detected() {
        use flate2::{write::GzEncoder, Compression};
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.conllu.gz");
        let mut enc = GzEncoder::new(File::create(&path).unwrap(), Compression::fast());
        enc.write_all(line("1", "gato", "NOUN", "Gender=Masc").as_bytes())
            .unwrap();
        enc.finish().unwrap();
        let mut r = open_conllu(&path).unwrap();
        assert_eq!(r.next().unwrap().lemma, "gato");
        assert!(r.next().is_none());
        r.finish().unwrap();
        assert!(matches!(
            open_conllu(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}

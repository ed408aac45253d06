//! Registry matching: recovers a SIRET for agents that lack one by
//! successive filtering (blocking on department, date and activity, then
//! name filtering, then address scoring) and best-candidate selection.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AgentOccurrence, LotRecord, Role};
use crate::normalize::department_of;
use crate::registry::{activity_prefix, temporally_valid, Identifier, Registry, Siret};

/// Relative weights of the three address parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AddressWeights {
    pub street: f64,
    pub zipcode: f64,
    pub city: f64,
}

impl Default for AddressWeights {
    fn default() -> Self {
        Self {
            street: 0.4,
            zipcode: 0.35,
            city: 0.25,
        }
    }
}

impl AddressWeights {
    pub fn sum(&self) -> f64 {
        self.street + self.zipcode + self.city
    }

    /// Same proportions, rescaled to sum to 1.
    pub fn renormalized(&self) -> Self {
        let s = self.sum();
        Self {
            street: self.street / s,
            zipcode: self.zipcode / s,
            city: self.city / s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub name_threshold: f64,
    pub address_weights: AddressWeights,
    pub min_score: f64,
    pub activity_prefix_length: usize,
    /// Search the whole registry when neither department nor activity can
    /// narrow the candidates.
    pub allow_unblocked: bool,
    /// Apply the contract-activity filter to buyers as well. Off by
    /// default: a buyer's own activity code says nothing about what it buys.
    pub buyer_activity_filter: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            name_threshold: 0.80,
            address_weights: AddressWeights::default(),
            min_score: 0.30,
            activity_prefix_length: 2,
            allow_unblocked: false,
            buyer_activity_filter: false,
        }
    }
}

impl MatchConfig {
    /// Every violated bound, one message each.
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        for (name, v) in [
            ("matching.name_threshold", self.name_threshold),
            ("matching.min_score", self.min_score),
        ] {
            if !(0.0..=1.0).contains(&v) {
                errors.push(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        let w = &self.address_weights;
        if [w.street, w.zipcode, w.city].iter().any(|x| *x < 0.0 || !x.is_finite()) {
            errors.push("matching.address_weights must be non-negative".into());
        } else if (w.sum() - 1.0).abs() > 1e-9 {
            errors.push(format!("matching.address_weights sum to {} instead of 1", w.sum()));
        }
        if self.activity_prefix_length == 0 {
            errors.push("matching.activity_prefix_length must be at least 1".into());
        }
        errors
    }
}

/// Levenshtein distance over characters, normalized by the longer length,
/// taken as a similarity.
fn edit_similarity(a: &str, b: &str) -> f64 {
    strsim::normalized_levenshtein(a, b)
}

/// Multiset token overlap: shared tokens over the size of the smaller bag.
fn overlap_coefficient(a: &str, b: &str) -> f64 {
    let mut bag: HashMap<&str, usize> = HashMap::new();
    let mut na = 0usize;
    for t in a.split(' ').filter(|t| !t.is_empty()) {
        *bag.entry(t).or_default() += 1;
        na += 1;
    }
    let mut nb = 0usize;
    let mut shared = 0usize;
    for t in b.split(' ').filter(|t| !t.is_empty()) {
        nb += 1;
        if let Some(c) = bag.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                shared += 1;
            }
        }
    }
    let smaller = na.min(nb);
    if smaller == 0 {
        0.0
    } else {
        shared as f64 / smaller as f64
    }
}

/// Similarity of two folded names: the larger of the token overlap
/// coefficient and the normalized edit similarity. Empty input gives 0.
pub fn name_similarity(a: &str, b: &str) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    overlap_coefficient(a, b).max(edit_similarity(a, b))
}

/// `name_similarity(a, b)` when it reaches `threshold`, `None` otherwise.
/// The edit distance is at least the length difference, which bounds the
/// edit similarity from above; the distance is skipped whenever that bound
/// cannot change the outcome.
pub fn name_similarity_at_least(a: &str, b: &str, threshold: f64) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return (0.0 >= threshold).then_some(0.0);
    }
    if a == b {
        return (1.0 >= threshold).then_some(1.0);
    }
    let overlap = overlap_coefficient(a, b);
    let (la, lb) = (a.chars().count(), b.chars().count());
    let longest = la.max(lb);
    let bound = 1.0 - la.abs_diff(lb) as f64 / longest as f64;
    let sim = if bound <= overlap || bound < threshold {
        overlap
    } else {
        overlap.max(edit_similarity(a, b))
    };
    (sim >= threshold).then_some(sim)
}

/// Borrowed view of the address parts used for scoring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AddressView<'a> {
    pub street: Option<&'a str>,
    pub zipcode: Option<&'a str>,
    pub city: Option<&'a str>,
}

impl<'a> AddressView<'a> {
    pub fn of_occurrence(occ: &'a AgentOccurrence) -> Self {
        Self {
            street: occ.street.as_deref(),
            zipcode: occ.zipcode.as_deref(),
            city: occ.city.as_deref(),
        }
    }
}

/// Which address parts were present on both sides.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceMask {
    pub street: bool,
    pub zipcode: bool,
    pub city: bool,
}

impl PresenceMask {
    pub fn is_empty(&self) -> bool {
        !(self.street || self.zipcode || self.city)
    }

    /// Compact rendering such as `s-c` (street and city compared).
    pub fn code(&self) -> String {
        [(self.street, 's'), (self.zipcode, 'z'), (self.city, 'c')]
            .iter()
            .map(|&(on, ch)| if on { ch } else { '-' })
            .collect()
    }
}

fn zipcode_similarity(a: &str, b: &str) -> f64 {
    if a == b {
        1.0
    } else if department_of(a).is_some() && department_of(a) == department_of(b) {
        0.5
    } else {
        0.0
    }
}

/// Weighted address agreement in [0, 1]. Parts missing on either side drop
/// out and their weight is spread proportionally over the others.
pub fn address_score(a: AddressView<'_>, b: AddressView<'_>, weights: &AddressWeights) -> (f64, PresenceMask) {
    let mut mask = PresenceMask::default();
    let mut total = 0.0;
    let mut acc = 0.0;
    if let (Some(x), Some(y)) = (a.street, b.street) {
        mask.street = true;
        total += weights.street;
        acc += weights.street * name_similarity(x, y);
    }
    if let (Some(x), Some(y)) = (a.zipcode, b.zipcode) {
        mask.zipcode = true;
        total += weights.zipcode;
        acc += weights.zipcode * zipcode_similarity(x, y);
    }
    if let (Some(x), Some(y)) = (a.city, b.city) {
        mask.city = true;
        total += weights.city;
        acc += weights.city * name_similarity(x, y);
    }
    if total <= 0.0 {
        return (0.0, mask);
    }
    ((acc / total).clamp(0.0, 1.0), mask)
}

/// Lot CPV code to compatible registry activity prefixes.
#[derive(Debug, Clone, Default)]
pub struct ActivityTable {
    rows: Vec<(String, String)>,
}

impl ActivityTable {
    /// `cpv_prefix` / `activity_prefix` pairs.
    pub fn new(rows: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut rows: Vec<(String, String)> = rows
            .into_iter()
            .map(|(c, a)| (clean_code(&c), clean_code(&a)))
            .filter(|(c, a)| !c.is_empty() && !a.is_empty())
            .collect();
        rows.sort();
        rows.dedup();
        Self { rows }
    }

    /// Reads `cpv,activity` lines with a header row.
    pub fn load<R: Read>(source: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(source);
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            match (rec.get(0), rec.get(1)) {
                (Some(c), Some(a)) => rows.push((c.to_string(), a.to_string())),
                _ => return Err(Error::Config(format!("activity table line {}: expected cpv,activity", i + 2))),
            }
        }
        Ok(Self::new(rows))
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Activity prefixes (cut to `len`) compatible with a lot CPV code, or
    /// `None` when the table has no row for it.
    pub fn compatible(&self, cpv: &str, len: usize) -> Option<BTreeSet<String>> {
        let code = clean_code(cpv);
        let set: BTreeSet<String> = self
            .rows
            .iter()
            .filter(|(c, _)| code.starts_with(c.as_str()))
            .filter_map(|(_, a)| activity_prefix(a, len))
            .collect();
        (!set.is_empty()).then_some(set)
    }
}

fn clean_code(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_uppercase())
        .collect()
}

/// Everything identification looks at for one occurrence. Two occurrences
/// with equal queries get the same answer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MatchQuery {
    pub name: String,
    pub street: Option<String>,
    pub zipcode: Option<String>,
    pub city: Option<String>,
    pub department: Option<String>,
    pub date: NaiveDate,
    pub activities: Option<BTreeSet<String>>,
}

impl MatchQuery {
    pub fn new(occ: &AgentOccurrence, lot: &LotRecord, activity: &ActivityTable, config: &MatchConfig) -> Option<Self> {
        Some(Self {
            name: occ.normalized_name.clone()?,
            street: occ.street.clone(),
            zipcode: occ.zipcode.clone(),
            city: occ.city.clone(),
            department: occ.department.clone(),
            date: lot.reference_date(),
            activities: if occ.role == Role::Buyer && !config.buyer_activity_filter {
                None
            } else {
                lot.activity_code
                    .as_deref()
                    .and_then(|c| activity.compatible(c, config.activity_prefix_length))
            },
        })
    }

    fn address(&self) -> AddressView<'_> {
        AddressView {
            street: self.street.as_deref(),
            zipcode: self.zipcode.as_deref(),
            city: self.city.as_deref(),
        }
    }
}

/// Stage at which identification gave up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureStage {
    /// Neither department nor activity available to narrow the search.
    Unblockable,
    Blocking,
    Name,
    Address,
}

impl FailureStage {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureStage::Unblockable => "unblockable",
            FailureStage::Blocking => "blocking",
            FailureStage::Name => "name",
            FailureStage::Address => "address",
        }
    }
}

/// Scores of the selected candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub facility: usize,
    pub name_similarity: f64,
    pub address_score: f64,
    pub presence: PresenceMask,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatchResult {
    Matched { siret: Siret, score: CandidateScore },
    NoMatch(FailureStage),
}

impl MatchResult {
    pub fn identifier(&self) -> Option<Identifier> {
        match self {
            MatchResult::Matched { siret, .. } => Some(Identifier::Siret(siret.clone())),
            MatchResult::NoMatch(_) => None,
        }
    }
}

/// Surviving candidates after each filtering phase.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PhaseSizes {
    pub blocked: usize,
    pub named: usize,
    pub addressed: usize,
}

fn activity_compatible(registry: &Registry, idx: usize, wanted: &BTreeSet<String>) -> bool {
    let (own, parent) = registry.activity_prefixes(idx);
    match (own, parent) {
        (None, None) => true,
        (own, parent) => {
            own.is_some_and(|p| wanted.contains(&p)) || parent.is_some_and(|p| wanted.contains(&p))
        }
    }
}

/// Facilities passing every applicable blocking filter, sorted by SIRET.
/// Department equality applies when the occurrence has a department,
/// activity compatibility when the lot's CPV code maps to activities; the
/// date filter always applies. A query with neither department nor
/// activity is refused unless `allow_unblocked` is set.
pub fn candidate_block(query: &MatchQuery, registry: &Registry, config: &MatchConfig) -> std::result::Result<Vec<usize>, FailureStage> {
    if query.department.is_none() && query.activities.is_none() && !config.allow_unblocked {
        return Err(FailureStage::Unblockable);
    }
    let keep = |idx: &usize| {
        let f = registry.facility(*idx);
        temporally_valid(f, query.date)
            && query
                .activities
                .as_ref()
                .is_none_or(|wanted| activity_compatible(registry, *idx, wanted))
    };
    Ok(match query.department.as_deref() {
        Some(dept) => registry.by_department(dept).iter().copied().filter(keep).collect(),
        None => (0..registry.facilities().len()).filter(keep).collect(),
    })
}

/// Best name similarity between the query and any of the facility's names
/// (the parent entity's names when the facility has none).
pub fn facility_name_similarity(name: &str, registry: &Registry, idx: usize) -> f64 {
    registry
        .comparison_names(idx)
        .iter()
        .map(|n| name_similarity(name, n))
        .fold(0.0, f64::max)
}

fn facility_address(registry: &Registry, idx: usize) -> AddressView<'_> {
    let f = registry.facility(idx);
    AddressView {
        street: f.street.as_deref(),
        zipcode: f.zipcode.as_deref(),
        city: f.city.as_deref(),
    }
}

/// Runs the three filtering phases and picks the candidate with the best
/// (address score, name similarity); ties go to the smallest SIRET.
pub fn identify_query(query: &MatchQuery, registry: &Registry, config: &MatchConfig) -> (MatchResult, PhaseSizes) {
    let mut sizes = PhaseSizes::default();
    let block = match candidate_block(query, registry, config) {
        Ok(b) => b,
        Err(stage) => return (MatchResult::NoMatch(stage), sizes),
    };
    sizes.blocked = block.len();
    if block.is_empty() {
        return (MatchResult::NoMatch(FailureStage::Blocking), sizes);
    }
    let named: Vec<(usize, f64)> = block
        .into_iter()
        .filter_map(|idx| facility_name_match(&query.name, registry, idx, config.name_threshold).map(|s| (idx, s)))
        .collect();
    score_named(query, named, sizes, registry, config)
}

/// A folded name prepared for repeated comparison: interned tokens in
/// sorted order and a bucketed character histogram.
#[derive(Debug, Clone)]
struct PreparedName<'a> {
    text: &'a str,
    chars: usize,
    tokens: Vec<u32>,
    histogram: [u16; HISTOGRAM_BUCKETS],
}

const HISTOGRAM_BUCKETS: usize = 64;

/// Registry names prepared once, so a query can be compared against a
/// whole department without rehashing every facility name.
#[derive(Debug)]
pub struct NameIndex<'a> {
    tokens: HashMap<&'a str, u32>,
    names: Vec<Vec<PreparedName<'a>>>,
}

impl<'a> NameIndex<'a> {
    pub fn new(registry: &'a Registry) -> Self {
        let mut tokens: HashMap<&'a str, u32> = HashMap::new();
        let mut names = Vec::with_capacity(registry.facilities().len());
        for idx in 0..registry.facilities().len() {
            let prepared = registry
                .comparison_names(idx)
                .iter()
                .map(|n| {
                    for t in n.split(' ').filter(|t| !t.is_empty()) {
                        let next = tokens.len() as u32;
                        tokens.entry(t).or_insert(next);
                    }
                    prepare(n, &tokens)
                })
                .collect();
            names.push(prepared);
        }
        Self { tokens, names }
    }

    fn prepare_query<'q>(&self, name: &'q str) -> PreparedName<'q> {
        prepare(name, &self.tokens)
    }
}

/// Tokens unknown to the index get an id no registry token has.
fn prepare<'q>(text: &'q str, ids: &HashMap<&str, u32>) -> PreparedName<'q> {
    let mut tokens: Vec<u32> = text
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(|t| ids.get(t).copied().unwrap_or(u32::MAX))
        .collect();
    tokens.sort_unstable();
    let mut histogram = [0u16; HISTOGRAM_BUCKETS];
    let mut chars = 0;
    for c in text.chars() {
        chars += 1;
        let b = &mut histogram[c as usize % HISTOGRAM_BUCKETS];
        *b = b.saturating_add(1);
    }
    PreparedName {
        text,
        chars,
        tokens,
        histogram,
    }
}

/// Same value as `name_similarity_at_least`. Unknown query tokens never
/// match because `u32::MAX` is skipped in the merge.
fn prepared_similarity_at_least(a: &PreparedName<'_>, b: &PreparedName<'_>, threshold: f64) -> Option<f64> {
    if a.text.is_empty() || b.text.is_empty() {
        return (0.0 >= threshold).then_some(0.0);
    }
    if a.text == b.text {
        return (1.0 >= threshold).then_some(1.0);
    }
    let smaller = a.tokens.len().min(b.tokens.len());
    let overlap = if smaller == 0 {
        0.0
    } else {
        let (mut i, mut j, mut shared) = (0, 0, 0usize);
        while i < a.tokens.len() && j < b.tokens.len() {
            match a.tokens[i].cmp(&b.tokens[j]) {
                std::cmp::Ordering::Equal => {
                    if a.tokens[i] != u32::MAX {
                        shared += 1;
                    }
                    i += 1;
                    j += 1;
                }
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
            }
        }
        shared as f64 / smaller as f64
    };
    let longest = a.chars.max(b.chars);
    // Bag distance: characters one side has in excess must be inserted,
    // deleted or substituted, so it bounds the edit distance from below.
    // Merging characters into buckets only loosens the bound.
    let (mut more, mut fewer) = (0usize, 0usize);
    for (x, y) in a.histogram.iter().zip(&b.histogram) {
        if x > y {
            more += usize::from(x - y);
        } else {
            fewer += usize::from(y - x);
        }
    }
    let bound = 1.0 - more.max(fewer) as f64 / longest as f64;
    let sim = if bound <= overlap || bound < threshold {
        overlap
    } else {
        overlap.max(edit_similarity(a.text, b.text))
    };
    (sim >= threshold).then_some(sim)
}

/// Facilities of the query's search space (its department, or the whole
/// registry) whose name similarity reaches the threshold, in index order.
/// Depends only on the name and department, so it can be shared between
/// queries differing in date, activity or address.
pub fn name_candidates(
    name: &str,
    department: Option<&str>,
    registry: &Registry,
    index: &NameIndex<'_>,
    config: &MatchConfig,
) -> Vec<(usize, f64)> {
    let query = index.prepare_query(name);
    let scan = |idx: usize| {
        index.names[idx]
            .iter()
            .filter_map(|n| prepared_similarity_at_least(&query, n, config.name_threshold))
            .reduce(f64::max)
            .map(|s| (idx, s))
    };
    match department {
        Some(d) => registry.by_department(d).iter().filter_map(|&i| scan(i)).collect(),
        None => (0..registry.facilities().len()).filter_map(scan).collect(),
    }
}

fn facility_name_match(name: &str, registry: &Registry, idx: usize, threshold: f64) -> Option<f64> {
    registry
        .comparison_names(idx)
        .iter()
        .filter_map(|n| name_similarity_at_least(name, n, threshold))
        .reduce(f64::max)
}

/// `identify_query` with the name phase precomputed by `name_candidates`.
fn identify_with_candidates(
    query: &MatchQuery,
    candidates: &[(usize, f64)],
    registry: &Registry,
    config: &MatchConfig,
) -> (MatchResult, PhaseSizes) {
    let mut sizes = PhaseSizes::default();
    let block = match candidate_block(query, registry, config) {
        Ok(b) => b,
        Err(stage) => return (MatchResult::NoMatch(stage), sizes),
    };
    sizes.blocked = block.len();
    if block.is_empty() {
        return (MatchResult::NoMatch(FailureStage::Blocking), sizes);
    }
    // Both lists are in index order.
    let mut named = Vec::new();
    let mut it = block.iter().peekable();
    for &(idx, sim) in candidates {
        while it.next_if(|&&b| b < idx).is_some() {}
        if it.next_if(|&&b| b == idx).is_some() {
            named.push((idx, sim));
        }
    }
    score_named(query, named, sizes, registry, config)
}

fn score_named(
    query: &MatchQuery,
    named: Vec<(usize, f64)>,
    mut sizes: PhaseSizes,
    registry: &Registry,
    config: &MatchConfig,
) -> (MatchResult, PhaseSizes) {
    sizes.named = named.len();
    if named.is_empty() {
        return (MatchResult::NoMatch(FailureStage::Name), sizes);
    }
    let mut best: Option<CandidateScore> = None;
    for (idx, name_sim) in named {
        let (score, presence) = address_score(query.address(), facility_address(registry, idx), &config.address_weights);
        if score < config.min_score && !presence.is_empty() {
            continue;
        }
        sizes.addressed += 1;
        let cand = CandidateScore {
            facility: idx,
            name_similarity: name_sim,
            address_score: score,
            presence,
        };
        // Candidates arrive in SIRET order, so strict improvement keeps the
        // smallest SIRET among equals.
        let better = match &best {
            None => true,
            Some(b) => (cand.address_score, cand.name_similarity) > (b.address_score, b.name_similarity),
        };
        if better {
            best = Some(cand);
        }
    }
    match best {
        Some(score) => (
            MatchResult::Matched {
                siret: registry.facility(score.facility).siret.clone(),
                score,
            },
            sizes,
        ),
        None => (MatchResult::NoMatch(FailureStage::Address), sizes),
    }
}

/// Identification of one occurrence on one lot.
pub fn identify_occurrence(
    occ: &AgentOccurrence,
    lot: &LotRecord,
    registry: &Registry,
    activity: &ActivityTable,
    config: &MatchConfig,
) -> Option<(Identifier, CandidateScore)> {
    let query = MatchQuery::new(occ, lot, activity, config)?;
    match identify_query(&query, registry, config).0 {
        MatchResult::Matched { siret, score } => Some((Identifier::Siret(siret), score)),
        MatchResult::NoMatch(_) => None,
    }
}

/// One line of the identification audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchLogEntry {
    pub occurrence_id: u64,
    pub outcome: String,
    pub reason: Option<String>,
    pub identifier: Option<Identifier>,
    pub name_similarity: Option<f64>,
    pub address_score: Option<f64>,
    pub presence: Option<String>,
    pub blocked: usize,
    pub named: usize,
    pub addressed: usize,
}

/// Whether an occurrence should go through registry matching: no
/// identifier yet, or only a SIREN that a match could refine.
fn needs_identification(occ: &AgentOccurrence) -> bool {
    matches!(occ.identifier, None | Some(Identifier::Siren(_)))
}

/// Identifies every occurrence lacking a full SIRET. Distinct queries are
/// resolved once each, in parallel on the current rayon pool; results are
/// written back in occurrence order. A SIREN-only occurrence is upgraded
/// only when the match shares its SIREN.
pub fn identify_all(
    occurrences: &mut [AgentOccurrence],
    lots: &[LotRecord],
    registry: &Registry,
    activity: &ActivityTable,
    config: &MatchConfig,
) -> Vec<MatchLogEntry> {
    let lot_index: HashMap<u64, &LotRecord> = lots.iter().map(|l| (l.lot_id, l)).collect();
    let queries: Vec<Option<MatchQuery>> = occurrences
        .iter()
        .map(|occ| {
            if !needs_identification(occ) {
                return None;
            }
            let lot = lot_index.get(&occ.lot_id)?;
            MatchQuery::new(occ, lot, activity, config)
        })
        .collect();
    let distinct: BTreeMap<&MatchQuery, usize> = {
        let mut set: Vec<&MatchQuery> = queries.iter().flatten().collect();
        set.sort();
        set.dedup();
        set.into_iter().enumerate().map(|(i, q)| (q, i)).collect()
    };
    let ordered: Vec<&MatchQuery> = {
        let mut v: Vec<(&MatchQuery, usize)> = distinct.iter().map(|(q, i)| (*q, *i)).collect();
        v.sort_by_key(|&(_, i)| i);
        v.into_iter().map(|(q, _)| q).collect()
    };
    let keys: Vec<(&str, Option<&str>)> = {
        let mut k: Vec<_> = ordered.iter().map(|q| (q.name.as_str(), q.department.as_deref())).collect();
        k.sort_unstable();
        k.dedup();
        k
    };
    let index = NameIndex::new(registry);
    let candidates: Vec<Vec<(usize, f64)>> = keys
        .par_iter()
        .map(|&(name, dept)| name_candidates(name, dept, registry, &index, config))
        .collect();
    let results: Vec<(MatchResult, PhaseSizes)> = ordered
        .par_iter()
        .map(|q| {
            let key = (q.name.as_str(), q.department.as_deref());
            let i = keys.binary_search(&key).expect("every query has a key");
            identify_with_candidates(q, &candidates[i], registry, config)
        })
        .collect();

    let mut log = Vec::new();
    for (occ, query) in occurrences.iter_mut().zip(&queries) {
        let Some(query) = query else {
            continue;
        };
        let (result, sizes) = &results[distinct[query]];
        let mut entry = MatchLogEntry {
            occurrence_id: occ.occurrence_id,
            outcome: "none".into(),
            reason: None,
            identifier: None,
            name_similarity: None,
            address_score: None,
            presence: None,
            blocked: sizes.blocked,
            named: sizes.named,
            addressed: sizes.addressed,
        };
        match result {
            MatchResult::Matched { siret, score } => {
                let upgrade = match &occ.identifier {
                    Some(Identifier::Siren(s)) => s == siret.siren(),
                    _ => true,
                };
                entry.name_similarity = Some(score.name_similarity);
                entry.address_score = Some(score.address_score);
                entry.presence = Some(score.presence.code());
                if upgrade {
                    entry.outcome = "matched".into();
                    entry.identifier = Some(Identifier::Siret(siret.clone()));
                    occ.identifier = Some(Identifier::Siret(siret.clone()));
                } else {
                    entry.outcome = "siren_mismatch".into();
                }
            }
            MatchResult::NoMatch(stage) => {
                entry.reason = Some(stage.as_str().into());
            }
        }
        log.push(entry);
    }
    log
}

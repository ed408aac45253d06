//! Award-criterion repair: splitting, name/weight un-mixing, price weight
//! extraction, weight normalization and classification.

use std::fmt;
use std::io::Read;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{detect_separators, LotCriteriaFields};
use crate::normalize::normalize_name;
use crate::text::{parse_decimal, round2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CriterionClass {
    Price,
    Deadline,
    Technical,
    Environmental,
    Social,
    Others,
}

impl CriterionClass {
    /// Order in which classes are tried when a name matches several.
    pub const PRIORITY: [CriterionClass; 5] = [
        CriterionClass::Price,
        CriterionClass::Deadline,
        CriterionClass::Environmental,
        CriterionClass::Social,
        CriterionClass::Technical,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CriterionClass::Price => "PRICE",
            CriterionClass::Deadline => "DEADLINE",
            CriterionClass::Technical => "TECHNICAL",
            CriterionClass::Environmental => "ENVIRONMENTAL",
            CriterionClass::Social => "SOCIAL",
            CriterionClass::Others => "OTHERS",
        }
    }
}

impl fmt::Display for CriterionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CriterionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "PRICE" => CriterionClass::Price,
            "DEADLINE" => CriterionClass::Deadline,
            "TECHNICAL" => CriterionClass::Technical,
            "ENVIRONMENTAL" => CriterionClass::Environmental,
            "SOCIAL" => CriterionClass::Social,
            "OTHERS" => CriterionClass::Others,
            other => return Err(Error::Config(format!("unknown criterion class `{other}`"))),
        })
    }
}

/// Lot-level anomaly recorded next to the repaired criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriteriaFlag {
    /// Name and weight counts disagree; weights were dropped.
    CountMismatch,
    /// The dedicated price field and a mixed price criterion disagree.
    PriceConflict,
    /// Weights could not be brought to a sum of 100.
    Unnormalizable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub lot_id: u64,
    pub ordinal: u32,
    pub raw_name: String,
    pub class: CriterionClass,
    pub weight: Option<f64>,
    pub weight_is_normalized: bool,
    pub flag: Option<CriteriaFlag>,
}

/// Keyword stems (folded) mapped to classes. A stem matches when a word of
/// the folded name starts with it; multi-word stems match word sequences.
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: Vec<(String, CriterionClass)>,
}

const DEFAULT_LEXICON: &[(&str, CriterionClass)] = &[
    ("PRIX", CriterionClass::Price),
    ("COUT", CriterionClass::Price),
    ("TARIF", CriterionClass::Price),
    ("MONTANT", CriterionClass::Price),
    ("FINANCI", CriterionClass::Price),
    ("OFFRE ECONOMIQUE", CriterionClass::Price),
    ("PRICE", CriterionClass::Price),
    ("COST", CriterionClass::Price),
    ("DELAI", CriterionClass::Deadline),
    ("DUREE", CriterionClass::Deadline),
    ("CALENDRIER", CriterionClass::Deadline),
    ("PLANNING", CriterionClass::Deadline),
    ("DATE", CriterionClass::Deadline),
    ("RAPIDITE", CriterionClass::Deadline),
    ("DEADLINE", CriterionClass::Deadline),
    ("ENVIRONNEMENT", CriterionClass::Environmental),
    ("ECOLOG", CriterionClass::Environmental),
    ("DEVELOPPEMENT DURABLE", CriterionClass::Environmental),
    ("CARBONE", CriterionClass::Environmental),
    ("ENERGETIQUE", CriterionClass::Environmental),
    ("DECHET", CriterionClass::Environmental),
    ("RECYCL", CriterionClass::Environmental),
    ("ENVIRONMENT", CriterionClass::Environmental),
    ("SOCIAL", CriterionClass::Social),
    ("INSERTION", CriterionClass::Social),
    ("HANDICAP", CriterionClass::Social),
    ("EMPLOI", CriterionClass::Social),
    ("SOLIDAIRE", CriterionClass::Social),
    ("EQUITABLE", CriterionClass::Social),
    ("TECHNIQUE", CriterionClass::Technical),
    ("QUALITE", CriterionClass::Technical),
    ("METHODOLOG", CriterionClass::Technical),
    ("MEMOIRE", CriterionClass::Technical),
    ("PERFORMANCE", CriterionClass::Technical),
    ("MOYENS", CriterionClass::Technical),
    ("COMPETENCE", CriterionClass::Technical),
    ("REFERENCE", CriterionClass::Technical),
    ("ORGANISATION", CriterionClass::Technical),
    ("SERVICE APRES VENTE", CriterionClass::Technical),
    ("SAV", CriterionClass::Technical),
    ("ASSISTANCE", CriterionClass::Technical),
    ("GARANTIE", CriterionClass::Technical),
    ("EXPERIENCE", CriterionClass::Technical),
    ("QUALITY", CriterionClass::Technical),
    ("TECHNICAL", CriterionClass::Technical),
];

impl Default for Lexicon {
    fn default() -> Self {
        Self::new(DEFAULT_LEXICON.iter().map(|(k, c)| (k.to_string(), *c)))
    }
}

impl Lexicon {
    pub fn new(entries: impl IntoIterator<Item = (String, CriterionClass)>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|(k, c)| (normalize_name(&k), c))
                .filter(|(k, _)| !k.is_empty())
                .collect(),
        }
    }

    /// Reads `keyword,class` lines (with a header row).
    pub fn load<R: Read>(source: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(source);
        let mut entries = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let (Some(k), Some(c)) = (record.get(0), record.get(1)) else {
                return Err(Error::Config(format!("lexicon line {}: expected keyword,class", i + 2)));
            };
            entries.push((k.to_string(), c.parse()?));
        }
        Ok(Self::new(entries))
    }

    pub fn entries(&self) -> &[(String, CriterionClass)] {
        &self.entries
    }
}

fn stem_matches(folded: &str, stem: &str) -> bool {
    let words: Vec<&str> = folded.split(' ').filter(|w| !w.is_empty()).collect();
    let stem_words: Vec<&str> = stem.split(' ').collect();
    let n = stem_words.len();
    if n == 0 || words.len() < n {
        return false;
    }
    words.windows(n).any(|w| {
        w[..n - 1] == stem_words[..n - 1] && w[n - 1].starts_with(stem_words[n - 1])
    })
}

/// Class of a free-text criterion name; `OTHERS` when no keyword matches.
pub fn classify_criterion(raw_name: &str, lexicon: &Lexicon) -> CriterionClass {
    let folded = normalize_name(raw_name);
    for class in CriterionClass::PRIORITY {
        if lexicon
            .entries
            .iter()
            .any(|(stem, c)| *c == class && stem_matches(&folded, stem))
        {
            return class;
        }
    }
    CriterionClass::Others
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+(?:[.,]\d+)?").unwrap())
}

/// Numeric tokens of a weight cell, in order. Everything else is dropped.
pub fn clean_weight_field(raw: &str, separators: &[String]) -> Vec<f64> {
    let mut text = raw.to_string();
    for sep in separators.iter().filter(|s| !s.is_empty()) {
        text = text.replace(sep.as_str(), " ");
    }
    number_re()
        .find_iter(&text)
        .filter_map(|m| parse_decimal(m.as_str()))
        .collect()
}

/// Names paired with their weights; `mismatch` when counts differed.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCriteria {
    pub pairs: Vec<(String, Option<f64>)>,
    pub mismatch: bool,
}

/// Splits the names cell on the first separator found in it and pairs the
/// parts with the weight tokens positionally.
pub fn split_criteria(names: &str, weights: &str, separators: &[String]) -> SplitCriteria {
    let found = detect_separators(&[names], separators);
    let parts: Vec<String> = match found.first() {
        Some(sep) => names
            .split(sep.as_str())
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::to_string)
            .collect(),
        None => vec![names.trim().to_string()],
    };
    let parts: Vec<String> = parts.into_iter().filter(|p| !p.is_empty()).collect();
    let tokens = clean_weight_field(weights, separators);
    if tokens.len() == parts.len() {
        SplitCriteria {
            pairs: parts.into_iter().zip(tokens.into_iter().map(Some)).collect(),
            mismatch: false,
        }
    } else {
        SplitCriteria {
            mismatch: !tokens.is_empty(),
            pairs: parts.into_iter().map(|p| (p, None)).collect(),
        }
    }
}

/// Cuts on `;`, newlines, and commas that are not decimal commas.
fn segments(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut last = 0;
    for (i, &b) in bytes.iter().enumerate() {
        let cut = match b {
            b';' | b'\n' => true,
            b',' => {
                let digit_before = i > 0 && bytes[i - 1].is_ascii_digit();
                let digit_after = bytes.get(i + 1).is_some_and(u8::is_ascii_digit);
                !(digit_before && digit_after)
            }
            _ => false,
        };
        if cut {
            out.push(&text[last..i]);
            last = i + 1;
        }
    }
    out.push(&text[last..]);
    out
}

fn unit_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:%|pourcents?|points?|pts?\.?)?\s*[)\]]?\s*[:=\-]?\s*").unwrap()
    })
}

fn trim_name(s: &str) -> String {
    s.trim_matches(|c: char| c.is_whitespace() || matches!(c, ':' | '=' | '-' | '(' | '[' | ')' | ']' | '.' | ','))
        .to_string()
}

/// Extracts `(name, weight)` pairs from a cell where names and weights were
/// typed together, e.g. `Prix: 60; Qualité: 40`. Segments are cut on `;`,
/// non-decimal commas and the configured separators; each segment's first
/// number is its weight.
pub fn unmix_names_weights(field: &str, separators: &[String]) -> Vec<(String, Option<f64>)> {
    let mut text = field.to_string();
    for sep in separators.iter().filter(|s| !s.is_empty()) {
        text = text.replace(sep.as_str(), ";");
    }
    let mut out = Vec::new();
    for seg in segments(&text) {
        let seg = seg.trim();
        if seg.is_empty() {
            continue;
        }
        match number_re().find(seg) {
            None => {
                let name = trim_name(seg);
                if !name.is_empty() {
                    out.push((name, None));
                }
            }
            Some(num) => {
                let weight = parse_decimal(num.as_str());
                let before = trim_name(&seg[..num.start()]);
                let name = if before.is_empty() {
                    let after = &seg[num.end()..];
                    let unit = unit_re().find(after).map_or(0, |m| m.end());
                    trim_name(&after[unit..])
                } else {
                    before
                };
                if !name.is_empty() {
                    out.push((name, weight));
                }
            }
        }
    }
    out
}

/// Rescales weights to sum to exactly 100.00 (two decimals). The rounding
/// residual goes to the largest weight, first one on ties. Returns `None`
/// when the list is empty, has a negative or non-finite entry, or sums to 0.
///
/// Weights with at most nine decimals are brought to a common integer
/// scale first, so shares are rounded exactly (half up) and a decimal
/// rescaling of the input cannot move a tie.
pub fn normalize_weights(weights: &[f64]) -> Option<Vec<f64>> {
    if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return None;
    }
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        return None;
    }
    let mut cents: Vec<i64> = match decimal_units(weights) {
        Some(units) => {
            let total: u128 = units.iter().sum();
            units
                .iter()
                .map(|&u| ((20_000 * u + total) / (2 * total)) as i64)
                .collect()
        }
        None => weights
            .iter()
            .map(|w| (10_000.0 * w / sum).round() as i64)
            .collect(),
    };
    let residual = 10_000 - cents.iter().sum::<i64>();
    let mut largest = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > weights[largest] {
            largest = i;
        }
    }
    cents[largest] += residual;
    Some(cents.into_iter().map(|c| c as f64 / 100.0).collect())
}

/// The weights as integers at the smallest common decimal scale, when every
/// weight is a decimal with at most nine places (up to float noise).
fn decimal_units(weights: &[f64]) -> Option<Vec<u128>> {
    let mut scale = 1.0;
    for _ in 0..=9 {
        let units: Option<Vec<u128>> = weights
            .iter()
            .map(|w| {
                let x = w * scale;
                let r = x.round();
                ((x - r).abs() <= 1e-9 * r.max(1.0) && r < 1e18).then_some(r as u128)
            })
            .collect();
        if let Some(units) = units {
            if units.iter().any(|&u| u > 0) {
                return Some(units);
            }
        }
        scale *= 10.0;
    }
    None
}

/// Named criterion with its class, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedCriterion {
    pub raw_name: String,
    pub class: CriterionClass,
    pub weight: Option<f64>,
}

/// Ensures exactly one PRICE criterion, taking its weight from the
/// dedicated price cell when that cell holds a number. Returns `true` when
/// the cell and a mixed-in price weight disagreed. Several mixed-in PRICE
/// criteria are folded into the first, weights added.
pub fn extract_price_weight(
    price_field: Option<&str>,
    criteria: Vec<ClassifiedCriterion>,
) -> (Vec<ClassifiedCriterion>, bool) {
    let dedicated = price_field.and_then(|p| clean_weight_field(p, &[]).first().copied());
    let mut out: Vec<ClassifiedCriterion> = Vec::with_capacity(criteria.len() + 1);
    let mut price_pos: Option<usize> = None;
    for c in criteria {
        if c.class != CriterionClass::Price {
            out.push(c);
            continue;
        }
        match price_pos {
            None => {
                price_pos = Some(out.len());
                out.push(c);
            }
            Some(p) => {
                let merged = &mut out[p];
                merged.weight = match (merged.weight, c.weight) {
                    (Some(a), Some(b)) => Some(a + b),
                    (a, b) => a.or(b),
                };
            }
        }
    }
    let mut conflict = false;
    if let Some(value) = dedicated {
        match price_pos {
            Some(p) => {
                if out[p].weight.is_some_and(|w| (w - value).abs() > 1e-9) {
                    conflict = true;
                }
                out[p].weight = Some(value);
            }
            None => out.insert(
                0,
                ClassifiedCriterion {
                    raw_name: "Prix".into(),
                    class: CriterionClass::Price,
                    weight: Some(value),
                },
            ),
        }
    }
    (out, conflict)
}

/// Full repair of one lot's criterion cells.
pub fn repair_lot(fields: &LotCriteriaFields, separators: &[String], lexicon: &Lexicon) -> Vec<Criterion> {
    let mut flag = None;
    let pairs = match (fields.names.as_deref(), fields.weights.as_deref()) {
        (Some(names), None) if names.bytes().any(|b| b.is_ascii_digit()) => {
            unmix_names_weights(names, separators)
        }
        (Some(names), weights) => {
            let split = split_criteria(names, weights.unwrap_or(""), separators);
            if split.mismatch {
                flag = Some(CriteriaFlag::CountMismatch);
            }
            split.pairs
        }
        (None, _) => Vec::new(),
    };
    let classified = pairs
        .into_iter()
        .map(|(raw_name, weight)| ClassifiedCriterion {
            class: classify_criterion(&raw_name, lexicon),
            raw_name,
            weight,
        })
        .collect();
    let (classified, conflict) = extract_price_weight(fields.price_weight.as_deref(), classified);
    if conflict {
        flag = Some(CriteriaFlag::PriceConflict);
    }
    let weights: Option<Vec<f64>> = classified.iter().map(|c| c.weight).collect();
    let normalized = weights.as_deref().and_then(normalize_weights);
    if normalized.is_none() && classified.iter().any(|c| c.weight.is_some()) && flag.is_none() {
        flag = Some(CriteriaFlag::Unnormalizable);
    }
    classified
        .into_iter()
        .enumerate()
        .map(|(i, c)| Criterion {
            lot_id: fields.lot_id,
            ordinal: i as u32 + 1,
            raw_name: c.raw_name,
            class: c.class,
            weight: match &normalized {
                Some(n) => Some(n[i]),
                None => c.weight.map(round2),
            },
            weight_is_normalized: normalized.is_some(),
            flag,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seps() -> Vec<String> {
        vec!["---".into(), "//".into()]
    }

    #[test]
    fn weight_cleaning() {
        assert_eq!(clean_weight_field("60 --- 40", &seps()), [60.0, 40.0]);
        assert_eq!(clean_weight_field("Pondération: 55%", &seps()), [55.0]);
        assert!(clean_weight_field("n/a", &seps()).is_empty());
        assert_eq!(clean_weight_field("12,5 // 87,5", &seps()), [12.5, 87.5]);
    }

    #[test]
    fn criteria_split() {
        let s = split_criteria("Prix --- Délai", "60 --- 40", &seps());
        assert_eq!(
            s.pairs,
            [("Prix".to_string(), Some(60.0)), ("Délai".to_string(), Some(40.0))]
        );
        assert!(!s.mismatch);
        let s = split_criteria("Prix", "", &seps());
        assert_eq!(s.pairs, [("Prix".to_string(), None)]);
        assert!(!s.mismatch);
        let s = split_criteria("A --- B", "1 --- 2 --- 3", &seps());
        assert_eq!(s.pairs, [("A".to_string(), None), ("B".to_string(), None)]);
        assert!(s.mismatch);
    }

    #[test]
    fn unmixing() {
        assert_eq!(
            unmix_names_weights("Prix: 60; Qualité: 40", &[]),
            [("Prix".to_string(), Some(60.0)), ("Qualité".to_string(), Some(40.0))]
        );
        assert_eq!(unmix_names_weights("Prix", &[]), [("Prix".to_string(), None)]);
        assert_eq!(
            unmix_names_weights("Valeur technique (60 points), prix (40 points)", &[]),
            [
                ("Valeur technique".to_string(), Some(60.0)),
                ("prix".to_string(), Some(40.0))
            ]
        );
        assert_eq!(
            unmix_names_weights("60% prix --- 40 % valeur technique", &seps()),
            [
                ("prix".to_string(), Some(60.0)),
                ("valeur technique".to_string(), Some(40.0))
            ]
        );
        assert_eq!(
            unmix_names_weights("Prix 52,5 ; Délai 47,5", &[]),
            [("Prix".to_string(), Some(52.5)), ("Délai".to_string(), Some(47.5))]
        );
    }

    #[test]
    fn weight_normalization_examples() {
        assert_eq!(normalize_weights(&[60.0, 40.0]).unwrap(), [60.0, 40.0]);
        assert_eq!(normalize_weights(&[1.0, 1.0]).unwrap(), [50.0, 50.0]);
        assert_eq!(normalize_weights(&[30.0, 20.0, 10.0]).unwrap(), [50.0, 33.33, 16.67]);
        assert_eq!(normalize_weights(&[1.0, 1.0, 1.0]).unwrap(), [33.34, 33.33, 33.33]);
        assert_eq!(normalize_weights(&[0.0, 0.0]), None);
        assert_eq!(normalize_weights(&[-1.0, 3.0]), None);
        assert_eq!(normalize_weights(&[]), None);
    }

    #[test]
    fn classification() {
        let lex = Lexicon::default();
        assert_eq!(classify_criterion("Prix", &lex), CriterionClass::Price);
        assert_eq!(classify_criterion("Délai de livraison", &lex), CriterionClass::Deadline);
        assert_eq!(classify_criterion("Zzz inconnu", &lex), CriterionClass::Others);
        assert_eq!(classify_criterion("Valeur technique", &lex), CriterionClass::Technical);
        assert_eq!(
            classify_criterion("Performances en matière de protection de l'environnement", &lex),
            CriterionClass::Environmental
        );
        assert_eq!(
            classify_criterion("Coût et qualité technique", &lex),
            CriterionClass::Price
        );
        assert_eq!(classify_criterion("Insertion sociale", &lex), CriterionClass::Social);
        assert_eq!(classify_criterion("", &lex), CriterionClass::Others);
    }

    #[test]
    fn lexicon_file() {
        let lex = Lexicon::load("keyword,class\nbudget,price\nsécurité,technical\n".as_bytes()).unwrap();
        assert_eq!(classify_criterion("Budget global", &lex), CriterionClass::Price);
        assert_eq!(classify_criterion("Sécurité", &lex), CriterionClass::Technical);
        assert!(Lexicon::load("keyword,class\nx,nope\n".as_bytes()).is_err());
    }

    fn cc(name: &str, class: CriterionClass, w: Option<f64>) -> ClassifiedCriterion {
        ClassifiedCriterion {
            raw_name: name.into(),
            class,
            weight: w,
        }
    }

    #[test]
    fn price_extraction() {
        let (out, conflict) = extract_price_weight(
            Some("60"),
            vec![cc("Qualité", CriterionClass::Technical, Some(40.0))],
        );
        assert!(!conflict);
        assert_eq!(out[0].class, CriterionClass::Price);
        assert_eq!(out[0].weight, Some(60.0));
        assert_eq!(out[1].weight, Some(40.0));

        let (out, conflict) = extract_price_weight(
            None,
            vec![
                cc("Prix", CriterionClass::Price, Some(70.0)),
                cc("Délai", CriterionClass::Deadline, Some(30.0)),
            ],
        );
        assert!(!conflict);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].weight, Some(70.0));

        let (out, conflict) =
            extract_price_weight(Some("60"), vec![cc("Prix", CriterionClass::Price, Some(50.0))]);
        assert!(conflict);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].weight, Some(60.0));

        let (out, _) = extract_price_weight(
            None,
            vec![
                cc("Prix", CriterionClass::Price, Some(30.0)),
                cc("Coût", CriterionClass::Price, Some(20.0)),
            ],
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].weight, Some(50.0));
    }

    fn fields(names: Option<&str>, weights: Option<&str>, price: Option<&str>) -> LotCriteriaFields {
        LotCriteriaFields {
            lot_id: 7,
            names: names.map(String::from),
            weights: weights.map(String::from),
            price_weight: price.map(String::from),
        }
    }

    #[test]
    fn lot_repair() {
        let lex = Lexicon::default();
        let out = repair_lot(&fields(Some("Valeur technique"), Some("40"), Some("60")), &seps(), &lex);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].class, CriterionClass::Price);
        assert_eq!(out[0].weight, Some(60.0));
        assert_eq!(out[1].ordinal, 2);
        assert!(out.iter().all(|c| c.weight_is_normalized));

        let out = repair_lot(&fields(Some("Prix: 6; Délai: 4"), None, None), &seps(), &lex);
        assert_eq!(out.iter().map(|c| c.weight).collect::<Vec<_>>(), [Some(60.0), Some(40.0)]);

        let out = repair_lot(&fields(Some("Prix --- Délai"), Some("3 --- 2 --- 1"), None), &seps(), &lex);
        assert!(out.iter().all(|c| c.weight.is_none() && !c.weight_is_normalized));
        assert_eq!(out[0].flag, Some(CriteriaFlag::CountMismatch));

        let out = repair_lot(&fields(Some("Prix --- Délai"), Some("0 --- 0"), None), &seps(), &lex);
        assert!(out.iter().all(|c| c.weight == Some(0.0) && !c.weight_is_normalized));
        assert_eq!(out[0].flag, Some(CriteriaFlag::Unnormalizable));

        assert!(repair_lot(&fields(None, None, None), &seps(), &lex).is_empty());
        let out = repair_lot(&fields(None, None, Some("100")), &seps(), &lex);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].weight, Some(100.0));
    }
}

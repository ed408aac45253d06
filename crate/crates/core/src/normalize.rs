//! Name and address normalization, zipcode repair and department derivation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use log::warn;
use serde::Deserialize;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::ingest::AgentOccurrence;
use crate::registry::{validate_siret, Identifier};

/// Postal-only tokens stripped from addresses when no list is configured.
pub const DEFAULT_POSTAL_TOKENS: &[&str] = &["BP", "CS", "CEDEX"];

/// Folds a free-text agent name: parenthesized segments removed, `&` read as
/// `ET`, diacritics folded, punctuation turned into spaces, whitespace
/// collapsed, upper case. Output only contains `[A-Z0-9 ]`.
pub fn normalize_name(raw: &str) -> String {
    let without_parens = strip_parenthesized(raw);
    let mut out = String::with_capacity(without_parens.len());
    let mut pending_space = false;
    let push = |out: &mut String, c: char, pending_space: &mut bool| {
        if *pending_space && !out.is_empty() {
            out.push(' ');
        }
        *pending_space = false;
        out.push(c);
    };
    for c in without_parens.chars() {
        if c == '&' {
            pending_space = true;
            push(&mut out, 'E', &mut pending_space);
            out.push('T');
            pending_space = true;
            continue;
        }
        if c.is_ascii_alphanumeric() {
            push(&mut out, c.to_ascii_uppercase(), &mut pending_space);
            continue;
        }
        if c.is_ascii() {
            pending_space = true;
            continue;
        }
        if let Some(lig) = fold_ligature(c) {
            for l in lig.chars() {
                push(&mut out, l, &mut pending_space);
            }
            continue;
        }
        let mut any = false;
        for d in std::iter::once(c).nfkd() {
            if d.is_ascii_alphanumeric() {
                push(&mut out, d.to_ascii_uppercase(), &mut pending_space);
                any = true;
            } else if d.is_ascii() {
                pending_space = true;
            }
        }
        if !any {
            pending_space = true;
        }
    }
    out
}

fn fold_ligature(c: char) -> Option<&'static str> {
    Some(match c {
        'œ' | 'Œ' => "OE",
        'æ' | 'Æ' => "AE",
        'ß' => "SS",
        'ø' | 'Ø' => "O",
        'ł' | 'Ł' => "L",
        'đ' | 'Đ' | 'ð' | 'Ð' => "D",
        'þ' | 'Þ' => "TH",
        'ı' => "I",
        _ => return None,
    })
}

/// Removes every matched `(...)` segment, nested ones included. Unmatched
/// brackets are left in place and later read as punctuation.
fn strip_parenthesized(raw: &str) -> String {
    let chars: Vec<char> = raw.chars().collect();
    let mut drop = vec![false; chars.len()];
    let mut stack = Vec::new();
    for (i, &c) in chars.iter().enumerate() {
        match c {
            '(' => stack.push(i),
            ')' => {
                if let Some(open) = stack.pop() {
                    for d in &mut drop[open..=i] {
                        *d = true;
                    }
                }
            }
            _ => {}
        }
    }
    let mut out = String::with_capacity(raw.len());
    let mut in_dropped = false;
    for (c, d) in chars.into_iter().zip(drop) {
        if d {
            if !in_dropped {
                out.push(' ');
            }
            in_dropped = true;
        } else {
            in_dropped = false;
            out.push(c);
        }
    }
    out
}

/// Cleaned `(street, zipcode, city)` triple.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CleanAddress {
    pub street: Option<String>,
    pub zipcode: Option<String>,
    pub city: Option<String>,
}

/// Folds the three address fields like names, strips postal-only tokens
/// (`BP 123`, `CEDEX 08`...), reduces the zipcode to its first 5-digit run
/// and removes digits from the city.
pub fn normalize_address(
    street: Option<&str>,
    zipcode: Option<&str>,
    city: Option<&str>,
    postal_tokens: &[String],
) -> CleanAddress {
    let street = street
        .map(normalize_name)
        .map(|s| strip_postal_tokens(&s, postal_tokens))
        .and_then(|s| crate::text::non_empty(&s));
    let zipcode = zipcode.and_then(five_digit_run);
    let city = city
        .map(normalize_name)
        .map(|s| strip_postal_tokens(&s, postal_tokens))
        .map(|s| {
            s.split(' ')
                .filter(|t| !t.is_empty() && !t.bytes().all(|b| b.is_ascii_digit()))
                .map(|t| t.chars().filter(|c| !c.is_ascii_digit()).collect::<String>())
                .filter(|t| !t.is_empty())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .and_then(|s| crate::text::non_empty(&s));
    CleanAddress {
        street,
        zipcode,
        city,
    }
}

fn strip_postal_tokens(folded: &str, postal_tokens: &[String]) -> String {
    let tokens: Vec<&str> = folded.split(' ').filter(|t| !t.is_empty()).collect();
    let mut kept = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        let t = tokens[i];
        let glued_digits = postal_tokens.iter().any(|p| {
            t.len() > p.len() && t.starts_with(p.as_str()) && t[p.len()..].bytes().all(|b| b.is_ascii_digit())
        });
        if postal_tokens.iter().any(|p| p == t) {
            i += 1;
            while i < tokens.len() && tokens[i].bytes().all(|b| b.is_ascii_digit()) {
                i += 1;
            }
            continue;
        }
        if glued_digits {
            i += 1;
            continue;
        }
        kept.push(t);
        i += 1;
    }
    kept.join(" ")
}

/// First run of exactly five ASCII digits.
fn five_digit_run(s: &str) -> Option<String> {
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i - start == 5 {
                return Some(s[start..i].to_string());
            }
        } else {
            i += 1;
        }
    }
    None
}

/// Department code of a 5-digit zipcode: two leading digits, three for
/// overseas (`97`, `98`), and `20` for the whole of Corsica.
pub fn department_of(zipcode: &str) -> Option<String> {
    if zipcode.len() != 5 || !zipcode.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    match &zipcode[..2] {
        "97" | "98" => Some(zipcode[..3].to_string()),
        prefix => Some(prefix.to_string()),
    }
}

/// City (folded) to zipcodes lookup built from a Hexaposte-style file.
#[derive(Debug, Clone, Default)]
pub struct PostalTable {
    by_city: BTreeMap<String, BTreeSet<String>>,
}

/// Column names and delimiter of the postal reference file.
#[derive(Debug, Clone, Deserialize, serde::Serialize, PartialEq)]
#[serde(default)]
pub struct PostalColumns {
    pub city: String,
    pub zipcode: String,
    pub delimiter: char,
}

impl Default for PostalColumns {
    fn default() -> Self {
        Self {
            city: "nom_de_la_commune".into(),
            zipcode: "code_postal".into(),
            delimiter: ';',
        }
    }
}

impl PostalTable {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut table = Self::default();
        for (city, zip) in pairs {
            table.insert(city, zip);
        }
        table
    }

    fn insert(&mut self, city: &str, zip: &str) {
        let key = normalize_name(city);
        let Some(zip) = five_digit_run(zip) else {
            return;
        };
        if key.is_empty() {
            return;
        }
        self.by_city.entry(key).or_default().insert(zip);
    }

    pub fn load<R: Read>(source: R, columns: &PostalColumns) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(columns.delimiter as u8)
            .flexible(true)
            .from_reader(source);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Config(format!("postal table lacks column `{name}`")))
        };
        let city_idx = find(&columns.city)?;
        let zip_idx = find(&columns.zipcode)?;
        let mut table = Self::default();
        for record in rdr.records() {
            let record = record?;
            if let (Some(city), Some(zip)) = (record.get(city_idx), record.get(zip_idx)) {
                table.insert(city, zip);
            }
        }
        Ok(table)
    }

    pub fn zipcodes(&self, folded_city: &str) -> Option<&BTreeSet<String>> {
        self.by_city.get(folded_city)
    }

    pub fn len(&self) -> usize {
        self.by_city.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_city.is_empty()
    }
}

/// The zipcode of `city` when the table maps it to exactly one zipcode.
pub fn fill_zipcode(city: &str, table: &PostalTable) -> Option<String> {
    let zips = table.zipcodes(city)?;
    if zips.len() == 1 {
        zips.iter().next().cloned()
    } else {
        None
    }
}

/// Applies name/address normalization to one occurrence, filling a missing
/// zipcode from the postal table and deriving the department.
pub fn normalize_occurrence(occ: &mut AgentOccurrence, postal: &PostalTable, postal_tokens: &[String]) {
    let name = normalize_name(&occ.raw_name);
    occ.normalized_name = crate::text::non_empty(&name);
    let clean = normalize_address(
        occ.street.as_deref(),
        occ.zipcode.as_deref(),
        occ.city.as_deref(),
        postal_tokens,
    );
    occ.street = clean.street;
    occ.city = clean.city;
    occ.zipcode = match clean.zipcode {
        Some(z) => Some(z),
        None => occ.city.as_deref().and_then(|c| fill_zipcode(c, postal)),
    };
    occ.department = occ.zipcode.as_deref().and_then(department_of);
}

/// Validates declared SIRETs and tags every occurrence bearing the same
/// valid 14-digit SIRET with the same agent key. Declared 9-digit values are
/// kept as SIREN-only identifiers without a key.
pub fn merge_by_declared_siret(occurrences: &mut [AgentOccurrence]) -> usize {
    let mut invalid = 0;
    for occ in occurrences.iter_mut() {
        let Some(raw) = occ.declared_siret.as_deref() else {
            continue;
        };
        match validate_siret(raw) {
            Some(Identifier::Siret(s)) => {
                occ.agent_key = Some(s.as_str().to_string());
                occ.identifier = Some(Identifier::Siret(s));
            }
            Some(id @ Identifier::Siren(_)) => {
                occ.identifier = Some(id);
            }
            _ => {
                invalid += 1;
                warn!(
                    "occurrence {}: ignoring invalid declared SIRET {raw:?}",
                    occ.occurrence_id
                );
            }
        }
    }
    invalid
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn name_examples() {
        assert_eq!(normalize_name("MAIRIE DE LYON"), "MAIRIE DE LYON");
        assert_eq!(normalize_name("Sté. Dupont (siège social)"), "STE DUPONT");
        assert_eq!(
            normalize_name("Mairie de Brié-et-Angonnes"),
            "MAIRIE DE BRIE ET ANGONNES"
        );
        assert_eq!(normalize_name("Dupont & Fils"), "DUPONT ET FILS");
        assert_eq!(normalize_name("A (b (c) d) E"), "A E");
        assert_eq!(normalize_name("Œuvre  sociale"), "OEUVRE SOCIALE");
        assert_eq!(normalize_name("(tout)"), "");
        assert_eq!(normalize_name("L'Hôpital"), "L HOPITAL");
    }

    #[test]
    fn unmatched_brackets_are_punctuation() {
        assert_eq!(normalize_name("ABC (DEF"), "ABC DEF");
        assert_eq!(normalize_name("ABC) DEF"), "ABC DEF");
    }

    #[test]
    fn address_examples() {
        let tokens: Vec<String> = DEFAULT_POSTAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let a = normalize_address(None, None, Some("PARIS CEDEX 08"), &tokens);
        assert_eq!(a.city.as_deref(), Some("PARIS"));
        let a = normalize_address(None, Some("F-75008"), None, &tokens);
        assert_eq!(a.zipcode.as_deref(), Some("75008"));
        let a = normalize_address(None, Some("ABC"), None, &tokens);
        assert_eq!(a.zipcode, None);
        let a = normalize_address(Some("12, rue de la Paix - BP 1234"), None, Some("Lyon 3e"), &tokens);
        assert_eq!(a.street.as_deref(), Some("12 RUE DE LA PAIX"));
        assert_eq!(a.city.as_deref(), Some("LYON E"));
        let a = normalize_address(Some("CS70001"), None, None, &tokens);
        assert_eq!(a.street, None);
    }

    #[test]
    fn departments() {
        assert_eq!(department_of("75008").as_deref(), Some("75"));
        assert_eq!(department_of("97400").as_deref(), Some("974"));
        assert_eq!(department_of("98800").as_deref(), Some("988"));
        assert_eq!(department_of("20000").as_deref(), Some("20"));
        assert_eq!(department_of("20200").as_deref(), Some("20"));
        assert_eq!(department_of("7500"), None);
        assert_eq!(department_of("7500A"), None);
    }

    #[test]
    fn zipcode_fill_requires_unique_mapping() {
        let table = PostalTable::from_pairs([
            ("Lyon", "69001"),
            ("Lyon", "69002"),
            ("Brié-et-Angonnes", "38320"),
        ]);
        assert_eq!(fill_zipcode("BRIE ET ANGONNES", &table).as_deref(), Some("38320"));
        assert_eq!(fill_zipcode("LYON", &table), None);
        assert_eq!(fill_zipcode("NULLEPART", &table), None);
    }

    #[test]
    fn postal_table_loader() {
        let data = "code_commune_insee;nom_de_la_commune;code_postal\n\
                    38057;BRIE ET ANGONNES;38320\n\
                    69381;LYON;69001\n\
                    69382;LYON;69002\n\
                    00000;VIDE;\n";
        let table = PostalTable::load(data.as_bytes(), &PostalColumns::default()).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table.zipcodes("LYON").unwrap().len(), 2);
        let err = PostalTable::load(
            "a;b\n1;2\n".as_bytes(),
            &PostalColumns::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    fn occ(id: u64, name: &str, siret: Option<&str>) -> AgentOccurrence {
        let mut o = AgentOccurrence::new(id, 1, crate::ingest::Role::Buyer, name.into());
        o.declared_siret = siret.map(String::from);
        o
    }

    #[test]
    fn declared_siret_keys() {
        let mut occs = vec![
            occ(1, "MAIRIE DE LYON", Some("123 456 789 00013")),
            occ(2, "VILLE DE LYON", Some("12345678900013")),
            occ(3, "AUTRE", Some("98765432100011")),
            occ(4, "INVALIDE", Some("1234")),
            occ(5, "SANS", None),
        ];
        let invalid = merge_by_declared_siret(&mut occs);
        assert_eq!(invalid, 1);
        assert_eq!(occs[0].agent_key, occs[1].agent_key);
        assert!(occs[0].agent_key.is_some());
        assert_ne!(occs[0].agent_key, occs[2].agent_key);
        assert_eq!(occs[3].agent_key, None);
        assert_eq!(occs[3].identifier, None);
        assert_eq!(occs[4].agent_key, None);
    }

    #[test]
    fn occurrence_normalization_fills_zipcode() {
        let table = PostalTable::from_pairs([("Brié-et-Angonnes", "38320")]);
        let mut o = occ(1, "Mairie (accueil)", None);
        o.city = Some("Brié-et-Angonnes".into());
        normalize_occurrence(&mut o, &table, &[]);
        assert_eq!(o.normalized_name.as_deref(), Some("MAIRIE"));
        assert_eq!(o.zipcode.as_deref(), Some("38320"));
        assert_eq!(o.department.as_deref(), Some("38"));

        let mut o = occ(2, "X", None);
        o.city = Some("Brié-et-Angonnes".into());
        o.zipcode = Some("38000".into());
        normalize_occurrence(&mut o, &table, &[]);
        assert_eq!(o.zipcode.as_deref(), Some("38000"));
    }

    proptest! {
        #[test]
        fn name_is_idempotent_and_clean(s in "\\PC{0,40}") {
            let once = normalize_name(&s);
            prop_assert_eq!(normalize_name(&once), once.clone());
            prop_assert!(once.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == ' '));
            prop_assert!(!once.starts_with(' ') && !once.ends_with(' ') && !once.contains("  "));
        }

        #[test]
        fn corsica_never_split(rest in "[0-9]{3}") {
            let d = department_of(&format!("20{rest}")).unwrap();
            prop_assert_eq!(d, "20");
        }
    }
}

//! SIRENE-style registry: identifiers, entities, facilities and the lookup
//! indexes used for candidate blocking.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use chrono::NaiveDate;
use log::warn;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::normalize::{department_of, normalize_address, normalize_name};
use crate::text::{non_empty, parse_date};

/// Prefix reserved for identifiers assigned to agents without a SIRET.
pub const INTERNAL_PREFIX: char = 'U';

/// A 14-digit facility identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Siret(String);

impl Siret {
    pub fn parse(s: &str) -> Option<Self> {
        (s.len() == 14 && s.bytes().all(|b| b.is_ascii_digit())).then(|| Siret(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The parent entity number (first 9 digits).
    pub fn siren(&self) -> &str {
        &self.0[..9]
    }

    /// The facility suffix (last 5 digits).
    pub fn nic(&self) -> &str {
        &self.0[9..]
    }
}

impl fmt::Display for Siret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// `(siren, nic)` of a SIRET.
pub fn split_siret(siret: &Siret) -> (&str, &str) {
    (siret.siren(), siret.nic())
}

/// Agent identifier: a full SIRET, a bare SIREN, or an internal code
/// (`U` followed by a zero-padded sequence number).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Identifier {
    Siret(Siret),
    Siren(String),
    Internal(u64),
}

impl Identifier {
    pub fn internal(seq: u64) -> Self {
        Identifier::Internal(seq)
    }

    /// SIREN part for registry identifiers, `None` for internal codes.
    pub fn siren(&self) -> Option<&str> {
        match self {
            Identifier::Siret(s) => Some(s.siren()),
            Identifier::Siren(s) => Some(s),
            Identifier::Internal(_) => None,
        }
    }

    pub fn is_registry(&self) -> bool {
        !matches!(self, Identifier::Internal(_))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Identifier::Siret(_) => "siret",
            Identifier::Siren(_) => "siren",
            Identifier::Internal(_) => "internal",
        }
    }
}

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Identifier::Siret(s) => write!(f, "{s}"),
            Identifier::Siren(s) => f.write_str(s),
            Identifier::Internal(n) => write!(f, "{INTERNAL_PREFIX}{n:06}"),
        }
    }
}

impl FromStr for Identifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix(INTERNAL_PREFIX) {
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                return rest
                    .parse()
                    .map(Identifier::Internal)
                    .map_err(|_| Error::Input(format!("bad internal code {s:?}")));
            }
        }
        match validate_siret(s) {
            Some(id) if id.to_string() == s => Ok(id),
            _ => Err(Error::Input(format!("malformed identifier {s:?}"))),
        }
    }
}

impl Serialize for Identifier {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Identifier {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Format-only validation: spaces are dropped, 14 digits give a SIRET and
/// 9 digits a SIREN. There is no checksum test.
pub fn validate_siret(raw: &str) -> Option<Identifier> {
    let digits: String = raw
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '\u{a0}' && *c != '\u{202f}')
        .collect();
    if !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    match digits.len() {
        14 => Some(Identifier::Siret(Siret(digits))),
        9 => Some(Identifier::Siren(digits)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryEntity {
    pub siren: String,
    /// Current name first, then former/alternative names; all folded.
    pub legal_names: Vec<String>,
    pub creation_date: Option<NaiveDate>,
    pub closure_date: Option<NaiveDate>,
    pub activity_code: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryFacility {
    pub siret: Siret,
    pub names: Vec<String>,
    pub street: Option<String>,
    pub zipcode: Option<String>,
    pub city: Option<String>,
    pub department: Option<String>,
    pub activity_code: Option<String>,
    pub open_date: Option<NaiveDate>,
    pub close_date: Option<NaiveDate>,
    /// Set when no entity row exists for the parent SIREN.
    pub orphan: bool,
}

impl RegistryFacility {
    pub fn parent_siren(&self) -> &str {
        self.siret.siren()
    }

    pub fn nic(&self) -> &str {
        self.siret.nic()
    }
}

/// True iff the facility was open on `date`. Missing dates never exclude.
pub fn temporally_valid(facility: &RegistryFacility, date: NaiveDate) -> bool {
    facility.open_date.is_none_or(|open| open <= date)
        && facility.close_date.is_none_or(|close| date <= close)
}

/// Activity code reduced to upper-case alphanumerics, truncated to `len`.
pub fn activity_prefix(code: &str, len: usize) -> Option<String> {
    let cleaned: String = code
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_uppercase())
        .collect();
    if cleaned.len() < len || cleaned.is_empty() {
        return None;
    }
    Some(cleaned[..len].to_string())
}

/// Column names of the entity and facility extracts. Name lists inside one
/// cell are separated by `|`.
#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default)]
pub struct RegistryColumns {
    pub delimiter: char,
    pub entity_siren: String,
    pub entity_name: String,
    pub entity_other_names: String,
    pub entity_creation_date: String,
    pub entity_closure_date: String,
    pub entity_activity: String,
    pub facility_siret: String,
    pub facility_names: String,
    pub facility_street: String,
    pub facility_zipcode: String,
    pub facility_city: String,
    pub facility_activity: String,
    pub facility_open_date: String,
    pub facility_close_date: String,
}

impl Default for RegistryColumns {
    fn default() -> Self {
        Self {
            delimiter: ',',
            entity_siren: "siren".into(),
            entity_name: "denominationUniteLegale".into(),
            entity_other_names: "autresDenominationsUniteLegale".into(),
            entity_creation_date: "dateCreationUniteLegale".into(),
            entity_closure_date: "dateFermetureUniteLegale".into(),
            entity_activity: "activitePrincipaleUniteLegale".into(),
            facility_siret: "siret".into(),
            facility_names: "denominationUsuelleEtablissement".into(),
            facility_street: "adresseEtablissement".into(),
            facility_zipcode: "codePostalEtablissement".into(),
            facility_city: "libelleCommuneEtablissement".into(),
            facility_activity: "activitePrincipaleEtablissement".into(),
            facility_open_date: "dateCreationEtablissement".into(),
            facility_close_date: "dateFermetureEtablissement".into(),
        }
    }
}

/// In-memory registry, immutable after [`load_registry`]. Facilities are
/// kept sorted by SIRET so index positions double as a SIRET order.
#[derive(Debug, Clone)]
pub struct Registry {
    entities: Vec<RegistryEntity>,
    entity_by_siren: HashMap<String, usize>,
    facilities: Vec<RegistryFacility>,
    facility_parent: Vec<Option<usize>>,
    by_department: BTreeMap<String, Vec<usize>>,
    by_activity: BTreeMap<String, Vec<usize>>,
    by_name_token: HashMap<String, Vec<usize>>,
    activity_prefix_len: usize,
}

impl Registry {
    /// Builds the registry and its indexes. Entities with a duplicate SIREN
    /// and facilities with a duplicate SIRET are dropped (first row wins).
    pub fn build(
        entities: Vec<RegistryEntity>,
        mut facilities: Vec<RegistryFacility>,
        activity_prefix_len: usize,
    ) -> Self {
        let mut kept_entities = Vec::with_capacity(entities.len());
        let mut entity_by_siren = HashMap::with_capacity(entities.len());
        for e in entities {
            if entity_by_siren.contains_key(&e.siren) {
                warn!("registry: duplicate entity {}", e.siren);
                continue;
            }
            entity_by_siren.insert(e.siren.clone(), kept_entities.len());
            kept_entities.push(e);
        }
        facilities.sort_by(|a, b| a.siret.cmp(&b.siret));
        facilities.dedup_by(|b, a| {
            let dup = a.siret == b.siret;
            if dup {
                warn!("registry: duplicate facility {}", b.siret);
            }
            dup
        });

        let mut reg = Registry {
            entities: kept_entities,
            entity_by_siren,
            facility_parent: Vec::with_capacity(facilities.len()),
            facilities,
            by_department: BTreeMap::new(),
            by_activity: BTreeMap::new(),
            by_name_token: HashMap::new(),
            activity_prefix_len,
        };
        for idx in 0..reg.facilities.len() {
            let parent = reg.entity_by_siren.get(reg.facilities[idx].parent_siren()).copied();
            reg.facilities[idx].orphan = parent.is_none();
            reg.facility_parent.push(parent);

            let f = &reg.facilities[idx];
            if let Some(d) = &f.department {
                reg.by_department.entry(d.clone()).or_default().push(idx);
            }
            let mut prefixes = BTreeSet::new();
            if let Some(p) = f.activity_code.as_deref().and_then(|c| activity_prefix(c, activity_prefix_len)) {
                prefixes.insert(p);
            }
            if let Some(p) = parent
                .and_then(|e| reg.entities[e].activity_code.as_deref())
                .and_then(|c| activity_prefix(c, activity_prefix_len))
            {
                prefixes.insert(p);
            }
            for p in prefixes {
                reg.by_activity.entry(p).or_default().push(idx);
            }
            let mut tokens = BTreeSet::new();
            for name in reg.comparison_names(idx) {
                tokens.extend(name.split(' ').filter(|t| !t.is_empty()).map(str::to_string));
            }
            for t in tokens {
                reg.by_name_token.entry(t).or_default().push(idx);
            }
        }
        reg
    }

    pub fn entities(&self) -> &[RegistryEntity] {
        &self.entities
    }

    pub fn facilities(&self) -> &[RegistryFacility] {
        &self.facilities
    }

    pub fn facility(&self, idx: usize) -> &RegistryFacility {
        &self.facilities[idx]
    }

    pub fn entity(&self, siren: &str) -> Option<&RegistryEntity> {
        self.entity_by_siren.get(siren).map(|&i| &self.entities[i])
    }

    pub fn parent_of(&self, idx: usize) -> Option<&RegistryEntity> {
        self.facility_parent[idx].map(|e| &self.entities[e])
    }

    pub fn facility_by_siret(&self, siret: &Siret) -> Option<usize> {
        self.facilities.binary_search_by(|f| f.siret.cmp(siret)).ok()
    }

    pub fn activity_prefix_len(&self) -> usize {
        self.activity_prefix_len
    }

    /// Names a facility is compared on: its own names, or its parent
    /// entity's legal names when it has none.
    pub fn comparison_names(&self, idx: usize) -> &[String] {
        let f = &self.facilities[idx];
        if !f.names.is_empty() {
            return &f.names;
        }
        self.parent_of(idx).map(|e| e.legal_names.as_slice()).unwrap_or(&[])
    }

    /// Activity prefixes of a facility: its own code, then the parent's.
    pub fn activity_prefixes(&self, idx: usize) -> (Option<String>, Option<String>) {
        let own = self.facilities[idx]
            .activity_code
            .as_deref()
            .and_then(|c| activity_prefix(c, self.activity_prefix_len));
        let parent = self
            .parent_of(idx)
            .and_then(|e| e.activity_code.as_deref())
            .and_then(|c| activity_prefix(c, self.activity_prefix_len));
        (own, parent)
    }

    pub fn by_department(&self, department: &str) -> &[usize] {
        self.by_department.get(department).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn by_activity(&self, prefix: &str) -> &[usize] {
        self.by_activity.get(prefix).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn by_name_token(&self, token: &str) -> &[usize] {
        self.by_name_token.get(token).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn orphan_count(&self) -> usize {
        self.facilities.iter().filter(|f| f.orphan).count()
    }
}

fn split_names(cell: Option<&str>) -> Vec<String> {
    cell.map(|c| {
        c.split('|')
            .map(normalize_name)
            .filter(|n| !n.is_empty())
            .collect()
    })
    .unwrap_or_default()
}

struct Columns {
    headers: HashMap<String, usize>,
}

impl Columns {
    fn new(headers: &csv::StringRecord) -> Self {
        Self {
            headers: headers
                .iter()
                .enumerate()
                .map(|(i, h)| (h.trim().to_string(), i))
                .collect(),
        }
    }

    fn require(&self, name: &str, file: &str) -> Result<usize> {
        self.headers
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("{file} file lacks column `{name}`")))
    }

    fn optional(&self, name: &str) -> Option<usize> {
        self.headers.get(name).copied()
    }
}

fn cell(record: &csv::StringRecord, idx: Option<usize>) -> Option<&str> {
    idx.and_then(|i| record.get(i)).map(str::trim).filter(|s| !s.is_empty())
}

/// Reads the entity and facility extracts and builds the indexes.
pub fn load_registry<E: Read, F: Read>(
    entity_source: E,
    facility_source: F,
    columns: &RegistryColumns,
    activity_prefix_len: usize,
) -> Result<Registry> {
    let delim = columns.delimiter as u8;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delim)
        .flexible(true)
        .from_reader(entity_source);
    let cols = Columns::new(rdr.headers()?);
    let siren_i = cols.require(&columns.entity_siren, "entity")?;
    let name_i = cols.require(&columns.entity_name, "entity")?;
    let other_i = cols.optional(&columns.entity_other_names);
    let created_i = cols.optional(&columns.entity_creation_date);
    let closed_i = cols.optional(&columns.entity_closure_date);
    let activity_i = cols.optional(&columns.entity_activity);
    let mut entities = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let Some(siren) = cell(&record, Some(siren_i)).and_then(validate_siret) else {
            warn!("registry: entity row with malformed SIREN skipped");
            continue;
        };
        let Identifier::Siren(siren) = siren else {
            warn!("registry: entity row with a 14-digit SIREN skipped");
            continue;
        };
        let mut legal_names = split_names(cell(&record, Some(name_i)));
        for n in split_names(cell(&record, other_i)) {
            if !legal_names.contains(&n) {
                legal_names.push(n);
            }
        }
        if legal_names.is_empty() {
            warn!("registry: entity {siren} has no usable name, skipped");
            continue;
        }
        entities.push(RegistryEntity {
            siren,
            legal_names,
            creation_date: cell(&record, created_i).and_then(parse_date),
            closure_date: cell(&record, closed_i).and_then(parse_date),
            activity_code: cell(&record, activity_i).map(str::to_string),
        });
    }

    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delim)
        .flexible(true)
        .from_reader(facility_source);
    let cols = Columns::new(rdr.headers()?);
    let siret_i = cols.require(&columns.facility_siret, "facility")?;
    let names_i = cols.optional(&columns.facility_names);
    let street_i = cols.optional(&columns.facility_street);
    let zip_i = cols.optional(&columns.facility_zipcode);
    let city_i = cols.optional(&columns.facility_city);
    let activity_i = cols.optional(&columns.facility_activity);
    let open_i = cols.optional(&columns.facility_open_date);
    let close_i = cols.optional(&columns.facility_close_date);
    let mut facilities = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let Some(siret) = cell(&record, Some(siret_i)).and_then(|s| Siret::parse(&s.replace(' ', ""))) else {
            warn!("registry: facility row with malformed SIRET skipped");
            continue;
        };
        let addr = normalize_address(
            cell(&record, street_i),
            cell(&record, zip_i),
            cell(&record, city_i),
            &[],
        );
        let department = addr.zipcode.as_deref().and_then(department_of);
        facilities.push(RegistryFacility {
            siret,
            names: split_names(cell(&record, names_i)),
            street: addr.street,
            zipcode: addr.zipcode,
            city: addr.city,
            department,
            activity_code: cell(&record, activity_i).and_then(non_empty),
            open_date: cell(&record, open_i).and_then(parse_date),
            close_date: cell(&record, close_i).and_then(parse_date),
            orphan: false,
        });
    }
    let registry = Registry::build(entities, facilities, activity_prefix_len);
    if registry.orphan_count() > 0 {
        warn!("registry: {} orphan facilities", registry.orphan_count());
    }
    Ok(registry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ENTITIES: &str = "siren,denominationUniteLegale,autresDenominationsUniteLegale,dateCreationUniteLegale,dateFermetureUniteLegale,activitePrincipaleUniteLegale\n\
        123456789,Commune de Lyon,Ville de Lyon|Mairie de Lyon,1990-01-01,,84.11Z\n\
        987654321,Dupont SARL,,2005-06-01,,43.21A\n";
    const FACILITIES: &str = "siret,denominationUsuelleEtablissement,adresseEtablissement,codePostalEtablissement,libelleCommuneEtablissement,activitePrincipaleEtablissement,dateCreationEtablissement,dateFermetureEtablissement\n\
        12345678900013,,1 place de la Comedie,69001,LYON,84.11Z,1990-01-01,\n\
        98765432100011,Dupont Batiment,3 rue Victor Hugo,75008,PARIS,,2005-06-01,2012-12-31\n\
        55555555500015,Orphelin,,97400,SAINT DENIS,,,\n";

    fn registry() -> Registry {
        load_registry(
            ENTITIES.as_bytes(),
            FACILITIES.as_bytes(),
            &RegistryColumns::default(),
            2,
        )
        .unwrap()
    }

    #[test]
    fn siret_validation() {
        assert_eq!(
            validate_siret("123 456 789 00013"),
            Some(Identifier::Siret(Siret("12345678900013".into())))
        );
        assert_eq!(
            validate_siret("123456789"),
            Some(Identifier::Siren("123456789".into()))
        );
        assert_eq!(validate_siret("12AB"), None);
        assert_eq!(validate_siret("1234"), None);
    }

    #[test]
    fn siret_split() {
        let s = Siret::parse("12345678900013").unwrap();
        assert_eq!(split_siret(&s), ("123456789", "00013"));
        let s = Siret::parse("00000000000001").unwrap();
        assert_eq!(split_siret(&s), ("000000000", "00001"));
    }

    #[test]
    fn internal_codes_render_and_parse() {
        let id = Identifier::internal(1);
        assert_eq!(id.to_string(), "U000001");
        assert_eq!("U000001".parse::<Identifier>().unwrap(), id);
        assert_eq!("U1234567".parse::<Identifier>().unwrap(), Identifier::internal(1234567));
        assert!(validate_siret(&id.to_string()).is_none());
        assert!("12AB".parse::<Identifier>().is_err());
    }

    #[test]
    fn load_counts_and_orphans() {
        let reg = registry();
        assert_eq!(reg.entities().len(), 2);
        assert_eq!(reg.facilities().len(), 3);
        let orphan = reg
            .facilities()
            .iter()
            .find(|f| f.siret.as_str() == "55555555500015")
            .unwrap();
        assert!(orphan.orphan);
        assert_eq!(orphan.department.as_deref(), Some("974"));
        assert_eq!(reg.orphan_count(), 1);
        let lyon = reg.facility_by_siret(&Siret::parse("12345678900013").unwrap()).unwrap();
        assert_eq!(
            reg.comparison_names(lyon),
            ["COMMUNE DE LYON", "VILLE DE LYON", "MAIRIE DE LYON"]
        );
        assert_eq!(reg.parent_of(lyon).unwrap().siren, "123456789");
    }

    #[test]
    fn department_index_matches_scan() {
        let reg = registry();
        for dept in ["69", "75", "974", "13"] {
            let scan: Vec<usize> = (0..reg.facilities().len())
                .filter(|&i| reg.facility(i).department.as_deref() == Some(dept))
                .collect();
            assert_eq!(reg.by_department(dept), scan.as_slice());
        }
    }

    #[test]
    fn index_completeness() {
        let reg = registry();
        for idx in 0..reg.facilities().len() {
            let f = reg.facility(idx);
            if let Some(d) = &f.department {
                assert!(reg.by_department(d).contains(&idx));
            }
            let (own, parent) = reg.activity_prefixes(idx);
            for p in own.iter().chain(parent.iter()) {
                assert!(reg.by_activity(p).contains(&idx));
            }
            for name in reg.comparison_names(idx) {
                for t in name.split(' ') {
                    assert!(reg.by_name_token(t).contains(&idx));
                }
            }
        }
    }

    #[test]
    fn missing_mandatory_column_is_config_error() {
        let err = load_registry(
            "id,name\n1,x\n".as_bytes(),
            FACILITIES.as_bytes(),
            &RegistryColumns::default(),
            2,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn temporal_validity() {
        let mut f = registry().facility(0).clone();
        let d = |y| NaiveDate::from_ymd_opt(y, 6, 1).unwrap();
        f.open_date = Some(d(2008));
        f.close_date = None;
        assert!(temporally_valid(&f, d(2015)));
        f.close_date = Some(d(2012));
        assert!(!temporally_valid(&f, d(2015)));
        f.open_date = None;
        f.close_date = None;
        assert!(temporally_valid(&f, d(2015)));
        f.open_date = Some(d(2016));
        assert!(!temporally_valid(&f, d(2015)));
    }

    #[test]
    fn activity_prefixes() {
        assert_eq!(activity_prefix("84.11Z", 2).as_deref(), Some("84"));
        assert_eq!(activity_prefix("45000000-7", 3).as_deref(), Some("450"));
        assert_eq!(activity_prefix("8", 2), None);
    }

    proptest! {
        #[test]
        fn siret_roundtrip(digits in "[0-9]{14}") {
            let id = validate_siret(&digits).unwrap();
            prop_assert_eq!(validate_siret(&id.to_string()), Some(id.clone()));
            let Identifier::Siret(s) = id else { unreachable!() };
            let (siren, nic) = split_siret(&s);
            prop_assert_eq!(format!("{siren}{nic}"), digits);
        }

        #[test]
        fn internal_codes_never_look_like_registry_ids(n in 0u64..10_000_000) {
            let code = Identifier::internal(n).to_string();
            prop_assert!(validate_siret(&code).is_none());
            prop_assert_eq!(code.parse::<Identifier>().unwrap(), Identifier::internal(n));
        }
    }
}

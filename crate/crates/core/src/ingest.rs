//! Raw TED table parsing, typed lot records and joint-agent splitting.

use std::collections::{HashMap, HashSet};
use std::io::Read;
use std::sync::Arc;

use chrono::NaiveDate;
use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalize::normalize_name;
use crate::registry::Identifier;
use crate::text::{non_empty, parse_date, parse_decimal};

/// Separators seen between jointly described agents, longest first.
pub const DEFAULT_SEPARATORS: &[&str] = &["-----", "----", "---", "//", " / "];

/// Winner names meaning the lot was not awarded.
pub const DEFAULT_UNSUCCESSFUL_MARKERS: &[&str] = &[
    "INFRUCTUEUX",
    "INFRUCTUEUSE",
    "INFRUCTEUX",
    "LOT INFRUCTUEUX",
    "SANS SUITE",
    "NON ATTRIBUE",
];

/// Maps semantic fields to source column names. The defaults follow the TED
/// contract-award CSV export (2010 onward).
#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default)]
pub struct ColumnMap {
    pub notice_id: String,
    pub lot_number: String,
    pub publication_date: String,
    pub award_date: String,
    pub contract_type: String,
    pub activity_code: String,
    pub number_of_offers: String,
    pub awarded_value: String,
    pub currency: String,
    pub cancelled: String,
    pub contract_notice_ref: String,
    pub buyer_name: String,
    pub buyer_siret: String,
    pub buyer_street: String,
    pub buyer_zipcode: String,
    pub buyer_city: String,
    pub buyer_country: String,
    pub winner_name: String,
    pub winner_siret: String,
    pub winner_street: String,
    pub winner_zipcode: String,
    pub winner_city: String,
    pub winner_country: String,
    pub criteria_names: String,
    pub criteria_weights: String,
    pub price_weight: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            notice_id: "ID_NOTICE_CAN".into(),
            lot_number: "ID_LOT_AWARDED".into(),
            publication_date: "DT_DISPATCH".into(),
            award_date: "DT_AWARD".into(),
            contract_type: "TYPE_OF_CONTRACT".into(),
            activity_code: "CPV".into(),
            number_of_offers: "NUMBER_OFFERS".into(),
            awarded_value: "AWARD_VALUE_EURO".into(),
            currency: "CURRENCY".into(),
            cancelled: "CANCELLED".into(),
            contract_notice_ref: "ID_NOTICE_CN".into(),
            buyer_name: "CAE_NAME".into(),
            buyer_siret: "CAE_NATIONALID".into(),
            buyer_street: "CAE_ADDRESS".into(),
            buyer_zipcode: "CAE_POSTAL_CODE".into(),
            buyer_city: "CAE_TOWN".into(),
            buyer_country: "ISO_COUNTRY_CODE".into(),
            winner_name: "WIN_NAME".into(),
            winner_siret: "WIN_NATIONALID".into(),
            winner_street: "WIN_ADDRESS".into(),
            winner_zipcode: "WIN_POSTAL_CODE".into(),
            winner_city: "WIN_TOWN".into(),
            winner_country: "WIN_COUNTRY_CODE".into(),
            criteria_names: "CRIT_CRITERIA".into(),
            criteria_weights: "CRIT_WEIGHTS".into(),
            price_weight: "CRIT_PRICE_WEIGHT".into(),
        }
    }
}

impl ColumnMap {
    /// Columns that must appear in the header.
    pub fn mandatory(&self) -> [&str; 5] {
        [
            &self.notice_id,
            &self.lot_number,
            &self.publication_date,
            &self.buyer_name,
            &self.winner_name,
        ]
    }
}

/// Header of a parsed table: column name to position.
#[derive(Debug)]
pub struct Header {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Header {
    fn new(names: Vec<String>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, index }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn position(&self, column: &str) -> Option<usize> {
        self.index.get(column).copied()
    }
}

/// One data line of the raw table, cells kept verbatim.
#[derive(Debug, Clone)]
pub struct RawLotRow {
    pub line: usize,
    header: Arc<Header>,
    values: Vec<String>,
}

impl RawLotRow {
    /// Raw cell of `column`; `None` when the column is not in the header.
    pub fn get(&self, column: &str) -> Option<&str> {
        self.header.position(column).map(|i| self.values[i].as_str())
    }

    /// Trimmed non-empty cell.
    fn field(&self, column: &str) -> Option<&str> {
        self.get(column).map(str::trim).filter(|s| !s.is_empty())
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: &'static str,
}

#[derive(Debug)]
pub struct ParsedTable {
    pub header: Arc<Header>,
    pub rows: Vec<RawLotRow>,
    pub skipped: Vec<SkippedLine>,
}

/// Splits delimiter-separated text into rows, one physical line per row.
/// Lines with unbalanced quotes or a wrong field count are skipped and
/// reported. Missing mandatory columns are a configuration error.
pub fn parse_table<R: Read>(mut source: R, columns: &ColumnMap, delimiter: u8) -> Result<ParsedTable> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let text = String::from_utf8_lossy(&bytes);
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    let mut lines = text.split('\n').enumerate();

    let header_line = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => break l.trim_end_matches('\r'),
            None => return Err(Error::Input("table has no header row".into())),
        }
    };
    let header_fields = split_line(header_line, delimiter)
        .ok_or_else(|| Error::Input("malformed header row".into()))?;
    let header = Arc::new(Header::new(
        header_fields.into_iter().map(|h| h.trim().to_string()).collect(),
    ));
    let missing: Vec<&str> = columns
        .mandatory()
        .into_iter()
        .filter(|c| header.position(c).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "input table lacks mandatory column(s): {}",
            missing.join(", ")
        )));
    }

    let width = header.names.len();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (idx, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        if line.bytes().filter(|&b| b == b'"').count() % 2 == 1 {
            warn!("line {line_no}: unbalanced quoting, skipped");
            skipped.push(SkippedLine {
                line: line_no,
                reason: "unbalanced_quote",
            });
            continue;
        }
        match split_line(line, delimiter) {
            Some(values) if values.len() == width => rows.push(RawLotRow {
                line: line_no,
                header: Arc::clone(&header),
                values,
            }),
            _ => {
                warn!("line {line_no}: expected {width} fields, skipped");
                skipped.push(SkippedLine {
                    line: line_no,
                    reason: "field_count",
                });
            }
        }
    }
    Ok(ParsedTable {
        header,
        rows,
        skipped,
    })
}

fn split_line(line: &str, delimiter: u8) -> Option<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(line.as_bytes());
    let mut record = csv::StringRecord::new();
    match rdr.read_record(&mut record) {
        Ok(true) => {}
        _ => return None,
    }
    let values = record.iter().map(str::to_string).collect();
    match rdr.read_record(&mut record) {
        Ok(false) => Some(values),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Buyer,
    Winner,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Buyer => "buyer",
            Role::Winner => "winner",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContractType {
    Goods,
    Services,
    Works,
}

impl ContractType {
    pub fn parse(raw: &str) -> Option<Self> {
        match normalize_name(raw).as_str() {
            "U" | "S U" | "SUPPLIES" | "SUPPLY" | "GOODS" | "FOURNITURES" => Some(ContractType::Goods),
            "S" | "SERVICES" | "SERVICE" => Some(ContractType::Services),
            "W" | "WORKS" | "WORK" | "TRAVAUX" => Some(ContractType::Works),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContractType::Goods => "goods",
            ContractType::Services => "services",
            ContractType::Works => "works",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotRecord {
    pub lot_id: u64,
    pub notice_id: String,
    pub lot_number: String,
    pub publication_date: NaiveDate,
    pub award_date: Option<NaiveDate>,
    pub contract_type: Option<ContractType>,
    pub activity_code: Option<String>,
    pub number_of_offers: Option<u32>,
    pub awarded_value: Option<f64>,
    pub currency: Option<String>,
    pub cancelled: bool,
    pub contract_notice_ref: Option<String>,
    /// `file#line` of the source row.
    pub source_row: String,
}

impl LotRecord {
    /// Date used for registry validity checks: award date, else publication.
    pub fn reference_date(&self) -> NaiveDate {
        self.award_date.unwrap_or(self.publication_date)
    }
}

/// Raw award-criterion cells of one lot, repaired by [`crate::criteria`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LotCriteriaFields {
    pub lot_id: u64,
    pub names: Option<String>,
    pub weights: Option<String>,
    pub price_weight: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOccurrence {
    pub occurrence_id: u64,
    pub lot_id: u64,
    pub role: Role,
    pub raw_name: String,
    pub street: Option<String>,
    pub zipcode: Option<String>,
    pub city: Option<String>,
    pub country: Option<String>,
    pub declared_siret: Option<String>,
    pub split_conflict: bool,
    pub normalized_name: Option<String>,
    pub department: Option<String>,
    pub agent_key: Option<String>,
    pub identifier: Option<Identifier>,
}

impl AgentOccurrence {
    pub fn new(occurrence_id: u64, lot_id: u64, role: Role, raw_name: String) -> Self {
        Self {
            occurrence_id,
            lot_id,
            role,
            raw_name,
            street: None,
            zipcode: None,
            city: None,
            country: None,
            declared_siret: None,
            split_conflict: false,
            normalized_name: None,
            department: None,
            agent_key: None,
            identifier: None,
        }
    }

    /// Number of present fields among name, street, zipcode and city.
    pub fn completeness(&self) -> usize {
        usize::from(self.normalized_name.is_some())
            + usize::from(self.street.is_some())
            + usize::from(self.zipcode.is_some())
            + usize::from(self.city.is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MissingNoticeId,
    MissingLotNumber,
    BadPublicationDate,
    OutOfPeriod,
    DuplicateLot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub source_row: String,
    pub reason: RejectReason,
}

/// Lot-building options.
#[derive(Debug, Clone)]
pub struct LotOptions {
    pub period_start: NaiveDate,
    pub period_end: NaiveDate,
    pub default_currency: String,
    /// Folded winner names meaning "not awarded".
    pub unsuccessful_markers: Vec<String>,
}

impl Default for LotOptions {
    fn default() -> Self {
        Self {
            period_start: NaiveDate::from_ymd_opt(2010, 1, 1).unwrap(),
            period_end: NaiveDate::from_ymd_opt(2020, 12, 31).unwrap(),
            default_currency: "EUR".into(),
            unsuccessful_markers: DEFAULT_UNSUCCESSFUL_MARKERS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn truthy(s: &str) -> bool {
    matches!(
        s.trim().to_ascii_uppercase().as_str(),
        "1" | "Y" | "YES" | "TRUE" | "OUI" | "O"
    )
}

/// Types one raw row. Unparseable optional cells become absent; rows without
/// notice id, lot number or a usable publication date are rejected, as are
/// rows published outside the configured period.
pub fn build_lot(
    row: &RawLotRow,
    columns: &ColumnMap,
    options: &LotOptions,
    lot_id: u64,
    source: &str,
) -> std::result::Result<LotRecord, RejectReason> {
    let notice_id = row.field(&columns.notice_id).ok_or(RejectReason::MissingNoticeId)?;
    let lot_number = row.field(&columns.lot_number).ok_or(RejectReason::MissingLotNumber)?;
    let publication_date = row
        .field(&columns.publication_date)
        .and_then(parse_date)
        .ok_or(RejectReason::BadPublicationDate)?;
    if publication_date < options.period_start || publication_date > options.period_end {
        return Err(RejectReason::OutOfPeriod);
    }
    let awarded_value = row
        .field(&columns.awarded_value)
        .and_then(parse_decimal)
        .filter(|v| *v >= 0.0 && v.is_finite());
    let currency = awarded_value.map(|_| {
        row.field(&columns.currency)
            .map(|c| c.to_ascii_uppercase())
            .unwrap_or_else(|| options.default_currency.clone())
    });
    let number_of_offers = row
        .field(&columns.number_of_offers)
        .and_then(parse_decimal)
        .filter(|v| *v >= 0.0 && v.fract() == 0.0 && *v <= f64::from(u32::MAX))
        .map(|v| v as u32);
    let winner = row.field(&columns.winner_name);
    let marker_set = row.field(&columns.cancelled).is_some_and(truthy);
    let cancelled = (winner.is_none() && marker_set)
        || winner.is_some_and(|w| is_unsuccessful_marker(w, &options.unsuccessful_markers));
    Ok(LotRecord {
        lot_id,
        notice_id: notice_id.to_string(),
        lot_number: lot_number.to_string(),
        publication_date,
        award_date: row.field(&columns.award_date).and_then(parse_date),
        contract_type: row.field(&columns.contract_type).and_then(ContractType::parse),
        activity_code: row.field(&columns.activity_code).map(str::to_string),
        number_of_offers,
        awarded_value,
        currency,
        cancelled,
        contract_notice_ref: row.field(&columns.contract_notice_ref).map(str::to_string),
        source_row: format!("{source}#{}", row.line),
    })
}

fn is_unsuccessful_marker(name: &str, markers: &[String]) -> bool {
    let folded = normalize_name(name);
    markers.contains(&folded)
}

/// Known separators occurring in any of `values`, longest first.
pub fn detect_separators<S: AsRef<str>>(values: &[S], known: &[String]) -> Vec<String> {
    let mut ordered: Vec<&String> = known.iter().collect();
    ordered.sort_by(|a, b| b.len().cmp(&a.len()));
    ordered.dedup();
    ordered
        .into_iter()
        .filter(|sep| !sep.is_empty() && values.iter().any(|v| v.as_ref().contains(sep.as_str())))
        .cloned()
        .collect()
}

/// Raw description of one agent role on one row.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgentFields {
    pub name: Option<String>,
    pub street: Option<String>,
    pub zipcode: Option<String>,
    pub city: Option<String>,
    pub country: Option<String>,
    pub siret: Option<String>,
}

/// One agent produced by [`split_joint_agents`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAgent {
    pub fields: AgentFields,
    pub split_conflict: bool,
}

fn split_on(value: &str, sep: &str) -> Vec<String> {
    value
        .split(sep)
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect()
}

/// Splits a jointly described agent on the first detected separator found
/// in its name. Name, street, zipcode and city must all split into the same
/// number of parts; otherwise the agent is kept whole and flagged. The
/// declared SIRET is only carried over when it splits the same way too.
pub fn split_joint_agents(fields: &AgentFields, separators: &[String]) -> Vec<SplitAgent> {
    let single = |conflict| {
        vec![SplitAgent {
            fields: fields.clone(),
            split_conflict: conflict,
        }]
    };
    let Some(name) = fields.name.as_deref() else {
        return Vec::new();
    };
    let Some(sep) = separators.iter().find(|s| !s.is_empty() && name.contains(s.as_str())) else {
        return single(false);
    };
    let names = split_on(name, sep);
    let k = names.len();
    if k < 2 {
        return single(false);
    }
    let mut aligned: [Option<Vec<String>>; 3] = [None, None, None];
    for (slot, value) in aligned
        .iter_mut()
        .zip([&fields.street, &fields.zipcode, &fields.city])
    {
        let Some(v) = value.as_deref().filter(|v| !v.trim().is_empty()) else {
            continue;
        };
        let parts = split_on(v, sep);
        if parts.len() != k {
            debug!("joint agent {name:?}: {k} names but {} parts in {v:?}", parts.len());
            return single(true);
        }
        *slot = Some(parts);
    }
    let sirets = fields
        .siret
        .as_deref()
        .map(|s| split_on(s, sep))
        .filter(|p| p.len() == k);
    let [streets, zips, cities] = aligned;
    (0..k)
        .map(|i| SplitAgent {
            fields: AgentFields {
                name: Some(names[i].clone()),
                street: streets.as_ref().map(|p| p[i].clone()),
                zipcode: zips.as_ref().map(|p| p[i].clone()),
                city: cities.as_ref().map(|p| p[i].clone()),
                country: fields.country.clone(),
                siret: sirets.as_ref().map(|p| p[i].clone()),
            },
            split_conflict: false,
        })
        .collect()
}

/// Ingestion settings.
#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub columns: ColumnMap,
    pub delimiter: u8,
    pub separators: Vec<String>,
    pub lots: LotOptions,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            columns: ColumnMap::default(),
            delimiter: b',',
            separators: DEFAULT_SEPARATORS.iter().map(|s| s.to_string()).collect(),
            lots: LotOptions::default(),
        }
    }
}

#[derive(Debug, Default)]
pub struct IngestOutput {
    pub lots: Vec<LotRecord>,
    pub occurrences: Vec<AgentOccurrence>,
    pub criteria_fields: Vec<LotCriteriaFields>,
    pub rejected: Vec<RejectedRow>,
    pub skipped: Vec<(String, SkippedLine)>,
    /// Agent descriptions before splitting (one per non-empty name cell).
    pub occurrences_before_split: usize,
}

fn agent_fields(row: &RawLotRow, role: Role, c: &ColumnMap) -> AgentFields {
    let get = |col: &String| row.field(col).map(str::to_string);
    match role {
        Role::Buyer => AgentFields {
            name: get(&c.buyer_name),
            street: get(&c.buyer_street),
            zipcode: get(&c.buyer_zipcode),
            city: get(&c.buyer_city),
            country: get(&c.buyer_country),
            siret: get(&c.buyer_siret),
        },
        Role::Winner => AgentFields {
            name: get(&c.winner_name),
            street: get(&c.winner_street),
            zipcode: get(&c.winner_zipcode),
            city: get(&c.winner_city),
            country: get(&c.winner_country),
            siret: get(&c.winner_siret),
        },
    }
}

/// Turns parsed tables (in configured order) into lots, agent occurrences
/// and raw criterion cells, assigning surrogate ids sequentially.
pub fn ingest_tables(tables: &[(String, ParsedTable)], options: &IngestOptions) -> IngestOutput {
    let mut out = IngestOutput::default();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut next_occurrence = 1u64;
    let c = &options.columns;
    for (source, table) in tables {
        out.skipped
            .extend(table.skipped.iter().map(|s| (source.clone(), s.clone())));
        for row in &table.rows {
            let lot_id = out.lots.len() as u64 + 1;
            let lot = match build_lot(row, c, &options.lots, lot_id, source) {
                Ok(lot) => lot,
                Err(reason) => {
                    out.rejected.push(RejectedRow {
                        source_row: format!("{source}#{}", row.line),
                        reason,
                    });
                    continue;
                }
            };
            if !seen.insert((lot.notice_id.clone(), lot.lot_number.clone())) {
                out.rejected.push(RejectedRow {
                    source_row: lot.source_row,
                    reason: RejectReason::DuplicateLot,
                });
                continue;
            }
            for role in [Role::Buyer, Role::Winner] {
                if role == Role::Winner && lot.cancelled {
                    continue;
                }
                let fields = agent_fields(row, role, c);
                if fields.name.is_none() {
                    continue;
                }
                out.occurrences_before_split += 1;
                let values: Vec<&str> = [&fields.name, &fields.street, &fields.zipcode, &fields.city]
                    .into_iter()
                    .flatten()
                    .map(String::as_str)
                    .collect();
                let seps = detect_separators(&values, &options.separators);
                for part in split_joint_agents(&fields, &seps) {
                    let f = part.fields;
                    let mut occ = AgentOccurrence::new(next_occurrence, lot_id, role, f.name.unwrap_or_default());
                    next_occurrence += 1;
                    occ.street = f.street;
                    occ.zipcode = f.zipcode;
                    occ.city = f.city;
                    occ.country = f.country;
                    occ.declared_siret = f.siret;
                    occ.split_conflict = part.split_conflict;
                    out.occurrences.push(occ);
                }
            }
            out.criteria_fields.push(LotCriteriaFields {
                lot_id,
                names: row.field(&c.criteria_names).and_then(non_empty),
                weights: row.field(&c.criteria_weights).and_then(non_empty),
                price_weight: row.field(&c.price_weight).and_then(non_empty),
            });
            out.lots.push(lot);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "ID_NOTICE_CAN,ID_LOT_AWARDED,DT_DISPATCH,DT_AWARD,TYPE_OF_CONTRACT,CPV,NUMBER_OFFERS,AWARD_VALUE_EURO,CANCELLED,CAE_NAME,CAE_NATIONALID,CAE_ADDRESS,CAE_POSTAL_CODE,CAE_TOWN,WIN_NAME,WIN_NATIONALID,WIN_ADDRESS,WIN_POSTAL_CODE,WIN_TOWN";

    fn parse(body: &str) -> ParsedTable {
        parse_table(format!("{HEADER}\n{body}").as_bytes(), &ColumnMap::default(), b',').unwrap()
    }

    fn seps(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn one_line_one_row() {
        let t = parse("2015-1,1,2015-03-01,2015-02-01,S,45000000,3,\"12 000,50\",,Mairie de Lyon,,,69001,Lyon,Dupont,,,75008,Paris\n");
        assert_eq!(t.rows.len(), 1);
        assert!(t.skipped.is_empty());
        assert_eq!(t.rows[0].get("AWARD_VALUE_EURO"), Some("12 000,50"));
        assert_eq!(t.rows[0].line, 2);
    }

    #[test]
    fn unbalanced_quote_is_skipped_and_counted() {
        let t = parse(
            "2015-1,1,2015-03-01,,S,,,,,A,,,,,B,,,,\n\
             2015-2,1,2015-03-01,,S,,,,,\"A,,,,,B,,,,\n\
             2015-3,1,2015-03-01,,S,,,,,A,,,,,B,,,,\n",
        );
        assert_eq!(t.rows.len(), 2);
        assert_eq!(
            t.skipped,
            vec![SkippedLine {
                line: 3,
                reason: "unbalanced_quote"
            }]
        );
    }

    #[test]
    fn wrong_width_is_skipped() {
        let t = parse("2015-1,1,2015-03-01\n");
        assert!(t.rows.is_empty());
        assert_eq!(t.skipped[0].reason, "field_count");
    }

    #[test]
    fn missing_mandatory_column_is_config_error() {
        let err = parse_table("ID_NOTICE_CAN,DT_DISPATCH\n1,2015-01-01\n".as_bytes(), &ColumnMap::default(), b',')
            .unwrap_err();
        match err {
            Error::Config(msg) => {
                assert!(msg.contains("ID_LOT_AWARDED"));
                assert!(msg.contains("CAE_NAME"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lot_typing() {
        let t = parse(
            "2015-1,1,2015-03-01,,S,45000000,3,\"12 000,50\",,A,,,,,B,,,,\n\
             2015-2,1,2009-12-31,,S,,,,,A,,,,,B,,,,\n\
             ,1,2015-03-01,,S,,,,,A,,,,,B,,,,\n\
             2015-4,1,2015-03-01,,X,,abc,-5,,A,,,,,,,,,\n",
        );
        let c = ColumnMap::default();
        let o = LotOptions::default();
        let lot = build_lot(&t.rows[0], &c, &o, 1, "f").unwrap();
        assert_eq!(lot.awarded_value, Some(12000.50));
        assert_eq!(lot.currency.as_deref(), Some("EUR"));
        assert_eq!(lot.award_date, None);
        assert_eq!(lot.number_of_offers, Some(3));
        assert_eq!(lot.contract_type, Some(ContractType::Services));
        assert_eq!(lot.source_row, "f#2");
        assert_eq!(build_lot(&t.rows[1], &c, &o, 2, "f"), Err(RejectReason::OutOfPeriod));
        assert_eq!(build_lot(&t.rows[2], &c, &o, 3, "f"), Err(RejectReason::MissingNoticeId));
        let lot = build_lot(&t.rows[3], &c, &o, 4, "f").unwrap();
        assert_eq!(lot.contract_type, None);
        assert_eq!(lot.number_of_offers, None);
        assert_eq!(lot.awarded_value, None);
        assert_eq!(lot.currency, None);
        assert!(!lot.cancelled);
    }

    #[test]
    fn cancellation_rules() {
        let t = parse(
            "1,1,2015-03-01,,S,,,,1,A,,,,,,,,,\n\
             2,1,2015-03-01,,S,,,,,A,,,,,Infructueux,,,,\n\
             3,1,2015-03-01,,S,,,,1,A,,,,,Dupont,,,,\n\
             4,1,2015-03-01,,S,,,,,A,,,,,,,,,\n",
        );
        let c = ColumnMap::default();
        let o = LotOptions::default();
        let flags: Vec<bool> = t
            .rows
            .iter()
            .map(|r| build_lot(r, &c, &o, 1, "f").unwrap().cancelled)
            .collect();
        assert_eq!(flags, [true, true, false, false]);
    }

    #[test]
    fn separator_detection() {
        let known = seps(&["---", "//"]);
        assert_eq!(detect_separators(&["ALPHA --- BETA"], &seps(&["---"])), seps(&["---"]));
        assert!(detect_separators(&["ALPHA"], &known).is_empty());
        assert_eq!(detect_separators(&["A --- B", "C // D"], &known), seps(&["---", "//"]));
        assert_eq!(
            detect_separators(&["A ---- B"], &seps(&["---", "----"])),
            seps(&["----", "---"])
        );
    }

    fn agent(name: &str, city: Option<&str>) -> AgentFields {
        AgentFields {
            name: Some(name.into()),
            city: city.map(String::from),
            ..Default::default()
        }
    }

    #[test]
    fn aligned_split() {
        let out = split_joint_agents(&agent("ALPHA --- BETA", Some("PARIS --- LYON")), &seps(&["---"]));
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].fields.name.as_deref(), Some("ALPHA"));
        assert_eq!(out[0].fields.city.as_deref(), Some("PARIS"));
        assert_eq!(out[1].fields.name.as_deref(), Some("BETA"));
        assert_eq!(out[1].fields.city.as_deref(), Some("LYON"));
        assert!(out.iter().all(|a| !a.split_conflict));
    }

    #[test]
    fn no_separator_no_split() {
        let out = split_joint_agents(&agent("ALPHA", Some("PARIS")), &[]);
        assert_eq!(out.len(), 1);
        assert!(!out[0].split_conflict);
    }

    #[test]
    fn count_mismatch_keeps_agent_whole() {
        let f = agent("ALPHA --- BETA", Some("PARIS --- LYON --- NICE"));
        let out = split_joint_agents(&f, &seps(&["---"]));
        assert_eq!(out.len(), 1);
        assert!(out[0].split_conflict);
        assert_eq!(out[0].fields, f);
    }

    #[test]
    fn siret_only_follows_matching_split() {
        let mut f = agent("A --- B", None);
        f.siret = Some("12345678900013 --- 98765432100011".into());
        let out = split_joint_agents(&f, &seps(&["---"]));
        assert_eq!(out[1].fields.siret.as_deref(), Some("98765432100011"));
        f.siret = Some("12345678900013".into());
        let out = split_joint_agents(&f, &seps(&["---"]));
        assert!(out.iter().all(|a| a.fields.siret.is_none()));
    }

    #[test]
    fn ingest_assigns_ids_and_splits() {
        let t = parse(
            "1,1,2015-03-01,,S,,,,,A --- B,,,,,W,,,,\n\
             1,1,2015-03-02,,S,,,,,C,,,,,W,,,,\n\
             2,1,2015-03-01,,S,,,,1,D,,,,,,,,,\n",
        );
        let out = ingest_tables(&[("f".into(), t)], &IngestOptions::default());
        assert_eq!(out.lots.len(), 2);
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].reason, RejectReason::DuplicateLot);
        let names: Vec<_> = out.occurrences.iter().map(|o| (o.lot_id, o.raw_name.as_str())).collect();
        assert_eq!(names, [(1, "A"), (1, "B"), (1, "W"), (2, "D")]);
        assert_eq!(out.occurrences_before_split, 3);
        let ids: Vec<u64> = out.occurrences.iter().map(|o| o.occurrence_id).collect();
        assert_eq!(ids, [1, 2, 3, 4]);
        assert_eq!(out.criteria_fields.len(), 2);
    }
}

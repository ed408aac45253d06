//! The six output tables, their CSV files and the SQL dump.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::criteria::Criterion;
use crate::error::{Error, Result};
use crate::ingest::{AgentOccurrence, LotRecord, Role};
use crate::merge::CanonicalAgent;

pub const SQL_DUMP_FILE: &str = "foppa.sql";

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Int(i64),
    /// Decimal already rendered with two fractional digits.
    Dec(String),
    Text(String),
    Bool(bool),
}

impl Value {
    fn text(s: impl Into<String>) -> Self {
        let s = s.into();
        if s.is_empty() {
            Value::Null
        } else {
            Value::Text(s)
        }
    }

    fn opt_text(s: Option<impl Into<String>>) -> Self {
        s.map_or(Value::Null, Value::text)
    }

    fn dec(v: Option<f64>) -> Self {
        v.map_or(Value::Null, |v| Value::Dec(format!("{v:.2}")))
    }

    /// CSV rendering: NULL is the empty field, booleans are `1`/`0`.
    pub fn render(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Int(i) => i.to_string(),
            Value::Dec(s) | Value::Text(s) => s.clone(),
            Value::Bool(b) => if *b { "1" } else { "0" }.to_string(),
        }
    }

    fn sql(&self) -> String {
        match self {
            Value::Null => "NULL".into(),
            Value::Int(i) => i.to_string(),
            Value::Dec(s) => s.clone(),
            Value::Text(s) => format!("'{}'", s.replace('\'', "''")),
            Value::Bool(b) => if *b { "1" } else { "0" }.into(),
        }
    }

    fn cmp_key(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            _ => self.render().cmp(&other.render()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqlType {
    Integer,
    Numeric,
    Text,
    Boolean,
}

impl SqlType {
    fn ddl(self) -> &'static str {
        match self {
            SqlType::Integer => "INTEGER",
            SqlType::Numeric => "NUMERIC(18,2)",
            SqlType::Text => "TEXT",
            SqlType::Boolean => "BOOLEAN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: &'static str,
    pub ty: SqlType,
    pub nullable: bool,
}

const fn col(name: &'static str, ty: SqlType, nullable: bool) -> Column {
    Column { name, ty, nullable }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForeignKey {
    pub column: &'static str,
    pub table: &'static str,
    pub references: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub columns: Vec<Column>,
    pub primary_key: Vec<&'static str>,
    pub foreign_keys: Vec<ForeignKey>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    fn new(name: &'static str, columns: Vec<Column>, primary_key: Vec<&'static str>, foreign_keys: Vec<ForeignKey>) -> Self {
        Self {
            name,
            columns,
            primary_key,
            foreign_keys,
            rows: Vec::new(),
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    fn pk_indices(&self) -> Vec<usize> {
        self.primary_key
            .iter()
            .map(|k| self.column_index(k).expect("primary key column exists"))
            .collect()
    }

    fn sort_by_primary_key(&mut self) {
        let pk = self.pk_indices();
        self.rows.sort_by(|a, b| {
            pk.iter()
                .map(|&i| a[i].cmp_key(&b[i]))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        });
    }

    pub fn header(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.to_string()).collect()
    }

    /// Rows as they appear in the CSV file.
    pub fn rendered_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(Value::render).collect())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Lots, Agents, Names, LotBuyers, LotSuppliers and Criteria, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSchema {
    pub tables: Vec<Table>,
}

pub const TABLE_NAMES: [&str; 6] = ["Lots", "Agents", "Names", "LotBuyers", "LotSuppliers", "Criteria"];

impl OutputSchema {
    /// Empty tables with their column lists and keys.
    pub fn empty() -> Self {
        use SqlType::*;
        let fk = |column, table, references| ForeignKey {
            column,
            table,
            references,
        };
        let link = |name| {
            Table::new(
                name,
                vec![
                    col("lotId", Integer, false),
                    col("agentId", Text, false),
                    col("splitConflict", Boolean, false),
                ],
                vec!["lotId", "agentId"],
                vec![fk("lotId", "Lots", "lotId"), fk("agentId", "Agents", "agentId")],
            )
        };
        Self {
            tables: vec![
                Table::new(
                    "Lots",
                    vec![
                        col("lotId", Integer, false),
                        col("noticeId", Text, false),
                        col("lotNumber", Text, false),
                        col("publicationDate", Text, false),
                        col("awardDate", Text, true),
                        col("contractType", Text, true),
                        col("activityCode", Text, true),
                        col("numberOfOffers", Integer, true),
                        col("awardedValue", Numeric, true),
                        col("currency", Text, true),
                        col("cancelled", Boolean, false),
                        col("contractNoticeRef", Text, true),
                        col("sourceRow", Text, false),
                    ],
                    vec!["lotId"],
                    vec![],
                ),
                Table::new(
                    "Agents",
                    vec![
                        col("agentId", Text, false),
                        col("idKind", Text, false),
                        col("street", Text, true),
                        col("zipcode", Text, true),
                        col("city", Text, true),
                        col("department", Text, true),
                        col("country", Text, true),
                        col("occurrences", Integer, false),
                    ],
                    vec!["agentId"],
                    vec![],
                ),
                Table::new(
                    "Names",
                    vec![col("agentId", Text, false), col("name", Text, false)],
                    vec!["agentId", "name"],
                    vec![fk("agentId", "Agents", "agentId")],
                ),
                link("LotBuyers"),
                link("LotSuppliers"),
                Table::new(
                    "Criteria",
                    vec![
                        col("lotId", Integer, false),
                        col("ordinal", Integer, false),
                        col("name", Text, false),
                        col("class", Text, false),
                        col("weight", Numeric, true),
                        col("weightIsNormalized", Boolean, false),
                        col("flag", Text, true),
                    ],
                    vec!["lotId", "ordinal"],
                    vec![fk("lotId", "Lots", "lotId")],
                ),
            ],
        }
    }

    pub fn table(&self, name: &str) -> &Table {
        self.tables
            .iter()
            .find(|t| t.name == name)
            .unwrap_or_else(|| panic!("unknown table {name}"))
    }

    fn table_mut(&mut self, name: &str) -> &mut Table {
        self.tables.iter_mut().find(|t| t.name == name).unwrap()
    }
}

/// Builds the output tables. Link rows come from occurrence roles, with
/// duplicate `(lot, agent)` pairs collapsed (their split flags OR-ed).
/// Any occurrence or criterion pointing to a missing lot or agent is a
/// fatal invariant violation listing the offending ids.
pub fn build_tables(
    lots: &[LotRecord],
    agents: &[CanonicalAgent],
    occurrences: &[AgentOccurrence],
    criteria: &[Criterion],
) -> Result<OutputSchema> {
    let mut schema = OutputSchema::empty();
    let lot_ids: HashSet<u64> = lots.iter().map(|l| l.lot_id).collect();
    let agent_ids: HashSet<String> = agents.iter().map(|a| a.agent_id.to_string()).collect();
    let mut dangling = Vec::new();

    let lots_t = schema.table_mut("Lots");
    for l in lots {
        lots_t.rows.push(vec![
            Value::Int(l.lot_id as i64),
            Value::text(l.notice_id.clone()),
            Value::text(l.lot_number.clone()),
            Value::text(l.publication_date.to_string()),
            Value::opt_text(l.award_date.map(|d| d.to_string())),
            Value::opt_text(l.contract_type.map(|c| c.as_str())),
            Value::opt_text(l.activity_code.clone()),
            l.number_of_offers.map_or(Value::Null, |n| Value::Int(i64::from(n))),
            Value::dec(l.awarded_value),
            Value::opt_text(l.currency.clone()),
            Value::Bool(l.cancelled),
            Value::opt_text(l.contract_notice_ref.clone()),
            Value::text(l.source_row.clone()),
        ]);
    }

    let agents_t = schema.table_mut("Agents");
    for a in agents {
        agents_t.rows.push(vec![
            Value::text(a.agent_id.to_string()),
            Value::text(a.agent_id.kind()),
            Value::opt_text(a.street.clone()),
            Value::opt_text(a.zipcode.clone()),
            Value::opt_text(a.city.clone()),
            Value::opt_text(a.department.clone()),
            Value::opt_text(a.country.clone()),
            Value::Int(a.members.len() as i64),
        ]);
    }
    let names_t = schema.table_mut("Names");
    for a in agents {
        for n in &a.names {
            names_t.rows.push(vec![Value::text(a.agent_id.to_string()), Value::text(n.clone())]);
        }
    }

    let mut links: [BTreeMap<(u64, String), bool>; 2] = [BTreeMap::new(), BTreeMap::new()];
    for occ in occurrences {
        let Some(id) = &occ.identifier else {
            dangling.push(format!("occurrence {} has no agent", occ.occurrence_id));
            continue;
        };
        let id = id.to_string();
        if !lot_ids.contains(&occ.lot_id) {
            dangling.push(format!("occurrence {} -> lot {}", occ.occurrence_id, occ.lot_id));
        }
        if !agent_ids.contains(&id) {
            dangling.push(format!("occurrence {} -> agent {id}", occ.occurrence_id));
        }
        let slot = match occ.role {
            Role::Buyer => &mut links[0],
            Role::Winner => &mut links[1],
        };
        *slot.entry((occ.lot_id, id)).or_insert(false) |= occ.split_conflict;
    }
    for (name, map) in ["LotBuyers", "LotSuppliers"].into_iter().zip(links) {
        let t = schema.table_mut(name);
        for ((lot, agent), conflict) in map {
            t.rows.push(vec![Value::Int(lot as i64), Value::text(agent), Value::Bool(conflict)]);
        }
    }

    let crit_t = schema.table_mut("Criteria");
    for c in criteria {
        if !lot_ids.contains(&c.lot_id) {
            dangling.push(format!("criterion {}/{} -> lot {}", c.lot_id, c.ordinal, c.lot_id));
        }
        crit_t.rows.push(vec![
            Value::Int(c.lot_id as i64),
            Value::Int(i64::from(c.ordinal)),
            Value::text(if c.raw_name.is_empty() { "?".to_string() } else { c.raw_name.clone() }),
            Value::text(c.class.as_str()),
            Value::dec(c.weight),
            Value::Bool(c.weight_is_normalized),
            Value::opt_text(c.flag.map(|f| {
                serde_plain_flag(f)
            })),
        ]);
    }
    if !dangling.is_empty() {
        dangling.truncate(50);
        return Err(Error::Invariant(format!("dangling references: {}", dangling.join("; "))));
    }
    for t in &mut schema.tables {
        t.sort_by_primary_key();
    }
    let problems = check_integrity(&schema);
    if !problems.is_empty() {
        return Err(Error::Invariant(problems.join("; ")));
    }
    Ok(schema)
}

fn serde_plain_flag(f: crate::criteria::CriteriaFlag) -> &'static str {
    use crate::criteria::CriteriaFlag::*;
    match f {
        CountMismatch => "count_mismatch",
        PriceConflict => "price_conflict",
        Unnormalizable => "unnormalizable",
    }
}

/// Every key or reference problem in the schema; empty when sound.
pub fn check_integrity(schema: &OutputSchema) -> Vec<String> {
    let mut problems = Vec::new();
    let mut keys: HashMap<&str, HashSet<Vec<String>>> = HashMap::new();
    for t in &schema.tables {
        let pk = t.pk_indices();
        let mut seen = HashSet::with_capacity(t.rows.len());
        for row in &t.rows {
            let key: Vec<String> = pk.iter().map(|&i| row[i].render()).collect();
            if !seen.insert(key.clone()) {
                problems.push(format!("{}: duplicate key {key:?}", t.name));
            }
        }
        for (c, column) in t.columns.iter().enumerate() {
            if !column.nullable && t.rows.iter().any(|r| r[c] == Value::Null) {
                problems.push(format!("{}.{} holds NULL", t.name, column.name));
            }
        }
        keys.insert(t.name, seen);
    }
    for t in &schema.tables {
        for fk in &t.foreign_keys {
            let target = schema.table(fk.table);
            let ti = target.column_index(fk.references).unwrap();
            let known: HashSet<String> = target.rows.iter().map(|r| r[ti].render()).collect();
            let ci = t.column_index(fk.column).unwrap();
            let missing: BTreeSet<String> = t
                .rows
                .iter()
                .map(|r| r[ci].render())
                .filter(|v| !known.contains(v))
                .collect();
            if !missing.is_empty() {
                problems.push(format!(
                    "{}.{} references missing {}.{}: {:?}",
                    t.name,
                    fk.column,
                    fk.table,
                    fk.references,
                    missing.into_iter().take(10).collect::<Vec<_>>()
                ));
            }
        }
    }
    problems
}

/// Writes one `<Table>.csv` per table into `dir`.
pub fn write_csv(schema: &OutputSchema, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for t in &schema.tables {
        let path = dir.join(format!("{}.csv", t.name));
        let mut w = csv::WriterBuilder::new()
            .quote_style(csv::QuoteStyle::Necessary)
            .from_path(&path)?;
        w.write_record(t.header())?;
        for row in t.rendered_rows() {
            w.write_record(&row)?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

/// Reads the CSV files back as `(header, rows)` per table name.
pub fn read_csv_tables(dir: &Path) -> Result<BTreeMap<String, (Vec<String>, Vec<Vec<String>>)>> {
    let mut out = BTreeMap::new();
    for name in TABLE_NAMES {
        let mut rdr = csv::Reader::from_path(dir.join(format!("{name}.csv")))?;
        let header = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        out.insert(name.to_string(), (header, rows));
    }
    Ok(out)
}

/// SQL text creating the tables (keys and references included) and
/// inserting every row in primary-key order.
pub fn render_sql(schema: &OutputSchema) -> String {
    let mut sql = String::new();
    sql.push_str("-- FOPPA database dump\nBEGIN TRANSACTION;\n\n");
    for t in &schema.tables {
        let _ = writeln!(sql, "CREATE TABLE {} (", t.name);
        let mut lines: Vec<String> = t
            .columns
            .iter()
            .map(|c| {
                format!(
                    "    {} {}{}",
                    c.name,
                    c.ty.ddl(),
                    if c.nullable { "" } else { " NOT NULL" }
                )
            })
            .collect();
        lines.push(format!("    PRIMARY KEY ({})", t.primary_key.join(", ")));
        for fk in &t.foreign_keys {
            lines.push(format!(
                "    FOREIGN KEY ({}) REFERENCES {} ({})",
                fk.column, fk.table, fk.references
            ));
        }
        let _ = writeln!(sql, "{}\n);\n", lines.join(",\n"));
    }
    for t in &schema.tables {
        for row in &t.rows {
            let values: Vec<String> = row.iter().map(Value::sql).collect();
            let _ = writeln!(sql, "INSERT INTO {} VALUES ({});", t.name, values.join(", "));
        }
    }
    sql.push_str("\nCOMMIT;\n");
    sql
}

pub fn write_sql_dump(schema: &OutputSchema, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(render_sql(schema).as_bytes())?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::CriterionClass;
    use crate::registry::validate_siret;
    use chrono::NaiveDate;

    fn lot(id: u64) -> LotRecord {
        LotRecord {
            lot_id: id,
            notice_id: format!("N{id}"),
            lot_number: "1".into(),
            publication_date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
            award_date: None,
            contract_type: None,
            activity_code: None,
            number_of_offers: None,
            awarded_value: Some(12000.5),
            currency: Some("EUR".into()),
            cancelled: false,
            contract_notice_ref: None,
            source_row: format!("f#{id}"),
        }
    }

    fn agent(id: &str, names: &[&str]) -> CanonicalAgent {
        CanonicalAgent {
            agent_id: id.parse().unwrap(),
            names: names.iter().map(|s| s.to_string()).collect(),
            street: None,
            zipcode: None,
            city: Some("LYON, CENTRE".into()),
            department: None,
            country: None,
            members: vec![1],
        }
    }

    fn occ(id: u64, lot: u64, role: Role, agent: &str) -> AgentOccurrence {
        let mut o = AgentOccurrence::new(id, lot, role, "X".into());
        o.identifier = Some(agent.parse().unwrap());
        o
    }

    const A: &str = "11111111100011";
    const B: &str = "22222222200012";

    #[test]
    fn counts_and_roles() {
        let schema = build_tables(
            &[lot(1), lot(2)],
            &[agent(A, &["MAIRIE DE LYON", "VILLE DE LYON"]), agent(B, &["DUPONT"]), agent("U000001", &["X"])],
            &[
                occ(1, 1, Role::Buyer, A),
                occ(2, 1, Role::Winner, B),
                occ(3, 1, Role::Winner, "U000001"),
                occ(4, 2, Role::Winner, A),
                occ(5, 2, Role::Winner, A),
            ],
            &[],
        )
        .unwrap();
        assert_eq!(schema.table("Lots").len(), 2);
        assert_eq!(schema.table("Agents").len(), 3);
        assert_eq!(schema.table("Names").len(), 4);
        assert_eq!(schema.table("LotBuyers").len(), 1);
        assert_eq!(schema.table("LotSuppliers").len(), 3);
        assert!(check_integrity(&schema).is_empty());
        assert!(validate_siret(A).is_some());
    }

    #[test]
    fn dangling_reference_is_fatal() {
        let err = build_tables(&[lot(1)], &[agent(A, &["X"])], &[occ(1, 1, Role::Buyer, B)], &[]).unwrap_err();
        match err {
            Error::Invariant(msg) => assert!(msg.contains(B)),
            other => panic!("{other:?}"),
        }
        let crit = Criterion {
            lot_id: 9,
            ordinal: 1,
            raw_name: "Prix".into(),
            class: CriterionClass::Price,
            weight: Some(100.0),
            weight_is_normalized: true,
            flag: None,
        };
        assert!(build_tables(&[lot(1)], &[], &[], &[crit]).is_err());
    }

    #[test]
    fn csv_quoting_and_empty_tables() {
        let dir = tempfile::tempdir().unwrap();
        let schema = build_tables(&[lot(1)], &[agent(A, &["X"])], &[], &[]).unwrap();
        write_csv(&schema, dir.path()).unwrap();
        let agents = fs::read_to_string(dir.path().join("Agents.csv")).unwrap();
        assert!(agents.contains("\"LYON, CENTRE\""));
        let crit = fs::read_to_string(dir.path().join("Criteria.csv")).unwrap();
        assert_eq!(crit, "lotId,ordinal,name,class,weight,weightIsNormalized,flag\n");
        let back = read_csv_tables(dir.path()).unwrap();
        for t in &schema.tables {
            assert_eq!(back[t.name].1, t.rendered_rows());
        }
    }

    #[test]
    fn sql_has_keys() {
        let sql = render_sql(&OutputSchema::empty());
        assert!(sql.contains("CREATE TABLE Lots"));
        assert!(sql.contains("FOREIGN KEY (agentId) REFERENCES Agents (agentId)"));
        assert_eq!(sql.matches("FOREIGN KEY").count(), 6);
        assert!(!sql.contains("INSERT"));
    }
}

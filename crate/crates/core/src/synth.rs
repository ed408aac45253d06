//! Seeded synthetic data: a registry, postal and activity tables, and
//! TED-style award tables whose agents have known identifiers and known
//! perturbations. Used by the test suites and for desk-scale benchmarks.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::identify::ActivityTable;
use crate::ingest::{AgentOccurrence, LotRecord, Role};
use crate::normalize::{normalize_name, PostalColumns, PostalTable};
use crate::registry::{load_registry, Registry, RegistryColumns};

const DEPARTMENTS: &[&str] = &[
    "01", "06", "13", "20", "29", "31", "33", "35", "38", "44", "59", "63", "67", "69", "75", "76", "92", "93",
    "971", "974",
];

const SYLLABLES: &[&str] = &[
    "BE", "RA", "VI", "LON", "MAR", "TI", "GNY", "SAU", "VE", "COUR", "MON", "TAL", "BOIS", "ROCHE", "FON", "TAINE",
    "LA", "VAL", "BRI", "AC", "SEN", "NAY", "POR", "DEL", "QUE", "MIR", "AN", "GEL", "VIL", "LE", "NEU", "CHA",
    "TEAU", "PIER", "RE", "FORT", "BEL", "AIR", "GRAN", "DIN", "ROU", "SSEL", "PEY", "ROL", "LES", "SAC", "TOUR",
    "NON", "CAS", "TEL", "MEN", "DOU", "BAR", "GUE", "LIN", "SOU", "VAR", "ZAC",
];

const STREET_KINDS: &[&str] = &["RUE", "AVENUE", "BOULEVARD", "PLACE", "CHEMIN", "ALLEE", "IMPASSE", "QUAI"];

const FORMS: &[&str] = &["SAS", "SARL", "SA", "EURL"];

/// Trade word, registry activity code and a CPV code of matching work.
const TRADES: &[(&str, &str, &str)] = &[
    ("BATIMENT", "4120A", "45210000"),
    ("TRAVAUX PUBLICS", "4211Z", "45233000"),
    ("ELECTRICITE", "4321A", "45310000"),
    ("PLOMBERIE", "4322A", "45330000"),
    ("INFORMATIQUE", "6201Z", "72000000"),
    ("CONSEIL", "7022Z", "79400000"),
    ("NETTOYAGE", "8121Z", "90910000"),
    ("TRANSPORTS", "4941A", "60100000"),
    ("RESTAURATION", "5629A", "55520000"),
    ("FOURNITURES", "4666Z", "30190000"),
    ("INGENIERIE", "7112B", "71300000"),
    ("PAYSAGE", "8130Z", "77310000"),
    ("IMPRIMERIE", "1812Z", "79800000"),
    ("SECURITE", "8010Z", "79710000"),
    ("MEDICAL", "4646Z", "33140000"),
];

/// CPV used for lots whose activity has no row in the activity table.
const UNMAPPED_CPV: &str = "98390000";

/// Public body name patterns (`{}` is a place name) and activity codes.
const PUBLIC_KINDS: &[(&str, &str)] = &[
    ("COMMUNE DE {}", "8411Z"),
    ("CENTRE HOSPITALIER DE {}", "8610Z"),
    ("COMMUNAUTE DE COMMUNES DU PAYS DE {}", "8411Z"),
    ("OFFICE PUBLIC DE L HABITAT DE {}", "6820A"),
    ("SYNDICAT INTERCOMMUNAL DES EAUX DE {}", "3600Z"),
    ("LYCEE PROFESSIONNEL {}", "8532Z"),
    ("CENTRE COMMUNAL D ACTION SOCIALE DE {}", "8899B"),
];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub departments: usize,
    pub cities_per_department: usize,
    pub public_entities: usize,
    pub private_entities: usize,
    /// Facilities per entity are drawn from 1..=max.
    pub max_facilities: usize,
    /// Extra closed or not-yet-open facilities per entity.
    pub decoy_rate: f64,
    pub lots: usize,
    /// Lots per notice are drawn from 1..=max; a notice has one buyer.
    pub max_lots_per_notice: usize,
    /// Probabilities of perturbation tiers 0, 1 and 2.
    pub tiers: [f64; 3],
    /// Share of buyer / winner appearances declaring their SIRET.
    pub declared_rate: [f64; 2],
    pub joint_rate: f64,
    pub cancelled_rate: f64,
    /// Share of appearances naming an agent absent from the registry.
    pub unregistered_rate: f64,
    /// Share of lots whose CPV code has no activity-table row.
    pub unmapped_cpv_rate: f64,
    pub out_of_period_rate: f64,
    pub criteria_rate: f64,
    /// Every registered appearance uses a facility no other appearance uses.
    pub distinct_agents: bool,
    pub malformed_lines: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            departments: DEPARTMENTS.len(),
            cities_per_department: 8,
            public_entities: 120,
            private_entities: 300,
            max_facilities: 3,
            decoy_rate: 0.1,
            lots: 1000,
            max_lots_per_notice: 3,
            tiers: [0.5, 0.3, 0.2],
            declared_rate: [0.3, 0.15],
            joint_rate: 0.03,
            cancelled_rate: 0.02,
            unregistered_rate: 0.05,
            unmapped_cpv_rate: 0.1,
            out_of_period_rate: 0.01,
            criteria_rate: 0.8,
            distinct_agents: false,
            malformed_lines: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct City {
    pub name: String,
    pub department: String,
    pub zipcodes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct EntitySpec {
    pub siren: String,
    pub legal_name: String,
    pub activity: String,
    pub public: bool,
    /// Trade index for companies.
    pub trade: Option<usize>,
    pub registered: bool,
    pub creation: NaiveDate,
}

#[derive(Debug, Clone)]
pub struct FacilitySpec {
    pub siret: String,
    pub entity: usize,
    /// Usual name; the entity's legal name applies when absent.
    pub own_name: Option<String>,
    pub street: String,
    pub zipcode: String,
    pub city: usize,
    pub activity: String,
    pub open: NaiveDate,
    pub close: Option<NaiveDate>,
    /// Open over the whole study period; only these are used in lots.
    pub usable: bool,
}

#[derive(Debug, Clone)]
pub struct World {
    pub cities: Vec<City>,
    pub entities: Vec<EntitySpec>,
    pub facilities: Vec<FacilitySpec>,
    /// `(cpv prefix, activity prefix)` rows.
    pub activity_pairs: Vec<(String, String)>,
}

impl World {
    pub fn facility_name(&self, f: usize) -> &str {
        let fac = &self.facilities[f];
        fac.own_name
            .as_deref()
            .unwrap_or(&self.entities[fac.entity].legal_name)
    }

    pub fn is_registered(&self, f: usize) -> bool {
        self.entities[self.facilities[f].entity].registered
    }

    /// Whether the postal table maps this city name to exactly one zipcode.
    pub fn city_is_unambiguous(&self, name: &str) -> bool {
        let folded = normalize_name(name);
        let zips: BTreeSet<&String> = self
            .cities
            .iter()
            .filter(|c| normalize_name(&c.name) == folded)
            .flat_map(|c| &c.zipcodes)
            .collect();
        zips.len() == 1
    }

    pub fn postal_rows(&self) -> Vec<(String, String)> {
        let mut rows: Vec<(String, String)> = self
            .cities
            .iter()
            .flat_map(|c| c.zipcodes.iter().map(move |z| (c.name.clone(), z.clone())))
            .collect();
        rows.sort();
        rows
    }

    pub fn entities_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let c = RegistryColumns::default();
        w.write_record([
            &c.entity_siren,
            &c.entity_name,
            &c.entity_other_names,
            &c.entity_creation_date,
            &c.entity_closure_date,
            &c.entity_activity,
        ])
        .unwrap();
        for e in self.entities.iter().filter(|e| e.registered) {
            let creation = e.creation.to_string();
            w.write_record([&e.siren, &e.legal_name, "", &creation, "", &e.activity])
                .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn facilities_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let c = RegistryColumns::default();
        w.write_record([
            &c.facility_siret,
            &c.facility_names,
            &c.facility_street,
            &c.facility_zipcode,
            &c.facility_city,
            &c.facility_activity,
            &c.facility_open_date,
            &c.facility_close_date,
        ])
        .unwrap();
        for f in self.facilities.iter().filter(|f| self.entities[f.entity].registered) {
            let open = f.open.to_string();
            let close = f.close.map(|d| d.to_string()).unwrap_or_default();
            w.write_record([
                f.siret.as_str(),
                f.own_name.as_deref().unwrap_or(""),
                &f.street,
                &f.zipcode,
                &self.cities[f.city].name,
                &f.activity,
                &open,
                &close,
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn postal_csv(&self) -> String {
        let cols = PostalColumns::default();
        let mut w = csv::WriterBuilder::new()
            .delimiter(cols.delimiter as u8)
            .from_writer(Vec::new());
        w.write_record([&cols.city, &cols.zipcode]).unwrap();
        for (c, z) in self.postal_rows() {
            w.write_record([c, z]).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn activity_csv(&self) -> String {
        let mut s = String::from("cpv,activity\n");
        for (c, a) in &self.activity_pairs {
            s.push_str(&format!("{c},{a}\n"));
        }
        s
    }

    pub fn registry(&self, prefix_len: usize) -> Result<Registry> {
        load_registry(
            self.entities_csv().as_bytes(),
            self.facilities_csv().as_bytes(),
            &RegistryColumns::default(),
            prefix_len,
        )
    }

    pub fn postal_table(&self) -> PostalTable {
        let rows = self.postal_rows();
        PostalTable::from_pairs(rows.iter().map(|(c, z)| (c.as_str(), z.as_str())))
    }

    pub fn activity_table(&self) -> ActivityTable {
        ActivityTable::new(self.activity_pairs.iter().cloned())
    }
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn random_date(rng: &mut ChaCha8Rng, from: NaiveDate, to: NaiveDate) -> NaiveDate {
    let span = (to - from).num_days().max(0);
    from + Duration::days(rng.gen_range(0..=span))
}

fn word(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

fn unique_word(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>, min: usize, max: usize) -> String {
    loop {
        let w = word(rng, min, max);
        if w.len() >= 4 && used.insert(w.clone()) {
            return w;
        }
    }
}

fn street(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>) -> String {
    loop {
        let s = format!(
            "{} {} {}",
            rng.gen_range(1..200),
            STREET_KINDS.choose(rng).unwrap(),
            word(rng, 2, 3)
        );
        if used.insert(s.clone()) {
            return s;
        }
    }
}

/// Builds cities, entities, facilities and the activity table.
pub fn generate_world(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> World {
    let departments = &DEPARTMENTS[..cfg.departments.clamp(1, DEPARTMENTS.len())];
    let mut used_words = BTreeSet::new();
    let mut cities: Vec<City> = Vec::new();
    for dept in departments {
        let mut zips_used = BTreeSet::new();
        let mut zip = |rng: &mut ChaCha8Rng| loop {
            let z = if dept.len() == 3 {
                format!("{dept}{:02}", rng.gen_range(0..100))
            } else {
                format!("{dept}{:03}", rng.gen_range(0..1000))
            };
            if zips_used.insert(z.clone()) {
                return z;
            }
        };
        for k in 0..cfg.cities_per_department.max(1) {
            let name = if k == 1 && cities.len() > 2 && rng.gen_bool(0.5) {
                // Homonym of a city elsewhere.
                let other = rng.gen_range(0..cities.len());
                cities[other].name.clone()
            } else if rng.gen_bool(0.2) {
                format!("SAINT {}", unique_word(rng, &mut used_words, 2, 3))
            } else {
                unique_word(rng, &mut used_words, 2, 3)
            };
            // The first city of each department is large and has two
            // zipcodes.
            let n_zips = if k == 0 { 2 } else { 1 };
            let zipcodes = (0..n_zips).map(|_| zip(rng)).collect();
            cities.push(City {
                name,
                department: dept.to_string(),
                zipcodes,
            });
        }
    }
    let by_dept: BTreeMap<&str, Vec<usize>> = cities.iter().enumerate().fold(BTreeMap::new(), |mut m, (i, c)| {
        m.entry(c.department.as_str()).or_insert_with(Vec::new).push(i);
        m
    });

    let mut entities = Vec::new();
    let mut facilities = Vec::new();
    let mut sirens = BTreeSet::new();
    let mut names = BTreeSet::new();
    let mut streets = BTreeSet::new();
    let period_start = date(2009, 1, 1);
    let period_end = date(2021, 12, 31);
    let total = cfg.public_entities + cfg.private_entities;
    for n in 0..total {
        let public = n < cfg.public_entities;
        let siren = loop {
            let s = format!("{:09}", rng.gen_range(100_000_000u64..1_000_000_000));
            if sirens.insert(s.clone()) {
                break s;
            }
        };
        let home_city = rng.gen_range(0..cities.len());
        let (legal_name, activity, trade) = loop {
            let (name, activity, trade) = if public {
                let (pattern, act) = PUBLIC_KINDS.choose(rng).unwrap();
                let place = if pattern.starts_with("COMMUNE DE") || rng.gen_bool(0.5) {
                    cities[home_city].name.clone()
                } else {
                    unique_word(rng, &mut used_words, 2, 3)
                };
                (pattern.replace("{}", &place), act.to_string(), None)
            } else {
                let t = rng.gen_range(0..TRADES.len());
                let surname = unique_word(rng, &mut used_words, 2, 3);
                let form = FORMS.choose(rng).unwrap();
                (format!("{surname} {} {form}", TRADES[t].0), TRADES[t].1.to_string(), Some(t))
            };
            if names.insert((name.clone(), cities[home_city].department.clone())) {
                break (name, activity, trade);
            }
        };
        let creation = random_date(rng, date(1970, 1, 1), date(2005, 12, 31));
        let entity = entities.len();
        entities.push(EntitySpec {
            siren: siren.clone(),
            legal_name: legal_name.clone(),
            activity: activity.clone(),
            public,
            trade,
            registered: true,
            creation,
        });
        let n_fac = rng.gen_range(1..=cfg.max_facilities.max(1));
        let mut nic = 0u32;
        let mut next_siret = |rng: &mut ChaCha8Rng| {
            nic += 1;
            format!("{siren}{:04}{}", nic, rng.gen_range(0..10))
        };
        for k in 0..n_fac {
            // Public bodies stay in their department; companies spread.
            let city = if k == 0 {
                home_city
            } else if public {
                *by_dept[cities[home_city].department.as_str()].choose(rng).unwrap()
            } else {
                rng.gen_range(0..cities.len())
            };
            let own_name = if k == 0 {
                None
            } else {
                match rng.gen_range(0..3) {
                    0 => None,
                    1 => Some(legal_name.clone()),
                    _ => Some(format!("{legal_name} {}", cities[city].name)),
                }
            };
            let open = random_date(rng, creation, date(2008, 12, 31));
            facilities.push(FacilitySpec {
                siret: next_siret(rng),
                entity,
                own_name: own_name.clone(),
                street: street(rng, &mut streets),
                zipcode: cities[city].zipcodes.choose(rng).unwrap().clone(),
                city,
                activity: activity.clone(),
                open,
                close: None,
                usable: true,
            });
            if rng.gen_bool(cfg.decoy_rate) {
                // A former or future site under the same name.
                let (open, close) = if rng.gen_bool(0.5) {
                    let close = random_date(rng, open.max(date(1995, 1, 1)), date(2008, 6, 30));
                    (random_date(rng, date(1980, 1, 1), close), Some(close))
                } else {
                    (random_date(rng, period_end, date(2024, 12, 31)), None)
                };
                facilities.push(FacilitySpec {
                    siret: next_siret(rng),
                    entity,
                    own_name,
                    street: street(rng, &mut streets),
                    zipcode: cities[city].zipcodes.choose(rng).unwrap().clone(),
                    city,
                    activity: activity.clone(),
                    open,
                    close,
                    usable: false,
                });
            }
        }
        let _ = period_start;
    }
    facilities.sort_by(|a, b| a.siret.cmp(&b.siret));

    let mut activity_pairs: BTreeSet<(String, String)> = TRADES
        .iter()
        .map(|(_, act, cpv)| (cpv[..2].to_string(), act[..2].to_string()))
        .collect();
    // A few broader compatibilities, as in real correspondence tables.
    activity_pairs.insert(("45".into(), "43".into()));
    activity_pairs.insert(("79".into(), "70".into()));
    World {
        cities,
        entities,
        facilities,
        activity_pairs: activity_pairs.into_iter().collect(),
    }
}

/// Expected identification outcome, fixed when the appearance is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Expectation {
    Full,
    FullOrPartial,
    /// Some candidate must be found.
    Found,
    /// Neither department nor activity is available.
    Unblockable,
}

impl Expectation {
    pub fn as_str(self) -> &'static str {
        match self {
            Expectation::Full => "full",
            Expectation::FullOrPartial => "full_or_partial",
            Expectation::Found => "found",
            Expectation::Unblockable => "unblockable",
        }
    }
}

/// One agent as written in one lot.
#[derive(Debug, Clone)]
pub struct Appearance {
    pub notice_id: String,
    pub lot_number: String,
    pub role: Role,
    pub facility: usize,
    pub registered: bool,
    pub tier: u8,
    pub name: String,
    pub street: Option<String>,
    pub zipcode: Option<String>,
    pub city: Option<String>,
    pub declared: Option<String>,
    pub expectation: Expectation,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: SynthConfig,
    pub world: World,
    pub header: Vec<String>,
    /// Table body, one CSV line per entry (malformed lines included).
    pub lines: Vec<String>,
    pub appearances: Vec<Appearance>,
    pub contract_notices: Vec<String>,
}

const HEADER: &[&str] = &[
    "ID_NOTICE_CAN",
    "ID_LOT_AWARDED",
    "DT_DISPATCH",
    "DT_AWARD",
    "TYPE_OF_CONTRACT",
    "CPV",
    "NUMBER_OFFERS",
    "AWARD_VALUE_EURO",
    "CURRENCY",
    "CANCELLED",
    "ID_NOTICE_CN",
    "CAE_NAME",
    "CAE_NATIONALID",
    "CAE_ADDRESS",
    "CAE_POSTAL_CODE",
    "CAE_TOWN",
    "ISO_COUNTRY_CODE",
    "WIN_NAME",
    "WIN_NATIONALID",
    "WIN_ADDRESS",
    "WIN_POSTAL_CODE",
    "WIN_TOWN",
    "WIN_COUNTRY_CODE",
    "CRIT_CRITERIA",
    "CRIT_WEIGHTS",
    "CRIT_PRICE_WEIGHT",
];

fn accent(c: char, rng: &mut ChaCha8Rng) -> char {
    let options: &[char] = match c {
        'E' => &['É', 'È', 'Ê'],
        'e' => &['é', 'è', 'ê'],
        'A' => &['À', 'Â'],
        'a' => &['à', 'â'],
        'O' => &['Ô'],
        'o' => &['ô'],
        'I' => &['Î', 'Ï'],
        'i' => &['î', 'ï'],
        'C' => &['Ç'],
        'c' => &['ç'],
        'U' => &['Ù', 'Û'],
        'u' => &['ù', 'û'],
        _ => &[],
    };
    options.choose(rng).copied().unwrap_or(c)
}

fn title_case(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut cs = w.chars();
            match cs.next() {
                Some(f) => f.to_uppercase().chain(cs.flat_map(char::to_lowercase)).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Case, diacritic and punctuation noise that folding removes, plus
/// occasionally a dropped legal form, a parenthesized remark or one typo.
fn noisy_name(name: &str, rng: &mut ChaCha8Rng) -> String {
    let mut s = match rng.gen_range(0..3) {
        0 => title_case(name),
        1 => name.to_lowercase(),
        _ => name.to_string(),
    };
    if rng.gen_bool(0.7) {
        s = s
            .chars()
            .map(|c| if rng.gen_bool(0.3) { accent(c, rng) } else { c })
            .collect();
    }
    if rng.gen_bool(0.5) {
        let spaces: Vec<usize> = s.match_indices(' ').map(|(i, _)| i).collect();
        if let Some(&i) = spaces.choose(rng) {
            let p = ["-", ", ", ". ", " - ", "'"].choose(rng).unwrap();
            s.replace_range(i..i + 1, p);
        }
    }
    let last = s.rsplit(' ').next().unwrap_or("").to_ascii_uppercase();
    if FORMS.contains(&last.as_str()) && s.contains(' ') && rng.gen_bool(0.3) {
        let cut = s.rfind(' ').unwrap();
        s.truncate(cut);
    }
    if rng.gen_bool(0.2) {
        s.push_str([" (siège)", " (Service achats)", " (direction)"].choose(rng).unwrap());
    }
    if rng.gen_bool(0.1) {
        let chars: Vec<char> = s.chars().collect();
        let letters: Vec<usize> = (1..chars.len()).filter(|&i| chars[i].is_ascii_alphabetic()).collect();
        if let Some(&i) = letters.choose(rng) {
            let mut chars = chars;
            chars[i] = if chars[i] == 'X' { 'Y' } else { 'X' };
            s = chars.into_iter().collect();
        }
    }
    s
}

struct LotDraft {
    notice_id: String,
    lot_number: String,
    cpv: String,
    mapped: bool,
    date: NaiveDate,
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    world: &'a World,
    rng: ChaCha8Rng,
    public: Vec<usize>,
    private_by_trade: Vec<Vec<usize>>,
    public_unregistered: Vec<usize>,
    private_unregistered: Vec<usize>,
    used: BTreeSet<usize>,
}

impl Generator<'_> {
    fn pick(&mut self, pool: &[usize]) -> Option<usize> {
        if !self.cfg.distinct_agents {
            return pool.choose(&mut self.rng).copied();
        }
        let free: Vec<usize> = pool.iter().copied().filter(|f| !self.used.contains(f)).collect();
        let f = *free.choose(&mut self.rng)?;
        self.used.insert(f);
        Some(f)
    }

    fn appearance(&mut self, lot: &LotDraft, role: Role, facility: usize) -> Appearance {
        let world = self.world;
        let rng = &mut self.rng;
        let f = &world.facilities[facility];
        let registered = world.is_registered(facility);
        let r: f64 = rng.gen();
        let tier = if r < self.cfg.tiers[0] {
            0
        } else if r < self.cfg.tiers[0] + self.cfg.tiers[1] {
            1
        } else {
            2
        };
        let name = world.facility_name(facility).to_string();
        let city_name = world.cities[f.city].name.clone();
        let (name, street, zipcode, city) = match tier {
            0 => (name, Some(f.street.clone()), Some(f.zipcode.clone()), Some(city_name)),
            1 => {
                let street = match rng.gen_range(0..3) {
                    0 => format!("{} BP {}", title_case(&f.street), rng.gen_range(1..999)),
                    1 => format!("BP {} - {}", rng.gen_range(1..999), f.street.to_lowercase()),
                    _ => f.street.clone(),
                };
                let city = match rng.gen_range(0..3) {
                    0 => format!("{city_name} CEDEX"),
                    1 => format!("{} Cedex {:02}", title_case(&city_name), rng.gen_range(1..20)),
                    _ => title_case(&city_name),
                };
                let zip = if rng.gen_bool(0.3) {
                    format!("F-{}", f.zipcode)
                } else {
                    f.zipcode.clone()
                };
                (noisy_name(&name, rng), Some(street), Some(zip), Some(city))
            }
            _ => {
                let (s, z, c) = [
                    (false, true, true),
                    (true, false, true),
                    (true, true, false),
                    (true, false, false),
                    (false, false, false),
                ][rng.gen_range(0..5)];
                (
                    name,
                    s.then(|| f.street.clone()),
                    z.then(|| f.zipcode.clone()),
                    c.then_some(city_name),
                )
            }
        };
        let department_known =
            zipcode.is_some() || city.as_deref().is_some_and(|c| world.city_is_unambiguous(c));
        let activity_known = role == Role::Winner && lot.mapped;
        let expectation = match tier {
            0 => Expectation::Full,
            1 => Expectation::FullOrPartial,
            _ if !department_known && !activity_known => Expectation::Unblockable,
            _ => Expectation::Found,
        };
        let rate = self.cfg.declared_rate[usize::from(role == Role::Winner)];
        let declared = (registered && rng.gen_bool(rate)).then(|| {
            if rng.gen_bool(0.1) {
                format!("{} {} {}", &f.siret[..3], &f.siret[3..9], &f.siret[9..])
            } else {
                f.siret.clone()
            }
        });
        Appearance {
            notice_id: lot.notice_id.clone(),
            lot_number: lot.lot_number.clone(),
            role,
            facility,
            registered,
            tier,
            name,
            street,
            zipcode,
            city,
            declared,
            expectation,
        }
    }

    fn buyer(&mut self) -> Option<usize> {
        if self.rng.gen_bool(self.cfg.unregistered_rate) && !self.public_unregistered.is_empty() {
            let pool = self.public_unregistered.clone();
            return pool.choose(&mut self.rng).copied();
        }
        let pool = self.public.clone();
        self.pick(&pool)
    }

    fn winner(&mut self, trade: usize) -> Option<usize> {
        if self.rng.gen_bool(self.cfg.unregistered_rate) && !self.private_unregistered.is_empty() {
            let pool = self.private_unregistered.clone();
            return pool.choose(&mut self.rng).copied();
        }
        let pool = self.private_by_trade[trade].clone();
        self.pick(&pool)
    }
}

fn criteria_cells(rng: &mut ChaCha8Rng) -> (String, String, String) {
    let price = rng.gen_range(2..9) * 10;
    let tech = 100 - price;
    match rng.gen_range(0..6) {
        0 => (
            "Prix---Valeur technique---Délai d'exécution".into(),
            format!("{price}---{}---{}", tech - 10, 10),
            String::new(),
        ),
        1 => (
            format!("Prix des prestations {price}%, Valeur technique {tech}%"),
            String::new(),
            String::new(),
        ),
        2 => (
            "Valeur technique---Performances en matière de protection de l'environnement".into(),
            format!("{}---{}", tech - 5, 5),
            price.to_string(),
        ),
        3 => ("Valeur technique".into(), String::new(), price.to_string()),
        4 => (
            "Qualité---Prix---Insertion professionnelle".into(),
            format!("{},5---{},5---{}", tech - 11, price, 10),
            String::new(),
        ),
        _ => ("Prix---Mémoire technique".into(), "1---1".into(), String::new()),
    }
}

fn write_record(fields: &[String]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(fields).unwrap();
    let mut s = String::from_utf8(w.into_inner().unwrap()).unwrap();
    s.pop();
    s
}

fn join(parts: &[Option<String>], sep: &str) -> String {
    if parts.iter().all(Option::is_none) {
        return String::new();
    }
    if parts.iter().any(Option::is_none) {
        // A joint cell with a missing part cannot be aligned; keep the
        // first part only, like a careless data-entry clerk would.
        return parts.iter().flatten().next().cloned().unwrap_or_default();
    }
    parts.iter().flatten().cloned().collect::<Vec<_>>().join(sep)
}

/// Draws a world and a table of `cfg.lots` lots.
pub fn generate(cfg: &SynthConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut world = generate_world(cfg, &mut rng);

    // Some entities exist only in the award tables.
    for e in world.entities.iter_mut() {
        if rng.gen_bool(cfg.unregistered_rate) {
            e.registered = false;
        }
    }
    let world = world;
    let mut public = Vec::new();
    let mut public_unregistered = Vec::new();
    let mut private_by_trade = vec![Vec::new(); TRADES.len()];
    let mut private_unregistered = Vec::new();
    for (i, f) in world.facilities.iter().enumerate().filter(|(_, f)| f.usable) {
        let e = &world.entities[f.entity];
        match (e.public, e.registered) {
            (true, true) => public.push(i),
            (true, false) => public_unregistered.push(i),
            (false, true) => private_by_trade[e.trade.unwrap()].push(i),
            (false, false) => private_unregistered.push(i),
        }
    }
    let mut gen = Generator {
        cfg,
        world: &world,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed),
        public,
        private_by_trade,
        public_unregistered,
        private_unregistered,
        used: BTreeSet::new(),
    };

    let mut lines = Vec::new();
    let mut appearances = Vec::new();
    let mut contract_notices = Vec::new();
    let mut notice_no = 0u64;
    let mut lots_left = cfg.lots;
    while lots_left > 0 {
        notice_no += 1;
        let n_lots = gen.rng.gen_range(1..=cfg.max_lots_per_notice.max(1)).min(lots_left);
        let mut dispatch = random_date(&mut gen.rng, date(2010, 1, 15), date(2020, 12, 31));
        if gen.rng.gen_bool(cfg.out_of_period_rate) {
            dispatch = random_date(&mut gen.rng, date(2008, 1, 1), date(2009, 12, 31));
        }
        let notice_id = format!("{}-{:06}", dispatch.format("%Y"), notice_no);
        let cn = format!("CN-{:06}", notice_no);
        contract_notices.push(cn.clone());
        let cn_ref = gen.rng.gen_bool(0.85).then_some(cn);
        if gen.rng.gen_bool(0.1) {
            contract_notices.push(format!("CN-X{:06}", notice_no));
        }
        let Some(buyer) = gen.buyer() else { break };
        for lot_no in 1..=n_lots {
            lots_left -= 1;
            let trade = gen.rng.gen_range(0..TRADES.len());
            let mapped = !gen.rng.gen_bool(cfg.unmapped_cpv_rate);
            let lot = LotDraft {
                notice_id: notice_id.clone(),
                lot_number: lot_no.to_string(),
                cpv: if mapped { TRADES[trade].2.to_string() } else { UNMAPPED_CPV.to_string() },
                mapped,
                date: dispatch,
            };
            let b = gen.appearance(&lot, Role::Buyer, buyer);
            let cancelled = gen.rng.gen_bool(cfg.cancelled_rate);
            let mut winners = Vec::new();
            if !cancelled {
                let k = if gen.rng.gen_bool(cfg.joint_rate) { 2 } else { 1 };
                for _ in 0..k {
                    if let Some(w) = gen.winner(trade) {
                        if !winners.iter().any(|a: &Appearance| a.facility == w) {
                            let a = gen.appearance(&lot, Role::Winner, w);
                            winners.push(a);
                        }
                    }
                }
            }
            let award = (gen.rng.gen_bool(0.7)).then(|| lot.date - Duration::days(gen.rng.gen_range(0..60)));
            let fmt_date = |d: NaiveDate, rng: &mut ChaCha8Rng| {
                if rng.gen_bool(0.8) {
                    d.to_string()
                } else {
                    d.format("%d/%m/%Y").to_string()
                }
            };
            let value: f64 = gen.rng.gen_range(1_000.0..2_000_000.0);
            let value = match gen.rng.gen_range(0..4) {
                0 => String::new(),
                1 => {
                    let whole = value.trunc() as u64;
                    let cents = ((value.fract() * 100.0).round() as u64).min(99);
                    let mut grouped = String::new();
                    for (i, ch) in whole.to_string().chars().rev().enumerate() {
                        if i > 0 && i % 3 == 0 {
                            grouped.push(' ');
                        }
                        grouped.push(ch);
                    }
                    format!("{},{cents:02}", grouped.chars().rev().collect::<String>())
                }
                _ => format!("{value:.2}"),
            };
            let contract_type = match &lot.cpv[..2] {
                "45" => "W",
                "30" | "33" => "U",
                _ => "S",
            };
            let (crit, weights, price) = if gen.rng.gen_bool(cfg.criteria_rate) {
                criteria_cells(&mut gen.rng)
            } else {
                Default::default()
            };
            let sep = if gen.rng.gen_bool(0.5) { " / " } else { "---" };
            let wn = |f: fn(&Appearance) -> Option<String>| {
                let parts: Vec<Option<String>> = winners.iter().map(f).collect();
                join(&parts, sep)
            };
            let winner_name = if cancelled {
                if gen.rng.gen_bool(0.5) { "Infructueux".to_string() } else { String::new() }
            } else {
                wn(|a| Some(a.name.clone()))
            };
            let record = vec![
                lot.notice_id.clone(),
                lot.lot_number.clone(),
                fmt_date(lot.date, &mut gen.rng),
                award.map(|d| fmt_date(d, &mut gen.rng)).unwrap_or_default(),
                contract_type.to_string(),
                lot.cpv.clone(),
                if gen.rng.gen_bool(0.9) { gen.rng.gen_range(1..12).to_string() } else { String::new() },
                value,
                if gen.rng.gen_bool(0.9) { "EUR".into() } else { String::new() },
                if cancelled && winner_name.is_empty() { "1".into() } else { String::new() },
                cn_ref.clone().unwrap_or_default(),
                b.name.clone(),
                b.declared.clone().unwrap_or_default(),
                b.street.clone().unwrap_or_default(),
                b.zipcode.clone().unwrap_or_default(),
                b.city.clone().unwrap_or_default(),
                "FR".into(),
                winner_name,
                wn(|a| a.declared.clone()),
                wn(|a| a.street.clone()),
                wn(|a| a.zipcode.clone()),
                wn(|a| a.city.clone()),
                if winners.is_empty() { String::new() } else { "FR".into() },
                crit,
                weights,
                price,
            ];
            lines.push(write_record(&record));
            appearances.push(b);
            // Joint cells that could not be aligned make the split fail;
            // those winners are not individually identifiable.
            let aligned = winners.len() < 2
                || winners.iter().all(|a| a.street.is_some() && a.zipcode.is_some() && a.city.is_some())
                    && winners.iter().all(|a| a.declared.is_some()) == winners.iter().any(|a| a.declared.is_some());
            if aligned {
                appearances.extend(winners);
            }
        }
    }

    // Malformed lines at deterministic random positions.
    for k in 0..cfg.malformed_lines {
        let bad = if k % 2 == 0 {
            format!("{}-BAD{k},1,2015-01-01,,S,,,,,,,\"Unterminated quote,,,,,,,,,,,,,,,", 2015)
        } else {
            format!("2015-BAD{k},1,2015-01-01,too,few,fields")
        };
        let at = gen.rng.gen_range(0..=lines.len());
        lines.insert(at, bad);
    }

    Dataset {
        config: cfg.clone(),
        header: HEADER.iter().map(|s| s.to_string()).collect(),
        lines,
        appearances,
        contract_notices,
        world,
    }
}

/// Paths written by [`Dataset::write`].
#[derive(Debug, Clone)]
pub struct DatasetFiles {
    pub dir: PathBuf,
    pub ted: PathBuf,
    pub entities: PathBuf,
    pub facilities: PathBuf,
    pub postal: PathBuf,
    pub activity: PathBuf,
    pub contract_notices: PathBuf,
    pub labels: PathBuf,
    pub config: PathBuf,
}

impl Dataset {
    pub fn ted_csv(&self) -> String {
        let mut s = write_record(&self.header);
        s.push('\n');
        for l in &self.lines {
            s.push_str(l);
            s.push('\n');
        }
        s
    }

    /// `notice_id,lot_number,role,name,siret,tier,expectation` for every
    /// registered appearance.
    pub fn labels_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["notice_id", "lot_number", "role", "name", "siret", "tier", "expectation"])
            .unwrap();
        for a in self.appearances.iter().filter(|a| a.registered) {
            w.write_record([
                a.notice_id.as_str(),
                &a.lot_number,
                a.role.as_str(),
                &a.name,
                &self.world.facilities[a.facility].siret,
                &a.tier.to_string(),
                a.expectation.as_str(),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    /// Writes every input file and a configuration pointing at them, with
    /// output under `dir/out`.
    pub fn write(&self, dir: &Path) -> Result<DatasetFiles> {
        fs::create_dir_all(dir)?;
        let files = DatasetFiles {
            dir: dir.to_path_buf(),
            ted: dir.join("ted.csv"),
            entities: dir.join("registry_entities.csv"),
            facilities: dir.join("registry_facilities.csv"),
            postal: dir.join("postal.csv"),
            activity: dir.join("activity.csv"),
            contract_notices: dir.join("contract_notices.txt"),
            labels: dir.join("labels.csv"),
            config: dir.join("foppa.toml"),
        };
        fs::write(&files.ted, self.ted_csv())?;
        fs::write(&files.entities, self.world.entities_csv())?;
        fs::write(&files.facilities, self.world.facilities_csv())?;
        fs::write(&files.postal, self.world.postal_csv())?;
        fs::write(&files.activity, self.world.activity_csv())?;
        fs::write(&files.contract_notices, self.contract_notices.join("\n") + "\n")?;
        fs::write(&files.labels, self.labels_csv())?;
        fs::write(
            &files.config,
            format!(
                "output = \"out\"\nseed = {}\n\n[input]\nted = [\"ted.csv\"]\n\
                 registry_entities = \"registry_entities.csv\"\n\
                 registry_facilities = \"registry_facilities.csv\"\n\
                 postal = \"postal.csv\"\nactivity_table = \"activity.csv\"\n\
                 contract_notices = \"contract_notices.txt\"\n\
                 ground_truth = \"labels.csv\"\n",
                self.config.seed
            ),
        )?;
        Ok(files)
    }

    /// Pairs occurrences with the appearance they were drawn from, by lot,
    /// role and folded name.
    pub fn truth_for<'a>(
        &'a self,
        occurrences: &[AgentOccurrence],
        lots: &[LotRecord],
    ) -> BTreeMap<u64, &'a Appearance> {
        let lot_keys: BTreeMap<u64, (&str, &str)> = lots
            .iter()
            .map(|l| (l.lot_id, (l.notice_id.as_str(), l.lot_number.as_str())))
            .collect();
        let mut by_key: BTreeMap<(&str, &str, Role, String), &Appearance> = BTreeMap::new();
        for a in &self.appearances {
            by_key.insert((&a.notice_id, &a.lot_number, a.role, normalize_name(&a.name)), a);
        }
        occurrences
            .iter()
            .filter_map(|o| {
                let (n, l) = lot_keys.get(&o.lot_id)?;
                let a = by_key.get(&(*n, *l, o.role, normalize_name(&o.raw_name)))?;
                Some((o.occurrence_id, *a))
            })
            .collect()
    }
}

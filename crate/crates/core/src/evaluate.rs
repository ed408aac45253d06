//! Scoring of identification and clustering against known identifiers:
//! outcome classification, masked reruns, clustering ratios, stage
//! accounting, cluster histograms and notice coverage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AgentOccurrence, Role};
use crate::merge::ResolvedCluster;
use crate::normalize::normalize_name;
use crate::registry::{validate_siret, Identifier, Siret};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MatchOutcome {
    Full,
    Partial,
    Incorrect,
    None,
}

impl MatchOutcome {
    pub const ALL: [MatchOutcome; 4] = [
        MatchOutcome::Full,
        MatchOutcome::Partial,
        MatchOutcome::Incorrect,
        MatchOutcome::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MatchOutcome::Full => "FULL",
            MatchOutcome::Partial => "PARTIAL",
            MatchOutcome::Incorrect => "INCORRECT",
            MatchOutcome::None => "NONE",
        }
    }
}

/// Internal codes carry no registry information and count as absent. A
/// SIREN-only prediction can at best be partial.
pub fn classify_outcome(predicted: Option<&Identifier>, truth: &Siret) -> MatchOutcome {
    match predicted {
        Some(Identifier::Siret(s)) if s == truth => MatchOutcome::Full,
        Some(id @ (Identifier::Siret(_) | Identifier::Siren(_))) => {
            if id.siren() == Some(truth.siren()) {
                MatchOutcome::Partial
            } else {
                MatchOutcome::Incorrect
            }
        }
        Some(Identifier::Internal(_)) | None => MatchOutcome::None,
    }
}

/// Counts per outcome.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OutcomeCounts {
    pub full: usize,
    pub partial: usize,
    pub incorrect: usize,
    pub none: usize,
}

impl OutcomeCounts {
    pub fn add(&mut self, o: MatchOutcome) {
        match o {
            MatchOutcome::Full => self.full += 1,
            MatchOutcome::Partial => self.partial += 1,
            MatchOutcome::Incorrect => self.incorrect += 1,
            MatchOutcome::None => self.none += 1,
        }
    }

    pub fn get(&self, o: MatchOutcome) -> usize {
        match o {
            MatchOutcome::Full => self.full,
            MatchOutcome::Partial => self.partial,
            MatchOutcome::Incorrect => self.incorrect,
            MatchOutcome::None => self.none,
        }
    }

    pub fn total(&self) -> usize {
        self.full + self.partial + self.incorrect + self.none
    }

    /// Percentage of one outcome; `None` on an empty set.
    pub fn pct(&self, o: MatchOutcome) -> Option<f64> {
        percent(self.get(o), self.total())
    }
}

impl FromIterator<MatchOutcome> for OutcomeCounts {
    fn from_iter<I: IntoIterator<Item = MatchOutcome>>(iter: I) -> Self {
        let mut c = Self::default();
        for o in iter {
            c.add(o);
        }
        c
    }
}

fn percent(part: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| 100.0 * part as f64 / total as f64)
}

/// Known truth for one evaluated occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthEntry {
    pub role: Role,
    pub siret: Siret,
}

pub type GroundTruth = BTreeMap<u64, TruthEntry>;

/// Truth taken from the occurrences' own declared SIRETs.
pub fn declared_truth(occurrences: &[AgentOccurrence]) -> GroundTruth {
    occurrences
        .iter()
        .filter_map(|o| match o.declared_siret.as_deref().and_then(validate_siret) {
            Some(Identifier::Siret(s)) => Some((o.occurrence_id, TruthEntry { role: o.role, siret: s })),
            _ => None,
        })
        .collect()
}

/// Reads a label file with columns `notice_id,lot_number,role,name,siret`
/// and attaches each label to the occurrences of that lot and role whose
/// folded raw name equals the folded label name.
pub fn load_labels<R: Read>(
    source: R,
    occurrences: &[AgentOccurrence],
    lot_keys: &BTreeMap<u64, (String, String)>,
) -> Result<GroundTruth> {
    #[derive(Deserialize)]
    struct Label {
        notice_id: String,
        lot_number: String,
        role: Role,
        name: String,
        siret: String,
    }
    let mut wanted: BTreeMap<(String, String, Role, String), Siret> = BTreeMap::new();
    let mut rdr = csv::Reader::from_reader(source);
    for (i, row) in rdr.deserialize::<Label>().enumerate() {
        let row = row.map_err(|e| Error::Input(format!("labels line {}: {e}", i + 2)))?;
        let Some(siret) = Siret::parse(row.siret.trim()) else {
            return Err(Error::Input(format!("labels line {}: invalid SIRET {:?}", i + 2, row.siret)));
        };
        wanted.insert(
            (row.notice_id, row.lot_number, row.role, normalize_name(&row.name)),
            siret,
        );
    }
    let mut truth = GroundTruth::new();
    for o in occurrences {
        let Some((notice, lot)) = lot_keys.get(&o.lot_id) else {
            continue;
        };
        let key = (notice.clone(), lot.clone(), o.role, normalize_name(&o.raw_name));
        if let Some(s) = wanted.get(&key) {
            truth.insert(o.occurrence_id, TruthEntry { role: o.role, siret: s.clone() });
        }
    }
    if truth.len() < wanted.len() {
        warn!("{} of {} labels matched no occurrence", wanted.len() - truth.len().min(wanted.len()), wanted.len());
    }
    Ok(truth)
}

/// Grouping key standing for "the same agent" when sampling: the declared
/// SIRET when valid, else folded name and city.
fn sampling_key(o: &AgentOccurrence) -> String {
    match o.declared_siret.as_deref().and_then(validate_siret) {
        Some(id) => id.to_string(),
        None => format!(
            "{}|{}",
            normalize_name(&o.raw_name),
            normalize_name(o.city.as_deref().unwrap_or(""))
        ),
    }
}

/// Seeded uniform sample of `n_per_role` distinct agents per role among
/// occurrences with both a name and a city. Returns one representative
/// occurrence id per sampled agent, sorted. With too few candidates, all
/// are returned and a warning is logged.
pub fn sample_ground_truth(occurrences: &[AgentOccurrence], n_per_role: usize, seed: u64) -> Vec<u64> {
    let mut out = Vec::new();
    for (k, role) in [Role::Buyer, Role::Winner].into_iter().enumerate() {
        let mut agents: BTreeMap<String, u64> = BTreeMap::new();
        for o in occurrences.iter().filter(|o| o.role == role) {
            let named = !o.raw_name.trim().is_empty();
            let city = o.city.as_deref().is_some_and(|c| !c.trim().is_empty());
            if named && city {
                agents.entry(sampling_key(o)).or_insert(o.occurrence_id);
            }
        }
        let mut pool: Vec<u64> = agents.into_values().collect();
        if pool.len() < n_per_role {
            warn!(
                "only {} eligible {} agents for a sample of {n_per_role}",
                pool.len(),
                role.as_str()
            );
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        pool.shuffle(&mut rng);
        pool.truncate(n_per_role);
        out.extend(pool);
    }
    out.sort_unstable();
    out
}

/// Occurrence-to-cluster assignment.
#[derive(Debug, Clone, Default)]
pub struct Clustering {
    cluster_of: BTreeMap<u64, u64>,
    sizes: BTreeMap<u64, usize>,
}

impl Clustering {
    pub fn from_assignments(pairs: impl IntoIterator<Item = (u64, u64)>) -> Self {
        let mut c = Self::default();
        for (occ, cluster) in pairs {
            c.cluster_of.insert(occ, cluster);
            *c.sizes.entry(cluster).or_default() += 1;
        }
        c
    }

    pub fn from_resolved(clusters: &[ResolvedCluster]) -> Self {
        Self::from_assignments(
            clusters
                .iter()
                .flat_map(|c| c.members.iter().map(move |&m| (m, c.cluster_id))),
        )
    }

    pub fn cluster_of(&self, occurrence: u64) -> Option<u64> {
        self.cluster_of.get(&occurrence).copied()
    }

    pub fn size(&self, cluster: u64) -> usize {
        self.sizes.get(&cluster).copied().unwrap_or(0)
    }
}

/// Largest share of an agent's occurrences found in one cluster. `None`
/// when the agent has no clustered occurrence.
pub fn concentration_ratio(agent_occurrences: &[u64], clustering: &Clustering) -> Option<f64> {
    let mut per_cluster: BTreeMap<u64, usize> = BTreeMap::new();
    let mut n = 0usize;
    for &o in agent_occurrences {
        if let Some(c) = clustering.cluster_of(o) {
            *per_cluster.entry(c).or_default() += 1;
            n += 1;
        }
    }
    let best = per_cluster.values().max()?;
    Some(*best as f64 / n as f64)
}

/// Share of an agent's occurrences that sit alone in their cluster.
pub fn singleton_ratio(agent_occurrences: &[u64], clustering: &Clustering) -> Option<f64> {
    let mut n = 0usize;
    let mut singles = 0usize;
    for &o in agent_occurrences {
        if let Some(c) = clustering.cluster_of(o) {
            n += 1;
            if clustering.size(c) == 1 {
                singles += 1;
            }
        }
    }
    (n > 0).then(|| singles as f64 / n as f64)
}

/// Histogram row.
#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub label: String,
    pub count: usize,
    pub pct: Option<f64>,
}

fn bins(labels: &[&str], counts: Vec<usize>) -> Vec<Bin> {
    let total: usize = counts.iter().sum();
    labels
        .iter()
        .zip(counts)
        .map(|(l, c)| Bin {
            label: l.to_string(),
            count: c,
            pct: percent(c, total),
        })
        .collect()
}

/// Cluster sizes binned 1..5, 6+ and distinct registry identifiers per
/// cluster binned 0..4, 5+.
pub fn distribution_tables(clusters: &[ResolvedCluster]) -> (Vec<Bin>, Vec<Bin>) {
    let mut sizes = vec![0usize; 6];
    let mut ids = vec![0usize; 6];
    for c in clusters {
        sizes[c.members.len().clamp(1, 6) - 1] += 1;
        ids[c.distinct_identifiers.min(5)] += 1;
    }
    (
        bins(&["1", "2", "3", "4", "5", "6+"], sizes),
        bins(&["0", "1", "2", "3", "4", "5+"], ids),
    )
}

/// Ten equal-width bins over [0, 1]; the last one is closed.
pub fn ratio_histogram(values: &[f64]) -> Vec<Bin> {
    let mut counts = vec![0usize; 10];
    for &v in values {
        counts[((v * 10.0).floor() as usize).min(9)] += 1;
    }
    let labels: Vec<String> = (0..10)
        .map(|i| {
            let close = if i == 9 { ']' } else { ')' };
            format!("[{:.1},{:.1}{close}", i as f64 / 10.0, (i + 1) as f64 / 10.0)
        })
        .collect();
    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    bins(&refs, counts)
}

/// Shares of contract notices never cited by an award, and of awards
/// citing an unknown contract notice (awards without a reference count as
/// citing none). Absent when the corresponding set is empty.
pub fn notice_coverage(contract_notice_ids: &BTreeSet<String>, award_refs: &[Option<String>]) -> (Option<f64>, Option<f64>) {
    let cited: BTreeSet<&str> = award_refs.iter().flatten().map(String::as_str).collect();
    let unmatched_contracts = contract_notice_ids
        .iter()
        .filter(|id| !cited.contains(id.as_str()))
        .count();
    let unmatched_awards = award_refs
        .iter()
        .filter(|r| r.as_ref().is_none_or(|r| !contract_notice_ids.contains(r)))
        .count();
    (
        percent(unmatched_contracts, contract_notice_ids.len()),
        percent(unmatched_awards, award_refs.len()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Separation,
    Normalization,
    Identification,
    Clustering,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::Separation,
        Stage::Normalization,
        Stage::Identification,
        Stage::Clustering,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Separation => "After Separation",
            Stage::Normalization => "After Normalization",
            Stage::Identification => "After Identification",
            Stage::Clustering => "After Clustering",
        }
    }
}

/// Identifier an occurrence carries once joint agents are split: its own
/// declared SIRET, if valid.
pub fn declared_identifier(o: &AgentOccurrence) -> Option<Identifier> {
    o.declared_siret.as_deref().and_then(validate_siret)
}

/// One stage-accounting row. Under the strict notion a partial match is
/// incorrect; under the entity notion it is correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageRow {
    pub stage: Stage,
    pub counts: OutcomeCounts,
}

impl StageRow {
    pub fn correct(&self, entity_level: bool) -> usize {
        self.counts.full + if entity_level { self.counts.partial } else { 0 }
    }

    pub fn incorrect(&self, entity_level: bool) -> usize {
        self.counts.incorrect + if entity_level { 0 } else { self.counts.partial }
    }

    pub fn missing(&self) -> usize {
        self.counts.none
    }
}

/// Classifies the identifiers held by the evaluated occurrences after one
/// stage. `identifiers` maps occurrence id to its current identifier.
pub fn stage_accounting(
    stage: Stage,
    identifiers: &BTreeMap<u64, Option<Identifier>>,
    truth: &GroundTruth,
) -> StageRow {
    let counts = truth
        .iter()
        .map(|(id, t)| classify_outcome(identifiers.get(id).and_then(Option::as_ref), &t.siret))
        .collect();
    StageRow { stage, counts }
}

/// Identifiers of the evaluated occurrences at one point of a run.
pub fn snapshot(occurrences: &[AgentOccurrence], truth: &GroundTruth) -> BTreeMap<u64, Option<Identifier>> {
    occurrences
        .iter()
        .filter(|o| truth.contains_key(&o.occurrence_id))
        .map(|o| (o.occurrence_id, o.identifier.clone()))
        .collect()
}

/// Outcome distributions per role, over occurrences and over unique agents
/// (truth SIRET). An agent's outcome is the most frequent outcome among
/// its occurrences, ties going to the worse outcome.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutcomeTable {
    pub occurrences: BTreeMap<Role, OutcomeCounts>,
    pub agents: BTreeMap<Role, OutcomeCounts>,
}

pub fn outcome_table(final_ids: &BTreeMap<u64, Option<Identifier>>, truth: &GroundTruth) -> OutcomeTable {
    let mut table = OutcomeTable::default();
    let mut per_agent: BTreeMap<(Role, &Siret), BTreeMap<MatchOutcome, usize>> = BTreeMap::new();
    for (id, t) in truth {
        let o = classify_outcome(final_ids.get(id).and_then(Option::as_ref), &t.siret);
        table.occurrences.entry(t.role).or_default().add(o);
        *per_agent.entry((t.role, &t.siret)).or_default().entry(o).or_default() += 1;
    }
    for ((role, _), outcomes) in per_agent {
        // Outcomes are ordered best to worst; `>=` keeps the last (worst)
        // among equally frequent ones.
        let mut best = (MatchOutcome::None, 0usize);
        for (o, n) in outcomes {
            if n >= best.1 {
                best = (o, n);
            }
        }
        table.agents.entry(role).or_default().add(best.0);
    }
    table
}

/// Agent grouping used by the clustering ratios: truth SIRET to the
/// evaluated occurrences bearing it.
pub fn agents_by_truth(truth: &GroundTruth) -> BTreeMap<&Siret, Vec<u64>> {
    let mut map: BTreeMap<&Siret, Vec<u64>> = BTreeMap::new();
    for (id, t) in truth {
        map.entry(&t.siret).or_default().push(*id);
    }
    map
}

/// Result of hiding the evaluation identifiers.
#[derive(Debug, Clone)]
pub struct Masking {
    pub truth: GroundTruth,
    pub hidden: BTreeSet<Siret>,
}

/// Hides every declared SIRET belonging to a sampled agent: all occurrences
/// bearing one of those SIRETs lose it, so neither identification nor
/// clustering can read it. The masked occurrences become the evaluated set.
pub fn mask_occurrences(occurrences: &mut [AgentOccurrence], sampled: &BTreeSet<u64>) -> Masking {
    let hidden: BTreeSet<Siret> = occurrences
        .iter()
        .filter(|o| sampled.contains(&o.occurrence_id))
        .filter_map(|o| match declared_identifier(o) {
            Some(Identifier::Siret(s)) => Some(s),
            _ => None,
        })
        .collect();
    let mut truth = GroundTruth::new();
    for o in occurrences.iter_mut() {
        if let Some(Identifier::Siret(s)) = declared_identifier(o) {
            if hidden.contains(&s) {
                truth.insert(o.occurrence_id, TruthEntry { role: o.role, siret: s });
                o.declared_siret = None;
                o.identifier = None;
                o.agent_key = None;
            }
        }
    }
    Masking { truth, hidden }
}

/// Masking-soundness audit: lists every occurrence still exposing a hidden
/// SIRET as a declared value. Run after each stage of a masked rerun.
pub fn masking_leaks(occurrences: &[AgentOccurrence], hidden: &BTreeSet<Siret>) -> Vec<u64> {
    occurrences
        .iter()
        .filter(|o| {
            o.declared_siret
                .as_deref()
                .and_then(Siret::parse)
                .is_some_and(|s| hidden.contains(&s))
        })
        .map(|o| o.occurrence_id)
        .collect()
}

/// Outcome of a masked rerun: snapshots after each stage plus the final
/// clustering.
#[derive(Debug, Clone)]
pub struct MaskedRun {
    pub masking: Masking,
    pub stages: Vec<StageRow>,
    pub outcomes: OutcomeTable,
    pub final_identifiers: BTreeMap<u64, Option<Identifier>>,
}

/// Masks the sampled agents, then hands the masked occurrences to `rerun`,
/// which must run the downstream stages and call `observe` after each of
/// Normalization, Identification and Clustering. A leak of a hidden SIRET
/// at any observation point is an invariant violation.
pub fn mask_and_rerun<F>(mut occurrences: Vec<AgentOccurrence>, sampled: &BTreeSet<u64>, rerun: F) -> Result<MaskedRun>
where
    F: FnOnce(Vec<AgentOccurrence>, &mut dyn FnMut(Stage, &[AgentOccurrence]) -> Result<()>) -> Result<Vec<AgentOccurrence>>,
{
    let masking = mask_occurrences(&mut occurrences, sampled);
    if masking.truth.is_empty() {
        warn!("masked evaluation: no sampled occurrence carries a valid SIRET");
    }
    let separation: BTreeMap<u64, Option<Identifier>> = occurrences
        .iter()
        .filter(|o| masking.truth.contains_key(&o.occurrence_id))
        .map(|o| (o.occurrence_id, declared_identifier(o)))
        .collect();
    let mut stages = vec![stage_accounting(Stage::Separation, &separation, &masking.truth)];
    let mut last = separation;
    {
        let mut observe = |stage: Stage, occs: &[AgentOccurrence]| -> Result<()> {
            let leaks = masking_leaks(occs, &masking.hidden);
            if !leaks.is_empty() {
                return Err(Error::Invariant(format!(
                    "masking soundness: {} occurrence(s) expose a hidden SIRET at {}",
                    leaks.len(),
                    stage.as_str()
                )));
            }
            last = snapshot(occs, &masking.truth);
            stages.push(stage_accounting(stage, &last, &masking.truth));
            Ok(())
        };
        rerun(occurrences, &mut observe)?;
    }
    let outcomes = outcome_table(&last, &masking.truth);
    Ok(MaskedRun {
        masking,
        stages,
        outcomes,
        final_identifiers: last,
    })
}

/// Size figures of the processed corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub lots: usize,
    pub rejected_rows: usize,
    pub skipped_lines: usize,
    pub occurrences_before_split: usize,
    pub occurrences: usize,
    pub agents: usize,
    pub clusters: usize,
}

/// Everything the evaluate stage reports.
#[derive(Debug, Clone, Default)]
pub struct EvaluationReport {
    pub corpus: CorpusStats,
    pub outcomes: Option<OutcomeTable>,
    pub stages: Vec<StageRow>,
    pub concentration: Vec<f64>,
    pub singleton: Vec<f64>,
    pub cluster_sizes: Vec<Bin>,
    pub distinct_identifiers: Vec<Bin>,
    pub coverage: (Option<f64>, Option<f64>),
}

impl EvaluationReport {
    /// Fills the clustering ratios from a truth set and a clustering.
    pub fn set_ratios(&mut self, truth: &GroundTruth, clustering: &Clustering) {
        let agents = agents_by_truth(truth);
        self.concentration = agents
            .values()
            .filter_map(|occs| concentration_ratio(occs, clustering))
            .collect();
        self.singleton = agents
            .values()
            .filter_map(|occs| singleton_ratio(occs, clustering))
            .collect();
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let c = &self.corpus;
        let _ = writeln!(s, "== Corpus");
        for (k, v) in [
            ("lots", c.lots),
            ("rejected rows", c.rejected_rows),
            ("skipped lines", c.skipped_lines),
            ("agent descriptions before split", c.occurrences_before_split),
            ("agent occurrences", c.occurrences),
            ("agents", c.agents),
            ("clusters", c.clusters),
        ] {
            let _ = writeln!(s, "{k:<34}{v:>10}");
        }

        if let Some(t) = &self.outcomes {
            for (basis, map) in [("occurrences", &t.occurrences), ("unique agents", &t.agents)] {
                let _ = writeln!(s, "\n== Identification outcomes ({basis})");
                let _ = writeln!(s, "{:<8}{:>8}{:>9}{:>9}{:>9}{:>9}", "role", "n", "FULL", "PARTIAL", "INCORR.", "NONE");
                for (role, counts) in map {
                    let _ = write!(s, "{:<8}{:>8}", role.as_str(), counts.total());
                    for o in MatchOutcome::ALL {
                        let _ = write!(s, "{:>8.2}%", counts.pct(o).unwrap_or(0.0));
                    }
                    let _ = writeln!(s);
                }
            }
        }

        if !self.stages.is_empty() {
            for (label, entity) in [("strict", false), ("entity-level", true)] {
                let _ = writeln!(s, "\n== Stage accounting ({label})");
                let _ = writeln!(s, "{:<22}{:>10}{:>10}{:>10}", "stage", "correct", "incorrect", "missing");
                for r in &self.stages {
                    let _ = writeln!(
                        s,
                        "{:<22}{:>10}{:>10}{:>10}",
                        r.stage.as_str(),
                        r.correct(entity),
                        r.incorrect(entity),
                        r.missing()
                    );
                }
            }
        }

        for (title, values) in [("Concentration ratio", &self.concentration), ("Singleton ratio", &self.singleton)] {
            if values.is_empty() {
                continue;
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let _ = writeln!(s, "\n== {title} over {} agents (mean {mean:.3})", values.len());
            write_bins(&mut s, &ratio_histogram(values));
        }
        let _ = writeln!(s, "\n== Cluster sizes");
        write_bins(&mut s, &self.cluster_sizes);
        let _ = writeln!(s, "\n== Distinct identifiers per cluster");
        write_bins(&mut s, &self.distinct_identifiers);

        let _ = writeln!(s, "\n== Notice coverage");
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.2}%"));
        let _ = writeln!(s, "contract notices without award      {}", fmt(self.coverage.0));
        let _ = writeln!(s, "awards without known contract       {}", fmt(self.coverage.1));
        s
    }

    /// Writes `report.txt` and one CSV per table into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let txt = dir.join("report.txt");
        fs::write(&txt, self.render_text())?;
        written.push(txt);

        let mut put = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<()> {
            let path = dir.join(name);
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(header)?;
            for r in rows {
                w.write_record(&r)?;
            }
            w.flush()?;
            written.push(path);
            Ok(())
        };

        let c = &self.corpus;
        put(
            "corpus.csv",
            &["measure", "value"],
            [
                ("lots", c.lots),
                ("rejected_rows", c.rejected_rows),
                ("skipped_lines", c.skipped_lines),
                ("occurrences_before_split", c.occurrences_before_split),
                ("occurrences", c.occurrences),
                ("agents", c.agents),
                ("clusters", c.clusters),
            ]
            .iter()
            .map(|(k, v)| vec![k.to_string(), v.to_string()])
            .collect(),
        )?;

        if let Some(t) = &self.outcomes {
            let mut rows = Vec::new();
            for (basis, map) in [("occurrences", &t.occurrences), ("agents", &t.agents)] {
                for (role, counts) in map {
                    for o in MatchOutcome::ALL {
                        rows.push(vec![
                            basis.to_string(),
                            role.as_str().to_string(),
                            o.as_str().to_string(),
                            counts.get(o).to_string(),
                            fmt_pct(counts.pct(o)),
                        ]);
                    }
                }
            }
            put("outcomes.csv", &["basis", "role", "outcome", "count", "pct"], rows)?;
        }

        if !self.stages.is_empty() {
            let rows = self
                .stages
                .iter()
                .map(|r| {
                    vec![
                        r.stage.as_str().to_string(),
                        r.counts.total().to_string(),
                        r.counts.full.to_string(),
                        r.counts.partial.to_string(),
                        r.counts.incorrect.to_string(),
                        r.counts.none.to_string(),
                        r.correct(false).to_string(),
                        r.incorrect(false).to_string(),
                        r.correct(true).to_string(),
                        r.incorrect(true).to_string(),
                        r.missing().to_string(),
                    ]
                })
                .collect();
            put(
                "stage_accounting.csv",
                &[
                    "stage",
                    "total",
                    "full",
                    "partial",
                    "incorrect",
                    "none",
                    "strict_correct",
                    "strict_incorrect",
                    "entity_correct",
                    "entity_incorrect",
                    "missing",
                ],
                rows,
            )?;
        }

        for (name, values) in [("concentration.csv", &self.concentration), ("singleton.csv", &self.singleton)] {
            put(name, &["bin", "count", "pct"], bin_rows(&ratio_histogram(values)))?;
        }
        put("cluster_sizes.csv", &["bin", "count", "pct"], bin_rows(&self.cluster_sizes))?;
        put(
            "distinct_identifiers.csv",
            &["bin", "count", "pct"],
            bin_rows(&self.distinct_identifiers),
        )?;
        put(
            "notice_coverage.csv",
            &["measure", "pct"],
            vec![
                vec!["unmatched_contract_notices".into(), fmt_pct(self.coverage.0)],
                vec!["unmatched_award_notices".into(), fmt_pct(self.coverage.1)],
            ],
        )?;
        Ok(written)
    }
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_default()
}

fn bin_rows(bins: &[Bin]) -> Vec<Vec<String>> {
    bins.iter()
        .map(|b| vec![b.label.clone(), b.count.to_string(), fmt_pct(b.pct)])
        .collect()
}

fn write_bins(s: &mut String, bins: &[Bin]) {
    for b in bins {
        let _ = writeln!(s, "{:<12}{:>10}{:>9.2}%", b.label, b.count, b.pct.unwrap_or(0.0));
    }
}

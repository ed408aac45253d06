//! Stage orchestration. Every stage reads the checkpoints of the stages it
//! depends on and writes its own under `<out>/checkpoints/<stage>/`, so a
//! run can be resumed or replayed one stage at a time. All parallel work
//! runs on a dedicated pool and is collected in id order, so outputs do not
//! depend on the number of threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::criteria::{repair_lot, Criterion, Lexicon};
use crate::emit::{build_tables, check_integrity, write_csv, write_sql_dump, SQL_DUMP_FILE};
use crate::error::{Error, Result};
use crate::evaluate::{
    declared_identifier, declared_truth, distribution_tables, load_labels, mask_and_rerun, notice_coverage,
    outcome_table, sample_ground_truth, snapshot, stage_accounting, Clustering, EvaluationReport,
    GroundTruth, MaskedRun, Stage as EvalStage,
};
use crate::identify::{identify_all, ActivityTable, MatchLogEntry};
use crate::ingest::{
    ingest_tables, parse_table, AgentOccurrence, LotCriteriaFields, LotRecord, RejectedRow,
};
use crate::merge::{canonical_agents, merge_occurrences, CaseKind, ResolvedCluster};
use crate::normalize::{merge_by_declared_siret, normalize_occurrence, PostalTable};
use crate::registry::{load_registry, Identifier, Registry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Criteria,
    Normalize,
    Identify,
    Merge,
    Emit,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Criteria,
        Stage::Normalize,
        Stage::Identify,
        Stage::Merge,
        Stage::Emit,
        Stage::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Criteria => "criteria",
            Stage::Normalize => "normalize",
            Stage::Identify => "identify",
            Stage::Merge => "merge",
            Stage::Emit => "emit",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Per-invocation switches that are not part of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Evaluate by hiding known SIRETs and rerunning identification and
    /// clustering.
    pub mask: bool,
}

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const REPORT_DIR: &str = "report";

/// Paths of one run's artifacts.
#[derive(Debug, Clone)]
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self { out: out.into() }
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(CHECKPOINT_DIR).join(stage.as_str())
    }

    pub fn checkpoint(&self, stage: Stage, file: &str) -> PathBuf {
        self.stage_dir(stage).join(file)
    }

    pub fn report_dir(&self, masked: bool) -> PathBuf {
        let d = self.out.join(REPORT_DIR);
        if masked {
            d.join("masked")
        } else {
            d
        }
    }
}

/// Writes serializable rows as a CSV file with a header.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`write_rows`].
pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for r in rdr.deserialize() {
        rows.push(r?);
    }
    Ok(rows)
}

fn require(layout: &Layout, stage: Stage, file: &str, needed_by: Stage) -> Result<PathBuf> {
    let path = layout.checkpoint(stage, file);
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Config(format!(
            "{needed_by} needs the {stage} checkpoint {}; run `{stage}` first",
            path.display()
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRow {
    pub source: String,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub lots: usize,
    pub occurrences: usize,
    pub occurrences_before_split: usize,
    pub rejected: usize,
    pub skipped: usize,
}

/// Merge audit line: one cluster, members space-separated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub cluster_id: u64,
    pub case_kind: CaseKind,
    pub identifier: Identifier,
    pub distinct_identifiers: usize,
    pub members: String,
}

impl From<&ResolvedCluster> for ClusterRow {
    fn from(c: &ResolvedCluster) -> Self {
        Self {
            cluster_id: c.cluster_id,
            case_kind: c.case_kind,
            identifier: c.identifier.clone(),
            distinct_identifiers: c.distinct_identifiers,
            members: c.members.iter().map(u64::to_string).collect::<Vec<_>>().join(" "),
        }
    }
}

impl TryFrom<ClusterRow> for ResolvedCluster {
    type Error = Error;

    fn try_from(r: ClusterRow) -> Result<Self> {
        let members = r
            .members
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|m| {
                m.parse()
                    .map_err(|_| Error::Input(format!("cluster {}: bad member id {m:?}", r.cluster_id)))
            })
            .collect::<Result<Vec<u64>>>()?;
        Ok(Self {
            cluster_id: r.cluster_id,
            case_kind: r.case_kind,
            identifier: r.identifier,
            members,
            distinct_identifiers: r.distinct_identifiers,
        })
    }
}

pub fn write_clusters(path: &Path, clusters: &[ResolvedCluster]) -> Result<()> {
    let rows: Vec<ClusterRow> = clusters.iter().map(ClusterRow::from).collect();
    write_rows(path, &rows)
}

pub fn read_clusters(path: &Path) -> Result<Vec<ResolvedCluster>> {
    read_rows::<ClusterRow>(path)?
        .into_iter()
        .map(ResolvedCluster::try_from)
        .collect()
}

/// Reference data needed from the normalize stage on, loaded on demand.
pub struct Resources {
    pub postal: PostalTable,
    pub registry: Registry,
    pub activity: ActivityTable,
}

pub fn load_postal(config: &PipelineConfig) -> Result<PostalTable> {
    PostalTable::load(File::open(&config.input.postal)?, &config.postal_columns)
}

pub fn load_resources(config: &PipelineConfig) -> Result<Resources> {
    let registry = load_registry(
        File::open(&config.input.registry_entities)?,
        File::open(&config.input.registry_facilities)?,
        &config.registry_columns,
        config.matching.activity_prefix_length,
    )?;
    let activity = match &config.input.activity_table {
        Some(p) => ActivityTable::load(File::open(p)?)?,
        None => ActivityTable::default(),
    };
    Ok(Resources {
        postal: load_postal(config)?,
        registry,
        activity,
    })
}

/// Name and address cleaning followed by the declared-SIRET pass.
pub fn normalize_all(occurrences: &mut [AgentOccurrence], postal: &PostalTable, postal_tokens: &[String]) -> usize {
    occurrences
        .par_iter_mut()
        .for_each(|o| normalize_occurrence(o, postal, postal_tokens));
    merge_by_declared_siret(occurrences)
}

/// Runs one stage inside `pool`.
pub struct Runner {
    pub config: PipelineConfig,
    pub layout: Layout,
    pub options: RunOptions,
    pool: rayon::ThreadPool,
}

impl Runner {
    pub fn new(config: PipelineConfig, options: RunOptions) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", config.jobs)))?;
        let layout = Layout::new(config.output.clone());
        Ok(Self {
            config,
            layout,
            options,
            pool,
        })
    }

    /// Runs the stages from `from` to `to` inclusive, in pipeline order.
    pub fn run_range(&self, from: Stage, to: Stage) -> Result<()> {
        if from > to {
            return Err(Error::Config(format!("stage range {from}..{to} is empty")));
        }
        for stage in Stage::ALL.into_iter().filter(|s| (from..=to).contains(s)) {
            self.run(stage)?;
        }
        Ok(())
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        info!("stage {stage}");
        self.pool.install(|| match stage {
            Stage::Ingest => self.ingest(),
            Stage::Criteria => self.criteria(),
            Stage::Normalize => self.normalize(),
            Stage::Identify => self.identify(),
            Stage::Merge => self.merge(),
            Stage::Emit => self.emit(),
            Stage::Evaluate => self.evaluate(),
        })
    }

    fn ingest(&self) -> Result<()> {
        let opts = self.config.ingest_options();
        let mut tables = Vec::new();
        for path in &self.config.input.ted {
            let file = File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            tables.push((name, parse_table(file, &opts.columns, opts.delimiter)?));
        }
        let out = ingest_tables(&tables, &opts);
        let skipped: Vec<SkippedRow> = out
            .skipped
            .iter()
            .map(|(source, s)| SkippedRow {
                source: source.clone(),
                line: s.line,
                reason: s.reason.to_string(),
            })
            .collect();
        let summary = IngestSummary {
            lots: out.lots.len(),
            occurrences: out.occurrences.len(),
            occurrences_before_split: out.occurrences_before_split,
            rejected: out.rejected.len(),
            skipped: skipped.len(),
        };
        info!(
            "ingest: {} lots, {} occurrences ({} before split), {} rejected rows, {} skipped lines",
            summary.lots, summary.occurrences, summary.occurrences_before_split, summary.rejected, summary.skipped
        );
        let l = &self.layout;
        write_rows(&l.checkpoint(Stage::Ingest, "lots.csv"), &out.lots)?;
        write_rows(&l.checkpoint(Stage::Ingest, "occurrences.csv"), &out.occurrences)?;
        write_rows(&l.checkpoint(Stage::Ingest, "criteria_fields.csv"), &out.criteria_fields)?;
        write_rows(&l.checkpoint(Stage::Ingest, "rejected.csv"), &out.rejected)?;
        write_rows(&l.checkpoint(Stage::Ingest, "skipped.csv"), &skipped)?;
        write_rows(&l.checkpoint(Stage::Ingest, "summary.csv"), &[summary])
    }

    fn lexicon(&self) -> Result<Lexicon> {
        match &self.config.input.lexicon {
            Some(p) => Lexicon::load(File::open(p)?),
            None => Ok(Lexicon::default()),
        }
    }

    fn criteria(&self) -> Result<()> {
        let fields: Vec<LotCriteriaFields> =
            read_rows(&require(&self.layout, Stage::Ingest, "criteria_fields.csv", Stage::Criteria)?)?;
        let lexicon = self.lexicon()?;
        let criteria: Vec<Criterion> = fields
            .par_iter()
            .map(|f| repair_lot(f, &self.config.separators, &lexicon))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect();
        info!("criteria: {} criteria over {} lots", criteria.len(), fields.len());
        write_rows(&self.layout.checkpoint(Stage::Criteria, "criteria.csv"), &criteria)
    }

    fn normalize(&self) -> Result<()> {
        let mut occs: Vec<AgentOccurrence> =
            read_rows(&require(&self.layout, Stage::Ingest, "occurrences.csv", Stage::Normalize)?)?;
        let postal = load_postal(&self.config)?;
        let invalid = normalize_all(&mut occs, &postal, &self.config.postal_tokens);
        info!("normalize: {} occurrences, {invalid} invalid declared SIRETs", occs.len());
        write_rows(&self.layout.checkpoint(Stage::Normalize, "occurrences.csv"), &occs)
    }

    fn identify(&self) -> Result<()> {
        let mut occs: Vec<AgentOccurrence> =
            read_rows(&require(&self.layout, Stage::Normalize, "occurrences.csv", Stage::Identify)?)?;
        let lots: Vec<LotRecord> = read_rows(&require(&self.layout, Stage::Ingest, "lots.csv", Stage::Identify)?)?;
        let res = load_resources(&self.config)?;
        let log = identify_all(&mut occs, &lots, &res.registry, &res.activity, &self.config.matching);
        let matched = log.iter().filter(|e| e.outcome == "matched").count();
        info!("identify: {matched} of {} queried occurrences matched", log.len());
        write_rows(&self.layout.checkpoint(Stage::Identify, "occurrences.csv"), &occs)?;
        write_rows(&self.layout.checkpoint(Stage::Identify, "match_log.csv"), &log)
    }

    fn merge(&self) -> Result<()> {
        let mut occs: Vec<AgentOccurrence> =
            read_rows(&require(&self.layout, Stage::Identify, "occurrences.csv", Stage::Merge)?)?;
        let outcome = merge_occurrences(
            &mut occs,
            self.config.merge.threshold,
            &self.config.matching.address_weights,
        );
        info!(
            "merge: {} clusters, {} agents",
            outcome.clusters.len(),
            outcome.agents.len()
        );
        write_rows(&self.layout.checkpoint(Stage::Merge, "occurrences.csv"), &occs)?;
        write_clusters(&self.layout.checkpoint(Stage::Merge, "clusters.csv"), &outcome.clusters)
    }

    fn emit(&self) -> Result<()> {
        let l = &self.layout;
        let lots: Vec<LotRecord> = read_rows(&require(l, Stage::Ingest, "lots.csv", Stage::Emit)?)?;
        let criteria: Vec<Criterion> = read_rows(&require(l, Stage::Criteria, "criteria.csv", Stage::Emit)?)?;
        let occs: Vec<AgentOccurrence> = read_rows(&require(l, Stage::Merge, "occurrences.csv", Stage::Emit)?)?;
        let agents = canonical_agents(&occs);
        let schema = build_tables(&lots, &agents, &occs, &criteria)?;
        let problems = check_integrity(&schema);
        if !problems.is_empty() {
            return Err(Error::Invariant(format!("referential integrity: {}", problems.join("; "))));
        }
        write_csv(&schema, &l.out)?;
        write_sql_dump(&schema, &l.out.join(SQL_DUMP_FILE))?;
        info!("emit: {} agents written to {}", agents.len(), l.out.display());
        Ok(())
    }

    fn evaluate(&self) -> Result<()> {
        let report = if self.options.mask {
            self.evaluate_masked()?.1
        } else {
            self.evaluate_checkpoints()?
        };
        let dir = self.layout.report_dir(self.options.mask);
        report.write(&dir)?;
        info!("evaluate: report written to {}", dir.display());
        Ok(())
    }

    fn corpus_and_coverage(&self, report: &mut EvaluationReport, lots: &[LotRecord]) -> Result<()> {
        let summary: Vec<IngestSummary> =
            read_rows(&require(&self.layout, Stage::Ingest, "summary.csv", Stage::Evaluate)?)?;
        if let Some(s) = summary.first() {
            report.corpus.lots = s.lots;
            report.corpus.rejected_rows = s.rejected;
            report.corpus.skipped_lines = s.skipped;
            report.corpus.occurrences_before_split = s.occurrences_before_split;
            report.corpus.occurrences = s.occurrences;
        }
        if let Some(p) = &self.config.input.contract_notices {
            let ids = read_id_list(p)?;
            let refs: Vec<Option<String>> = lots.iter().map(|l| l.contract_notice_ref.clone()).collect();
            report.coverage = notice_coverage(&ids, &refs);
        }
        Ok(())
    }

    fn set_clusters(report: &mut EvaluationReport, clusters: &[ResolvedCluster], occs: &[AgentOccurrence]) {
        let (sizes, ids) = distribution_tables(clusters);
        report.cluster_sizes = sizes;
        report.distinct_identifiers = ids;
        report.corpus.clusters = clusters.len();
        report.corpus.agents = occs
            .iter()
            .filter_map(|o| o.identifier.as_ref())
            .collect::<BTreeSet<_>>()
            .len();
    }

    /// Report over a finished run. With a label file, outcomes and stage
    /// accounting are computed from the stage checkpoints; clustering ratios
    /// use the labels, or the declared SIRETs when there are none.
    pub fn evaluate_checkpoints(&self) -> Result<EvaluationReport> {
        let l = &self.layout;
        let lots: Vec<LotRecord> = read_rows(&require(l, Stage::Ingest, "lots.csv", Stage::Evaluate)?)?;
        let ingested: Vec<AgentOccurrence> = read_rows(&require(l, Stage::Ingest, "occurrences.csv", Stage::Evaluate)?)?;
        let merged: Vec<AgentOccurrence> = read_rows(&require(l, Stage::Merge, "occurrences.csv", Stage::Evaluate)?)?;
        let clusters = read_clusters(&require(l, Stage::Merge, "clusters.csv", Stage::Evaluate)?)?;

        let mut report = EvaluationReport::default();
        self.corpus_and_coverage(&mut report, &lots)?;
        Self::set_clusters(&mut report, &clusters, &merged);

        let truth: GroundTruth = match &self.config.input.ground_truth {
            Some(p) => {
                let keys: BTreeMap<u64, (String, String)> = lots
                    .iter()
                    .map(|l| (l.lot_id, (l.notice_id.clone(), l.lot_number.clone())))
                    .collect();
                let truth = load_labels(File::open(p)?, &ingested, &keys)?;
                let normalized: Vec<AgentOccurrence> =
                    read_rows(&require(l, Stage::Normalize, "occurrences.csv", Stage::Evaluate)?)?;
                let identified: Vec<AgentOccurrence> =
                    read_rows(&require(l, Stage::Identify, "occurrences.csv", Stage::Evaluate)?)?;
                let separation = ingested
                    .iter()
                    .filter(|o| truth.contains_key(&o.occurrence_id))
                    .map(|o| (o.occurrence_id, declared_identifier(o)))
                    .collect();
                report.stages = vec![
                    stage_accounting(EvalStage::Separation, &separation, &truth),
                    stage_accounting(EvalStage::Normalization, &snapshot(&normalized, &truth), &truth),
                    stage_accounting(EvalStage::Identification, &snapshot(&identified, &truth), &truth),
                    stage_accounting(EvalStage::Clustering, &snapshot(&merged, &truth), &truth),
                ];
                report.outcomes = Some(outcome_table(&snapshot(&merged, &truth), &truth));
                truth
            }
            None => declared_truth(&ingested),
        };
        report.set_ratios(&truth, &Clustering::from_resolved(&clusters));
        Ok(report)
    }

    /// Hides the SIRETs of a seeded sample of agents and reruns
    /// normalization, identification and clustering in memory.
    pub fn evaluate_masked(&self) -> Result<(MaskedRun, EvaluationReport)> {
        let l = &self.layout;
        let lots: Vec<LotRecord> = read_rows(&require(l, Stage::Ingest, "lots.csv", Stage::Evaluate)?)?;
        let ingested: Vec<AgentOccurrence> = read_rows(&require(l, Stage::Ingest, "occurrences.csv", Stage::Evaluate)?)?;
        let res = load_resources(&self.config)?;
        let known: Vec<AgentOccurrence> = ingested
            .iter()
            .filter(|o| matches!(declared_identifier(o), Some(Identifier::Siret(_))))
            .cloned()
            .collect();
        let sampled: BTreeSet<u64> =
            sample_ground_truth(&known, self.config.evaluation.sample_per_role, self.config.seed)
                .into_iter()
                .collect();
        let (run, clusters, merged) = masked_rerun(ingested, &sampled, &lots, &res, &self.config)?;

        let mut report = EvaluationReport::default();
        self.corpus_and_coverage(&mut report, &lots)?;
        Self::set_clusters(&mut report, &clusters, &merged);
        report.stages = run.stages.clone();
        report.outcomes = Some(run.outcomes.clone());
        report.set_ratios(&run.masking.truth, &Clustering::from_resolved(&clusters));
        Ok((run, report))
    }
}

/// The masked rerun on its own, for callers holding data in memory.
/// Returns the run, the final clusters and the final occurrences.
pub fn masked_rerun(
    occurrences: Vec<AgentOccurrence>,
    sampled: &BTreeSet<u64>,
    lots: &[LotRecord],
    res: &Resources,
    config: &PipelineConfig,
) -> Result<(MaskedRun, Vec<ResolvedCluster>, Vec<AgentOccurrence>)> {
    let mut clusters = Vec::new();
    let mut final_occs = Vec::new();
    let run = mask_and_rerun(occurrences, sampled, |mut occs, observe| {
        normalize_all(&mut occs, &res.postal, &config.postal_tokens);
        observe(EvalStage::Normalization, &occs)?;
        identify_all(&mut occs, lots, &res.registry, &res.activity, &config.matching);
        observe(EvalStage::Identification, &occs)?;
        let outcome = merge_occurrences(&mut occs, config.merge.threshold, &config.matching.address_weights);
        observe(EvalStage::Clustering, &occs)?;
        clusters = outcome.clusters;
        final_occs = occs.clone();
        Ok(occs)
    })?;
    Ok((run, clusters, final_occs))
}

/// One id per non-empty line; lines starting with `#` are comments.
fn read_id_list(path: &Path) -> Result<BTreeSet<String>> {
    let mut ids = BTreeSet::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            ids.insert(t.to_string());
        }
    }
    Ok(ids)
}

/// Match-log rows of a finished identify stage.
pub fn read_match_log(layout: &Layout) -> Result<Vec<MatchLogEntry>> {
    read_rows(&layout.checkpoint(Stage::Identify, "match_log.csv"))
}

/// Rejected rows of a finished ingest stage.
pub fn read_rejected(layout: &Layout) -> Result<Vec<RejectedRow>> {
    read_rows(&layout.checkpoint(Stage::Ingest, "rejected.csv"))
}

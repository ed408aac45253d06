//! Clustering of similar agent occurrences, per-cluster identifier
//! resolution and field-wise merging into canonical agents.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::identify::{address_score, name_similarity, AddressView, AddressWeights};
use crate::ingest::AgentOccurrence;
use crate::registry::Identifier;

pub const DEFAULT_MERGE_THRESHOLD: f64 = 0.85;

/// Comparison key: first four characters of the first name token, `|`, and
/// the department (`??` when unknown). `None` for an empty name.
pub fn blocking_key(occ: &AgentOccurrence) -> Option<String> {
    let name = occ.normalized_name.as_deref()?;
    let first = name.split(' ').find(|t| !t.is_empty())?;
    let head: String = first.chars().take(4).collect();
    Some(format!("{head}|{}", occ.department.as_deref().unwrap_or("??")))
}

/// Mean of name similarity and address score; an address with no part
/// comparable on both sides scores 0. Occurrences with identical name and
/// address parts score 1 even when those parts are all absent.
pub fn pair_similarity(a: &AgentOccurrence, b: &AgentOccurrence, weights: &AddressWeights) -> f64 {
    let name_a = a.normalized_name.as_deref().unwrap_or("");
    if !name_a.is_empty() && profile(a) == profile(b) {
        return 1.0;
    }
    let name = name_similarity(name_a, b.normalized_name.as_deref().unwrap_or(""));
    let (addr, _) = address_score(AddressView::of_occurrence(a), AddressView::of_occurrence(b), weights);
    0.5 * name + 0.5 * addr
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CaseKind {
    Singleton,
    ConflictingIds,
    AllUnidentified,
    SingleIdentified,
}

impl CaseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseKind::Singleton => "SINGLETON",
            CaseKind::ConflictingIds => "CONFLICTING_IDS",
            CaseKind::AllUnidentified => "ALL_UNIDENTIFIED",
            CaseKind::SingleIdentified => "SINGLE_IDENTIFIED",
        }
    }
}

/// Members are positions into the occurrence slice given to
/// [`cluster_occurrences`], in increasing order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub cluster_id: u64,
    pub members: Vec<usize>,
}

/// Identity of an occurrence as far as pair similarity is concerned.
type Profile<'a> = (
    &'a str,
    Option<&'a str>,
    Option<&'a str>,
    Option<&'a str>,
    Option<&'a str>,
);

fn profile(occ: &AgentOccurrence) -> Profile<'_> {
    (
        occ.normalized_name.as_deref().unwrap_or(""),
        occ.street.as_deref(),
        occ.zipcode.as_deref(),
        occ.city.as_deref(),
        occ.department.as_deref(),
    )
}

/// Transitive closure of `pair_similarity >= threshold` within blocking
/// keys. Occurrences with an empty name stay alone. Clusters are numbered
/// by their smallest member position. Pair scoring runs on the current
/// rayon pool; the union pass is serial in block-key order.
pub fn cluster_occurrences(occurrences: &[AgentOccurrence], threshold: f64, weights: &AddressWeights) -> Vec<Cluster> {
    let mut blocks: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, occ) in occurrences.iter().enumerate() {
        if let Some(key) = blocking_key(occ) {
            blocks.entry(key).or_default().push(i);
        }
    }
    let mut uf = UnionFind::new(occurrences.len());
    let blocks: Vec<Vec<usize>> = blocks.into_values().collect();

    // Identical profiles always score 1 against each other, so each block
    // is reduced to one representative per distinct profile.
    let mut representatives: Vec<Vec<usize>> = Vec::with_capacity(blocks.len());
    for members in &blocks {
        let mut seen: HashMap<Profile<'_>, usize> = HashMap::new();
        let mut reps = Vec::new();
        for &i in members {
            match seen.get(&profile(&occurrences[i])) {
                Some(&rep) => uf.union(rep, i),
                None => {
                    seen.insert(profile(&occurrences[i]), i);
                    reps.push(i);
                }
            }
        }
        representatives.push(reps);
    }

    let edges: Vec<Vec<(usize, usize)>> = representatives
        .par_iter()
        .map(|reps| {
            let mut edges = Vec::new();
            for (x, &a) in reps.iter().enumerate() {
                for &b in &reps[x + 1..] {
                    if pair_similarity(&occurrences[a], &occurrences[b], weights) >= threshold {
                        edges.push((a, b));
                    }
                }
            }
            edges
        })
        .collect();
    for (a, b) in edges.into_iter().flatten() {
        uf.union(a, b);
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut root_first: HashMap<usize, usize> = HashMap::new();
    for i in 0..occurrences.len() {
        let root = uf.find(i);
        let first = *root_first.entry(root).or_insert(i);
        groups.entry(first).or_default().push(i);
    }
    groups
        .into_values()
        .enumerate()
        .map(|(n, members)| Cluster {
            cluster_id: n as u64 + 1,
            members,
        })
        .collect()
}

/// Case of a cluster and the registry identifier it resolves to. `None`
/// means no member carried one; the caller assigns an internal code.
pub fn resolve_cluster(members: &[&AgentOccurrence]) -> (CaseKind, Option<Identifier>) {
    let mut counts: BTreeMap<&Identifier, (usize, usize)> = BTreeMap::new();
    for m in members {
        if let Some(id) = m.identifier.as_ref().filter(|id| id.is_registry()) {
            let e = counts.entry(id).or_insert((0, 0));
            e.0 += 1;
            e.1 = e.1.max(m.completeness());
        }
    }
    let best = counts
        .iter()
        .max_by(|(ida, a), (idb, b)| {
            a.0.cmp(&b.0)
                .then(a.1.cmp(&b.1))
                .then_with(|| idb.to_string().cmp(&ida.to_string()))
        })
        .map(|(id, _)| (*id).clone());
    let kind = if members.len() == 1 {
        CaseKind::Singleton
    } else {
        match counts.len() {
            0 => CaseKind::AllUnidentified,
            1 => CaseKind::SingleIdentified,
            _ => CaseKind::ConflictingIds,
        }
    };
    (kind, best)
}

/// A resolved cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedCluster {
    pub cluster_id: u64,
    pub case_kind: CaseKind,
    pub identifier: Identifier,
    /// Occurrence ids.
    pub members: Vec<u64>,
    pub distinct_identifiers: usize,
}

/// Resolves every cluster (in parallel) and hands out internal codes to
/// the unidentified ones in order of their smallest occurrence id,
/// starting at `U000001`.
pub fn resolve_all(occurrences: &[AgentOccurrence], clusters: &[Cluster]) -> Vec<ResolvedCluster> {
    let resolved: Vec<(CaseKind, Option<Identifier>, usize)> = clusters
        .par_iter()
        .map(|c| {
            let members: Vec<&AgentOccurrence> = c.members.iter().map(|&i| &occurrences[i]).collect();
            let distinct = members
                .iter()
                .filter_map(|m| m.identifier.as_ref().filter(|id| id.is_registry()))
                .collect::<BTreeSet<_>>()
                .len();
            let (kind, id) = resolve_cluster(&members);
            (kind, id, distinct)
        })
        .collect();
    let mut order: Vec<usize> = (0..clusters.len()).filter(|&i| resolved[i].1.is_none()).collect();
    order.sort_by_key(|&i| {
        clusters[i]
            .members
            .iter()
            .map(|&m| occurrences[m].occurrence_id)
            .min()
            .unwrap_or(u64::MAX)
    });
    let mut internal: HashMap<usize, Identifier> = HashMap::with_capacity(order.len());
    for (n, i) in order.into_iter().enumerate() {
        internal.insert(i, Identifier::internal(n as u64 + 1));
    }
    clusters
        .iter()
        .zip(resolved)
        .enumerate()
        .map(|(i, (c, (kind, id, distinct)))| ResolvedCluster {
            cluster_id: c.cluster_id,
            case_kind: kind,
            identifier: id.unwrap_or_else(|| internal[&i].clone()),
            members: c.members.iter().map(|&m| occurrences[m].occurrence_id).collect(),
            distinct_identifiers: distinct,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalAgent {
    pub agent_id: Identifier,
    pub names: BTreeSet<String>,
    pub street: Option<String>,
    pub zipcode: Option<String>,
    pub city: Option<String>,
    pub department: Option<String>,
    pub country: Option<String>,
    pub members: Vec<u64>,
}

/// Most frequent present value; ties go to the value carried by the most
/// complete member, then to the lexicographically smallest.
fn majority<'a>(values: impl Iterator<Item = (Option<&'a str>, usize)>) -> Option<String> {
    let mut stats: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (v, completeness) in values {
        if let Some(v) = v {
            let e = stats.entry(v).or_insert((0, 0));
            e.0 += 1;
            e.1 = e.1.max(completeness);
        }
    }
    // BTreeMap iterates in ascending order, so keeping the first maximum
    // keeps the smallest value among ties.
    let mut best: Option<(&str, (usize, usize))> = None;
    for (v, s) in stats {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((v, s));
        }
    }
    best.map(|(v, _)| v.to_string())
}

/// Combines occurrences sharing one resolved identifier into one agent.
/// Every distinct name is kept; other fields follow the majority rule.
pub fn merge_records(agent_id: Identifier, members: &[&AgentOccurrence]) -> CanonicalAgent {
    let field = |f: fn(&AgentOccurrence) -> Option<&str>| {
        majority(members.iter().map(|m| (f(m), m.completeness())))
    };
    let mut names: BTreeSet<String> = members
        .iter()
        .filter_map(|m| m.normalized_name.clone())
        .collect();
    if names.is_empty() {
        names.extend(members.iter().map(|m| m.raw_name.trim().to_string()).filter(|n| !n.is_empty()));
    }
    let mut ids: Vec<u64> = members.iter().map(|m| m.occurrence_id).collect();
    ids.sort_unstable();
    CanonicalAgent {
        agent_id,
        names,
        street: field(|m| m.street.as_deref()),
        zipcode: field(|m| m.zipcode.as_deref()),
        city: field(|m| m.city.as_deref()),
        department: field(|m| m.department.as_deref()),
        country: field(|m| m.country.as_deref()),
        members: ids,
    }
}

/// Groups occurrences by their (resolved) identifier and merges each group
/// into one agent, sorted by identifier. Occurrences without an identifier
/// are left out.
pub fn canonical_agents(occurrences: &[AgentOccurrence]) -> Vec<CanonicalAgent> {
    let mut by_id: BTreeMap<&Identifier, Vec<&AgentOccurrence>> = BTreeMap::new();
    for occ in occurrences {
        if let Some(id) = &occ.identifier {
            by_id.entry(id).or_default().push(occ);
        }
    }
    by_id
        .into_par_iter()
        .map(|(id, members)| merge_records(id.clone(), &members))
        .collect()
}

/// Output of the merge stage.
#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub clusters: Vec<ResolvedCluster>,
    pub agents: Vec<CanonicalAgent>,
}

/// Clusters, resolves and merges. Every occurrence's identifier is replaced
/// by its cluster's resolved identifier; agents are keyed by identifier and
/// returned sorted by it.
pub fn merge_occurrences(occurrences: &mut [AgentOccurrence], threshold: f64, weights: &AddressWeights) -> MergeOutcome {
    let clusters = cluster_occurrences(occurrences, threshold, weights);
    let resolved = resolve_all(occurrences, &clusters);
    for (c, r) in clusters.iter().zip(&resolved) {
        for &m in &c.members {
            occurrences[m].identifier = Some(r.identifier.clone());
        }
    }
    let agents = canonical_agents(occurrences);
    MergeOutcome {
        clusters: resolved,
        agents,
    }
}

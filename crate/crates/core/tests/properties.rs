//! Property checks of the invariants each stage promises.

mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use chrono::NaiveDate;
use proptest::prelude::*;

use foppa_core::criteria::{
    classify_criterion, extract_price_weight, normalize_weights, repair_lot, ClassifiedCriterion, CriterionClass, Lexicon,
};
use foppa_core::evaluate::{classify_outcome, concentration_ratio, singleton_ratio, Clustering, MatchOutcome};
use foppa_core::identify::{identify_query, name_similarity, AddressWeights, MatchConfig, MatchQuery};
use foppa_core::ingest::{split_joint_agents, AgentFields, AgentOccurrence, LotCriteriaFields, Role};
use foppa_core::merge::{cluster_occurrences, merge_records, resolve_cluster};
use foppa_core::normalize::{department_of, normalize_name, normalize_occurrence, PostalTable};
use foppa_core::registry::{validate_siret, Identifier, Registry, Siret};
use foppa_core::synth::{generate, SynthConfig};

const SEPARATORS: [&str; 2] = [" / ", "---"];

fn separators() -> Vec<String> {
    SEPARATORS.iter().map(|s| s.to_string()).collect()
}

fn small_registry() -> &'static Registry {
    static REG: OnceLock<Registry> = OnceLock::new();
    REG.get_or_init(|| {
        let cfg = SynthConfig {
            seed: 77,
            departments: 3,
            cities_per_department: 4,
            public_entities: 30,
            private_entities: 60,
            decoy_rate: 0.3,
            lots: 1,
            ..SynthConfig::default()
        };
        generate(&cfg).world.registry(2).unwrap()
    })
}

fn query_strategy() -> impl Strategy<Value = MatchQuery> {
    let n = small_registry().facilities().len();
    (
        0..n,
        0..n,
        any::<[bool; 4]>(),
        prop::sample::select(vec!["", " SERVICES", " X"]),
        0i64..9000,
    )
        .prop_map(|(i, j, keep, suffix, days)| {
            let reg = small_registry();
            let f = reg.facility(i);
            let g = reg.facility(j);
            let name = reg.comparison_names(i).first().cloned().unwrap_or_default() + suffix;
            MatchQuery {
                name: normalize_name(&name),
                street: if keep[0] { f.street.clone() } else { g.street.clone() },
                zipcode: if keep[1] { f.zipcode.clone() } else { None },
                city: if keep[2] { f.city.clone() } else { g.city.clone() },
                department: if keep[3] { f.department.clone() } else { g.department.clone() },
                date: NaiveDate::from_ymd_opt(2000, 1, 1).unwrap() + chrono::Days::new(days as u64),
                activities: None,
            }
        })
}

fn occurrence(id: u64, name: &str, city: Option<&str>, zip: Option<&str>, id_digits: Option<&str>) -> AgentOccurrence {
    let mut o = AgentOccurrence::new(id, id, Role::Winner, name.to_string());
    o.city = city.map(str::to_string);
    o.zipcode = zip.map(str::to_string);
    o.department = zip.and_then(department_of);
    o.normalized_name = Some(normalize_name(name)).filter(|n| !n.is_empty());
    o.identifier = id_digits.and_then(validate_siret);
    o
}

fn occurrence_strategy() -> impl Strategy<Value = Vec<AgentOccurrence>> {
    let one = (
        prop::sample::select(vec!["COMMUNE DE LYON", "COMMUNE DE LYONS", "DUPONT SA", "DUPOND SA", "HOPITAL NORD", ""]),
        prop::option::of(prop::sample::select(vec!["LYON", "PARIS"])),
        prop::option::of(prop::sample::select(vec!["69001", "69002", "75008"])),
        prop::option::of(prop::sample::select(vec![
            "21690123400017",
            "21690123400025",
            "55210055400013",
            "216901234",
        ])),
    );
    prop::collection::vec(one, 1..25).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (n, c, z, s))| occurrence(i as u64 + 1, n, c, z, s))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn weight_normalization_is_scale_invariant(
        cents in prop::collection::vec(1u32..100_000, 1..8),
        k in prop::sample::select(vec![1.0, 2.0, 3.0, 10.0, 0.1, 0.25, 100.0, 0.001]),
    ) {
        let w: Vec<f64> = cents.iter().map(|&c| f64::from(c) / 100.0).collect();
        let scaled: Vec<f64> = w.iter().map(|x| x * k).collect();
        let a = normalize_weights(&w).unwrap();
        prop_assert_eq!(normalize_weights(&scaled).unwrap(), a.clone());
        prop_assert!((a.iter().sum::<f64>() - 100.0).abs() <= 0.01);
    }

    #[test]
    fn classification_is_total_and_deterministic(s in "\\PC{0,40}") {
        let lex = Lexicon::default();
        let c = classify_criterion(&s, &lex);
        prop_assert_eq!(c, classify_criterion(&s, &lex));
    }

    #[test]
    fn at_most_one_price_criterion(
        items in prop::collection::vec((any::<bool>(), prop::option::of(0.0f64..100.0)), 0..6),
        cell in prop::option::of("[0-9]{1,2}"),
    ) {
        let criteria = items
            .into_iter()
            .map(|(price, weight)| ClassifiedCriterion {
                raw_name: if price { "Prix".into() } else { "Valeur technique".into() },
                class: if price { CriterionClass::Price } else { CriterionClass::Technical },
                weight,
            })
            .collect();
        let (out, _) = extract_price_weight(cell.as_deref(), criteria);
        prop_assert!(out.iter().filter(|c| c.class == CriterionClass::Price).count() <= 1);
    }

    #[test]
    fn repaired_lots_sum_to_one_hundred(
        parts in prop::collection::vec(("(Prix|Delai|Valeur technique|Qualite)", 1u32..90), 1..5),
    ) {
        let names = parts.iter().map(|p| p.0.as_str()).collect::<Vec<_>>().join(" / ");
        let weights = parts.iter().map(|p| p.1.to_string()).collect::<Vec<_>>().join(" / ");
        let fields = LotCriteriaFields { lot_id: 1, names: Some(names), weights: Some(weights), price_weight: None };
        let out = repair_lot(&fields, &separators(), &Lexicon::default());
        if out.iter().all(|c| c.weight_is_normalized) && !out.is_empty() {
            let sum: f64 = out.iter().filter_map(|c| c.weight).sum();
            prop_assert!((sum - 100.0).abs() <= 0.01, "{sum}");
        }
        prop_assert!(out.iter().filter(|c| c.class == CriterionClass::Price).count() <= 1);
    }

    #[test]
    fn splitting_never_loses_agents(
        names in prop::collection::vec("[A-Z]{1,8}", 1..4),
        cities in prop::option::of(prop::collection::vec("[A-Z]{1,6}", 1..4)),
        sep in prop::sample::select(SEPARATORS.to_vec()),
    ) {
        let fields = AgentFields {
            name: Some(names.join(sep)),
            city: cities.as_ref().map(|c| c.join(sep)),
            ..AgentFields::default()
        };
        let out = split_joint_agents(&fields, &separators());
        prop_assert!(!out.is_empty());
        if names.len() == 1 {
            prop_assert_eq!(out.len(), 1);
            prop_assert!(!out[0].split_conflict);
        } else if cities.as_ref().is_some_and(|c| c.len() != names.len()) {
            prop_assert_eq!(out.len(), 1);
            prop_assert!(out[0].split_conflict);
        } else {
            prop_assert_eq!(out.len(), names.len());
        }
    }

    #[test]
    fn zipcode_fill_never_overwrites(zip in prop::option::of("[0-9]{5}"), city in "(LYON|PARIS|NANTES)") {
        let postal = PostalTable::from_pairs([("LYON", "69001"), ("PARIS", "75001"), ("PARIS", "75002")]);
        let mut occ = AgentOccurrence::new(1, 1, Role::Buyer, "X".into());
        occ.zipcode = zip.clone();
        occ.city = Some(city.clone());
        normalize_occurrence(&mut occ, &postal, &[]);
        match zip {
            Some(z) => prop_assert_eq!(occ.zipcode, Some(z)),
            None if city == "LYON" => prop_assert_eq!(occ.zipcode.as_deref(), Some("69001")),
            None => prop_assert_eq!(occ.zipcode, None),
        }
    }

    #[test]
    fn name_similarity_is_symmetric_and_bounded(a in "[A-E ]{0,16}", b in "[A-E ]{0,16}") {
        let s = name_similarity(&a, &b);
        prop_assert_eq!(s, name_similarity(&b, &a));
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s, oracle::name_sim(&a, &b));
    }

    #[test]
    fn identification_phases_only_narrow(q in query_strategy()) {
        let (_, sizes) = identify_query(&q, small_registry(), &MatchConfig::default());
        prop_assert!(sizes.blocked >= sizes.named);
        prop_assert!(sizes.named >= sizes.addressed);
    }

    #[test]
    fn address_weight_scale_keeps_the_choice(q in query_strategy(), k in 0.1f64..20.0) {
        let base = MatchConfig::default();
        let w = base.address_weights;
        let scaled = AddressWeights { street: w.street * k, zipcode: w.zipcode * k, city: w.city * k }.renormalized();
        let other = MatchConfig { address_weights: scaled, ..base.clone() };
        let pick = |c: &MatchConfig| match identify_query(&q, small_registry(), c).0 {
            foppa_core::identify::MatchResult::Matched { siret, .. } => Some(siret),
            _ => None,
        };
        prop_assert_eq!(pick(&base), pick(&other));
    }

    #[test]
    fn clustering_is_a_partition_matching_closure(occs in occurrence_strategy()) {
        let weights = AddressWeights::default();
        let clusters = cluster_occurrences(&occs, 0.85, &weights);
        let mut seen: Vec<usize> = clusters.iter().flat_map(|c| c.members.iter().copied()).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..occs.len()).collect::<Vec<_>>());

        let mut edges = Vec::new();
        for i in 0..occs.len() {
            for j in i + 1..occs.len() {
                if foppa_core::merge::pair_similarity(&occs[i], &occs[j], &weights) >= 0.85
                    && foppa_core::merge::blocking_key(&occs[i]).is_some()
                    && foppa_core::merge::blocking_key(&occs[i]) == foppa_core::merge::blocking_key(&occs[j])
                {
                    edges.push((i, j));
                }
            }
        }
        let got: BTreeSet<Vec<usize>> = clusters.iter().map(|c| { let mut m = c.members.clone(); m.sort_unstable(); m }).collect();
        prop_assert_eq!(got, oracle::components(occs.len(), &edges));
    }

    #[test]
    fn pair_similarity_is_symmetric(occs in occurrence_strategy()) {
        let w = AddressWeights::default();
        for a in &occs {
            for b in &occs {
                let s = foppa_core::merge::pair_similarity(a, b, &w);
                prop_assert_eq!(s, foppa_core::merge::pair_similarity(b, a, &w));
                prop_assert!((0.0..=1.0).contains(&s));
            }
        }
    }

    #[test]
    fn resolution_never_invents_identifiers(occs in occurrence_strategy()) {
        let members: Vec<&AgentOccurrence> = occs.iter().collect();
        let (_, id) = resolve_cluster(&members);
        if let Some(id) = id {
            prop_assert!(occs.iter().any(|o| o.identifier.as_ref() == Some(&id)));
        }
    }

    #[test]
    fn merged_record_ignores_member_order(occs in occurrence_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut members: Vec<&AgentOccurrence> = occs.iter().collect();
        let a = merge_records(Identifier::internal(1), &members);
        members.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(merge_records(Identifier::internal(1), &members), a);
        let mut shuffled = occs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let refs: Vec<&AgentOccurrence> = shuffled.iter().collect();
        prop_assert_eq!(resolve_cluster(&refs), resolve_cluster(&occs.iter().collect::<Vec<_>>()));
    }

    #[test]
    fn outcomes_are_exclusive_and_exhaustive(pred in prop::option::of("[0-9]{9}|[0-9]{14}"), truth in "[0-9]{14}") {
        let truth: Siret = match validate_siret(&truth) { Some(Identifier::Siret(s)) => s, _ => unreachable!() };
        let pred = pred.as_deref().and_then(validate_siret);
        let o = classify_outcome(pred.as_ref(), &truth);
        prop_assert_eq!(MatchOutcome::ALL.iter().filter(|&&x| x == o).count(), 1);
    }

    #[test]
    fn ratio_extremes(assign in prop::collection::vec(0u64..4, 1..12)) {
        let clustering = Clustering::from_assignments(assign.iter().enumerate().map(|(i, &c)| (i as u64, c)));
        let mut by_cluster: BTreeMap<u64, usize> = BTreeMap::new();
        for &c in &assign {
            *by_cluster.entry(c).or_default() += 1;
        }
        let occs: Vec<u64> = (0..assign.len() as u64).collect();
        let conc = concentration_ratio(&occs, &clustering).unwrap();
        let single = singleton_ratio(&occs, &clustering).unwrap();
        prop_assert_eq!(conc == 1.0, by_cluster.len() == 1);
        prop_assert_eq!(single == 1.0, by_cluster.values().all(|&n| n == 1));
        let one = concentration_ratio(&occs[..1], &clustering).unwrap();
        prop_assert_eq!(one, 1.0);
        prop_assert!(conc > 0.0 && conc <= 1.0 && (0.0..=1.0).contains(&single));
    }
}

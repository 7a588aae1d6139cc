mod common;

use std::collections::BTreeSet;

use common::*;
use evoagent_core::taskenv::{
    bucketize, export_taskcraft, generate_tasks, ingest_taskcraft, parse_taskcraft, stratified_split, GeneratorConfig,
    IngestConfig, Split, TaskSet,
};
use evoagent_core::Error;

fn export(set: &TaskSet) -> Vec<u8> {
    let mut out = Vec::new();
    export_taskcraft(set, &mut out).unwrap();
    out
}

#[test]
fn fixture_ingests_into_five_tiers() {
    let set = ingest_taskcraft(fixture("taskcraft_20.jsonl")).unwrap();
    assert_eq!(set.len(), 20);
    let buckets = bucketize(&set.tasks);
    assert_eq!(buckets.keys().copied().collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    assert!(buckets.values().all(|ids| ids.len() == 4));
    let union: BTreeSet<&String> = buckets.values().flatten().collect();
    assert_eq!(union.len(), set.len());
    // records without an id get one from their line number
    assert!(set.get("tc-00004").is_some());
    assert_eq!(set.get("tc-audit-trail").unwrap().difficulty, 5);
    assert_eq!(set.get("tc-audit-trail").unwrap().composition_depth, 6);
}

#[test]
fn fixture_round_trips_byte_stably() {
    let set = ingest_taskcraft(fixture("taskcraft_20.jsonl")).unwrap();
    let first = export(&set);
    let again = parse_taskcraft(first.as_slice(), &IngestConfig::default()).unwrap();
    assert_eq!(again, set);
    assert_eq!(export(&again), first);
}

#[test]
fn stratification_tolerance_holds() {
    let set = ingest_taskcraft(fixture("taskcraft_20.jsonl")).unwrap();
    let split = stratified_split(&set, [0.6, 0.2, 0.2], 3).unwrap();
    for s in Split::ALL {
        let in_split = split.splits.get(s).len() as f64;
        for (tier, ids) in &split.buckets {
            let count = split.split_bucket(s, *tier).len() as f64;
            let share = ids.len() as f64 / split.len() as f64;
            assert!(
                (count / in_split - share).abs() <= 1.0 / in_split,
                "tier {tier} in {s:?}"
            );
        }
    }
    assert_eq!(split, stratified_split(&set, [0.6, 0.2, 0.2], 3).unwrap());
}

#[test]
fn exact_ratio_split_per_tier() {
    let cfg = GeneratorConfig {
        max_tier: 3,
        per_tier: 100,
        ..GeneratorConfig::default()
    };
    let set = stratified_split(&generate_tasks(&cfg, 1).unwrap(), [0.8, 0.1, 0.1], 2).unwrap();
    for tier in 1..=3 {
        let counts: Vec<usize> = Split::ALL.iter().map(|s| set.split_bucket(*s, tier).len()).collect();
        assert_eq!(counts, vec![80, 10, 10]);
    }
}

#[test]
fn demand_grows_with_tier() {
    let cfg = GeneratorConfig {
        max_tier: 3,
        per_tier: 100,
        ..GeneratorConfig::default()
    };
    let set = generate_tasks(&cfg, 5).unwrap();
    let means: Vec<f64> = (1..=3)
        .map(|tier| {
            let tasks: Vec<_> = set.tasks.iter().filter(|t| t.difficulty == tier).collect();
            tasks.iter().map(|t| t.required_caps.iter().sum::<f64>()).sum::<f64>() / tasks.len() as f64
        })
        .collect();
    assert!(means.windows(2).all(|w| w[1] > w[0]), "{means:?}");
}

#[test]
fn schema_errors_name_the_line() {
    let text = std::fs::read_to_string(fixture("taskcraft_20.jsonl")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[6] = lines[6].replace("\"final_output\"", "\"answer\"");
    let broken = lines.join("\n");
    match parse_taskcraft(broken.as_bytes(), &IngestConfig::default()) {
        Err(Error::Schema { line, message }) => {
            assert_eq!(line, 7);
            assert!(message.contains("final_output"));
        }
        other => panic!("expected a schema error, got {other:?}"),
    }
    assert!(matches!(
        parse_taskcraft("{\"task_description\": \n".as_bytes(), &IngestConfig::default()),
        Err(Error::Parse { line: 1, .. })
    ));
    let dup = format!("{}\n{}\n", lines[0], lines[0]);
    assert!(matches!(
        parse_taskcraft(dup.as_bytes(), &IngestConfig::default()),
        Err(Error::Duplicate(_))
    ));
}

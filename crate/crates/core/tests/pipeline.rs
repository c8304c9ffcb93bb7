use std::collections::HashSet;
use tspsense::baselines::{Baseline, CandidateScores, ScoreSet};
use tspsense::evaluation::evaluate_method;
use tspsense::io::{dataset_checksum, read_dataset, write_dataset};
use tspsense::labeling::{label_dataset, LabelSet};
use tspsense::representations::{
    build_candidate_features, read_activation_cache_for, synth_random_embeddings, write_activation_cache,
};
use tspsense::{generate_instance, Error, Task};

#[test]
fn dataset_to_report_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    let dataset: Vec<_> = (0..6).map(|s| generate_instance(8, s).unwrap()).collect();
    let checksum = write_dataset(&data, &dataset).unwrap();
    assert_eq!(checksum, dataset_checksum(&dataset));
    assert_eq!(read_dataset(&data).unwrap(), dataset);

    for task in [Task::Removal, Task::Forbid] {
        let labels_path = dir.path().join(format!("{task}.labels.jsonl"));
        let summary = label_dataset(&dataset, task, 2, &labels_path, false).unwrap();
        assert!(summary.all_ok());
        assert_eq!(summary.labeled, 6);
        let labels = LabelSet::read(&labels_path).unwrap();
        assert_eq!(labels.len(), 6);

        let oracle: Vec<_> = labels.records.iter().map(CandidateScores::oracle).collect();
        let oracle = ScoreSet::from_scores(&checksum, oracle).unwrap();
        let oracle_path = dir.path().join("oracle.scores.jsonl");
        oracle.write(&oracle_path).unwrap();
        let report = evaluate_method(&ScoreSet::read(&oracle_path).unwrap(), &labels, None).unwrap();
        assert_eq!(report.summary.top1, 1.0);

        for b in Baseline::ALL.iter().filter(|b| b.task() == task) {
            let records = dataset
                .iter()
                .map(|inst| b.score(inst, Some(&labels.get(inst.id()).unwrap().base_tour)))
                .collect::<Result<Vec<_>, _>>()
                .unwrap();
            let set = ScoreSet::from_scores(&checksum, records).unwrap();
            let split: HashSet<String> = dataset[..3].iter().map(|i| i.id().to_string()).collect();
            let report = evaluate_method(&set, &labels, Some(&split)).unwrap();
            assert_eq!(report.summary.instances, 3);
            assert!((0.0..=1.0).contains(&report.summary.top1));
        }
    }
}

#[test]
fn scores_from_another_dataset_are_refused() {
    let a: Vec<_> = (0..2).map(|s| generate_instance(6, s).unwrap()).collect();
    let b: Vec<_> = (10..12).map(|s| generate_instance(6, s).unwrap()).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("labels.jsonl");
    label_dataset(&a, Task::Removal, 1, &path, false).unwrap();
    let labels = LabelSet::read(&path).unwrap();
    let records = b.iter().map(|i| Baseline::NearestNeighbor.score(i, None).unwrap()).collect();
    let scores = ScoreSet::from_scores(&dataset_checksum(&b), records).unwrap();
    assert!(matches!(evaluate_method(&scores, &labels, None), Err(Error::Checksum(_))));
}

#[test]
fn activation_cache_roundtrip_feeds_features() {
    let dataset: Vec<_> = (0..3).map(|s| generate_instance(7, s).unwrap()).collect();
    let cache = synth_random_embeddings(&dataset, 5, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("acts.bin");
    write_activation_cache(&cache, &path).unwrap();
    let back = read_activation_cache_for(&path, &dataset).unwrap();
    assert_eq!(back.dim(), 5);
    let tour: Vec<usize> = (0..7).collect();
    let f = build_candidate_features(&back, &dataset[1], Task::Forbid, Some(&tour)).unwrap();
    assert_eq!((f.rows(), f.dim()), (7, 15));
    let other: Vec<_> = (5..8).map(|s| generate_instance(7, s).unwrap()).collect();
    assert!(read_activation_cache_for(&path, &other).is_err());
}

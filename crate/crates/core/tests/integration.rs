use tempfile::tempdir;

use txid_core::dataprep::SplitSpec;
use txid_core::harness::complexity::run_complexity_report;
use txid_core::harness::data::{time_partition, Pipeline};
use txid_core::harness::sweep::{mst_config, mst_optimizer, run_classification_sweep, Method, SweepSpec};
use txid_core::mst::{evaluate, read_model, train_mst, write_model};
use txid_core::signal::io::{read_corpus, write_corpus};
use txid_core::signal::{generate_corpus, Corpus, CorpusSpec};

fn small_corpus(per_tx: usize) -> Corpus {
    let mut spec = CorpusSpec::desk_default();
    spec.packets_per_tx = per_tx;
    generate_corpus(&spec).unwrap()
}

#[test]
fn sweep_confusions_cover_every_test_sample() {
    let corpus = small_corpus(10);
    let spec = SweepSpec {
        segment_lengths: vec![32],
        train_fractions: vec![0.5],
        methods: vec![Method::Mst2nd, Method::Dnn],
        pipeline: Pipeline::TimeConcat,
        seed: 5,
    };
    let r = run_classification_sweep(&corpus, &spec).unwrap();
    assert_eq!(r.rows.len(), 2);
    for method in ["mst-2nd", "dnn"] {
        let n_test = r.value(&[("method", method)], "n_test").unwrap() as u64;
        let (_, csv) = r
            .artifacts
            .iter()
            .find(|(n, _)| n == &format!("confusion_50-50_w32_{method}.csv"))
            .unwrap();
        let rows: Vec<u64> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').skip(1).map(|v| v.parse::<u64>().unwrap()).sum())
            .collect();
        assert_eq!(rows.len(), 12);
        // Stratified 50/50 of 10 packets: five test packets per transmitter.
        assert!(rows.iter().all(|&s| s == 5));
        assert_eq!(rows.iter().sum::<u64>(), n_test);
    }
    let again = run_classification_sweep(&corpus, &spec).unwrap();
    assert_eq!(r.digest(), again.digest());
}

#[test]
fn corpus_and_model_round_trip_through_disk() {
    let corpus = small_corpus(8);
    let dir = tempdir().unwrap();
    write_corpus(&dir.path().join("corpus"), &corpus).unwrap();
    let back = read_corpus(&dir.path().join("corpus")).unwrap();
    assert_eq!(back.packets.len(), corpus.packets.len());
    assert_eq!(back.manifest.spec, corpus.manifest.spec);

    let part = time_partition(&back.packets, 64, Pipeline::TimeConcat, &SplitSpec::new(0.5, 3)).unwrap();
    let cfg = mst_config(2, 12).unwrap();
    let (model, _) = train_mst(&part.fit, Some(&part.val), &cfg, &mst_optimizer(2, 9).unwrap(), 9).unwrap();
    let mdir = dir.path().join("model");
    write_model(&mdir, &model, Some(part.norm.clone()), None, serde_json::json!({})).unwrap();
    let loaded = read_model(&mdir).unwrap();
    assert_eq!(loaded.model.config_hash(), model.config_hash());
    let a = evaluate(&model, &part.test).unwrap();
    let b = evaluate(&loaded.model, &part.test).unwrap();
    assert_eq!(a, b);
    assert_eq!(loaded.norm, Some(part.norm));
}

#[test]
fn complexity_report_files() {
    let r = run_complexity_report().unwrap();
    let dir = tempdir().unwrap();
    r.write(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("complexity.csv")).unwrap();
    assert!(csv.starts_with("item,value,published,flag\n"));
    assert!(csv.contains("total_from_published_stage_counts,675900,674480,mismatch"));
    let notes = std::fs::read_to_string(dir.path().join("complexity_notes.txt")).unwrap();
    assert!(notes.contains("674480"));
}

use keysense_core::classifier::{ClassifierParams, ForestParams};
use keysense_core::corpus::label_records;
use keysense_core::evaluation::cross_validate;
use keysense_core::features::DEFAULT_PAUSE_THRESHOLD_MS;
use keysense_core::fusion::{
    load_suite, predict_message, save_suite, train_suite, LabeledRow, Mode, Target,
};
use keysense_core::synth::{generate_corpus, CorpusConfig};

fn params() -> ClassifierParams {
    ClassifierParams::Forest(ForestParams {
        n_trees: 40,
        ..ForestParams::default()
    })
}

fn rows(kd_signal: bool, text_signal: bool) -> Vec<LabeledRow> {
    let corpus = generate_corpus(&CorpusConfig {
        kd_signal,
        text_signal,
        ..Default::default()
    });
    label_records(&corpus, DEFAULT_PAUSE_THRESHOLD_MS).unwrap()
}

/// Mean balanced accuracy over the seven category binaries.
fn binary_balanced_accuracy(rows: &[LabeledRow], mode: Mode) -> f64 {
    let cv = cross_validate(rows, 5, mode, &params(), 42).unwrap();
    let binaries: Vec<f64> = Target::ALL
        .iter()
        .filter(|t| t.is_binary())
        .map(|t| cv.summary_for(*t).balanced_accuracy.mean)
        .collect();
    binaries.iter().sum::<f64>() / binaries.len() as f64
}

#[test]
fn signal_in_one_channel_is_seen_only_by_that_channel() {
    let kd_only = rows(true, false);
    let text = binary_balanced_accuracy(&kd_only, Mode::Text);
    let kd = binary_balanced_accuracy(&kd_only, Mode::Kd);
    assert!((text - 0.5).abs() <= 0.07, "text-only on kd signal: {text}");
    assert!(kd >= 0.65, "kd-only on kd signal: {kd}");

    let text_only = rows(false, true);
    let text = binary_balanced_accuracy(&text_only, Mode::Text);
    let kd = binary_balanced_accuracy(&text_only, Mode::Kd);
    assert!((kd - 0.5).abs() <= 0.07, "kd-only on text signal: {kd}");
    assert!(text >= 0.65, "text-only on text signal: {text}");
}

#[test]
fn predictions_reproducible_through_saved_suite() {
    let rows = rows(true, true);
    let (train, test) = rows.split_at(600);
    let a = train_suite(train, Mode::Fusion, &params(), 42).unwrap();
    let b = train_suite(train, Mode::Fusion, &params(), 42).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_suite(&a, dir.path()).unwrap();
    let loaded = load_suite(dir.path()).unwrap();
    for r in test {
        let input = r.input(Mode::Fusion);
        let id = &r.features.message_id;
        let pa = serde_json::to_vec(&predict_message(&a, id, &input).unwrap()).unwrap();
        let pb = serde_json::to_vec(&predict_message(&b, id, &input).unwrap()).unwrap();
        let pl = serde_json::to_vec(&predict_message(&loaded, id, &input).unwrap()).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(pa, pl);
    }
    let c = train_suite(train, Mode::Fusion, &params(), 43).unwrap();
    assert_ne!(
        a.model(Target::Valence).to_bytes(),
        c.model(Target::Valence).to_bytes()
    );
}

#[test]
fn feature_dictionary_doc_lists_columns_in_order() {
    let doc = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/feature-dictionary.md")).unwrap();
    let documented: Vec<&str> = doc
        .lines()
        .filter_map(|l| {
            let cells: Vec<&str> = l.split('|').map(str::trim).collect();
            (cells.len() > 3 && cells[1].parse::<usize>().is_ok()).then(|| cells[2])
        })
        .collect();
    assert_eq!(documented, keysense_core::fusion::fused_feature_names());
}

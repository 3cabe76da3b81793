use keysense_core::corpus::label_records;
use keysense_core::features::{extract_keystroke_features, DEFAULT_PAUSE_THRESHOLD_MS};
use keysense_core::model::{validate_event_stream, EmotionCategory};
use keysense_core::synth::{generate_corpus, generate_message, profile, profiles, CorpusConfig};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_windows_are_clean(seed in any::<u64>(), c in 0usize..7, hard in any::<bool>()) {
        let p = profiles(hard).remove(c);
        let (msg, window, gold) = generate_message(&p, seed);
        let v = validate_event_stream(window.events.clone()).unwrap();
        prop_assert_eq!(v.orphan_releases, 0);
        prop_assert_eq!(v.closed_presses, 0);
        prop_assert_eq!(v.events, window.events);
        prop_assert!(gold.validate().is_ok());
        prop_assert!(msg.validate().is_ok());
        prop_assert_eq!(gold.labels, p.gold_labels());
    }
}

fn mean_kps(categories: &[EmotionCategory], samples: usize) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for (i, c) in categories.iter().cycle().take(samples).enumerate() {
        let (_, w, _) = generate_message(&profile(*c), 10_000 + i as u64);
        total += extract_keystroke_features(&w, DEFAULT_PAUSE_THRESHOLD_MS).keys_per_second;
        n += 1;
    }
    total / n as f64
}

#[test]
fn high_arousal_types_faster() {
    use EmotionCategory::*;
    let high: Vec<_> = EmotionCategory::ALL
        .into_iter()
        .filter(|c| profile(*c).arousal.value() == 1)
        .collect();
    let low: Vec<_> = EmotionCategory::ALL
        .into_iter()
        .filter(|c| profile(*c).arousal.value() == -1)
        .collect();
    assert!(high.contains(&Anger) && low.contains(&Sadness));
    assert!(mean_kps(&high, 500) > mean_kps(&low, 500));
}

#[test]
fn signal_off_decouples_typing_from_gold() {
    let rows = |kd_signal| {
        let corpus = generate_corpus(&CorpusConfig {
            per_category: [150; 7],
            kd_signal,
            ..Default::default()
        });
        label_records(&corpus, DEFAULT_PAUSE_THRESHOLD_MS).unwrap()
    };
    let spread = |rows: &[keysense_core::fusion::LabeledRow]| {
        let means: Vec<f64> = EmotionCategory::ALL
            .iter()
            .map(|c| {
                let v: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.gold.as_ref().unwrap().labels.contains(*c))
                    .map(|r| r.features.kd.keys_per_second)
                    .collect();
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect();
        means.iter().cloned().fold(f64::MIN, f64::max) - means.iter().cloned().fold(f64::MAX, f64::min)
    };
    let on = spread(&rows(true));
    let off = spread(&rows(false));
    assert!(on > 3.0, "{on}");
    assert!(off < 1.0, "{off}");
}

#[test]
fn hard_mode_narrows_separation() {
    let easy = profiles(false);
    let hard = profiles(true);
    let range = |ps: &[keysense_core::synth::EmotionProfile]| {
        let r: Vec<f64> = ps.iter().map(|p| p.typing_rate.mean).collect();
        r.iter().cloned().fold(f64::MIN, f64::max) - r.iter().cloned().fold(f64::MAX, f64::min)
    };
    assert!(range(&hard) < range(&easy) * 0.5);
}

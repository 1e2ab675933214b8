use dialogue_reward_web::{distort_dialogue, feature_heatmap, sample_corpus, train_tiny};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn distortion_panel_reports_score_and_replacements() {
    let corpus = sample_corpus();
    let clean = parse(distort_dialogue(&corpus, 0, 0, 1));
    assert_eq!(clean["dialogues"], 5);
    let turns = clean["turns"].as_array().unwrap().len() as i64;
    assert_eq!(clean["score"], turns);
    assert!(clean["turns"].as_array().unwrap().iter().all(|t| t["replaced"] == false));

    for n in 1..=turns as usize {
        let v = parse(distort_dialogue(&corpus, 0, n, 1));
        let replaced = v["turns"]
            .as_array()
            .unwrap()
            .iter()
            .take_while(|t| t["replaced"] == true)
            .count();
        assert_eq!(replaced, n);
        assert_eq!(v["score"], turns - 2 * n as i64);
    }
    assert_eq!(distort_dialogue(&corpus, 0, 2, 9), distort_dialogue(&corpus, 0, 2, 9));
}

#[test]
fn distortion_panel_reports_errors_as_json() {
    let corpus = sample_corpus();
    assert!(parse(distort_dialogue(&corpus, 99, 0, 1))["error"].is_string());
    assert!(parse(distort_dialogue(&corpus, 0, 99, 1))["error"].is_string());
    assert!(parse(distort_dialogue("A: only\n", 0, 0, 1))["error"].is_string());
}

#[test]
fn heatmap_has_one_row_per_history_slot() {
    let v = parse(feature_heatmap(30, 2, 4));
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 30);
    assert!(rows.iter().all(|r| r.as_array().unwrap().len() == 16));
    let turns = v["turns"].as_u64().unwrap() as usize;
    let pad = 30usize.saturating_sub(2 * turns);
    assert!(rows[..pad]
        .iter()
        .all(|r| r.as_array().unwrap().iter().all(|x| x == 0.0)));
    let labels = v["labels"].as_array().unwrap();
    assert_eq!(labels.len(), 30);
    assert_eq!(labels.iter().filter(|l| l.as_str().unwrap().ends_with('*')).count(), 2);
    assert!(parse(feature_heatmap(0, 0, 0))["error"].is_string());
}

#[test]
fn tiny_training_learns_with_long_history() {
    let long = parse(train_tiny(25, 20, 0));
    let short = parse(train_tiny(1, 20, 0));
    assert_eq!(
        long["scatter"].as_array().unwrap().len() as u64,
        long["test_examples"].as_u64().unwrap()
    );
    assert!(long["epochs"].as_array().unwrap().len() <= 20);
    let (rl, rs) = (long["pearson_r"].as_f64().unwrap(), short["pearson_r"].as_f64().unwrap());
    assert!(rl > rs + 0.2, "r(25)={rl} r(1)={rs}");
}

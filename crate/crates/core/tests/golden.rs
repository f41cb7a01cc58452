//! Logits of a fixed model on a fixed input, frozen in `data/golden_logits.json`.
//! Run with `MHQG_BLESS=1` to rewrite the file after an intended change.

use std::path::PathBuf;

use mhqg::layers::Dropout;
use mhqg::model::{ModelConfig, Seq2Seq};
use mhqg::relevance::{RelevanceKind, RelevanceVector};

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_logits.json")
}

fn current_logits() -> Vec<Vec<f64>> {
    let model = Seq2Seq::init(ModelConfig {
        d_model: 16,
        heads: 2,
        ffn_dim: 32,
        dropout: 0.0,
        seed: 11,
        ..ModelConfig::tiny(24)
    })
    .unwrap();
    let source = [7u32, 8, 9, 10, 11, 8, 3, 9, 10];
    let bias = RelevanceVector::new(
        vec![0.0, 0.3, 1.3, 1.3, 0.0, 0.2, 0.0, 0.0, 0.0],
        RelevanceKind::Mixed,
    );
    let target_in = [1u32, 12, 13, 14, 9];
    let (logits, _) = model
        .forward(&source, None, &target_in, &bias, &mut Dropout::off())
        .unwrap();
    (0..logits.rows()).map(|r| logits.row(r).to_vec()).collect()
}

#[test]
fn logits_match_frozen_values() {
    let logits = current_logits();
    if std::env::var_os("MHQG_BLESS").is_some() {
        std::fs::create_dir_all(golden_path().parent().unwrap()).unwrap();
        std::fs::write(golden_path(), serde_json::to_string_pretty(&logits).unwrap()).unwrap();
    }
    let frozen: Vec<Vec<f64>> = serde_json::from_str(&std::fs::read_to_string(golden_path()).unwrap()).unwrap();
    assert_eq!(frozen.len(), logits.len());
    for (a, b) in frozen.iter().flatten().zip(logits.iter().flatten()) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

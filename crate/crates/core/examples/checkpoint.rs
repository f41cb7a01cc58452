//! Save a generator with its optimizer state, reload it, and confirm the
//! reloaded copy continues training bit-identically.

use mhqg::data::{SourceEncoding, END, START};
use mhqg::model::{Checkpoint, CheckpointHeader, ModelConfig, Seq2Seq, TrainConfig, TrainExample, Trainer, FORMAT_VERSION};
use mhqg::relevance::RelevanceVector;

fn main() -> mhqg::Result<()> {
    let ex = TrainExample {
        id: "x".into(),
        source: SourceEncoding {
            ids: vec![10, 11, 12, 3, 12],
            context: 0..3,
            answer: 4..5,
            truncated: false,
        },
        target: vec![START, 20, 21, END],
        relevance: RelevanceVector::zeros(5),
        joint: None,
    };
    let tc = TrainConfig {
        lr: 1e-3,
        accumulation: 1,
        ..TrainConfig::default()
    };
    let mut a = Trainer::new(Seq2Seq::init(ModelConfig::tiny(40))?, &tc);
    for _ in 0..3 {
        a.train_step(std::slice::from_ref(&ex))?;
    }

    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        kind: "generator".into(),
        config: serde_json::to_value(a.model.config).expect("config"),
        vocab_hash: String::new(),
        rng_state: Some(a.dropout_rng().state()),
        epoch: 0,
        step: a.steps,
        adam: None,
    };
    let path = std::env::temp_dir().join("mhqg-example.ckpt");
    Checkpoint::capture(header, &a.model, Some(&a.adam)).save(&path)?;

    let loaded = Checkpoint::load(&path)?;
    let mut b = Trainer::new(Seq2Seq::init(ModelConfig::tiny(40))?, &tc);
    loaded.restore(&mut b.model)?;
    loaded.restore_adam(&b.model, &mut b.adam)?;
    b.set_dropout_rng(mhqg::numeric::Rng::from_state(loaded.header.rng_state.expect("rng")));
    println!("{} arrays, {} bytes", loaded.arrays.len(), std::fs::metadata(&path).map_or(0, |m| m.len()));

    let la = a.train_step(std::slice::from_ref(&ex))?;
    let lb = b.train_step(std::slice::from_ref(&ex))?;
    println!("next loss: original {la:.12}, reloaded {lb:.12}, identical {}", la.to_bits() == lb.to_bits());

    let wrong = Seq2Seq::init(ModelConfig::tiny(41))?;
    let mut wrong = wrong;
    println!("restore into a different shape: {}", loaded.restore(&mut wrong).unwrap_err());
    std::fs::remove_file(path).ok();
    Ok(())
}

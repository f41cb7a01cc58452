//! Train the extractive span predictor on synthetic data and read off
//! its start/end distributions.

use mhqg::data::{assemble_source, build_vocab, gen_synthetic_split, ContextMode, Split};
use mhqg::qa::{gold_span, QaExample, QaModel, QaModelConfig, QaTrainConfig, QaTrainer};

fn main() -> mhqg::Result<()> {
    let train = gen_synthetic_split(300, 5, Split::Train);
    let test = gen_synthetic_split(50, 5, Split::Test);
    let vocab = build_vocab(&train, 1)?;
    let to_qa = |exs: &[mhqg::data::Example]| -> mhqg::Result<Vec<QaExample>> {
        let mut out = Vec::new();
        for e in exs {
            let src = assemble_source(e, ContextMode::FullDocument, &vocab, 512)?;
            if let Some(gold) = gold_span(src.context_ids(), src.answer_ids()) {
                out.push(QaExample {
                    id: e.id.clone(),
                    question: vocab.encode(&e.question),
                    context: src.context_ids().to_vec(),
                    gold,
                });
            }
        }
        Ok(out)
    };
    let (train_qa, test_qa) = (to_qa(&train)?, to_qa(&test)?);

    let cfg = QaTrainConfig {
        epochs: 4,
        ..QaTrainConfig::default()
    };
    let mut trainer = QaTrainer::new(QaModel::init(QaModelConfig::tiny(vocab.len()))?, &cfg);
    for (epoch, loss) in trainer.fit(&train_qa, &cfg)?.iter().enumerate() {
        println!("epoch {}: loss {loss:.4}", epoch + 1);
    }

    let mut exact = 0;
    for ex in &test_qa {
        let d = trainer.model.predict(&ex.question, &ex.context)?.dist;
        exact += usize::from(d.argmax_start() == ex.gold.start && d.argmax_end() == ex.gold.end);
    }
    println!("held-out exact span match: {exact}/{}", test_qa.len());

    let ex = &test_qa[0];
    let d = trainer.model.predict(&ex.question, &ex.context)?.dist;
    let (s, e) = (d.argmax_start(), d.argmax_end());
    println!(
        "{:?} -> {:?} (p_start {:.3}, p_end {:.3})",
        vocab.decode(&ex.question).join(" "),
        vocab.decode(&ex.context[s..=e.max(s)]).join(" "),
        d.p_start[s],
        d.p_end[e]
    );
    Ok(())
}

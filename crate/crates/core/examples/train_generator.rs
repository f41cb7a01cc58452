//! Overfit the tiny generator on 32 synthetic examples, then decode them
//! greedily.

use mhqg::data::{assemble_source, build_vocab, detokenize, gen_synthetic, ContextMode, END, START};
use mhqg::decoding::generate_greedy;
use mhqg::model::{ModelConfig, Seq2Seq, TrainConfig, TrainExample, Trainer};
use mhqg::relevance::{build_hard_attention, find_answer_spans, RelevanceConfig};

fn main() -> mhqg::Result<()> {
    let corpus = gen_synthetic(32, 1);
    let vocab = build_vocab(&corpus, 1)?;
    let mut examples = Vec::new();
    for e in &corpus {
        let source = assemble_source(e, ContextMode::SupportingFacts, &vocab, 200)?;
        let spans = find_answer_spans(source.context_ids(), source.answer_ids())?;
        let relevance = build_hard_attention(&source, &spans, &RelevanceConfig::default())?;
        let mut target = vec![START];
        target.extend(vocab.encode(&e.question));
        target.push(END);
        examples.push(TrainExample {
            id: e.id.clone(),
            source,
            target,
            relevance,
            joint: None,
        });
    }

    let model = Seq2Seq::init(ModelConfig {
        dropout: 0.0,
        ..ModelConfig::tiny(vocab.len())
    })?;
    let tc = TrainConfig {
        lr: 2e-3,
        accumulation: 1,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, &tc);
    for step in 1..=300 {
        let batch = &examples[(step * 8) % 32..][..8];
        let loss = trainer.train_step(batch)?;
        if step % 50 == 0 {
            println!("step {step:>3}: loss {loss:.4}");
        }
    }

    let mut exact = 0;
    for ex in &examples {
        let hyp = generate_greedy(&trainer.model, &ex.source.ids, &ex.relevance, 32, 0)?;
        exact += usize::from(hyp.content() == &ex.target[1..ex.target.len() - 1]);
    }
    let first = generate_greedy(&trainer.model, &examples[0].source.ids, &examples[0].relevance, 32, 0)?;
    println!("{}", detokenize(&vocab.decode(first.content())));
    println!("exact match on the training set: {exact}/32");
    Ok(())
}

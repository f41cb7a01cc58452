//! Train a span predictor on full-document synthetic data and check where
//! its soft relevance peaks: inside a gold supporting sentence or not.

use mhqg::cli::{inspect_example, prepare, RunConfig};
use mhqg::data::{build_vocab, gen_synthetic_split, ContextMode, Split};
use mhqg::qa::{gold_span, QaExample, QaModel, QaTrainer};

fn main() -> mhqg::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.data.mode = ContextMode::FullDocument;
    cfg.qa.epochs = 4;
    let train = gen_synthetic_split(400, 2, Split::Train);
    let test = gen_synthetic_split(40, 2, Split::Test);
    let vocab = build_vocab(&train, 1)?;

    let qa_examples: Vec<QaExample> = prepare(&train, &vocab, &cfg)?
        .into_iter()
        .filter_map(|p| {
            let gold = gold_span(p.source.context_ids(), p.source.answer_ids())?;
            Some(QaExample {
                id: p.example.id,
                question: p.question,
                context: p.source.context_ids().to_vec(),
                gold,
            })
        })
        .collect();
    let schedule = cfg.qa.schedule(cfg.seed);
    let mut trainer = QaTrainer::new(QaModel::init(cfg.qa.model(vocab.len(), cfg.seed))?, &schedule);
    trainer.fit(&qa_examples, &schedule)?;

    let mut inside = 0;
    for ex in &test {
        let r = inspect_example(ex, &vocab, &cfg, &trainer.model, None)?;
        inside += usize::from(r.soft_argmax_supporting);
    }
    println!("soft argmax inside a supporting sentence: {inside}/{}", test.len());

    let r = inspect_example(&test[0], &vocab, &cfg, &trainer.model, None)?;
    println!("{}  [{}]", r.question, r.a_soft_label);
    for i in 0..r.tokens.len() {
        let bar = "#".repeat((r.a_soft[i] * 40.0).round() as usize);
        let mark = if r.supporting[i] { '*' } else { ' ' };
        println!("{mark} {:>10} {:>4.1} {:.3} {bar}", r.tokens[i], r.a_hard[i], r.a_soft[i]);
    }
    Ok(())
}

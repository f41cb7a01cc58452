//! Hard, soft and mixed relevance for one synthetic example.

use mhqg::data::{assemble_source, build_vocab, gen_synthetic, ContextMode};
use mhqg::qa::{qa_forward, QaModel, QaModelConfig};
use mhqg::relevance::{build_hard_attention, build_soft_attention, find_answer_spans, mix_attention, RelevanceConfig};

fn main() -> mhqg::Result<()> {
    let examples = gen_synthetic(4, 3);
    let vocab = build_vocab(&examples, 1)?;
    let ex = &examples[0];
    let src = assemble_source(ex, ContextMode::SupportingFacts, &vocab, 200)?;
    let cfg = RelevanceConfig::default();

    let spans = find_answer_spans(src.context_ids(), src.answer_ids())?;
    let hard = build_hard_attention(&src, &spans, &cfg)?;

    // an untrained span predictor: close to uniform
    let qa = QaModel::init(QaModelConfig::tiny(vocab.len()))?;
    let dist = qa_forward(&qa, &vocab.encode(&ex.question), src.context_ids())?;
    let soft = build_soft_attention(&dist, &src)?;
    let mixed = mix_attention(&hard, &soft, cfg.alpha)?;

    println!("answer: {}", ex.answer);
    println!("{:>12} {:>5} {:>7} {:>7}", "token", "hard", "soft", "mixed");
    for i in 0..src.len() {
        println!(
            "{:>12} {:>5.1} {:>7.4} {:>7.4}",
            vocab.token(src.ids[i]),
            hard.scores()[i],
            soft.scores()[i],
            mixed.scores()[i]
        );
    }
    println!("sum of soft = {:.12}", soft.sum());
    Ok(())
}

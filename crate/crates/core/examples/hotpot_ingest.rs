//! Read a HotpotQA-format file and assemble encoder inputs in both context
//! modes. Pass a path, or run without one to use a generated record.

use mhqg::data::{assemble_source, build_vocab, gen_synthetic, load_hotpot_with_report, ContextMode};

fn main() -> mhqg::Result<()> {
    let examples = match std::env::args().nth(1) {
        Some(path) => {
            let (examples, dropped) = load_hotpot_with_report(path.as_ref())?;
            for d in dropped {
                eprintln!("dropped {}: {}", d.id, d.reason);
            }
            examples
        }
        None => gen_synthetic(3, 9),
    };
    let vocab = build_vocab(&examples, 1)?;
    println!("{} examples, vocabulary of {}", examples.len(), vocab.len());

    let ex = &examples[0];
    println!("question: {}\nanswer:   {}", ex.question, ex.answer);
    for mode in [ContextMode::SupportingFacts, ContextMode::FullDocument] {
        let src = assemble_source(ex, mode, &vocab, mode.default_max_len())?;
        println!(
            "{mode:?}: {} tokens, context {:?}, answer {:?}, truncated {}",
            src.len(),
            src.context,
            src.answer,
            src.truncated
        );
        println!("  {}", vocab.decode(&src.ids).join(" "));
    }
    Ok(())
}

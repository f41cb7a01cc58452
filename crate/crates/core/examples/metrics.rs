//! Corpus BLEU-1..4 and ROUGE-L on a handful of questions.

use mhqg::data::tokenize;
use mhqg::metrics::{bleu, evaluate_texts, rouge_l, GeneratedLine, MetricsConfig};

fn main() -> mhqg::Result<()> {
    let b = bleu(&[vec!["the", "cat", "sat"]], &[vec!["the", "cat", "sat", "down"]], 3)?;
    println!("BLEU-3 = {:.6} (exp(-1/3) = {:.6})", b[2], (-1.0f64 / 3.0).exp());
    println!("ROUGE-L = {:.6}", rouge_l(&["a", "b", "c", "d"], &["a", "c", "d"])?);

    let refs = vec![
        GeneratedLine::new("q1", "Where is the mayor of Kalo located?"),
        GeneratedLine::new("q2", "Who founded the company that owns Dorsel?"),
    ];
    let gen = vec![
        GeneratedLine::new("q2", "Who founded the company owning Dorsel?"),
        GeneratedLine::new("q1", "Where is the mayor of Kalo?"),
    ];
    println!("{:?}", tokenize(&gen[0].text));
    print!("{}", evaluate_texts(gen, refs, &MetricsConfig::default())?.to_json());
    Ok(())
}

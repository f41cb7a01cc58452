//! Beam search over a hand-written next-token table, checked against
//! exhaustive enumeration and greedy decoding.

use mhqg::decoding::{beam_search, exhaustive_search, greedy, BeamConfig, TableScorer};

fn main() -> mhqg::Result<()> {
    // vocabulary {0, 1, 2}, token 2 ends the sequence
    let scorer = TableScorer {
        vocab: 3,
        end: 2,
        table: |prefix: &[u32]| -> Vec<f64> {
            let p: [f64; 3] = match prefix {
                [] => [0.5, 0.45, 0.05],
                [0] => [0.2, 0.2, 0.6],
                [1] => [0.025, 0.025, 0.95],
                _ => [0.1, 0.1, 0.8],
            };
            p.iter().map(|x| x.ln()).collect()
        },
    };
    let cfg = BeamConfig {
        beam_size: 2,
        max_len: 4,
        min_len: 0,
        length_penalty: 1.0,
    };
    let g = greedy(&scorer, cfg.max_len, cfg.min_len)?;
    let b = beam_search(&scorer, &cfg)?;
    let x = exhaustive_search(&scorer, &cfg)?;
    println!("greedy     {:?} logprob {:.4}", g.tokens, g.logprob);
    println!("beam 2     {:?} logprob {:.4}", b.tokens, b.logprob);
    println!("exhaustive {:?} logprob {:.4}", x.tokens, x.logprob);

    let long = BeamConfig { min_len: 3, ..cfg };
    println!("min_len 3  {:?}", beam_search(&scorer, &long)?.tokens);
    Ok(())
}

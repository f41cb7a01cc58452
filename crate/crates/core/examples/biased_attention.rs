//! Cross-attention with an additive relevance bias.
//!
//! Adds a relevance vector to every head's scores and shows two things:
//! attention mass moves toward the tagged keys, and a constant shift of the
//! vector changes nothing.

use mhqg::attention::{biased_cross_attention, AttentionConfig, MultiHeadAttention};
use mhqg::layers::normal_matrix;
use mhqg::numeric::Rng;
use mhqg::relevance::{RelevanceKind, RelevanceVector};

fn main() -> mhqg::Result<()> {
    let mut rng = Rng::new(7);
    let attn = MultiHeadAttention::new(AttentionConfig::new(16, 4)?, &mut rng)?;
    let h_dec = normal_matrix(3, 16, 1.0, &mut rng);
    let h_enc = normal_matrix(6, 16, 1.0, &mut rng);

    let kv = attn.project_kv(&h_enc, &h_enc)?;
    let q = attn.q.forward(&h_dec)?;
    let flat = vec![0.0; 6];
    let tagged = vec![0.0, 0.0, 3.0, 3.0, 0.0, 0.0];
    for (name, bias) in [("no bias", &flat), ("keys 2,3 tagged", &tagged)] {
        let (_, probs) = attn.forward_cached(&q, &kv, None, Some(bias))?;
        let mass: f64 = probs.iter().map(|p| (0..3).map(|r| p.get(r, 2) + p.get(r, 3)).sum::<f64>()).sum();
        println!("{name:>16}: mean weight on keys 2,3 = {:.3}", mass / 12.0);
    }

    let a = RelevanceVector::new(tagged.clone(), RelevanceKind::Hard);
    let base = biased_cross_attention(&attn, &h_dec, &h_enc, &a, None)?;
    let shifted = biased_cross_attention(&attn, &h_dec, &h_enc, &a.shifted(-41.5), None)?;
    println!("max |out(A) - out(A - 41.5)| = {:.2e}", base.max_abs_diff(&shifted));
    Ok(())
}

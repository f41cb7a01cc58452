//! Finite-difference check of the full generator, biased cross-attention
//! included.

use mhqg::data::PAD;
use mhqg::layers::Dropout;
use mhqg::model::{ModelConfig, Seq2Seq};
use mhqg::numeric::{cross_entropy_loss, grad_check, jitter_params, Rng};
use mhqg::relevance::{RelevanceKind, RelevanceVector};

fn main() -> mhqg::Result<()> {
    let mut rng = Rng::new(3);
    let mut model = Seq2Seq::init(ModelConfig::grad_check(16))?;
    // spread the weights so attention gradients rise above rounding noise
    jitter_params(&mut model, 0.3, &mut rng);

    let src = [5u32, 6, 7, 8, 3, 9, 10];
    let a = RelevanceVector::new(vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.4, 0.0], RelevanceKind::Mixed);
    let tgt = [1u32, 11, 12, 5, 2];
    let loss = |m: &mut Seq2Seq, grad: bool| {
        let (logits, cache) = m.forward(&src, None, &tgt[..4], &a, &mut Dropout::off())?;
        let (l, dl) = cross_entropy_loss(&logits, &tgt[1..], PAD)?;
        if grad {
            m.backward(&cache, &dl)?;
        }
        Ok(l)
    };
    let report = grad_check(&mut model, loss, 400, 1e-5, &mut rng)?;
    println!(
        "checked {}, skipped {}, max relative error {:.2e} at {:?}",
        report.checked, report.skipped, report.max_rel_error, report.worst
    );
    Ok(())
}

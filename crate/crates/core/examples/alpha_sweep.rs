//! A small alpha sweep on the synthetic corpus: one model per alpha,
//! same seed and data. Writes sweep.tsv and sweep.csv under the output
//! directory (default: a temporary one).

use mhqg::cli::{run_alpha_sweep, run_make_synthetic, RunConfig, SyntheticSizes};

fn main() -> mhqg::Result<()> {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = std::env::args().nth(1).map_or_else(|| tmp.path().to_path_buf(), Into::into);
    let sizes = SyntheticSizes {
        train: 200,
        dev: 0,
        test: 50,
    };
    let config_path = run_make_synthetic(&root.join("data"), sizes, 4)?;
    let mut cfg = RunConfig::layered(Some(&config_path), &[])?;
    cfg.output_dir = root.join("sweep");
    cfg.train.epochs = 3;
    cfg.train.lr = 1e-3;
    cfg.train.accumulation = 1;
    cfg.qa.epochs = 3;

    let rows = run_alpha_sweep(&cfg, &[0.0, 0.3, 0.5, 0.7, 1.0])?;
    println!("alpha  BLEU-4  ROUGE-L");
    for r in rows {
        println!("{:.2}   {:.4}  {:.4}", r.alpha, r.bleu_4, r.rouge_l);
    }
    print!("{}", std::fs::read_to_string(cfg.output_dir.join("sweep.csv")).expect("sweep.csv"));
    Ok(())
}

//! Tokenization, vocabulary, HotpotQA-format I/O, encoder input assembly
//! and the synthetic two-hop corpus.

mod hotpot;
mod source;
mod synthetic;
mod tokenizer;
mod vocab;

pub use hotpot::{
    load_hotpot, load_hotpot_with_report, parse_hotpot, save_hotpot, to_hotpot_json,
    DroppedRecord, Example, Paragraph, SupportingFact,
};
pub use source::{assemble_source, context_tokens, ContextMode, SourceEncoding, TokenOrigin};
pub use synthetic::{entity_pool, gen_synthetic, gen_synthetic_split, Split, RELATIONS};
pub use tokenizer::{detokenize, tokenize, PUNCTUATION};
pub use vocab::{build_vocab, example_tokens, Vocabulary, END, PAD, SEP, SPECIAL_TOKENS, START, UNK};

//! Templated two-hop corpus in HotpotQA form.
//!
//! Each record has a document titled `E2` containing "E1 is the R1 of E2 ."
//! and a document titled `E1` containing "E1 is located in E3 .", each among
//! two distractor sentences. The question is "where is the R1 of E2
//! located ?" and the answer is `E3`, reached through the bridge entity `E1`.
//! `E3` occurs exactly once in the full context.

use crate::data::{Example, Paragraph, SupportingFact};
use crate::numeric::Rng;

const SYLLABLES: [&str; 10] = ["ka", "lo", "mi", "ra", "ven", "dor", "sel", "tu", "bri", "zan"];

pub const RELATIONS: [&str; 12] = [
    "mayor",
    "founder",
    "owner",
    "director",
    "author",
    "captain",
    "patron",
    "keeper",
    "editor",
    "coach",
    "architect",
    "chancellor",
];

/// The 90 entity names: ordered syllable pairs with distinct halves.
pub fn entity_pool() -> Vec<String> {
    let mut out = Vec::with_capacity(90);
    for a in SYLLABLES {
        for b in SYLLABLES {
            if a != b {
                let mut name = String::from(a);
                name.push_str(b);
                let mut chars = name.chars();
                let first = chars.next().expect("non-empty").to_uppercase();
                out.push(first.chain(chars).collect());
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Dev => 1,
            Split::Test => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// `n` records drawn from a generator seeded with `seed`.
pub fn gen_synthetic(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|i| gen_record(&mut rng, format!("syn-{seed}-{i:06}")))
        .collect()
}

/// Records for one split; splits use disjoint generator streams and id
/// prefixes.
pub fn gen_synthetic_split(n: usize, seed: u64, split: Split) -> Vec<Example> {
    let mut rng = Rng::new(seed).split(split.stream());
    (0..n)
        .map(|i| gen_record(&mut rng, format!("syn-{}-{i:06}", split.name())))
        .collect()
}

fn gen_record(rng: &mut Rng, id: String) -> Example {
    let pool = entity_pool();
    let picks = rng.sample_distinct(pool.len(), 7);
    let name = |k: usize| pool[picks[k]].clone();
    let (e1, e2, e3) = (name(0), name(1), name(2));
    let fillers = [name(3), name(4), name(5), name(6)];
    let r1 = RELATIONS[rng.below(RELATIONS.len())];
    let other_rel = |rng: &mut Rng| loop {
        let r = RELATIONS[rng.below(RELATIONS.len())];
        if r != r1 {
            break r;
        }
    };

    // Distractors never place E1 anywhere, so E3 is the only consistent
    // answer; some place E2 or relate other entities to it.
    let hop1 = format!("{e1} is the {r1} of {e2} .");
    let mut doc2_distractors = vec![
        format!("{e2} was founded by {} .", fillers[2]),
        format!("{e2} is located in {} .", fillers[0]),
        format!("{} is the {} of {e2} .", fillers[3], other_rel(rng)),
        format!("{} is a friend of {e2} .", fillers[1]),
    ];
    rng.shuffle(&mut doc2_distractors);
    doc2_distractors.truncate(2);

    let hop2 = format!("{e1} is located in {e3} .");
    let mut doc1_distractors = vec![
        format!("{e1} was born in {} .", fillers[0]),
        format!("{e1} is the {} of {} .", other_rel(rng), fillers[2]),
        format!("{} is a friend of {e1} .", fillers[3]),
        format!("{} is located in {} .", fillers[1], fillers[2]),
    ];
    rng.shuffle(&mut doc1_distractors);
    doc1_distractors.truncate(2);

    let place = |rng: &mut Rng, bridge: String, mut rest: Vec<String>| {
        let at = rng.below(rest.len() + 1);
        rest.insert(at, bridge);
        (rest, at)
    };
    let (s2, i2) = place(rng, hop1, doc2_distractors);
    let (s1, i1) = place(rng, hop2, doc1_distractors);
    let doc2 = Paragraph {
        title: e2.clone(),
        sentences: s2,
    };
    let doc1 = Paragraph {
        title: e1.clone(),
        sentences: s1,
    };
    let context = if rng.below(2) == 0 {
        vec![doc1, doc2]
    } else {
        vec![doc2, doc1]
    };

    Example {
        id,
        question: format!("where is the {r1} of {e2} located ?"),
        answer: e3,
        context,
        supporting_facts: vec![
            SupportingFact {
                title: e2,
                sentence: i2,
            },
            SupportingFact {
                title: e1,
                sentence: i1,
            },
        ],
    }
}

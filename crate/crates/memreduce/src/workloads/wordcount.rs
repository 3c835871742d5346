//! Word counting over a synthetic text corpus.
//!
//! The corpus generator draws lines of common English words from a fixed
//! lexicon, seeded so the same spec always yields the same bytes. The job
//! builder produces a classic count-per-word job whose mapper, combiner
//! and mutation behavior are all switchable, which is what the engine
//! comparisons need: the answer must never depend on those switches.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{JobConfig, MapperSpec, PartitionerSpec, ReducerSpec};
use crate::formats::{InputFormatSpec, OutputSpec};
use crate::kvstore::StorePath;
use crate::util::mix64;

/// Words the corpus generator draws from, roughly frequency-ordered.
pub const LEXICON: &[&str] = &[
    "the", "of", "and", "a", "to", "in", "is", "you", "that", "it", "he", "was", "for", "on",
    "are", "as", "with", "his", "they", "at", "be", "this", "have", "from", "or", "one", "had",
    "by", "word", "but", "not", "what", "all", "were", "we", "when", "your", "can", "said",
    "there", "use", "an", "each", "which", "she", "do", "how", "their", "if", "will", "up",
    "other", "about", "out", "many", "then", "them", "these", "so", "some", "her", "would",
    "make", "like",
];

/// Shape of the generated corpus.
#[derive(Debug, Clone, Copy)]
pub struct CorpusSpec {
    /// Minimum size; generation stops at the first line boundary past it.
    pub bytes: u64,
    pub seed: u64,
}

/// Newline-delimited lines of 5 to 12 space-joined lexicon words.
pub fn generate_corpus(spec: &CorpusSpec) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(spec.seed));
    let mut out = Vec::with_capacity(spec.bytes as usize + 128);
    while (out.len() as u64) < spec.bytes {
        let words = rng.gen_range(5..=12);
        for w in 0..words {
            if w > 0 {
                out.push(b' ');
            }
            let pick = rng.gen_range(0..LEXICON.len());
            out.extend_from_slice(LEXICON[pick].as_bytes());
        }
        out.push(b'\n');
    }
    out
}

/// Reference answer computed directly from the corpus bytes, using the
/// same whitespace-splitting rule as the job's mappers.
pub fn count_words(corpus: &[u8]) -> BTreeMap<String, i64> {
    let mut counts = BTreeMap::new();
    for word in corpus
        .split(|b| b.is_ascii_whitespace())
        .filter(|w| !w.is_empty())
    {
        let word = String::from_utf8_lossy(word).into_owned();
        *counts.entry(word).or_insert(0) += 1;
    }
    counts
}

/// Knobs of one word-count job.
#[derive(Debug, Clone)]
pub struct WordCountSpec {
    pub input: StorePath,
    pub output: StorePath,
    /// Split target for the text input.
    pub splits: u32,
    pub num_reducers: u32,
    /// Use the mapper that recycles one key box and one count box between
    /// emissions instead of allocating fresh objects. Safe only while the
    /// job does not also promise immutable outputs.
    pub reuse_boxes: bool,
    /// Pre-aggregate counts on the map side.
    pub combine: bool,
    /// Promise that emitted objects are never mutated afterwards.
    pub immutable: bool,
}

impl WordCountSpec {
    pub fn new(input: StorePath, output: StorePath, splits: u32, num_reducers: u32) -> Self {
        WordCountSpec {
            input,
            output,
            splits,
            num_reducers,
            reuse_boxes: false,
            combine: false,
            immutable: false,
        }
    }
}

/// Builds the job; the caller submits it to whichever engine.
pub fn build(spec: &WordCountSpec) -> JobConfig {
    let mapper = if spec.reuse_boxes {
        MapperSpec::WordCountReuse
    } else {
        MapperSpec::WordCountFresh
    };
    let mut job = JobConfig::new("wordcount", OutputSpec::pair_file(spec.output.clone()))
        .input(InputFormatSpec::TextLine {
            path: spec.input.clone(),
            target_splits: spec.splits,
        })
        .map(mapper)
        .reduce(ReducerSpec::SumCounts, spec.num_reducers)
        .partition(PartitionerSpec::HashKey);
    if spec.combine {
        job = job.combine(ReducerSpec::SumCounts);
    }
    if spec.immutable {
        job = job
            .immutable_map_output(true)
            .immutable_reduce_output(true);
    }
    job
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_stable_lines_of_lexicon_words() {
        let spec = CorpusSpec {
            bytes: 4096,
            seed: 3,
        };
        let corpus = generate_corpus(&spec);
        assert_eq!(corpus, generate_corpus(&spec));
        assert!(corpus.len() as u64 >= spec.bytes);
        assert!(corpus.ends_with(b"\n"));

        for line in std::str::from_utf8(&corpus).unwrap().lines() {
            let words: Vec<&str> = line.split(' ').collect();
            assert!(
                (5..=12).contains(&words.len()),
                "line has {} words",
                words.len()
            );
            for w in &words {
                assert!(LEXICON.contains(w), "{w:?} not in the lexicon");
            }
        }

        let reseeded = CorpusSpec {
            bytes: 4096,
            seed: 4,
        };
        assert_ne!(corpus, generate_corpus(&reseeded));
    }

    #[test]
    fn reference_counts_split_on_any_whitespace() {
        let counts = count_words(b"the cat\tthe hat\n  the end\n");
        assert_eq!(counts.get("the"), Some(&3));
        assert_eq!(counts.get("cat"), Some(&1));
        assert_eq!(counts.get("hat"), Some(&1));
        assert_eq!(counts.get("end"), Some(&1));
        assert_eq!(counts.len(), 4);

        let spec = CorpusSpec {
            bytes: 1024,
            seed: 9,
        };
        let corpus = generate_corpus(&spec);
        let total: i64 = count_words(&corpus).values().sum();
        let words = corpus
            .split(|b: &u8| b.is_ascii_whitespace())
            .filter(|w| !w.is_empty())
            .count();
        assert_eq!(total, words as i64);
    }

    #[test]
    fn builder_wires_the_switches() {
        let mut spec = WordCountSpec::new(
            StorePath::parse("/in").unwrap(),
            StorePath::parse("/out").unwrap(),
            4,
            3,
        );
        let plain = build(&spec);
        assert!(matches!(plain.mapper, MapperSpec::WordCountFresh));
        assert!(plain.combiner.is_none());
        assert_eq!(plain.num_reducers, 3);
        assert!(!plain.mapper_immutable_output);

        spec.reuse_boxes = true;
        spec.combine = true;
        spec.immutable = true;
        let tuned = build(&spec);
        assert!(matches!(tuned.mapper, MapperSpec::WordCountReuse));
        assert!(tuned.combiner.is_some());
        assert!(tuned.mapper_immutable_output && tuned.reducer_immutable_output);
    }
}

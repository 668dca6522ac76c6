//! Word-piece vocabulary and the synthetic speech corpus.

mod corpus;
mod vocab;

pub use corpus::{
    generate, read_phrases, read_split, read_utterance_file, read_utterances, read_vocab, write_corpus,
    write_utterances, Corpus, CorpusSpec, Split, Utterance, CORPUS_SPEC_FILE, PHRASES_FILE, VOCAB_FILE,
};
pub use vocab::{Vocab, WORD_START};

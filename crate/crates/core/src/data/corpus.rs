use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::model::FIRST_SYMBOL;
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub text: String,
    pub tokens: Vec<u32>,
    /// Raw `T × feature_dim` features, row major.
    pub frames: Vec<Vec<f64>>,
}

impl Utterance {
    pub fn features(&self) -> Result<Tensor> {
        Tensor::from_rows(&self.frames)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
    Long,
    Contacts,
}

impl Split {
    pub const ALL: [Split; 5] = [Split::Train, Split::Dev, Split::Test, Split::Long, Split::Contacts];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Long => "long",
            Split::Contacts => "contacts",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.jsonl", self.name())
    }

    fn stream(self) -> u64 {
        self as u64 + 1
    }
}

/// Parameters of the synthetic corpus generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub seed: u64,
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub frames_per_token: usize,
    /// Utterances shared out to train, dev and test by `split_ratios`.
    pub num_utterances: usize,
    pub split_ratios: [f64; 3],
    /// Inclusive token-length range of ordinary utterances.
    pub token_range: (usize, usize),
    pub long_utterances: usize,
    pub long_token_range: (usize, usize),
    /// Distinct words in the lexicon.
    pub lexicon_size: usize,
    pub noise: f64,
    pub contacts_phrases: usize,
    pub contacts_utterances: usize,
    /// Feature noise of the contacts split.
    pub contacts_noise: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 1,
            vocab_size: 36,
            feature_dim: 8,
            frames_per_token: 6,
            num_utterances: 1600,
            split_ratios: [0.8, 0.1, 0.1],
            token_range: (3, 18),
            long_utterances: 120,
            long_token_range: (14, 18),
            lexicon_size: 64,
            noise: 0.6,
            contacts_phrases: 8,
            contacts_utterances: 80,
            contacts_noise: 0.9,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.feature_dim == 0 || self.frames_per_token == 0 {
            return bad("feature_dim and frames_per_token must be positive".into());
        }
        if self.split_ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0))
            || (self.split_ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!("split ratios {:?} must be non-negative and sum to 1", self.split_ratios));
        }
        for (name, (lo, hi)) in [("token_range", self.token_range), ("long_token_range", self.long_token_range)] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} ({lo}, {hi}) is empty"));
            }
        }
        if !(self.noise >= 0.0 && self.contacts_noise >= 0.0) {
            return bad("noise must be non-negative".into());
        }
        if self.lexicon_size < 2 {
            return bad("lexicon_size must be at least 2".into());
        }
        if self.contacts_utterances > 0 && self.contacts_phrases == 0 {
            return bad("contacts utterances need at least one phrase".into());
        }
        Ok(())
    }

    fn split_sizes(&self) -> [usize; 3] {
        let train = (self.num_utterances as f64 * self.split_ratios[0]).round() as usize;
        let dev = (self.num_utterances as f64 * self.split_ratios[1]).round() as usize;
        let dev = dev.min(self.num_utterances - train.min(self.num_utterances));
        let train = train.min(self.num_utterances);
        [train, dev, self.num_utterances - train - dev]
    }
}

/// A generated corpus held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub vocab: Vocab,
    /// Contact phrases as text.
    pub phrases: Vec<String>,
    pub splits: Vec<(Split, Vec<Utterance>)>,
}

impl Corpus {
    pub fn split(&self, s: Split) -> &[Utterance] {
        self.splits.iter().find(|(k, _)| *k == s).map_or(&[], |(_, u)| u.as_slice())
    }
}

struct Lexicon {
    /// Words as token sequences.
    words: Vec<Vec<u32>>,
}

impl Lexicon {
    fn build(vocab: &Vocab, size: usize, rng: &mut ChaCha8Rng) -> Self {
        let initial: Vec<u32> = (FIRST_SYMBOL..vocab.len() as u32).filter(|&t| vocab.is_word_start(t)).collect();
        let cont: Vec<u32> = (FIRST_SYMBOL..vocab.len() as u32).filter(|&t| !vocab.is_word_start(t)).collect();
        let mut all: Vec<Vec<u32>> = initial.iter().map(|&i| vec![i]).collect();
        all.extend(initial.iter().flat_map(|&i| cont.iter().map(move |&c| vec![i, c])));
        all.shuffle(rng);
        // Every word-initial piece stays reachable as a one-piece word.
        let mut words: Vec<Vec<u32>> = initial.iter().map(|&i| vec![i]).collect();
        words.extend(all.into_iter().filter(|w| w.len() > 1).take(size.saturating_sub(words.len())));
        words.sort();
        Lexicon { words }
    }

    fn sentence(&self, rng: &mut ChaCha8Rng, len: usize) -> Vec<u32> {
        let mut out = Vec::with_capacity(len);
        while out.len() < len {
            let room = len - out.len();
            let w = loop {
                let w = &self.words[rng.gen_range(0..self.words.len())];
                if w.len() <= room {
                    break w;
                }
            };
            out.extend_from_slice(w);
        }
        out
    }
}

struct Renderer {
    prototypes: Vec<Vec<f64>>,
    frames_per_token: usize,
}

impl Renderer {
    /// One leading silence frame, then each token's prototype repeated, so
    /// stacked frontend rows line up with tokens when the stride matches.
    fn render(&self, tokens: &[u32], sigma: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        let d = self.prototypes[0].len();
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
        let mut frames = Vec::with_capacity(1 + tokens.len() * self.frames_per_token);
        let mut push = |proto: &[f64], rng: &mut ChaCha8Rng| {
            frames.push(
                proto
                    .iter()
                    .map(|&p| if sigma == 0.0 { p } else { p + noise.sample(rng) })
                    .collect::<Vec<f64>>(),
            );
        };
        push(&vec![0.0; d], rng);
        for &t in tokens {
            for _ in 0..self.frames_per_token {
                push(&self.prototypes[t as usize], rng);
            }
        }
        Ok(frames)
    }
}

/// Deterministic corpus from `spec`.
pub fn generate(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let vocab = Vocab::synthetic(spec.vocab_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std = Normal::new(0.0, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let prototypes: Vec<Vec<f64>> = (0..vocab.len())
        .map(|t| {
            (0..spec.feature_dim)
                .map(|_| if t < FIRST_SYMBOL as usize { 0.0 } else { std.sample(&mut rng) })
                .collect()
        })
        .collect();
    let lexicon = Lexicon::build(&vocab, spec.lexicon_size, &mut rng);
    let renderer = Renderer { prototypes, frames_per_token: spec.frames_per_token };

    let mut phrase_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    phrase_rng.set_stream(100);
    let mut phrase_tokens: Vec<Vec<u32>> = Vec::new();
    while phrase_tokens.len() < spec.contacts_phrases {
        let len = phrase_rng.gen_range(3..=4);
        let p = lexicon.sentence(&mut phrase_rng, len);
        if !phrase_tokens.contains(&p) {
            phrase_tokens.push(p);
        }
    }
    let phrases = phrase_tokens.iter().map(|p| vocab.detokenize(p)).collect::<Result<Vec<_>>>()?;

    let mut seen = BTreeSet::new();
    let sizes = spec.split_sizes();
    let mut splits = Vec::new();
    for split in Split::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(split.stream());
        let (count, range, sigma) = match split {
            Split::Train => (sizes[0], spec.token_range, spec.noise),
            Split::Dev => (sizes[1], spec.token_range, spec.noise),
            Split::Test => (sizes[2], spec.token_range, spec.noise),
            Split::Long => (spec.long_utterances, spec.long_token_range, spec.noise),
            Split::Contacts => (spec.contacts_utterances, spec.token_range, spec.contacts_noise),
        };
        let mut utts = Vec::with_capacity(count);
        while utts.len() < count {
            let tokens = if split == Split::Contacts {
                let phrase = &phrase_tokens[utts.len() % phrase_tokens.len()];
                let carrier = rng.gen_range(1..=2);
                let mut t = lexicon.sentence(&mut rng, carrier);
                t.extend_from_slice(phrase);
                t
            } else {
                let len = rng.gen_range(range.0..=range.1);
                lexicon.sentence(&mut rng, len)
            };
            if !seen.insert(tokens.clone()) {
                continue;
            }
            let frames = renderer.render(&tokens, sigma, &mut rng)?;
            utts.push(Utterance {
                id: format!("{}-{:05}", split.name(), utts.len()),
                text: vocab.detokenize(&tokens)?,
                tokens,
                frames,
            });
        }
        splits.push((split, utts));
    }
    Ok(Corpus { spec: spec.clone(), vocab, phrases, splits })
}

pub fn write_utterances(out: &mut impl Write, utts: &[Utterance]) -> Result<()> {
    for u in utts {
        serde_json::to_writer(&mut *out, u)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// JSON-lines reader; parse errors carry 1-based line numbers.
pub fn read_utterances(input: impl BufRead) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

pub const VOCAB_FILE: &str = "vocab.txt";
pub const PHRASES_FILE: &str = "phrases.txt";
pub const CORPUS_SPEC_FILE: &str = "corpus.json";

/// Writes every split, the vocabulary, the phrase list and the spec.
pub fn write_corpus(dir: &Path, c: &Corpus) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(VOCAB_FILE), c.vocab.to_text())?;
    std::fs::write(dir.join(PHRASES_FILE), c.phrases.iter().map(|p| format!("{p}\n")).collect::<String>())?;
    std::fs::write(dir.join(CORPUS_SPEC_FILE), serde_json::to_string_pretty(&c.spec)? + "\n")?;
    for (split, utts) in &c.splits {
        let mut buf = Vec::new();
        write_utterances(&mut buf, utts)?;
        std::fs::write(dir.join(split.file_name()), buf)?;
    }
    Ok(())
}

pub fn read_split(dir: &Path, split: Split) -> Result<Vec<Utterance>> {
    read_utterance_file(&dir.join(split.file_name()))
}

pub fn read_utterance_file(path: &Path) -> Result<Vec<Utterance>> {
    let f = std::fs::File::open(path)?;
    read_utterances(std::io::BufReader::new(f))
}

pub fn read_vocab(dir: &Path) -> Result<Vocab> {
    Vocab::from_text(&std::fs::read_to_string(dir.join(VOCAB_FILE))?)
}

/// Phrase file: one phrase per line, blank lines ignored.
pub fn read_phrases(path: &Path) -> Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusSpec {
        CorpusSpec { num_utterances: 40, long_utterances: 4, contacts_utterances: 10, contacts_phrases: 3, ..CorpusSpec::default() }
    }

    #[test]
    fn generation_is_deterministic_and_disjoint() {
        let a = generate(&small()).unwrap();
        assert_eq!(a, generate(&small()).unwrap());
        let b = generate(&CorpusSpec { seed: 2, ..small() }).unwrap();
        assert_ne!(a.split(Split::Train), b.split(Split::Train));
        assert_eq!(a.split(Split::Train).len(), 32);
        assert_eq!(a.split(Split::Dev).len(), 4);
        assert_eq!(a.split(Split::Test).len(), 4);
        let f = small().frames_per_token;
        let mut texts = BTreeSet::new();
        for (_, utts) in &a.splits {
            for u in utts {
                assert!(texts.insert(u.tokens.clone()));
                assert_eq!(u.frames.len(), 1 + f * u.tokens.len());
                assert_eq!(a.vocab.tokenize(&u.text).unwrap(), u.tokens);
            }
        }
    }

    #[test]
    fn zero_noise_gives_prototypes() {
        let c = generate(&CorpusSpec { noise: 0.0, ..small() }).unwrap();
        let f = small().frames_per_token;
        let u = &c.split(Split::Train)[0];
        assert!(u.frames[0].iter().all(|&v| v == 0.0));
        for i in 2..=f {
            assert_eq!(u.frames[1], u.frames[i]);
        }
        for v in c.split(Split::Train) {
            for (k, &t) in v.tokens.iter().enumerate() {
                let w = &c.split(Split::Train)[0];
                if let Some(j) = w.tokens.iter().position(|&x| x == t) {
                    assert_eq!(v.frames[1 + f * k], w.frames[1 + f * j]);
                }
            }
        }
    }

    #[test]
    fn contacts_cover_every_phrase() {
        let c = generate(&small()).unwrap();
        assert_eq!(c.phrases.len(), 3);
        for p in &c.phrases {
            assert!(c.split(Split::Contacts).iter().any(|u| u.text.contains(p.as_str())));
        }
    }

    #[test]
    fn file_round_trip() {
        let c = generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &c).unwrap();
        assert_eq!(read_split(dir.path(), Split::Dev).unwrap(), c.split(Split::Dev));
        assert_eq!(read_vocab(dir.path()).unwrap(), c.vocab);
        assert_eq!(read_phrases(&dir.path().join(PHRASES_FILE)).unwrap(), c.phrases);
        let bad = read_utterances(std::io::Cursor::new("{\"id\":1}\n"));
        assert!(matches!(bad, Err(Error::Parse { line: 1, .. })));
    }
}

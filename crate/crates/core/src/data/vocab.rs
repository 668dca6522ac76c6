use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{BLANK, EOS, FIRST_SYMBOL, SOS};

/// Marks a piece that starts a new word.
pub const WORD_START: char = '▁';

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Word-piece inventory. Ids below [`FIRST_SYMBOL`] are reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
    max_piece_chars: usize,
}

impl Vocab {
    /// `pieces` are the ordinary word pieces; specials are prepended.
    pub fn from_pieces<I, S>(pieces: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = vec!["<blank>".into(), "<sos>".into(), "<eos>".into()];
        all.extend(pieces.into_iter().map(Into::into));
        let mut index = HashMap::new();
        for (i, p) in all.iter().enumerate() {
            if p.is_empty() || p.chars().any(char::is_whitespace) || p == &WORD_START.to_string() {
                return Err(Error::InvalidArgument(format!("bad word piece {p:?}")));
            }
            if index.insert(p.clone(), i as u32).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate word piece {p:?}")));
            }
        }
        let max_piece_chars = all.iter().map(|p| p.chars().count()).max().unwrap_or(1);
        Ok(Vocab { pieces: all, index, max_piece_chars })
    }

    /// Deterministic syllable inventory of `size` ids: two thirds
    /// word-initial pieces, the rest continuations.
    pub fn synthetic(size: usize) -> Result<Self> {
        let n = size
            .checked_sub(FIRST_SYMBOL as usize)
            .filter(|&n| n >= 2)
            .ok_or_else(|| Error::Config(format!("vocab_size {size} leaves fewer than two pieces")))?;
        let syllables: Vec<String> = CONSONANTS
            .iter()
            .flat_map(|&c| VOWELS.iter().map(move |&v| format!("{}{}", c as char, v as char)))
            .collect();
        let initial = (2 * n).div_ceil(3);
        let cont = n - initial;
        if initial > syllables.len() || cont > syllables.len() {
            return Err(Error::Config(format!("synthetic vocab supports at most {} ids", 3 + 2 * syllables.len())));
        }
        // Continuations are taken from the far end so few strings coincide.
        let pieces = syllables[..initial]
            .iter()
            .map(|s| format!("{WORD_START}{s}"))
            .chain(syllables.iter().rev().take(cont).cloned());
        Self::from_pieces(pieces)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: u32) -> Result<&str> {
        self.pieces
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::OutOfVocab { token: id, vocab: self.pieces.len() })
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    /// Ordinary pieces only, in id order.
    pub fn pieces(&self) -> &[String] {
        &self.pieces[FIRST_SYMBOL as usize..]
    }

    pub fn is_word_start(&self, id: u32) -> bool {
        self.pieces.get(id as usize).is_some_and(|p| p.starts_with(WORD_START))
    }

    /// Greedy longest match over each word prefixed with the word marker.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let chars: Vec<char> = std::iter::once(WORD_START).chain(word.chars()).collect();
            let mut pos = 0;
            while pos < chars.len() {
                let longest = (1..=self.max_piece_chars.min(chars.len() - pos)).rev().find_map(|len| {
                    let s: String = chars[pos..pos + len].iter().collect();
                    self.id(&s).filter(|&id| id >= FIRST_SYMBOL).map(|id| (id, len))
                });
                let (id, len) = longest.ok_or_else(|| Error::UnknownPiece(chars[pos..].iter().collect()))?;
                out.push(id);
                pos += len;
            }
        }
        Ok(out)
    }

    /// Words joined by single spaces; special ids are dropped.
    pub fn detokenize(&self, tokens: &[u32]) -> Result<String> {
        let mut s = String::new();
        for &t in tokens {
            if t == BLANK || t == SOS || t == EOS {
                continue;
            }
            s.push_str(self.piece(t)?);
        }
        Ok(s.split(WORD_START).filter(|w| !w.is_empty()).collect::<Vec<_>>().join(" "))
    }

    /// One piece per line, specials excluded.
    pub fn to_text(&self) -> String {
        self.pieces().iter().map(|p| format!("{p}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_pieces(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }
}

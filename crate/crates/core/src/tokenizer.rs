//! Byte-level BPE in the GPT-2 asset layout.
//!
//! Text is split by the GPT-2 pre-tokenisation pattern
//!
//! ```text
//! 's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
//! ```
//!
//! (implemented as a hand-written scanner), each piece's UTF-8 bytes are
//! mapped to printable stand-in characters, and merges are applied lowest
//! rank first.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

pub const END_OF_TEXT: &str = "<|endoftext|>";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenizerError {
    #[error("tokenizer assets could not be parsed: {0}")]
    Parse(String),
    #[error("vocabulary and merges disagree: {0}")]
    InconsistentVocab(String),
    #[error("token id {0} is outside the vocabulary")]
    UnknownToken(u32),
    #[error("byte 0x{0:02x} has no token in this vocabulary")]
    Unencodable(u8),
}

/// The reversible byte to character table of GPT-2: printable Latin-1
/// bytes map to themselves, the rest to code points from U+0100 upwards.
pub fn bytes_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut next = 256u32;
    for b in 0..=255u8 {
        let printable = matches!(b, b'!'..=b'~' | 0xA1..=0xAC | 0xAE..=0xFF);
        table[b as usize] = if printable {
            b as char
        } else {
            let c = char::from_u32(next).expect("code points below U+0200 are valid");
            next += 1;
            c
        };
    }
    table
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    encoder: BTreeMap<String, u32>,
    decoder: Vec<String>,
    ranks: BTreeMap<(String, String), usize>,
    byte_encoder: [char; 256],
    byte_decoder: BTreeMap<char, u8>,
    eot: Option<u32>,
}

fn is_special(token: &str) -> bool {
    token.len() > 4 && token.starts_with("<|") && token.ends_with("|>")
}

impl Tokenizer {
    /// Builds a tokenizer from `token -> id` pairs and merges in rank order.
    pub fn new(
        vocab: impl IntoIterator<Item = (String, u32)>,
        merges: Vec<(String, String)>,
    ) -> Result<Self, TokenizerError> {
        let encoder: BTreeMap<String, u32> = vocab.into_iter().collect();
        if encoder.is_empty() {
            return Err(TokenizerError::InconsistentVocab("vocabulary is empty".into()));
        }
        let mut decoder: Vec<Option<String>> = alloc::vec![None; encoder.len()];
        for (tok, &id) in &encoder {
            let slot = decoder.get_mut(id as usize).ok_or_else(|| {
                TokenizerError::InconsistentVocab(alloc::format!("ids are not dense: {id} >= {}", encoder.len()))
            })?;
            if slot.is_some() {
                return Err(TokenizerError::InconsistentVocab(alloc::format!("id {id} assigned twice")));
            }
            *slot = Some(tok.clone());
        }
        let decoder: Vec<String> = decoder.into_iter().map(|t| t.expect("dense ids fill every slot")).collect();

        let mut ranks = BTreeMap::new();
        let mut produced = BTreeMap::new();
        for (rank, (a, b)) in merges.into_iter().enumerate() {
            let merged = alloc::format!("{a}{b}");
            for part in [&a, &b, &merged] {
                if !encoder.contains_key(part.as_str()) {
                    return Err(TokenizerError::InconsistentVocab(alloc::format!(
                        "merge {a:?} {b:?} refers to {part:?}, which is not in the vocabulary"
                    )));
                }
            }
            produced.insert(merged, ());
            ranks.entry((a, b)).or_insert(rank);
        }
        for tok in encoder.keys() {
            if tok.chars().count() > 1 && !is_special(tok) && !produced.contains_key(tok) {
                return Err(TokenizerError::InconsistentVocab(alloc::format!(
                    "token {tok:?} is not produced by any merge"
                )));
            }
        }

        let byte_encoder = bytes_to_unicode();
        let byte_decoder = byte_encoder.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        let eot = encoder.get(END_OF_TEXT).copied();
        Ok(Self {
            encoder,
            decoder,
            ranks,
            byte_encoder,
            byte_decoder,
            eot,
        })
    }

    /// Parses the standard asset pair: a JSON object `{token: id}` and a
    /// merge list with one space-separated pair per line (an optional
    /// `#version` header is skipped).
    pub fn from_assets(vocab_json: &[u8], merges_txt: &[u8]) -> Result<Self, TokenizerError> {
        let vocab: BTreeMap<String, u32> =
            serde_json::from_slice(vocab_json).map_err(|e| TokenizerError::Parse(e.to_string()))?;
        let text = core::str::from_utf8(merges_txt).map_err(|_| TokenizerError::Parse("merges are not UTF-8".into()))?;
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.starts_with("#version") || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => merges.push((a.to_string(), b.to_string())),
                _ => return Err(TokenizerError::Parse(alloc::format!("merges line {}: expected two symbols", i + 1))),
            }
        }
        Self::new(vocab, merges)
    }

    /// Pure byte vocabulary: the 256 byte symbols with id = byte value, no
    /// merges and no end-of-text token.
    pub fn byte_level() -> Self {
        let table = bytes_to_unicode();
        let vocab = (0..256u32).map(|b| (table[b as usize].to_string(), b));
        Self::new(vocab, Vec::new()).expect("byte vocabulary is consistent")
    }

    pub fn vocab_size(&self) -> usize {
        self.decoder.len()
    }

    pub fn end_of_text(&self) -> Option<u32> {
        self.eot
    }

    pub fn token_to_id(&self, token: &str) -> Option<u32> {
        self.encoder.get(token).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>, TokenizerError> {
        let mut ids = Vec::new();
        for piece in pretokenize(text) {
            let mut symbols: Vec<String> = Vec::with_capacity(piece.len());
            for &b in piece.as_bytes() {
                symbols.push(self.byte_encoder[b as usize].to_string());
            }
            self.merge(&mut symbols);
            for s in &symbols {
                match self.encoder.get(s) {
                    Some(&id) => ids.push(id),
                    None => {
                        let first = s.chars().next().and_then(|c| self.byte_decoder.get(&c)).copied().unwrap_or(0);
                        return Err(TokenizerError::Unencodable(first));
                    }
                }
            }
        }
        Ok(ids)
    }

    fn merge(&self, symbols: &mut Vec<String>) {
        while symbols.len() > 1 {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w)))
                .min_by_key(|(r, _)| *r)
                .map(|(_, w)| (w[0].clone(), w[1].clone()));
            let Some((a, b)) = best else { break };
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
                    merged.push(alloc::format!("{a}{b}"));
                    i += 2;
                } else {
                    merged.push(core::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            *symbols = merged;
        }
    }

    /// Raw bytes of the token sequence.
    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>, TokenizerError> {
        let mut out = Vec::new();
        for &id in ids {
            let tok = self.decoder.get(id as usize).ok_or(TokenizerError::UnknownToken(id))?;
            if is_special(tok) {
                out.extend_from_slice(tok.as_bytes());
                continue;
            }
            for c in tok.chars() {
                match self.byte_decoder.get(&c) {
                    Some(&b) => out.push(b),
                    None => {
                        let mut buf = [0u8; 4];
                        out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                    }
                }
            }
        }
        Ok(out)
    }

    /// Decoded text; invalid UTF-8 (e.g. a split multi-byte character) is
    /// replaced with U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Letter,
    Number,
    Space,
    Other,
}

fn class(c: char) -> Class {
    if c.is_whitespace() {
        Class::Space
    } else if c.is_alphabetic() {
        Class::Letter
    } else if c.is_numeric() {
        Class::Number
    } else {
        Class::Other
    }
}

const CONTRACTIONS: [&str; 7] = ["'s", "'t", "'re", "'ve", "'m", "'ll", "'d"];

/// Splits `text` into pre-tokens; concatenating them gives `text` back.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let offset = |i: usize| chars.get(i).map_or(text.len(), |&(o, _)| o);
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let start = offset(i);
        let rest = &text[start..];
        if let Some(c) = CONTRACTIONS.iter().find(|c| rest.starts_with(**c)) {
            pieces.push(&rest[..c.len()]);
            i += c.chars().count();
            continue;
        }
        let c = chars[i].1;
        let (body, body_start) = if c == ' ' && i + 1 < chars.len() && class(chars[i + 1].1) != Class::Space {
            (class(chars[i + 1].1), i + 1)
        } else {
            (class(c), i)
        };
        let end = if body == Class::Space {
            let mut j = i;
            while j < chars.len() && class(chars[j].1) == Class::Space {
                j += 1;
            }
            // `\s+(?!\S)` leaves the last space for the following word
            if j < chars.len() && j - i > 1 {
                j - 1
            } else {
                j
            }
        } else {
            let mut j = body_start;
            while j < chars.len() && class(chars[j].1) == body {
                j += 1;
            }
            j
        };
        pieces.push(&text[start..offset(end)]);
        i = end;
    }
    pieces
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toy() -> Tokenizer {
        // 10 tokens: six bytes, three merges and the end-of-text marker
        let vocab = ["h", "e", "l", "o", "Ġ", "w", "he", "ll", "hell", END_OF_TEXT];
        Tokenizer::new(
            vocab.iter().enumerate().map(|(i, t)| (t.to_string(), i as u32)),
            vec![("h".into(), "e".into()), ("l".into(), "l".into()), ("he".into(), "ll".into())],
        )
        .unwrap()
    }

    #[test]
    fn byte_table_is_a_bijection() {
        let t = bytes_to_unicode();
        let mut seen = BTreeMap::new();
        for c in t {
            assert!(seen.insert(c, ()).is_none());
        }
        assert_eq!(t[b' ' as usize], 'Ġ');
        assert_eq!(t[b'\n' as usize], 'Ċ');
        assert_eq!(t[b'A' as usize], 'A');
    }

    #[test]
    fn pretokenize_matches_pattern() {
        assert_eq!(pretokenize("Hello world"), vec!["Hello", " world"]);
        assert_eq!(pretokenize("it's 42!!"), vec!["it", "'s", " 42", "!!"]);
        assert_eq!(pretokenize("a   b"), vec!["a", "  ", " b"]);
        assert_eq!(pretokenize("a\nb"), vec!["a", "\n", "b"]);
        assert_eq!(pretokenize("end  "), vec!["end", "  "]);
        assert_eq!(pretokenize(" ?x"), vec![" ?", "x"]);
        assert_eq!(pretokenize(""), Vec::<&str>::new());
    }

    #[test]
    fn toy_vocab_encodes() {
        let t = toy();
        assert_eq!(t.vocab_size(), 10);
        assert_eq!(t.encode("hello").unwrap(), vec![8, 3]);
        assert_eq!(t.decode(&[8, 3]).unwrap(), "hello");
        assert_eq!(t.end_of_text(), Some(9));
        assert_eq!(t.decode(&[10]), Err(TokenizerError::UnknownToken(10)));
        assert_eq!(t.encode("x"), Err(TokenizerError::Unencodable(b'x')));
        assert_eq!(t.encode("").unwrap(), Vec::<u32>::new());
        assert_eq!(t.decode(&[]).unwrap(), "");
    }

    #[test]
    fn multi_char_token_needs_a_merge() {
        let vocab = [("a".to_string(), 0), ("b".to_string(), 1), ("ab".to_string(), 2)];
        assert!(matches!(Tokenizer::new(vocab.clone(), vec![]), Err(TokenizerError::InconsistentVocab(_))));
        let bad_merge = vec![("a".to_string(), "c".to_string())];
        assert!(matches!(Tokenizer::new(vocab, bad_merge), Err(TokenizerError::InconsistentVocab(_))));
    }

    #[test]
    fn sparse_ids_rejected() {
        let vocab = [("a".to_string(), 0), ("b".to_string(), 2)];
        assert!(matches!(Tokenizer::new(vocab, vec![]), Err(TokenizerError::InconsistentVocab(_))));
    }

    #[test]
    fn byte_level_round_trip() {
        let t = Tokenizer::byte_level();
        assert_eq!(t.vocab_size(), 256);
        let s = "Still Water\n\tnaïve 42";
        let ids = t.encode(s).unwrap();
        assert_eq!(ids.len(), s.len());
        assert_eq!(t.decode(&ids).unwrap(), s);
    }

    #[test]
    fn asset_parsing() {
        let vocab = br#"{"a": 0, "b": 1, "ab": 2}"#;
        let t = Tokenizer::from_assets(vocab, b"#version: 0.2\na b\n").unwrap();
        assert_eq!(t.encode("abab").unwrap(), vec![2, 2]);
        assert!(matches!(Tokenizer::from_assets(b"[1]", b""), Err(TokenizerError::Parse(_))));
        assert!(matches!(Tokenizer::from_assets(vocab, b"a b c\n"), Err(TokenizerError::Parse(_))));
    }
}

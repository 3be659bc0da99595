//! Byte-level BPE with reserved special tokens.
//!
//! Id layout: `0..6` special tokens, `6..262` raw bytes, `262..` learned
//! merges in training order. Merges never span a newline, so every packet
//! line tokenizes the same way whether it is encoded alone or inside a flow.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TextError;

/// Reserved tokens, in id order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Special {
    FlowBegin = 0,
    FlowEnd = 1,
    Cls = 2,
    Sep = 3,
    Mask = 4,
    Pad = 5,
}

impl Special {
    pub const ALL: [Special; 6] = [Special::FlowBegin, Special::FlowEnd, Special::Cls, Special::Sep, Special::Mask, Special::Pad];

    pub fn id(self) -> u32 {
        self as u32
    }

    pub fn name(self) -> &'static str {
        match self {
            Special::FlowBegin => "FLOW_BEGIN",
            Special::FlowEnd => "FLOW_END",
            Special::Cls => "CLS",
            Special::Sep => "SEP",
            Special::Mask => "MASK",
            Special::Pad => "PAD",
        }
    }

    /// Marker text standing for the token inside plain text.
    pub fn marker(self) -> &'static str {
        match self {
            Special::FlowBegin => "<|flow_begin|>",
            Special::FlowEnd => "<|flow_end|>",
            Special::Cls => "<|cls|>",
            Special::Sep => "<|sep|>",
            Special::Mask => "<|mask|>",
            Special::Pad => "<|pad|>",
        }
    }

    pub fn from_id(id: u32) -> Option<Special> {
        Special::ALL.get(id as usize).copied()
    }
}

pub const NUM_SPECIAL: u32 = 6;
pub const BYTE_OFFSET: u32 = NUM_SPECIAL;
pub const BASE_VOCAB: usize = 256 + NUM_SPECIAL as usize;

/// Encoded text: token ids plus the positions holding special tokens.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub specials: Vec<usize>,
}

impl TokenSequence {
    pub fn from_ids(ids: Vec<u32>) -> Self {
        let specials = ids.iter().enumerate().filter(|(_, &id)| id < NUM_SPECIAL).map(|(i, _)| i).collect();
        Self { ids, specials }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeVocab {
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
    pieces: Vec<Vec<u8>>,
}

#[derive(Serialize, Deserialize)]
struct SpecialEntry {
    id: u32,
    name: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    format: String,
    vocab_size: usize,
    specials: Vec<SpecialEntry>,
    merges: Vec<[u32; 2]>,
}

const VOCAB_FORMAT: &str = "byte-bpe/1";

impl BpeVocab {
    pub fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self, TextError> {
        let mut pieces: Vec<Vec<u8>> = Special::ALL.iter().map(|s| s.marker().as_bytes().to_vec()).collect();
        pieces.extend((0..=255u8).map(|b| vec![b]));
        let mut ranks = HashMap::new();
        for (rank, &(l, r)) in merges.iter().enumerate() {
            let n = pieces.len() as u32;
            if l < BYTE_OFFSET || r < BYTE_OFFSET || l >= n || r >= n {
                return Err(TextError::BadVocab(format!("merge {rank} ({l}, {r}) refers to an unknown or special id")));
            }
            let mut p = pieces[l as usize].clone();
            p.extend_from_slice(&pieces[r as usize]);
            pieces.push(p);
            ranks.insert((l, r), rank as u32);
        }
        Ok(Self { merges, ranks, pieces })
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Bytes a token stands for (special tokens map to their marker).
    pub fn piece(&self, id: u32) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(Vec::as_slice)
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            format: VOCAB_FORMAT.to_string(),
            vocab_size: self.vocab_size(),
            specials: Special::ALL
                .iter()
                .map(|s| SpecialEntry { id: s.id(), name: s.name().to_string(), text: s.marker().to_string() })
                .collect(),
            merges: self.merges.iter().map(|&(l, r)| [l, r]).collect(),
        };
        serde_json::to_string_pretty(&file).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TextError> {
        let file: VocabFile = serde_json::from_str(text).map_err(|e| TextError::BadVocab(e.to_string()))?;
        if file.format != VOCAB_FORMAT {
            return Err(TextError::BadVocab(format!("unsupported vocab format {:?}", file.format)));
        }
        for s in Special::ALL {
            let ok = file.specials.iter().any(|e| e.id == s.id() && e.text == s.marker());
            if !ok {
                return Err(TextError::BadVocab(format!("special token {} missing or moved", s.name())));
            }
        }
        let vocab = Self::from_merges(file.merges.into_iter().map(|[l, r]| (l, r)).collect())?;
        if vocab.vocab_size() != file.vocab_size {
            return Err(TextError::BadVocab(format!(
                "declared vocab_size {} but merges give {}",
                file.vocab_size,
                vocab.vocab_size()
            )));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Encodes raw bytes; special markers are treated as ordinary bytes.
    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<u32> {
        let mut out = Vec::with_capacity(bytes.len());
        for chunk in split_lines(bytes) {
            self.encode_chunk(chunk, &mut out);
        }
        out
    }

    fn encode_chunk(&self, chunk: &[u8], out: &mut Vec<u32>) {
        let mut ids: Vec<u32> = chunk.iter().map(|&b| b as u32 + BYTE_OFFSET).collect();
        while ids.len() > 1 {
            let best = ids
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).copied())
                .min();
            let Some(rank) = best else { break };
            let pair = self.merges[rank as usize];
            let new_id = BASE_VOCAB as u32 + rank;
            ids = merge_pair(&ids, pair, new_id);
        }
        out.extend_from_slice(&ids);
    }

    /// Encodes text, mapping special-token markers to their reserved ids.
    pub fn encode(&self, text: &str) -> TokenSequence {
        let mut ids = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            let next = Special::ALL
                .iter()
                .filter_map(|s| rest.find(s.marker()).map(|pos| (pos, *s)))
                .min_by_key(|&(pos, s)| (pos, s.id()));
            match next {
                Some((pos, s)) => {
                    ids.extend(self.encode_bytes(rest[..pos].as_bytes()));
                    ids.push(s.id());
                    rest = &rest[pos + s.marker().len()..];
                }
                None => {
                    ids.extend(self.encode_bytes(rest.as_bytes()));
                    break;
                }
            }
        }
        TokenSequence::from_ids(ids)
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>, TextError> {
        let mut out = Vec::new();
        for &id in ids {
            let piece = self.piece(id).ok_or(TextError::UnknownId { id, vocab_size: self.vocab_size() })?;
            out.extend_from_slice(piece);
        }
        Ok(out)
    }

    /// Decodes to text; invalid UTF-8 is replaced (use [`decode_bytes`] for
    /// an exact inverse of [`encode_bytes`]).
    ///
    /// [`decode_bytes`]: Self::decode_bytes
    /// [`encode_bytes`]: Self::encode_bytes
    pub fn decode(&self, seq: &TokenSequence) -> Result<String, TextError> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(&seq.ids)?).into_owned())
    }
}

fn merge_pair(ids: &[u32], pair: (u32, u32), new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && ids[i] == pair.0 && ids[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    out
}

/// Splits into maximal runs without `\n`, with every `\n` its own chunk.
fn split_lines(bytes: &[u8]) -> impl Iterator<Item = &[u8]> {
    let mut start = 0;
    let mut pending_newline = false;
    std::iter::from_fn(move || {
        if pending_newline {
            pending_newline = false;
            let nl = &bytes[start..start + 1];
            start += 1;
            return Some(nl);
        }
        if start >= bytes.len() {
            return None;
        }
        match bytes[start..].iter().position(|&b| b == b'\n') {
            Some(0) => {
                start += 1;
                Some(&bytes[start - 1..start])
            }
            Some(k) => {
                let chunk = &bytes[start..start + k];
                start += k;
                pending_newline = true;
                Some(chunk)
            }
            None => {
                let chunk = &bytes[start..];
                start = bytes.len();
                Some(chunk)
            }
        }
    })
}

/// Learns merges greedily: the most frequent adjacent pair wins, ties go to
/// the pair whose byte pieces compare lexicographically smaller. Training
/// stops at `vocab_size` or when no pair occurs at least twice.
pub fn train_bpe(corpus: &str, vocab_size: usize) -> Result<BpeVocab, TextError> {
    if vocab_size < BASE_VOCAB {
        return Err(TextError::VocabTooSmall { requested: vocab_size, minimum: BASE_VOCAB });
    }
    // Special markers are reserved tokens, never material for merges.
    let mut plain = corpus.to_string();
    for s in Special::ALL {
        plain = plain.replace(s.marker(), "\n");
    }
    if plain.bytes().all(|b| b == b'\n') {
        return Err(TextError::CorpusEmpty);
    }
    let mut counts: HashMap<&[u8], usize> = HashMap::new();
    for chunk in split_lines(plain.as_bytes()) {
        if chunk.len() > 1 {
            *counts.entry(chunk).or_default() += 1;
        }
    }
    // Sorted so pair counting visits words in a fixed order.
    let mut words: Vec<(Vec<u32>, usize)> = counts
        .into_iter()
        .map(|(w, c)| (w.iter().map(|&b| b as u32 + BYTE_OFFSET).collect(), c))
        .collect();
    words.sort();

    let mut pieces: Vec<Vec<u8>> = Special::ALL.iter().map(|s| s.marker().as_bytes().to_vec()).collect();
    pieces.extend((0..=255u8).map(|b| vec![b]));
    let mut merges = Vec::new();
    while pieces.len() < vocab_size {
        let mut pair_counts: HashMap<(u32, u32), usize> = HashMap::new();
        for (w, c) in &words {
            for p in w.windows(2) {
                *pair_counts.entry((p[0], p[1])).or_default() += c;
            }
        }
        let best = pair_counts
            .into_iter()
            .filter(|&(_, c)| c >= 2)
            .max_by(|a, b| {
                a.1.cmp(&b.1).then_with(|| {
                    let ka = (&pieces[a.0 .0 as usize], &pieces[a.0 .1 as usize]);
                    let kb = (&pieces[b.0 .0 as usize], &pieces[b.0 .1 as usize]);
                    kb.cmp(&ka)
                })
            });
        let Some((pair, _)) = best else { break };
        let new_id = pieces.len() as u32;
        let mut piece = pieces[pair.0 as usize].clone();
        piece.extend_from_slice(&pieces[pair.1 as usize]);
        pieces.push(piece);
        merges.push(pair);
        for (w, _) in words.iter_mut() {
            if w.len() > 1 {
                *w = merge_pair(w, pair, new_id);
            }
        }
    }
    BpeVocab::from_merges(merges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_candidate_pair() {
        let v = train_bpe("aaaa", 263).unwrap();
        let a = b'a' as u32 + BYTE_OFFSET;
        assert_eq!(v.merges(), &[(a, a)]);
        assert_eq!(v.encode_bytes(b"aaaa"), vec![262, 262]);
    }

    #[test]
    fn minimum_vocab_has_no_merges() {
        let v = train_bpe("proto=6 proto=6", 262).unwrap();
        assert!(v.merges().is_empty());
        assert_eq!(v.encode_bytes(b"ab").len(), 2);
        assert!(matches!(train_bpe("x", 261), Err(TextError::VocabTooSmall { .. })));
        assert!(matches!(train_bpe("", 300), Err(TextError::CorpusEmpty)));
    }

    #[test]
    fn ties_prefer_smaller_pair() {
        // "ab" and "cd" both occur twice.
        let v = train_bpe("abcd\nabcd", 263).unwrap();
        let id = |c: u8| c as u32 + BYTE_OFFSET;
        assert_eq!(v.merges()[0], (id(b'a'), id(b'b')));
    }

    #[test]
    fn specials_are_recognized_and_round_trip() {
        let v = train_bpe("x=1 y=2\nx=1 y=3\n", 300).unwrap();
        let text = "<|flow_begin|>\nx=1 y=2\n<|flow_end|>\n";
        let seq = v.encode(text);
        assert_eq!(seq.ids[0], Special::FlowBegin.id());
        assert!(seq.ids.contains(&Special::FlowEnd.id()));
        assert_eq!(seq.specials.len(), 2);
        assert_eq!(v.decode(&seq).unwrap(), text);
    }

    #[test]
    fn newline_is_never_merged() {
        let v = train_bpe("ab\nab\nab\n", 400).unwrap();
        let nl = b'\n' as u32 + BYTE_OFFSET;
        for &(l, r) in v.merges() {
            assert_ne!(l, nl);
            assert_ne!(r, nl);
        }
    }

    #[test]
    fn unknown_id_on_decode() {
        let v = train_bpe("aaaa", 263).unwrap();
        assert!(matches!(v.decode_bytes(&[263]), Err(TextError::UnknownId { .. })));
        assert!(v.decode_bytes(&[]).unwrap().is_empty());
    }

    #[test]
    fn vocab_json_round_trip() {
        let v = train_bpe("ttl=64 ttl=64 ttl=128\n", 280).unwrap();
        let back = BpeVocab::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
    }
}

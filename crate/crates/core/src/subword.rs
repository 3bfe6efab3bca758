//! Subword vocabulary and deterministic greedy longest-match segmentation.
//!
//! Word-initial pieces carry a marker prefix (SentencePiece's `▁` by
//! default). A word `w` is segmented by scanning `marker + w` left to right
//! and taking the longest vocabulary piece at each position. A position no
//! piece covers emits the unknown id and consumes one character; at the start
//! of a word the marker is consumed together with the first character, so an
//! unknown word-initial character still yields a single unit.

use std::collections::HashMap;

use thiserror::Error;

pub const DEFAULT_MARKER: &str = "\u{2581}";
pub const UNK_PIECE: &str = "<unk>";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("vocabulary is empty")]
    Empty,
    #[error("line {line}: duplicate piece `{piece}`")]
    DuplicatePiece { line: usize, piece: String },
    #[error("line {line}: empty piece")]
    EmptyPiece { line: usize },
    #[error("line {line}: marker inside piece `{piece}`")]
    MarkerInsidePiece { line: usize, piece: String },
    #[error("marker glyph must be non-empty")]
    EmptyMarker,
}

#[derive(Debug, Clone)]
pub struct SubwordVocab {
    pieces: Vec<String>,
    ids: HashMap<String, u32>,
    marker: String,
    unk_id: u32,
    max_piece_chars: usize,
}

impl SubwordVocab {
    /// Loads one piece per line with the default marker. Lines in
    /// SentencePiece `.vocab` layout (`piece<TAB>score`) keep only the piece.
    pub fn from_lines(text: &str) -> Result<Self, VocabError> {
        Self::from_lines_with_marker(text, DEFAULT_MARKER)
    }

    pub fn from_lines_with_marker(text: &str, marker: &str) -> Result<Self, VocabError> {
        let pieces = text
            .lines()
            .map(|l| l.split('\t').next().unwrap_or_default().trim_end_matches('\r'));
        Self::from_pieces(pieces, marker)
    }

    /// Ids are assigned in iteration order. If a `<unk>` piece is present it
    /// becomes the unknown id; otherwise the unknown id is `len()`, one past
    /// the last piece.
    pub fn from_pieces<I, S>(pieces: I, marker: &str) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if marker.is_empty() {
            return Err(VocabError::EmptyMarker);
        }
        let mut out = Vec::new();
        let mut ids = HashMap::new();
        for (i, piece) in pieces.into_iter().enumerate() {
            let piece = piece.as_ref();
            let line = i + 1;
            if piece.is_empty() {
                return Err(VocabError::EmptyPiece { line });
            }
            let body = piece.strip_prefix(marker).unwrap_or(piece);
            if body.contains(marker) {
                return Err(VocabError::MarkerInsidePiece {
                    line,
                    piece: piece.to_string(),
                });
            }
            if ids.insert(piece.to_string(), out.len() as u32).is_some() {
                return Err(VocabError::DuplicatePiece {
                    line,
                    piece: piece.to_string(),
                });
            }
            out.push(piece.to_string());
        }
        if out.is_empty() {
            return Err(VocabError::Empty);
        }
        let unk_id = ids.get(UNK_PIECE).copied().unwrap_or(out.len() as u32);
        let max_piece_chars = out.iter().map(|p| p.chars().count()).max().unwrap_or(1);
        Ok(Self {
            pieces: out,
            ids,
            marker: marker.to_string(),
            unk_id,
            max_piece_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn marker(&self) -> &str {
        &self.marker
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.ids.get(piece).copied()
    }

    /// Piece text for `id`; the unknown id maps to `<unk>` even when the
    /// vocabulary has no such piece.
    pub fn piece(&self, id: u32) -> Option<&str> {
        match self.pieces.get(id as usize) {
            Some(p) => Some(p),
            None if id == self.unk_id => Some(UNK_PIECE),
            None => None,
        }
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    /// Segments one word into ids.
    pub fn segment_word_ids(&self, word: &str) -> Vec<u32> {
        let form = format!("{}{word}", self.marker);
        // Char boundaries of `form`, including the end.
        let bounds: Vec<usize> = form
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(form.len()))
            .collect();
        let marker_chars = self.marker.chars().count();
        let n = bounds.len() - 1;

        let mut out = Vec::new();
        let mut pos = 0;
        while pos < n {
            let longest = (pos + 1..=n.min(pos + self.max_piece_chars))
                .rev()
                .find_map(|end| self.id(&form[bounds[pos]..bounds[end]]).map(|id| (id, end)));
            match longest {
                Some((id, end)) => {
                    out.push(id);
                    pos = end;
                }
                None => {
                    out.push(self.unk_id);
                    pos = if pos == 0 { (marker_chars + 1).min(n) } else { pos + 1 };
                }
            }
        }
        out
    }

    /// Segments one word into piece strings.
    pub fn segment_word(&self, word: &str) -> Vec<&str> {
        self.segment_word_ids(word)
            .into_iter()
            .map(|id| self.piece(id).unwrap_or(UNK_PIECE))
            .collect()
    }

    /// Concatenated segmentation of a word sequence.
    pub fn segment_phrase<S: AsRef<str>>(&self, words: &[S]) -> Vec<u32> {
        words
            .iter()
            .flat_map(|w| self.segment_word_ids(w.as_ref()))
            .collect()
    }

    /// Joins pieces into words, starting a new word at every marker-bearing
    /// piece and stripping the marker.
    pub fn detokenize<S: AsRef<str>>(&self, pieces: &[S]) -> Vec<String> {
        let mut words: Vec<String> = Vec::new();
        for piece in pieces {
            let piece = piece.as_ref();
            match piece.strip_prefix(self.marker.as_str()) {
                Some(body) => words.push(body.to_string()),
                None => match words.last_mut() {
                    Some(last) => last.push_str(piece),
                    None => words.push(piece.to_string()),
                },
            }
        }
        words
    }

    pub fn detokenize_ids(&self, ids: &[u32]) -> Vec<String> {
        let pieces: Vec<&str> = ids
            .iter()
            .map(|&id| self.piece(id).unwrap_or(UNK_PIECE))
            .collect();
        self.detokenize(&pieces)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> SubwordVocab {
        SubwordVocab::from_pieces(["▁ca", "▁c", "a", "t", "n"], "▁").unwrap()
    }

    #[test]
    fn load_assigns_line_order_ids() {
        let v = SubwordVocab::from_lines("▁ca\n▁c\na\nt\nn\n").unwrap();
        assert_eq!(v.len(), 5);
        for (i, p) in ["▁ca", "▁c", "a", "t", "n"].iter().enumerate() {
            assert_eq!(v.id(p), Some(i as u32));
        }
        assert_eq!(v.unk_id(), 5);
    }

    #[test]
    fn load_errors() {
        assert_eq!(
            SubwordVocab::from_lines("a\na\n").unwrap_err(),
            VocabError::DuplicatePiece {
                line: 2,
                piece: "a".into()
            }
        );
        assert_eq!(SubwordVocab::from_lines("").unwrap_err(), VocabError::Empty);
        assert!(matches!(
            SubwordVocab::from_lines("a\n\nb").unwrap_err(),
            VocabError::EmptyPiece { line: 2 }
        ));
        assert!(matches!(
            SubwordVocab::from_lines("a▁b").unwrap_err(),
            VocabError::MarkerInsidePiece { .. }
        ));
    }

    #[test]
    fn sentencepiece_layout_and_unk_piece() {
        let v = SubwordVocab::from_lines("<unk>\t0\n▁x\t-1.5\ny\t-2\n").unwrap();
        assert_eq!(v.unk_id(), 0);
        assert_eq!(v.id("▁x"), Some(1));
        assert_eq!(v.segment_word_ids("xyz"), vec![1, 2, 0]);
    }

    #[test]
    fn segment_word_examples() {
        let v = toy();
        assert_eq!(v.segment_word("cat"), vec!["▁ca", "t"]);
        assert_eq!(v.segment_word("can"), vec!["▁ca", "n"]);
        assert_eq!(v.segment_word_ids("xt"), vec![v.unk_id(), 3]);
        // Each uncovered character is its own unknown unit.
        assert_eq!(v.segment_word_ids("cxx"), vec![1, 5, 5]);
    }

    #[test]
    fn segment_phrase_examples() {
        let v = toy();
        assert_eq!(v.segment_phrase(&["can", "can"]), vec![0, 4, 0, 4]);
        let single = SubwordVocab::from_pieces(["▁hello"], "▁").unwrap();
        assert_eq!(single.segment_phrase(&["hello"]), vec![0]);
        assert!(v.segment_phrase::<&str>(&[]).is_empty());
    }

    #[test]
    fn detokenize_examples() {
        let v = toy();
        assert_eq!(v.detokenize(&["▁ca", "t", "▁ca", "n"]), vec!["cat", "can"]);
        assert_eq!(v.detokenize(&["▁c"]), vec!["c"]);
        assert!(v.detokenize::<&str>(&[]).is_empty());
        assert_eq!(v.detokenize_ids(&[0, 3, 0, 4]), vec!["cat", "can"]);
    }

    #[test]
    fn multibyte_marker_and_text() {
        let v = SubwordVocab::from_pieces(["@@zü", "rich", "ü"], "@@").unwrap();
        assert_eq!(v.segment_word_ids("zürich"), vec![0, 1]);
        assert_eq!(v.detokenize_ids(&[0, 1]), vec!["zürich"]);
    }
}

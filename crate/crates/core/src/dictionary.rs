//! Quiz vocabulary and question selection.

use std::collections::{BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;
use unicode_segmentation::UnicodeSegmentation;

use crate::board_geometry::BoardLayout;
use crate::engine::GameConfig;

/// Built-in hiragana word list.
pub const DEFAULT_WORDS: &str = include_str!("../data/words.txt");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DictionaryError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no eligible word for length {min}..={max} with {hidden} hidden letters")]
    DictionaryExhausted { min: u32, max: u32, hidden: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DictionaryEntry {
    /// NFC-normalized extended grapheme clusters.
    pub glyphs: Vec<String>,
    pub tags: Vec<String>,
}

impl DictionaryEntry {
    pub fn parse(word: &str) -> Self {
        Self { glyphs: split_glyphs(word), tags: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.glyphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glyphs.is_empty()
    }

    pub fn word(&self) -> String {
        self.glyphs.concat()
    }
}

/// NFC-normalizes `text` and splits it into grapheme clusters.
pub fn split_glyphs(text: &str) -> Vec<String> {
    let nfc: String = text.nfc().collect();
    nfc.graphemes(true).map(str::to_owned).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionWord {
    pub entry: DictionaryEntry,
    pub hidden_mask: Vec<bool>,
    pub first_letter_clue_index: usize,
}

impl QuestionWord {
    pub fn hidden_positions(&self) -> Vec<usize> {
        self.hidden_mask.iter().enumerate().filter(|(_, h)| **h).map(|(i, _)| i).collect()
    }

    pub fn word(&self) -> String {
        self.entry.word()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dictionary {
    entries: Vec<DictionaryEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    pub dictionary: Dictionary,
    pub loaded: usize,
    /// Duplicates and lines that are not a single word.
    pub rejected: usize,
}

impl Dictionary {
    pub fn from_entries(entries: Vec<DictionaryEntry>) -> Self {
        Self { entries }
    }

    pub fn builtin() -> Self {
        load_dictionary(DEFAULT_WORDS.as_bytes()).expect("built-in word list parses").dictionary
    }

    pub fn entries(&self) -> &[DictionaryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Parses a UTF-8 word list: one word per line, optional tab-separated tags,
/// `#` comments and blank lines skipped. Later duplicates are rejected.
pub fn load_dictionary(source: &[u8]) -> Result<LoadReport, DictionaryError> {
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    let mut rejected = 0;
    for (i, raw) in source.split(|b| *b == b'\n').enumerate() {
        let line = std::str::from_utf8(raw)
            .map_err(|e| DictionaryError::Parse { line: i + 1, message: e.to_string() })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let word = fields.next().unwrap_or_default().trim();
        if word.is_empty() || word.chars().any(|c| c.is_whitespace() || c.is_control()) {
            rejected += 1;
            continue;
        }
        let mut entry = DictionaryEntry::parse(word);
        entry.tags = fields.map(str::trim).filter(|t| !t.is_empty()).map(str::to_owned).collect();
        if seen.insert(entry.glyphs.clone()) {
            entries.push(entry);
        } else {
            rejected += 1;
        }
    }
    let loaded = entries.len();
    Ok(LoadReport { dictionary: Dictionary { entries }, loaded, rejected })
}

fn representable_positions(entry: &DictionaryEntry, layout: &BoardLayout) -> Vec<usize> {
    entry
        .glyphs
        .iter()
        .enumerate()
        .filter(|(_, g)| layout.contains_glyph(g))
        .map(|(i, _)| i)
        .collect()
}

pub fn is_eligible(entry: &DictionaryEntry, layout: &BoardLayout, config: &GameConfig) -> bool {
    let n = entry.len() as u32;
    n >= config.min_letters
        && n <= config.max_letters
        && representable_positions(entry, layout).len() as u32 >= config.hidden_count
}

/// Picks a question uniformly among eligible words.
pub fn select_question<R: Rng + ?Sized>(
    dict: &Dictionary,
    layout: &BoardLayout,
    config: &GameConfig,
    rng: &mut R,
) -> Result<QuestionWord, DictionaryError> {
    select_question_excluding(dict, layout, config, &BTreeSet::new(), rng)
}

/// As [`select_question`], skipping words already used in this session
/// unless every eligible word has been used.
pub fn select_question_excluding<R: Rng + ?Sized>(
    dict: &Dictionary,
    layout: &BoardLayout,
    config: &GameConfig,
    used_words: &BTreeSet<String>,
    rng: &mut R,
) -> Result<QuestionWord, DictionaryError> {
    let eligible: Vec<&DictionaryEntry> =
        dict.entries.iter().filter(|e| is_eligible(e, layout, config)).collect();
    if eligible.is_empty() {
        return Err(DictionaryError::DictionaryExhausted {
            min: config.min_letters,
            max: config.max_letters,
            hidden: config.hidden_count,
        });
    }
    let fresh: Vec<&DictionaryEntry> =
        eligible.iter().copied().filter(|e| !used_words.contains(&e.word())).collect();
    let pool = if fresh.is_empty() { &eligible } else { &fresh };
    let entry = (*pool.choose(rng).expect("non-empty pool")).clone();

    let k = config.hidden_count as usize;
    let candidates = representable_positions(&entry, layout);
    let non_first: Vec<usize> = candidates.iter().copied().filter(|&i| i != 0).collect();
    let mut pool = if non_first.len() >= k { non_first } else { candidates };
    pool.shuffle(rng);
    let mut hidden_mask = vec![false; entry.len()];
    for &i in &pool[..k] {
        hidden_mask[i] = true;
    }
    Ok(QuestionWord { entry, hidden_mask, first_letter_clue_index: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;

    fn cfg(min: u32, max: u32, hidden: u32) -> GameConfig {
        GameConfig { min_letters: min, max_letters: max, hidden_count: hidden, ..Default::default() }
    }

    #[test]
    fn empty_stream() {
        let r = load_dictionary(b"").unwrap();
        assert!(r.dictionary.is_empty());
        assert_eq!((r.loaded, r.rejected), (0, 0));
    }

    #[test]
    fn fixture_with_duplicate_and_blank() {
        let r = load_dictionary("さくらもち\n\nおにぎり\nさくらもち\n".as_bytes()).unwrap();
        assert_eq!(r.dictionary.len(), 2);
        assert_eq!((r.loaded, r.rejected), (2, 1));
    }

    #[test]
    fn decomposed_input_is_normalized_and_deduplicated() {
        let r = load_dictionary("か\u{3099}っこう\nがっこう\n".as_bytes()).unwrap();
        assert_eq!(r.dictionary.len(), 1);
        assert_eq!(r.dictionary.entries()[0].glyphs, ["が", "っ", "こ", "う"]);
    }

    #[test]
    fn tags_parsed() {
        let r = load_dictionary("たこやき\tfood\teasy\n".as_bytes()).unwrap();
        assert_eq!(r.dictionary.entries()[0].tags, ["food", "easy"]);
    }

    #[test]
    fn invalid_utf8_reports_line() {
        let err = load_dictionary(b"abc\n\xff\xfe\n").unwrap_err();
        assert!(matches!(err, DictionaryError::Parse { line: 2, .. }));
    }

    #[test]
    fn builtin_list_has_default_game_words() {
        let dict = Dictionary::builtin();
        let layout = BoardLayout::gojuon();
        let n = dict.entries().iter().filter(|e| is_eligible(e, &layout, &GameConfig::default())).count();
        assert!(n >= 80, "{n}");
    }

    #[test]
    fn forced_single_word() {
        let dict = load_dictionary("さくらもち\n".as_bytes()).unwrap().dictionary;
        let q = select_question(&dict, &BoardLayout::gojuon(), &cfg(5, 5, 3), &mut seed::rng(1)).unwrap();
        assert_eq!(q.word(), "さくらもち");
        assert_eq!(q.hidden_positions().len(), 3);
        assert!(!q.hidden_mask[0]);
        assert_eq!(q.first_letter_clue_index, 0);
    }

    #[test]
    fn diacritic_never_hidden() {
        // ぼ is not on the board
        let dict = load_dictionary("かくれんぼ\n".as_bytes()).unwrap().dictionary;
        let layout = BoardLayout::gojuon();
        for s in 0..200 {
            let q = select_question(&dict, &layout, &cfg(5, 5, 3), &mut seed::rng(s)).unwrap();
            assert!(!q.hidden_mask[4]);
            assert_eq!(q.hidden_positions(), [1, 2, 3]);
        }
    }

    #[test]
    fn first_letter_used_only_when_needed() {
        // only あ, い, さ, つ are on the board
        let dict = load_dictionary("あじさいつ\n".as_bytes()).unwrap().dictionary;
        let q = select_question(&dict, &BoardLayout::gojuon(), &cfg(5, 5, 4), &mut seed::rng(0)).unwrap();
        assert_eq!(q.hidden_positions(), [0, 2, 3, 4]);
    }

    #[test]
    fn no_eligible_word() {
        let dict = load_dictionary("ごちそうさま\n".as_bytes()).unwrap().dictionary;
        let err = select_question(&dict, &BoardLayout::gojuon(), &cfg(4, 5, 3), &mut seed::rng(0)).unwrap_err();
        assert!(matches!(err, DictionaryError::DictionaryExhausted { .. }));
    }

    #[test]
    fn same_seed_same_selection() {
        let dict = Dictionary::builtin();
        let layout = BoardLayout::gojuon();
        let run = |s| {
            let mut rng = seed::rng(s);
            (0..100)
                .map(|_| select_question(&dict, &layout, &GameConfig::default(), &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn used_words_are_skipped_until_exhausted() {
        let dict = load_dictionary("さくらもち\nかしわもち\n".as_bytes()).unwrap().dictionary;
        let layout = BoardLayout::gojuon();
        let mut used = BTreeSet::new();
        let mut rng = seed::rng(5);
        for _ in 0..2 {
            let q = select_question_excluding(&dict, &layout, &cfg(5, 5, 3), &used, &mut rng).unwrap();
            assert!(used.insert(q.word()));
        }
        let q = select_question_excluding(&dict, &layout, &cfg(5, 5, 3), &used, &mut rng).unwrap();
        assert!(used.contains(&q.word()));
    }

    #[test]
    fn selection_is_uniform() {
        let text: String = Dictionary::builtin()
            .entries()
            .iter()
            .filter(|e| is_eligible(e, &BoardLayout::gojuon(), &GameConfig::default()))
            .take(20)
            .map(|e| e.word() + "\n")
            .collect();
        let dict = load_dictionary(text.as_bytes()).unwrap().dictionary;
        assert_eq!(dict.len(), 20);
        let layout = BoardLayout::gojuon();
        let mut rng = seed::rng(77);
        let mut counts = std::collections::HashMap::new();
        let draws: f64 = 10_000.0;
        for _ in 0..draws as usize {
            let q = select_question(&dict, &layout, &GameConfig::default(), &mut rng).unwrap();
            *counts.entry(q.word()).or_insert(0.0f64) += 1.0;
        }
        let p = 1.0 / 20.0;
        let sd = (draws * p * (1.0 - p)).sqrt();
        for (w, c) in counts {
            assert!((c - draws * p).abs() <= 3.0 * sd, "{w}: {c}");
        }
    }

    proptest! {
        #[test]
        fn questions_satisfy_invariants(
            seed in any::<u64>(),
            picks in proptest::collection::vec(0usize..200, 1..30),
            hidden in 1u32..4,
            extra in 0u32..3,
        ) {
            let all = Dictionary::builtin();
            let entries: Vec<_> = picks.iter().map(|i| all.entries()[i % all.len()].clone()).collect();
            let dict = Dictionary::from_entries(entries);
            let layout = BoardLayout::gojuon();
            let config = cfg(hidden + 1, hidden + 1 + extra, hidden);
            match select_question(&dict, &layout, &config, &mut seed::rng(seed)) {
                Ok(q) => {
                    prop_assert_eq!(q.hidden_mask.len(), q.entry.len());
                    prop_assert_eq!(q.hidden_positions().len() as u32, hidden);
                    for i in q.hidden_positions() {
                        prop_assert!(layout.contains_glyph(&q.entry.glyphs[i]));
                    }
                    prop_assert_eq!(q.first_letter_clue_index, 0);
                    prop_assert!(is_eligible(&q.entry, &layout, &config));
                }
                Err(_) => {
                    prop_assert!(!dict.entries().iter().any(|e| is_eligible(e, &layout, &config)));
                }
            }
        }
    }
}

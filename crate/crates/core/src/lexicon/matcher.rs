//! Word-level matcher: lowercase, word boundaries, naive plural stripping,
//! longest match first.

use super::ObjectLexicon;

/// Plurals that naive suffix stripping gets wrong.
const IRREGULAR: &[(&str, &str)] = &[
    ("people", "person"),
    ("men", "man"),
    ("women", "woman"),
    ("children", "child"),
    ("mice", "mouse"),
    ("teeth", "tooth"),
    ("feet", "foot"),
    ("geese", "goose"),
    ("knives", "knife"),
    ("wives", "wife"),
    ("oxen", "ox"),
    ("calves", "calf"),
];

/// Words ending in "s" that are not plurals of a lexicon form.
const NO_STRIP: &[&str] = &[
    "glasses",
    "sunglasses",
    "eyeglasses",
    "species",
    "series",
    "news",
];

/// Splits a surface form into lowercase alphanumeric words.
pub(crate) fn split_words(form: &str) -> Vec<String> {
    form.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Singular forms to try for a lowercase word, most specific first.
pub fn singular_candidates(word: &str) -> Vec<String> {
    if let Some(&(_, singular)) = IRREGULAR.iter().find(|(plural, _)| *plural == word) {
        return vec![singular.to_string()];
    }
    if NO_STRIP.contains(&word) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let n = word.len();
    if n > 4 && word.ends_with("ies") {
        out.push(format!("{}y", &word[..n - 3]));
    }
    if n > 3 && word.ends_with("es") {
        out.push(word[..n - 2].to_string());
    }
    if n > 2 && word.ends_with('s') && !word.ends_with("ss") {
        out.push(word[..n - 1].to_string());
    }
    out
}

struct Word {
    start: usize,
    end: usize,
    text: String,
}

fn caption_words(chars: &[char]) -> Vec<Word> {
    let mut words = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_alphanumeric() {
            let start = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            let text = chars[start..i]
                .iter()
                .flat_map(|c| c.to_lowercase())
                .collect();
            words.push(Word {
                start,
                end: i,
                text,
            });
        } else {
            i += 1;
        }
    }
    words
}

/// Consecutive words of a multi-word surface may only be separated by
/// spaces or hyphens.
fn adjacent(chars: &[char], a: &Word, b: &Word) -> bool {
    chars[a.end..b.start]
        .iter()
        .all(|c| c.is_whitespace() || *c == '-')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Hit {
    pub start: usize,
    pub end: usize,
    pub class: usize,
}

/// Every non-overlapping lexicon match in caption order.
pub(crate) fn find_matches(chars: &[char], lex: &ObjectLexicon) -> Vec<Hit> {
    let words = caption_words(chars);
    let mut hits = Vec::new();
    let mut i = 0;
    'outer: while i < words.len() {
        let longest = lex.max_words.min(words.len() - i);
        for len in (1..=longest).rev() {
            let span = &words[i..i + len];
            if !span.windows(2).all(|w| adjacent(chars, &w[0], &w[1])) {
                continue;
            }
            let mut key: Vec<String> = span.iter().map(|w| w.text.clone()).collect();
            let last = key.pop().expect("len >= 1");
            let candidates = std::iter::once(last.clone()).chain(singular_candidates(&last));
            for candidate in candidates {
                key.push(candidate);
                if let Some(&class) = lex.surfaces.get(&key) {
                    hits.push(Hit {
                        start: span[0].start,
                        end: span[len - 1].end,
                        class,
                    });
                    i += len;
                    continue 'outer;
                }
                key.pop();
            }
        }
        i += 1;
    }
    hits
}

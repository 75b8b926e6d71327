//! Object mentions: CHAIR-style caption matching and ground-truth labeling.

mod matcher;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::SampleTrace;

pub use matcher::singular_candidates;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("i/o failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse failure: {0}")]
    ParseFailure(String),
    #[error("surface form {form:?} maps to both {class_a:?} and {class_b:?}")]
    DuplicateSurface {
        form: String,
        class_a: String,
        class_b: String,
    },
    #[error("sample {sample_id}: match {surface:?} at char {offset} is not covered by any generated token")]
    SpanAlignmentFailure {
        sample_id: String,
        surface: String,
        offset: usize,
    },
    #[error("no annotation for image {0:?}")]
    MissingAnnotation(String),
}

/// One object class and its synonyms. All surface forms are lowercase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectClass {
    pub canonical: String,
    #[serde(default)]
    pub synonyms: BTreeSet<String>,
}

/// A set of object classes with a surface-form index.
#[derive(Debug, Clone)]
pub struct ObjectLexicon {
    classes: Vec<ObjectClass>,
    /// Surface form split into words -> class index.
    surfaces: HashMap<Vec<String>, usize>,
    max_words: usize,
}

const MSCOCO80: &str = include_str!("../../data/mscoco80_lexicon.json");

impl ObjectLexicon {
    /// Normalizes every form to lowercase and rejects forms shared between classes.
    pub fn new(classes: Vec<ObjectClass>) -> Result<Self, LexiconError> {
        let mut normalized = Vec::with_capacity(classes.len());
        let mut surfaces: HashMap<Vec<String>, usize> = HashMap::new();
        let mut owner: HashMap<Vec<String>, String> = HashMap::new();
        for (idx, class) in classes.into_iter().enumerate() {
            let canonical = class.canonical.trim().to_lowercase();
            let synonyms: BTreeSet<String> = class
                .synonyms
                .iter()
                .map(|s| s.trim().to_lowercase())
                .filter(|s| *s != canonical)
                .collect();
            for form in std::iter::once(&canonical).chain(&synonyms) {
                let words = matcher::split_words(form);
                if words.is_empty() {
                    return Err(LexiconError::ParseFailure(format!(
                        "class {canonical:?} has a surface form without letters or digits"
                    )));
                }
                if let Some(prev) = owner.get(&words) {
                    return Err(LexiconError::DuplicateSurface {
                        form: form.clone(),
                        class_a: prev.clone(),
                        class_b: canonical.clone(),
                    });
                }
                owner.insert(words.clone(), canonical.clone());
                surfaces.insert(words, idx);
            }
            normalized.push(ObjectClass {
                canonical,
                synonyms,
            });
        }
        let max_words = surfaces.keys().map(Vec::len).max().unwrap_or(0);
        Ok(Self {
            classes: normalized,
            surfaces,
            max_words,
        })
    }

    /// The 80 MSCOCO object classes with a best-effort synonym list.
    pub fn mscoco80() -> Self {
        Self::from_json(MSCOCO80).expect("bundled lexicon is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, LexiconError> {
        let classes: Vec<ObjectClass> =
            serde_json::from_str(text).map_err(|e| LexiconError::ParseFailure(e.to_string()))?;
        Self::new(classes)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.classes).expect("lexicon serializes")
    }

    pub fn classes(&self) -> &[ObjectClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, canonical: &str) -> bool {
        self.classes.iter().any(|c| c.canonical == canonical)
    }

    /// Canonical class of an exact (already singular) surface form.
    pub fn canonical_of(&self, surface: &str) -> Option<&str> {
        let words = matcher::split_words(&surface.to_lowercase());
        self.surfaces
            .get(&words)
            .map(|&i| self.classes[i].canonical.as_str())
    }
}

pub fn load_lexicon(path: &Path) -> Result<ObjectLexicon, LexiconError> {
    let text = fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ObjectLexicon::from_json(&text)
}

/// Ground-truth object classes per image.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnnotationSet {
    pub images: BTreeMap<String, BTreeSet<String>>,
}

impl AnnotationSet {
    /// Checks that every class name exists in `lex`.
    pub fn from_json(text: &str, lex: &ObjectLexicon) -> Result<Self, LexiconError> {
        let set: AnnotationSet =
            serde_json::from_str(text).map_err(|e| LexiconError::ParseFailure(e.to_string()))?;
        for (image, classes) in &set.images {
            if let Some(unknown) = classes.iter().find(|c| !lex.contains(c)) {
                return Err(LexiconError::ParseFailure(format!(
                    "image {image:?} names class {unknown:?} which is not in the lexicon"
                )));
            }
        }
        Ok(set)
    }

    pub fn get(&self, image_id: &str) -> Option<&BTreeSet<String>> {
        self.images.get(image_id)
    }
}

pub fn load_annotations(path: &Path, lex: &ObjectLexicon) -> Result<AnnotationSet, LexiconError> {
    let text = fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    AnnotationSet::from_json(&text, lex)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Real,
    Hallucinated,
    #[default]
    Unlabeled,
}

impl Label {
    /// `Some(true)` for real, `Some(false)` for hallucinated.
    pub fn as_bool(self) -> Option<bool> {
        match self {
            Label::Real => Some(true),
            Label::Hallucinated => Some(false),
            Label::Unlabeled => None,
        }
    }
}

/// An object occurrence in a generated caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectMention {
    pub sample_id: String,
    /// Matched text, lowercased, as it appears in the caption.
    pub surface: String,
    pub canonical: String,
    /// Index of the generated token holding the first character of the match.
    pub token_index: usize,
    pub first_token_id: u32,
    /// Half-open character range of the match.
    pub char_span: (usize, usize),
    #[serde(default)]
    pub label: Label,
}

/// Finds the first occurrence of every lexicon class in the caption.
pub fn extract_mentions(
    trace: &SampleTrace,
    lex: &ObjectLexicon,
) -> Result<Vec<ObjectMention>, LexiconError> {
    let chars: Vec<char> = trace.generated_text.chars().collect();
    let mut mentions = Vec::new();
    let mut seen = BTreeSet::new();
    for hit in matcher::find_matches(&chars, lex) {
        let canonical = &lex.classes[hit.class].canonical;
        if !seen.insert(canonical.clone()) {
            continue;
        }
        let surface: String = chars[hit.start..hit.end]
            .iter()
            .flat_map(|c| c.to_lowercase())
            .collect();
        let token_index = trace
            .gen_tokens
            .iter()
            .position(|t| t.char_span.0 <= hit.start && hit.start < t.char_span.1)
            .ok_or_else(|| LexiconError::SpanAlignmentFailure {
                sample_id: trace.sample_id.clone(),
                surface: surface.clone(),
                offset: hit.start,
            })?;
        mentions.push(ObjectMention {
            sample_id: trace.sample_id.clone(),
            surface,
            canonical: canonical.clone(),
            token_index,
            first_token_id: trace.gen_tokens[token_index].token_id,
            char_span: (hit.start, hit.end),
            label: Label::Unlabeled,
        });
    }
    Ok(mentions)
}

/// Labels each mention real iff its class is annotated for `image_id`.
pub fn label_mentions(
    mentions: &[ObjectMention],
    annotations: &AnnotationSet,
    image_id: &str,
) -> Result<Vec<ObjectMention>, LexiconError> {
    let truth = annotations
        .get(image_id)
        .ok_or_else(|| LexiconError::MissingAnnotation(image_id.to_string()))?;
    Ok(mentions
        .iter()
        .map(|m| ObjectMention {
            label: if truth.contains(&m.canonical) {
                Label::Real
            } else {
                Label::Hallucinated
            },
            ..m.clone()
        })
        .collect())
}

pub fn write_mentions_jsonl<W: Write>(
    mut out: W,
    mentions: &[ObjectMention],
) -> std::io::Result<()> {
    for m in mentions {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_mentions_jsonl<R: BufRead>(input: R) -> Result<Vec<ObjectMention>, LexiconError> {
    let mut mentions = Vec::new();
    for (no, line) in input.lines().enumerate() {
        let line = line.map_err(|e| LexiconError::ParseFailure(format!("line {}: {e}", no + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        mentions.push(
            serde_json::from_str(&line)
                .map_err(|e| LexiconError::ParseFailure(format!("line {}: {e}", no + 1)))?,
        );
    }
    Ok(mentions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::GenToken;
    use std::collections::BTreeMap;

    /// Tokenizes on word boundaries: each word carries its leading spaces,
    /// punctuation characters are single tokens.
    fn trace_for(text: &str) -> SampleTrace {
        let chars: Vec<char> = text.chars().collect();
        let mut tokens = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let start = i;
            while i < chars.len() && chars[i] == ' ' {
                i += 1;
            }
            if i < chars.len() && chars[i].is_alphanumeric() {
                while i < chars.len() && chars[i].is_alphanumeric() {
                    i += 1;
                }
            } else if i < chars.len() {
                i += 1;
            }
            tokens.push(GenToken {
                token_id: tokens.len() as u32,
                logprob: -0.1,
                entropy: 0.5,
                char_span: (start, i),
            });
        }
        SampleTrace {
            sample_id: "s0".into(),
            image_id: "img0".into(),
            grid: (1, 1),
            n_visual: 1,
            layers: BTreeMap::new(),
            gen_tokens: tokens,
            var: BTreeMap::new(),
            generated_text: text.into(),
        }
    }

    fn lex(classes: &[(&str, &[&str])]) -> ObjectLexicon {
        ObjectLexicon::new(
            classes
                .iter()
                .map(|(c, syn)| ObjectClass {
                    canonical: c.to_string(),
                    synonyms: syn.iter().map(|s| s.to_string()).collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn canon(ms: &[ObjectMention]) -> Vec<&str> {
        ms.iter().map(|m| m.canonical.as_str()).collect()
    }

    #[test]
    fn keeps_first_occurrence_only() {
        let t = trace_for("A dog and a dog.");
        let ms = extract_mentions(&t, &lex(&[("dog", &[])])).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].char_span, (2, 5));
        assert_eq!(ms[0].token_index, 1);
    }

    #[test]
    fn plural_and_multiword() {
        let t = trace_for("A dining table near cakes.");
        let ms = extract_mentions(&t, &lex(&[("dining table", &[]), ("cake", &[])])).unwrap();
        assert_eq!(canon(&ms), ["dining table", "cake"]);
        assert_eq!(ms[1].surface, "cakes");
        assert_eq!(ms[0].token_index, 1);
    }

    #[test]
    fn word_boundary() {
        let t = trace_for("A hotdog stand.");
        assert!(extract_mentions(&t, &lex(&[("dog", &[])]))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn longest_match_wins() {
        let t = trace_for("A dining table and a table.");
        let l = lex(&[("dining table", &[]), ("desk", &["table"])]);
        let ms = extract_mentions(&t, &l).unwrap();
        assert_eq!(canon(&ms), ["dining table", "desk"]);
        assert_eq!(ms[1].char_span, (21, 26));
    }

    #[test]
    fn multiword_requires_adjacency() {
        let t = trace_for("A hot. Dog");
        let ms = extract_mentions(&t, &lex(&[("hot dog", &[]), ("dog", &[])])).unwrap();
        assert_eq!(canon(&ms), ["dog"]);
    }

    #[test]
    fn case_and_trailing_whitespace_invariant() {
        let l = ObjectLexicon::mscoco80();
        let a = extract_mentions(&trace_for("A Man riding a Horse near two Cars"), &l).unwrap();
        let b = extract_mentions(&trace_for("a man riding a horse near two cars   "), &l).unwrap();
        assert_eq!(canon(&a), canon(&b));
        assert_eq!(canon(&a), ["person", "horse", "car"]);
    }

    #[test]
    fn unaligned_match_is_an_error() {
        let mut t = trace_for("A dog.");
        t.gen_tokens.retain(|tok| tok.char_span.0 != 1);
        let err = extract_mentions(&t, &lex(&[("dog", &[])])).unwrap_err();
        assert!(matches!(
            err,
            LexiconError::SpanAlignmentFailure { offset: 2, .. }
        ));
    }

    #[test]
    fn labels_follow_annotations() {
        let t = trace_for("A dog near a dining table.");
        let l = ObjectLexicon::mscoco80();
        let ms = extract_mentions(&t, &l).unwrap();
        let ann = AnnotationSet::from_json(
            r#"{"img0": ["dog", "cat"], "img1": ["cake", "person"]}"#,
            &l,
        )
        .unwrap();
        let labeled = label_mentions(&ms, &ann, "img0").unwrap();
        assert_eq!(labeled[0].label, Label::Real);
        assert_eq!(labeled[1].label, Label::Hallucinated);
        let labeled = label_mentions(&ms, &ann, "img1").unwrap();
        assert_eq!(labeled[1].label, Label::Hallucinated);
        assert!(matches!(
            label_mentions(&ms, &ann, "missing"),
            Err(LexiconError::MissingAnnotation(id)) if id == "missing"
        ));
    }

    #[test]
    fn mscoco_has_80_classes() {
        assert_eq!(ObjectLexicon::mscoco80().len(), 80);
    }

    #[test]
    fn duplicate_surface_rejected() {
        let err = ObjectLexicon::from_json(
            r#"[{"canonical":"dog","synonyms":["puppy"]},{"canonical":"cat","synonyms":["Puppy"]}]"#,
        )
        .unwrap_err();
        match err {
            LexiconError::DuplicateSurface {
                form,
                class_a,
                class_b,
            } => {
                assert_eq!(form, "puppy");
                assert_eq!((class_a.as_str(), class_b.as_str()), ("dog", "cat"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_annotation_class_names_the_class() {
        let err = AnnotationSet::from_json(r#"{"img": ["unicorn"]}"#, &ObjectLexicon::mscoco80())
            .unwrap_err();
        assert!(matches!(err, LexiconError::ParseFailure(msg) if msg.contains("unicorn")));
    }

    #[test]
    fn mentions_jsonl_round_trip() {
        let t = trace_for("Two cats on a couch.");
        let ms = extract_mentions(&t, &ObjectLexicon::mscoco80()).unwrap();
        let mut buf = Vec::new();
        write_mentions_jsonl(&mut buf, &ms).unwrap();
        assert_eq!(read_mentions_jsonl(buf.as_slice()).unwrap(), ms);
    }
}

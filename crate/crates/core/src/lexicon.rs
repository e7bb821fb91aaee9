//! Synthetic word-embedding table.
//!
//! Nouns are partitioned into synonym groups. Words in one group have cosine
//! at least [`SYNONYM_MIN_COS`]; nouns from different groups have cosine at
//! most [`DISTINCT_MAX_COS`]. Both bounds are verified exhaustively when a
//! table is built or imported.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridscene::RoomType;
use crate::rng;

pub const DEFAULT_DIM: usize = 16;
pub const SYNONYM_MIN_COS: f64 = 0.8;
pub const DISTINCT_MAX_COS: f64 = 0.5;
pub const STOP_WORDS: [&str; 10] = ["a", "an", "the", "with", "and", "in", "on", "of", "is", "there"];
pub const WALL: &str = "wall";

/// Synonym groups. The first flag marks object categories a scene can
/// contain; the remaining words are caption-side synonyms.
const GROUPS: &[&[(&str, bool)]] = &[
    &[("couch", true), ("sofa", false)],
    &[("table", true), ("desk", true)],
    &[("chair", true), ("stool", false), ("seat", false)],
    &[("armchair", true), ("recliner", false)],
    &[("tv", true), ("television", false), ("screen", false)],
    &[("lamp", true), ("light", false)],
    &[("rug", true), ("carpet", false)],
    &[("bookshelf", true), ("bookcase", false)],
    &[("plant", true), ("houseplant", false)],
    &[("painting", true), ("picture", false), ("artwork", false)],
    &[("fireplace", true)],
    &[("window", true)],
    &[("curtain", true), ("drape", false)],
    &[("fridge", true), ("refrigerator", false)],
    &[("oven", true), ("stove", false)],
    &[("sink", true), ("basin", false)],
    &[("microwave", true)],
    &[("toaster", true)],
    &[("kettle", true)],
    &[("cabinet", true), ("cupboard", false)],
    &[("counter", true), ("countertop", false)],
    &[("dishwasher", true)],
    &[("bed", true), ("mattress", false)],
    &[("pillow", true), ("cushion", false)],
    &[("dresser", true), ("drawer", false)],
    &[("wardrobe", true), ("closet", false)],
    &[("nightstand", true)],
    &[("clock", true)],
    &[("mirror", true)],
    &[("blanket", true), ("quilt", false)],
    &[("toilet", true)],
    &[("bathtub", true), ("tub", false)],
    &[("shower", true)],
    &[("towel", true)],
    &[("soap", true)],
    &[("laptop", true), ("computer", false)],
    &[("vase", true)],
    &[("book", true), ("novel", false)],
    &[("bin", true), ("trashcan", false)],
    &[(WALL, false)],
];

const ROOM_LIVING: &[&str] = &[
    "couch", "table", "chair", "armchair", "tv", "lamp", "rug", "bookshelf", "plant", "painting",
    "fireplace", "window", "curtain", "vase", "book", "clock",
];
const ROOM_KITCHEN: &[&str] = &[
    "fridge", "oven", "sink", "microwave", "toaster", "kettle", "cabinet", "counter", "dishwasher",
    "table", "chair", "bin", "plant", "window", "clock",
];
const ROOM_BEDROOM: &[&str] = &[
    "bed", "pillow", "dresser", "wardrobe", "nightstand", "lamp", "desk", "chair", "laptop",
    "mirror", "blanket", "rug", "book", "window", "curtain",
];
const ROOM_BATHROOM: &[&str] = &[
    "toilet", "bathtub", "shower", "towel", "soap", "sink", "mirror", "cabinet", "bin", "rug",
    "plant", "window",
];

/// Object categories that procedural scenes of `room` draw from.
pub fn room_categories(room: RoomType) -> &'static [&'static str] {
    match room {
        RoomType::LivingRoom => ROOM_LIVING,
        RoomType::Kitchen => ROOM_KITCHEN,
        RoomType::Bedroom => ROOM_BEDROOM,
        RoomType::Bathroom => ROOM_BATHROOM,
    }
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("unknown word `{0}`")]
    UnknownWord(String),
    #[error("lexicon construction failed after {0} attempts")]
    ConstructionFailed(usize),
    #[error("invalid lexicon: {0}")]
    Invalid(String),
    #[error("lexicon JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordFlags {
    pub noun: bool,
    pub stop: bool,
    pub category: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    words: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    vectors: Vec<f64>,
    flags: Vec<WordFlags>,
    groups: Vec<Vec<usize>>,
    group_of: Vec<Option<usize>>,
    categories: Vec<usize>,
    nouns: Vec<usize>,
    bow_slot: Vec<Option<usize>>,
    bow_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct LexiconDoc {
    dim: usize,
    words: Vec<String>,
    flags: Vec<WordFlags>,
    groups: Vec<Vec<String>>,
    vectors: Vec<Vec<f64>>,
}

/// Plain description of a word for [`Lexicon::from_parts`].
#[derive(Clone, Debug)]
pub struct WordEntry {
    pub word: String,
    pub flags: WordFlags,
    pub vector: Vec<f64>,
}

const BUILD_ATTEMPTS: usize = 16;
const CENTER_TRIES: usize = 10_000;
const CENTER_MAX_COS: f64 = 0.3;
const MEMBER_NOISE: f64 = 0.06;

impl Lexicon {
    /// Builds the standard table with seeded, rejection-sampled vectors.
    pub fn build(seed: u64) -> Result<Self, LexiconError> {
        Self::build_with_dim(seed, DEFAULT_DIM)
    }

    pub fn build_with_dim(seed: u64, dim: usize) -> Result<Self, LexiconError> {
        let mut rng = rng::stream(&[rng::TAG_LEXICON, seed, dim as u64]);
        for _ in 0..BUILD_ATTEMPTS {
            if let Some(entries) = sample_entries(&mut rng, dim) {
                let groups = GROUPS
                    .iter()
                    .map(|g| g.iter().map(|(w, _)| w.to_string()).collect())
                    .collect();
                match Lexicon::from_parts(entries, groups) {
                    Ok(lex) => return Ok(lex),
                    Err(LexiconError::Invalid(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
        }
        Err(LexiconError::ConstructionFailed(BUILD_ATTEMPTS))
    }

    /// Assembles a table from explicit words and synonym groups, checking
    /// every invariant. Vectors are normalized.
    pub fn from_parts(entries: Vec<WordEntry>, groups: Vec<Vec<String>>) -> Result<Self, LexiconError> {
        let dim = entries.first().map_or(0, |e| e.vector.len());
        if dim == 0 {
            return Err(LexiconError::Invalid("empty vocabulary or zero dimension".into()));
        }
        let mut index = HashMap::new();
        let mut words = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len() * dim);
        let mut flags = Vec::with_capacity(entries.len());
        for (i, e) in entries.into_iter().enumerate() {
            if e.vector.len() != dim {
                return Err(LexiconError::Invalid(format!("`{}` has dimension {}", e.word, e.vector.len())));
            }
            let norm = e.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() || norm == 0.0 {
                return Err(LexiconError::Invalid(format!("`{}` has a zero or non-finite vector", e.word)));
            }
            if index.insert(e.word.clone(), i).is_some() {
                return Err(LexiconError::Invalid(format!("duplicate word `{}`", e.word)));
            }
            if e.flags.category && !e.flags.noun {
                return Err(LexiconError::Invalid(format!("category `{}` is not a noun", e.word)));
            }
            if e.flags.noun && e.flags.stop {
                return Err(LexiconError::Invalid(format!("`{}` is both noun and stop word", e.word)));
            }
            // Already-normalized vectors are kept bit-exact so export/import
            // round-trips.
            let scale = if (norm - 1.0).abs() < 1e-12 { 1.0 } else { norm };
            vectors.extend(e.vector.iter().map(|v| v / scale));
            words.push(e.word);
            flags.push(e.flags);
        }

        let mut group_of = vec![None; words.len()];
        let mut group_ids = Vec::with_capacity(groups.len());
        for (g, members) in groups.iter().enumerate() {
            let mut ids = Vec::with_capacity(members.len());
            for w in members {
                let &id = index
                    .get(w)
                    .ok_or_else(|| LexiconError::Invalid(format!("group member `{w}` not in vocabulary")))?;
                if !flags[id].noun {
                    return Err(LexiconError::Invalid(format!("group member `{w}` is not a noun")));
                }
                if group_of[id].replace(g).is_some() {
                    return Err(LexiconError::Invalid(format!("`{w}` appears in two groups")));
                }
                ids.push(id);
            }
            group_ids.push(ids);
        }
        for (i, f) in flags.iter().enumerate() {
            if f.noun && group_of[i].is_none() {
                return Err(LexiconError::Invalid(format!("noun `{}` has no synonym group", words[i])));
            }
        }

        let categories: Vec<usize> = (0..words.len()).filter(|&i| flags[i].category).collect();
        if categories.is_empty() {
            return Err(LexiconError::Invalid("no object categories".into()));
        }
        let nouns = (0..words.len()).filter(|&i| flags[i].noun).collect();
        let mut bow_slot = vec![None; words.len()];
        let mut bow_dim = 0;
        for (i, f) in flags.iter().enumerate() {
            if !f.stop {
                bow_slot[i] = Some(bow_dim);
                bow_dim += 1;
            }
        }

        let lex = Lexicon {
            words,
            index,
            dim,
            vectors,
            flags,
            groups: group_ids,
            group_of,
            categories,
            nouns,
            bow_slot,
            bow_dim,
        };
        lex.check_cosine_bounds()?;
        Ok(lex)
    }

    fn check_cosine_bounds(&self) -> Result<(), LexiconError> {
        for (a, &na) in self.nouns.iter().enumerate() {
            for &nb in &self.nouns[a + 1..] {
                let c = self.cosine_ids(na, nb);
                let same = self.group_of[na] == self.group_of[nb];
                if same && c < SYNONYM_MIN_COS {
                    return Err(LexiconError::Invalid(format!(
                        "synonyms `{}`/`{}` have cosine {c:.3}",
                        self.words[na], self.words[nb]
                    )));
                }
                if !same && c > DISTINCT_MAX_COS {
                    return Err(LexiconError::Invalid(format!(
                        "distinct nouns `{}`/`{}` have cosine {c:.3}",
                        self.words[na], self.words[nb]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn flags(&self, word: &str) -> Option<WordFlags> {
        self.id(word).map(|i| self.flags[i])
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        &self.vectors[id * self.dim..(id + 1) * self.dim]
    }

    pub fn is_noun(&self, word: &str) -> bool {
        self.flags(word).is_some_and(|f| f.noun)
    }

    pub fn is_category(&self, word: &str) -> bool {
        self.flags(word).is_some_and(|f| f.category)
    }

    /// Object category words, in vocabulary order. `N` is its length.
    pub fn categories(&self) -> impl ExactSizeIterator<Item = &str> + '_ {
        self.categories.iter().map(|&i| self.words[i].as_str())
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    /// Position of `word` among the categories.
    pub fn category_index(&self, word: &str) -> Option<usize> {
        let id = self.id(word)?;
        self.categories.binary_search(&id).ok()
    }

    pub fn nouns(&self) -> impl Iterator<Item = &str> + '_ {
        self.nouns.iter().map(|&i| self.words[i].as_str())
    }

    pub fn synonym_groups(&self) -> impl Iterator<Item = Vec<&str>> + '_ {
        self.groups
            .iter()
            .map(|g| g.iter().map(|&i| self.words[i].as_str()).collect())
    }

    pub fn same_group(&self, a: &str, b: &str) -> bool {
        match (self.id(a), self.id(b)) {
            (Some(x), Some(y)) => self.group_of[x].is_some() && self.group_of[x] == self.group_of[y],
            _ => false,
        }
    }

    fn cosine_ids(&self, a: usize, b: usize) -> f64 {
        let dot: f64 = self.vector(a).iter().zip(self.vector(b)).map(|(x, y)| x * y).sum();
        dot.clamp(-1.0, 1.0)
    }

    pub fn cosine(&self, a: &str, b: &str) -> Result<f64, LexiconError> {
        let ia = self.id(a).ok_or_else(|| LexiconError::UnknownWord(a.into()))?;
        let ib = self.id(b).ok_or_else(|| LexiconError::UnknownWord(b.into()))?;
        Ok(self.cosine_ids(ia, ib))
    }

    /// Noun tokens in order of appearance; duplicates are kept.
    pub fn extract_nouns<S: AsRef<str>>(&self, caption: &[S]) -> Vec<String> {
        caption
            .iter()
            .map(AsRef::as_ref)
            .filter(|t| self.flags(t).is_some_and(|f| f.noun && !f.stop))
            .map(str::to_string)
            .collect()
    }

    /// Dimension of [`Lexicon::bow`] vectors.
    pub fn bow_dim(&self) -> usize {
        self.bow_dim
    }

    /// Bag-of-words counts over the non-stop vocabulary.
    pub fn bow<S: AsRef<str>>(&self, caption: &[S]) -> Vec<f64> {
        let mut out = vec![0.0; self.bow_dim];
        for t in caption {
            if let Some(slot) = self.id(t.as_ref()).and_then(|i| self.bow_slot[i]) {
                out[slot] += 1.0;
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let doc = LexiconDoc {
            dim: self.dim,
            words: self.words.clone(),
            flags: self.flags.clone(),
            groups: self.synonym_groups().map(|g| g.into_iter().map(String::from).collect()).collect(),
            vectors: (0..self.len()).map(|i| self.vector(i).to_vec()).collect(),
        };
        serde_json::to_string(&doc).expect("lexicon serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LexiconError> {
        let doc: LexiconDoc = serde_json::from_str(text)?;
        if doc.words.len() != doc.flags.len() || doc.words.len() != doc.vectors.len() {
            return Err(LexiconError::Invalid("words, flags and vectors differ in length".into()));
        }
        if doc.vectors.iter().any(|v| v.len() != doc.dim) {
            return Err(LexiconError::Invalid(format!("vectors must have dimension {}", doc.dim)));
        }
        let entries = doc
            .words
            .into_iter()
            .zip(doc.flags)
            .zip(doc.vectors)
            .map(|((word, flags), vector)| WordEntry { word, flags, vector })
            .collect();
        Lexicon::from_parts(entries, doc.groups)
    }
}

fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One sampling pass: group centres by rejection against earlier centres,
/// members as small perturbations of their centre.
fn sample_entries(rng: &mut impl Rng, dim: usize) -> Option<Vec<WordEntry>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(GROUPS.len());
    for _ in GROUPS {
        let mut accepted = None;
        for _ in 0..CENTER_TRIES {
            let c = random_unit(rng, dim);
            if centers.iter().all(|o| dot(o, &c) <= CENTER_MAX_COS) {
                accepted = Some(c);
                break;
            }
        }
        centers.push(accepted?);
    }

    let mut entries = Vec::new();
    for (group, center) in GROUPS.iter().zip(&centers) {
        for &(word, category) in group.iter() {
            let noise = random_unit(rng, dim);
            let v: Vec<f64> = center.iter().zip(&noise).map(|(c, n)| c + MEMBER_NOISE * n).collect();
            entries.push(WordEntry {
                word: word.into(),
                flags: WordFlags {
                    noun: true,
                    stop: false,
                    category,
                },
                vector: v,
            });
        }
    }
    for room in RoomType::ALL {
        entries.push(WordEntry {
            word: room.word().into(),
            flags: WordFlags::default(),
            vector: random_unit(rng, dim),
        });
    }
    for w in STOP_WORDS {
        entries.push(WordEntry {
            word: w.into(),
            flags: WordFlags {
                noun: false,
                stop: true,
                category: false,
            },
            vector: random_unit(rng, dim),
        });
    }
    Some(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn build_is_deterministic_and_unit() {
        let a = Lexicon::build(5).unwrap();
        let b = Lexicon::build(5).unwrap();
        assert_eq!(a, b);
        for i in 0..a.len() {
            let n: f64 = a.vector(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn desk_and_table_are_synonyms() {
        let lex = Lexicon::build(1).unwrap();
        assert!(lex.same_group("desk", "table"));
        assert!(lex.cosine("desk", "table").unwrap() >= SYNONYM_MIN_COS);
        assert!(lex.is_category("desk") && lex.is_category("table"));
    }

    #[test]
    fn room_categories_are_in_vocabulary() {
        let lex = Lexicon::build(1).unwrap();
        for room in RoomType::ALL {
            for c in room_categories(room) {
                assert!(lex.is_category(c), "{c}");
            }
            assert!(!lex.is_noun(room.word()));
        }
        assert_eq!(lex.num_categories(), 40);
        assert!(lex.is_noun(WALL) && !lex.is_category(WALL));
    }

    #[test]
    fn cosine_identity_and_unknown() {
        let lex = Lexicon::build(1).unwrap();
        assert!((lex.cosine("couch", "couch").unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(lex.cosine("couch", "zebra"), Err(LexiconError::UnknownWord(w)) if w == "zebra"));
    }

    #[test]
    fn orthogonal_vectors() {
        let entries = vec![
            WordEntry {
                word: "x".into(),
                flags: WordFlags { noun: true, ..Default::default() },
                vector: vec![1.0, 0.0],
            },
            WordEntry {
                word: "y".into(),
                flags: WordFlags {
                    noun: true,
                    category: true,
                    stop: false,
                },
                vector: vec![0.0, 3.0],
            },
        ];
        let lex = Lexicon::from_parts(entries, vec![vec!["x".into()], vec!["y".into()]]).unwrap();
        assert_eq!(lex.cosine("x", "y").unwrap(), 0.0);
    }

    #[test]
    fn extract_nouns_cases() {
        let lex = Lexicon::build(1).unwrap();
        assert_eq!(lex.extract_nouns(&toks("a couch and a table")), vec!["couch", "table"]);
        assert_eq!(lex.extract_nouns(&toks("a wall with a wall")), vec!["wall", "wall"]);
        assert!(lex.extract_nouns::<&str>(&[]).is_empty());
        assert_eq!(lex.extract_nouns(&toks("a living_room with a zebra and a sofa")), vec!["sofa"]);
    }

    #[test]
    fn bow_cases() {
        let lex = Lexicon::build(1).unwrap();
        assert!(lex.bow::<&str>(&[]).iter().all(|&c| c == 0.0));
        let v = lex.bow(&toks("a couch and a couch"));
        assert_eq!(v.iter().sum::<f64>(), 2.0);
        assert_eq!(lex.bow_dim(), lex.len() - STOP_WORDS.len());
        let w = lex.bow(&toks("couch a and couch a"));
        assert_eq!(v, w);
    }

    #[test]
    fn json_roundtrip() {
        let lex = Lexicon::build(3).unwrap();
        let back = Lexicon::from_json(&lex.to_json()).unwrap();
        assert_eq!(lex, back);
    }
}

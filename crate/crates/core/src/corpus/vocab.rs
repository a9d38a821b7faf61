use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";
/// Tag carried by sentence-boundary tokens.
pub const EOS_TAG: &str = "EOS";

/// Bijective token ↔ id map with `<unk>` and `<eos>` always present.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    unk_id: usize,
    eos_id: usize,
}

impl Vocab {
    /// Vocabulary over `tokens` in the given id order; specials are appended if absent.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut token_to_id = HashMap::with_capacity(tokens.len() + 2);
        let mut id_to_token = Vec::with_capacity(tokens.len() + 2);
        for tok in tokens.into_iter().chain([UNK.to_string(), EOS.to_string()]) {
            if token_to_id.contains_key(&tok) {
                if tok == UNK || tok == EOS {
                    continue;
                }
                return Err(Error::Input(format!("duplicate vocabulary entry {tok:?}")));
            }
            token_to_id.insert(tok.clone(), id_to_token.len());
            id_to_token.push(tok);
        }
        let unk_id = token_to_id[UNK];
        let eos_id = token_to_id[EOS];
        Ok(Vocab {
            token_to_id,
            id_to_token,
            unk_id,
            eos_id,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        self.unk_id
    }

    pub fn eos_id(&self) -> usize {
        self.eos_id
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    /// Id of `token`, or the unk id.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(self.unk_id)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.id_to_token
    }
}

/// Keeps the `max_size` most frequent tokens seen at least `min_count` times,
/// ordering ties by first occurrence, then appends `<unk>` and `<eos>`.
pub fn build_vocab<'a, I>(tokens: I, max_size: Option<usize>, min_count: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut seen = 0;
    for tok in tokens {
        let next = counts.len();
        counts.entry(tok).or_insert((0, next)).0 += 1;
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::Input(
            "cannot build a vocabulary from an empty stream".into(),
        ));
    }
    let mut ranked: Vec<(&str, usize, usize)> = counts
        .into_iter()
        .filter(|(tok, (c, _))| *c >= min_count && *tok != UNK && *tok != EOS)
        .map(|(tok, (c, first))| (tok, c, first))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    if let Some(max) = max_size {
        ranked.truncate(max);
    }
    Vocab::from_tokens(ranked.into_iter().map(|(t, _, _)| t.to_string()).collect())
}

/// Bijective tag ↔ id map; the sentence-boundary tag is always present.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TagSet {
    tag_to_id: HashMap<String, usize>,
    id_to_tag: Vec<String>,
    eos_id: usize,
}

impl TagSet {
    pub fn from_tags(tags: Vec<String>) -> Result<Self> {
        let mut tag_to_id = HashMap::with_capacity(tags.len() + 1);
        let mut id_to_tag = Vec::with_capacity(tags.len() + 1);
        for tag in tags {
            if tag_to_id.contains_key(&tag) {
                return Err(Error::Input(format!("duplicate tag {tag:?}")));
            }
            tag_to_id.insert(tag.clone(), id_to_tag.len());
            id_to_tag.push(tag);
        }
        if !tag_to_id.contains_key(EOS_TAG) {
            tag_to_id.insert(EOS_TAG.to_string(), id_to_tag.len());
            id_to_tag.push(EOS_TAG.to_string());
        }
        if id_to_tag.len() < 2 {
            return Err(Error::Validation(
                "a tag set needs at least two tags".into(),
            ));
        }
        let eos_id = tag_to_id[EOS_TAG];
        Ok(TagSet {
            tag_to_id,
            id_to_tag,
            eos_id,
        })
    }

    /// Tags in first-occurrence order.
    pub fn from_stream<'a, I>(tags: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut order = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for t in tags {
            if seen.insert(t) {
                order.push(t.to_string());
            }
        }
        TagSet::from_tags(order)
    }

    pub fn len(&self) -> usize {
        self.id_to_tag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_tag.is_empty()
    }

    pub fn eos_id(&self) -> usize {
        self.eos_id
    }

    pub fn get(&self, tag: &str) -> Option<usize> {
        self.tag_to_id.get(tag).copied()
    }

    pub fn tag(&self, id: usize) -> Option<&str> {
        self.id_to_tag.get(id).map(String::as_str)
    }

    pub fn tags(&self) -> &[String] {
        &self.id_to_tag
    }
}

impl TryFrom<Vec<String>> for TagSet {
    type Error = Error;

    fn try_from(tags: Vec<String>) -> Result<Self> {
        TagSet::from_tags(tags)
    }
}

impl From<TagSet> for Vec<String> {
    fn from(t: TagSet) -> Self {
        t.id_to_tag
    }
}

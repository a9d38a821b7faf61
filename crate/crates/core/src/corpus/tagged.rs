//! Tagged corpora and the tab-separated sentence file format: one
//! `token<TAB>tag` pair per line, a blank line ends a sentence, and lines
//! starting with `#` are comments.

use std::fmt::Write as _;
use std::path::Path;

use super::vocab::{build_vocab, TagSet, Vocab};
use crate::error::{Error, Result};

/// A sentence as read from disk, before id mapping.
pub type RawSentence = Vec<(String, String)>;

#[derive(Clone, Debug, PartialEq)]
pub struct TaggedCorpus {
    sentences: Vec<Vec<(usize, usize)>>,
    vocab: Vocab,
    tags: TagSet,
}

/// Options for turning raw sentences into a [`TaggedCorpus`].
#[derive(Clone, Debug, Default)]
pub struct LoadOptions<'a> {
    /// Map tokens through this vocabulary (out-of-vocabulary tokens become unk).
    pub vocab: Option<&'a Vocab>,
    /// Require every tag to be present in this tag set.
    pub tags: Option<&'a TagSet>,
    pub max_vocab: Option<usize>,
    pub min_count: usize,
}

impl TaggedCorpus {
    pub fn new(sentences: Vec<Vec<(usize, usize)>>, vocab: Vocab, tags: TagSet) -> Result<Self> {
        for (i, s) in sentences.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Input(format!("sentence {i} is empty")));
            }
            for &(w, t) in s {
                if w >= vocab.len() {
                    return Err(Error::Index {
                        what: "vocabulary",
                        index: w,
                        bound: vocab.len(),
                    });
                }
                if t >= tags.len() {
                    return Err(Error::Index {
                        what: "tag set",
                        index: t,
                        bound: tags.len(),
                    });
                }
            }
        }
        Ok(TaggedCorpus {
            sentences,
            vocab,
            tags,
        })
    }

    pub fn from_raw(raw: &[RawSentence], opts: &LoadOptions<'_>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Input("corpus has no sentences".into()));
        }
        let vocab = match opts.vocab {
            Some(v) => v.clone(),
            None => build_vocab(
                raw.iter().flatten().map(|(w, _)| w.as_str()),
                opts.max_vocab,
                opts.min_count,
            )?,
        };
        let tags = match opts.tags {
            Some(t) => t.clone(),
            None => TagSet::from_stream(raw.iter().flatten().map(|(_, t)| t.as_str()))?,
        };
        let mut sentences = Vec::with_capacity(raw.len());
        for s in raw {
            let mut ids = Vec::with_capacity(s.len());
            for (w, t) in s {
                let tag = tags
                    .get(t)
                    .ok_or_else(|| Error::Schema(format!("tag {t:?} is not in the tag set")))?;
                ids.push((vocab.id(w), tag));
            }
            sentences.push(ids);
        }
        TaggedCorpus::new(sentences, vocab, tags)
    }

    pub fn sentences(&self) -> &[Vec<(usize, usize)>] {
        &self.sentences
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn tags(&self) -> &TagSet {
        &self.tags
    }

    /// Word tokens, not counting sentence boundaries.
    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    /// Sentences concatenated with an `<eos>` (tagged `EOS`) after each one.
    pub fn stream(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.num_tokens() + self.sentences.len();
        let mut words = Vec::with_capacity(n);
        let mut tags = Vec::with_capacity(n);
        for s in &self.sentences {
            for &(w, t) in s {
                words.push(w);
                tags.push(t);
            }
            words.push(self.vocab.eos_id());
            tags.push(self.tags.eos_id());
        }
        (words, tags)
    }

    /// Splits after the first `n` word tokens, cutting a sentence if needed.
    /// Both halves share this corpus's vocabulary and tag set.
    pub fn split_at_token(&self, n: usize) -> Result<(TaggedCorpus, TaggedCorpus)> {
        if n == 0 || n >= self.num_tokens() {
            return Err(Error::Input(format!(
                "split point {n} must lie strictly inside the corpus of {} tokens",
                self.num_tokens()
            )));
        }
        let mut head = Vec::new();
        let mut tail = Vec::new();
        let mut remaining = n;
        for s in &self.sentences {
            if remaining >= s.len() {
                remaining -= s.len();
                head.push(s.clone());
            } else if remaining > 0 {
                head.push(s[..remaining].to_vec());
                tail.push(s[remaining..].to_vec());
                remaining = 0;
            } else {
                tail.push(s.clone());
            }
        }
        Ok((
            TaggedCorpus::new(head, self.vocab.clone(), self.tags.clone())?,
            TaggedCorpus::new(tail, self.vocab.clone(), self.tags.clone())?,
        ))
    }

    /// The first `n` word tokens.
    pub fn truncate_tokens(&self, n: usize) -> Result<TaggedCorpus> {
        if n >= self.num_tokens() {
            return Ok(self.clone());
        }
        Ok(self.split_at_token(n)?.0)
    }

    pub fn to_conll_string(&self) -> Result<String> {
        let mut out = String::new();
        for s in &self.sentences {
            for &(w, t) in s {
                let tok = self.vocab.token(w).expect("validated id");
                let tag = self.tags.tag(t).expect("validated id");
                check_field(tok)?;
                check_field(tag)?;
                writeln!(out, "{tok}\t{tag}").expect("string write");
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save_conll(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_conll_string()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn check_field(s: &str) -> Result<()> {
    if s.is_empty() || s.starts_with('#') || s.contains(['\t', '\n', '\r']) || s.trim().is_empty() {
        return Err(Error::Input(format!(
            "{s:?} cannot be written as a tagged-corpus field"
        )));
    }
    Ok(())
}

/// Parses the tagged-corpus text format. Line numbers in errors are 1-based.
pub fn parse_conll(text: &str) -> Result<Vec<RawSentence>> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut sentences = Vec::new();
    let mut current: RawSentence = Vec::new();
    for (idx, line) in text.split('\n').enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let (token, tag) = match (cols.next(), cols.next(), cols.next()) {
            (Some(tok), Some(tag), None) => (tok, tag),
            (_, None, _) => {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: "missing tag column".into(),
                })
            }
            _ => {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: "expected exactly two tab-separated columns".into(),
                })
            }
        };
        if token.is_empty() || tag.trim().is_empty() {
            return Err(Error::Parse {
                line: idx + 1,
                message: "empty token or tag".into(),
            });
        }
        current.push((token.to_string(), tag.to_string()));
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    Ok(sentences)
}

pub fn load_conll(path: impl AsRef<Path>, opts: &LoadOptions<'_>) -> Result<TaggedCorpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TaggedCorpus::from_raw(&parse_conll(&text)?, opts)
}

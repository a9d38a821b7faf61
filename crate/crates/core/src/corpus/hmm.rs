//! Synthetic tagged corpora sampled from a hidden Markov model. The hidden
//! state is emitted as the tag, and the generator reports exact predictive
//! perplexities that serve as floors for trained models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tagged::TaggedCorpus;
use super::vocab::{build_vocab, TagSet};
use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmmSpec {
    /// Number of hidden states.
    pub states: usize,
    /// `states × words` emission distributions.
    pub emissions: Vec<Vec<f64>>,
    /// `states × states` transition matrix.
    pub transitions: Vec<Vec<f64>>,
    pub seed: u64,
    /// Corpus length in word tokens.
    pub length: usize,
}

/// Exact predictive perplexities for a sampled corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmmReport {
    /// `exp(Σ_s π(s)·H(next word | current state s))` under the stationary distribution π.
    pub tag_oracle_ppl: f64,
    /// Tag-oracle predictor scored on the sampled stream.
    pub tag_oracle_empirical_ppl: f64,
    /// Forward filter `p(w_{t+1} | w_1..w_t)` scored on the sampled stream.
    pub filter_ppl: f64,
    pub stationary: Vec<f64>,
    /// Number of scored predictions (sampled tokens minus one).
    pub scored_tokens: usize,
}

pub fn state_tag(s: usize) -> String {
    format!("S{s}")
}

pub fn word_token(w: usize) -> String {
    format!("w{w}")
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Validation(format!(
            "{what} has a negative or non-finite probability"
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Validation(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

impl HmmSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: HmmSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn num_words(&self) -> usize {
        self.emissions.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.states == 0 {
            return Err(Error::Validation("HMM needs at least one state".into()));
        }
        if self.emissions.len() != self.states || self.transitions.len() != self.states {
            return Err(Error::Validation(format!(
                "expected {} emission and transition rows, got {} and {}",
                self.states,
                self.emissions.len(),
                self.transitions.len()
            )));
        }
        let words = self.num_words();
        if words == 0 {
            return Err(Error::Validation("emission rows are empty".into()));
        }
        for (s, row) in self.emissions.iter().enumerate() {
            if row.len() != words {
                return Err(Error::Validation(format!(
                    "emission row {s} has {} entries, expected {words}",
                    row.len()
                )));
            }
            check_distribution(row, &format!("emission row {s}"))?;
        }
        for (s, row) in self.transitions.iter().enumerate() {
            if row.len() != self.states {
                return Err(Error::Validation(format!(
                    "transition row {s} has {} entries, expected {}",
                    row.len(),
                    self.states
                )));
            }
            check_distribution(row, &format!("transition row {s}"))?;
        }
        if self.length < 2 {
            return Err(Error::Validation("corpus length must be at least 2".into()));
        }
        Ok(())
    }

    /// Stationary distribution via iteration of the lazy chain `(I + A)/2`,
    /// which shares A's stationary distribution and is aperiodic.
    pub fn stationary(&self) -> Vec<f64> {
        let k = self.states;
        let mut pi = vec![1.0 / k as f64; k];
        for _ in 0..100_000 {
            let mut next = vec![0.0; k];
            for (s, row) in self.transitions.iter().enumerate() {
                for (s2, p) in row.iter().enumerate() {
                    next[s2] += 0.5 * pi[s] * p;
                }
                next[s] += 0.5 * pi[s];
            }
            let total: f64 = next.iter().sum();
            next.iter_mut().for_each(|v| *v /= total);
            let delta = next
                .iter()
                .zip(&pi)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            pi = next;
            if delta < 1e-16 {
                break;
            }
        }
        pi
    }

    /// `p(next word | current state)` for every state.
    fn next_word_given_state(&self) -> Vec<Vec<f64>> {
        let words = self.num_words();
        self.transitions
            .iter()
            .map(|row| {
                let mut out = vec![0.0; words];
                for (s2, p) in row.iter().enumerate() {
                    for (o, e) in out.iter_mut().zip(&self.emissions[s2]) {
                        *o += p * e;
                    }
                }
                out
            })
            .collect()
    }

    /// Samples `(words, states)` of length `self.length`.
    pub fn sample(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let pi = self.stationary();
        let mut words = Vec::with_capacity(self.length);
        let mut states = Vec::with_capacity(self.length);
        let mut s = draw(&mut rng, &pi);
        for _ in 0..self.length {
            states.push(s);
            words.push(draw(&mut rng, &self.emissions[s]));
            s = draw(&mut rng, &self.transitions[s]);
        }
        Ok((words, states))
    }

    /// Analytic and empirical predictive perplexities for a sampled sequence.
    pub fn report(&self, words: &[usize], states: &[usize]) -> HmmReport {
        let pi = self.stationary();
        let next = self.next_word_given_state();
        let entropy: f64 = next
            .iter()
            .zip(&pi)
            .map(|(row, p)| {
                p * row
                    .iter()
                    .filter(|&&q| q > 0.0)
                    .map(|q| -q * q.ln())
                    .sum::<f64>()
            })
            .sum();

        let scored = words.len().saturating_sub(1);
        let mut oracle_nll = 0.0;
        for t in 0..scored {
            oracle_nll -= next[states[t]][words[t + 1]].ln();
        }

        // Forward filter: belief over the current state given words so far.
        let k = self.states;
        let mut belief: Vec<f64> = pi
            .iter()
            .zip(&self.emissions)
            .map(|(p, e)| p * e[words[0]])
            .collect();
        normalize(&mut belief);
        let mut filter_nll = 0.0;
        for t in 0..scored {
            let mut prior = vec![0.0; k];
            for (s, b) in belief.iter().enumerate() {
                for (s2, a) in self.transitions[s].iter().enumerate() {
                    prior[s2] += b * a;
                }
            }
            let w = words[t + 1];
            let mut post: Vec<f64> = prior
                .iter()
                .zip(&self.emissions)
                .map(|(p, e)| p * e[w])
                .collect();
            filter_nll -= post.iter().sum::<f64>().ln();
            normalize(&mut post);
            belief = post;
        }

        let denom = scored.max(1) as f64;
        HmmReport {
            tag_oracle_ppl: entropy.exp(),
            tag_oracle_empirical_ppl: (oracle_nll / denom).exp(),
            filter_ppl: (filter_nll / denom).exp(),
            stationary: pi,
            scored_tokens: scored,
        }
    }
}

fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
}

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave the cumulative sum a hair under 1.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Samples a corpus from `spec`. The sampled stream forms a single sentence;
/// tags are the hidden states `S0..S{k-1}`, words are `w0..w{n-1}`.
pub fn generate_hmm_corpus(spec: &HmmSpec) -> Result<(TaggedCorpus, HmmReport)> {
    let (words, states) = spec.sample()?;
    let report = spec.report(&words, &states);
    let tokens: Vec<String> = words.iter().map(|&w| word_token(w)).collect();
    let vocab = build_vocab(tokens.iter().map(String::as_str), None, 1)?;
    let tags = TagSet::from_tags((0..spec.states).map(state_tag).collect())?;
    let sentence = tokens
        .iter()
        .zip(&states)
        .map(|(tok, &s)| (vocab.id(tok), s))
        .collect();
    Ok((TaggedCorpus::new(vec![sentence], vocab, tags)?, report))
}

/// `states` sticky states, each emitting uniformly from its own block of
/// `block` words.
pub fn disjoint_block_spec(
    states: usize,
    block: usize,
    stay: f64,
    seed: u64,
    length: usize,
) -> HmmSpec {
    let words = states * block;
    let emissions = (0..states)
        .map(|s| {
            (0..words)
                .map(|w| {
                    if w / block == s {
                        1.0 / block as f64
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    HmmSpec {
        states,
        emissions,
        transitions: sticky_transitions(states, stay),
        seed,
        length,
    }
}

/// Like [`disjoint_block_spec`], but each state spends only `own_mass` of
/// its emission probability on its own block and spreads the rest uniformly
/// over the whole vocabulary, so a word does not reveal its state.
pub fn overlapping_block_spec(
    states: usize,
    block: usize,
    own_mass: f64,
    stay: f64,
    seed: u64,
    length: usize,
) -> HmmSpec {
    let words = states * block;
    let shared = (1.0 - own_mass) / words as f64;
    let own = own_mass / block as f64;
    let emissions = (0..states)
        .map(|s| {
            (0..words)
                .map(|w| if w / block == s { own + shared } else { shared })
                .collect()
        })
        .collect();
    HmmSpec {
        states,
        emissions,
        transitions: sticky_transitions(states, stay),
        seed,
        length,
    }
}

pub fn sticky_transitions(states: usize, stay: f64) -> Vec<Vec<f64>> {
    if states == 1 {
        return vec![vec![1.0]];
    }
    let leave = (1.0 - stay) / (states - 1) as f64;
    (0..states)
        .map(|s| {
            (0..states)
                .map(|s2| if s == s2 { stay } else { leave })
                .collect()
        })
        .collect()
}

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Next-token counts after one context.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContextCounts {
    /// `(token, count)` sorted by token.
    pub next: Vec<(u32, u32)>,
    pub total: u64,
}

impl ContextCounts {
    pub fn count(&self, token: u32) -> u32 {
        self.next
            .binary_search_by_key(&token, |e| e.0)
            .map_or(0, |i| self.next[i].1)
    }

    fn add(&mut self, token: u32, n: u32) {
        match self.next.binary_search_by_key(&token, |e| e.0) {
            Ok(i) => self.next[i].1 += n,
            Err(i) => self.next.insert(i, (token, n)),
        }
        self.total += n as u64;
    }
}

/// The `m`-th token, in index order, absent from the sorted `seen` list.
fn first_unseen(seen: &[(u32, u32)], m: usize) -> u32 {
    let mut remaining = m as u32;
    let mut candidate = 0u32;
    for &(t, _) in seen {
        let gap = t - candidate;
        if remaining < gap {
            break;
        }
        remaining -= gap;
        candidate = t + 1;
    }
    candidate + remaining
}

/// Add-alpha smoothed n-gram model over codebook tokens.
///
/// `tables[m]` holds the counts after contexts of length `m`, for
/// `m < order`; generation backs off to shorter contexts when the full one
/// was never seen.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    vocab: usize,
    smoothing: f64,
    pub(super) tables: Vec<HashMap<u64, ContextCounts>>,
}

fn context_key(context: &[u32], vocab: usize) -> u64 {
    context.iter().fold(0u64, |k, &t| k * vocab as u64 + t as u64)
}

fn check_shape(order: usize, vocab: usize, smoothing: f64) -> Result<()> {
    if order == 0 {
        return Err(Error::Config("n-gram order must be at least 1".into()));
    }
    if vocab == 0 {
        return Err(Error::Config("vocabulary must be nonempty".into()));
    }
    let fits = (vocab as u128).checked_pow(order as u32 - 1).is_some_and(|n| n <= u64::MAX as u128);
    if !fits {
        return Err(Error::Config(format!("contexts of {} tokens over {vocab} do not fit in 64 bits", order - 1)));
    }
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(Error::Config(format!("smoothing {smoothing} must be positive")));
    }
    Ok(())
}

/// Counts every `(context, next)` pair inside each sequence.
pub fn train_ngram(corpus: &[Vec<u32>], order: usize, vocab: usize, smoothing: f64) -> Result<NGramModel> {
    check_shape(order, vocab, smoothing)?;
    if corpus.iter().all(Vec::is_empty) {
        return Err(Error::EmptyCorpus);
    }
    let mut raw: Vec<HashMap<u64, HashMap<u32, u32>>> = vec![HashMap::new(); order];
    for seq in corpus {
        if let Some(&bad) = seq.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::InvalidToken { token: bad, size: vocab });
        }
        for (i, &next) in seq.iter().enumerate() {
            for (m, table) in raw.iter_mut().enumerate() {
                if m > i {
                    break;
                }
                let key = context_key(&seq[i - m..i], vocab);
                *table.entry(key).or_default().entry(next).or_default() += 1;
            }
        }
    }
    let tables = raw
        .into_iter()
        .map(|table| {
            table
                .into_iter()
                .map(|(key, next)| {
                    let mut next: Vec<(u32, u32)> = next.into_iter().collect();
                    next.sort_unstable();
                    let total = next.iter().map(|e| e.1 as u64).sum();
                    (key, ContextCounts { next, total })
                })
                .collect()
        })
        .collect();
    Ok(NGramModel {
        order,
        vocab,
        smoothing,
        tables,
    })
}

/// Sampling controls for [`NGramModel::generate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub top_k: usize,
    pub temperature: f64,
    pub seed: u64,
    pub length: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            top_k: 250,
            temperature: 1.0,
            seed: 0,
            length: 622,
        }
    }
}

/// Temperatures at or below this decode greedily.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

impl NGramModel {
    pub(super) fn from_tables(
        order: usize,
        vocab: usize,
        smoothing: f64,
        tables: Vec<HashMap<u64, ContextCounts>>,
    ) -> Result<Self> {
        check_shape(order, vocab, smoothing)?;
        if tables.len() != order {
            return Err(Error::CorruptFile(format!("{} count tables for order {order}", tables.len())));
        }
        Ok(Self {
            order,
            vocab,
            smoothing,
            tables,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// Counts after exactly this context (length below the order).
    pub fn counts(&self, context: &[u32]) -> Option<&ContextCounts> {
        self.tables.get(context.len())?.get(&context_key(context, self.vocab))
    }

    /// Counts for the longest seen suffix of `history`, up to `order - 1`
    /// tokens.
    fn backoff(&self, history: &[u32]) -> &ContextCounts {
        let longest = (self.order - 1).min(history.len());
        for m in (0..=longest).rev() {
            if let Some(c) = self.counts(&history[history.len() - m..]) {
                return c;
            }
        }
        static EMPTY: ContextCounts = ContextCounts { next: Vec::new(), total: 0 };
        &EMPTY
    }

    /// Smoothed next-token distribution after `history`.
    pub fn distribution(&self, history: &[u32]) -> Vec<f64> {
        let c = self.backoff(history);
        let denom = c.total as f64 + self.smoothing * self.vocab as f64;
        let mut p = vec![self.smoothing / denom; self.vocab];
        for &(t, n) in &c.next {
            p[t as usize] = (n as f64 + self.smoothing) / denom;
        }
        p
    }

    pub fn probability(&self, history: &[u32], token: u32) -> f64 {
        self.distribution(history)[token as usize]
    }

    /// Adds the counts of `other`, which must share order, vocabulary and
    /// smoothing.
    pub fn merge(&self, other: &NGramModel) -> Result<NGramModel> {
        if (self.order, self.vocab) != (other.order, other.vocab) || self.smoothing != other.smoothing {
            return Err(Error::Config("cannot merge models with different shapes".into()));
        }
        let mut merged = self.clone();
        for (mine, theirs) in merged.tables.iter_mut().zip(&other.tables) {
            for (key, counts) in theirs {
                let entry = mine.entry(*key).or_default();
                for &(t, n) in &counts.next {
                    entry.add(t, n);
                }
            }
        }
        Ok(merged)
    }

    /// Samples `config.length` tokens after `prompt`.
    pub fn generate(&self, prompt: &[u32], config: &GenerationConfig) -> Result<Vec<u32>> {
        let needed = self.order - 1;
        if prompt.len() < needed {
            return Err(Error::PromptTooShort {
                got: prompt.len(),
                needed,
                order: self.order,
            });
        }
        if let Some(&bad) = prompt.iter().find(|&&t| t as usize >= self.vocab) {
            return Err(Error::InvalidToken { token: bad, size: self.vocab });
        }
        if config.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if !(config.temperature >= 0.0 && config.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {} must be nonnegative", config.temperature)));
        }
        let top_k = if config.top_k > self.vocab {
            log::warn!("top_k {} exceeds the vocabulary; using {}", config.top_k, self.vocab);
            self.vocab
        } else {
            config.top_k
        };
        let greedy = top_k == 1 || config.temperature <= GREEDY_TEMPERATURE;
        let mut r = rng::seeded(config.seed);
        let mut history: Vec<u32> = prompt[prompt.len() - needed..].to_vec();
        let mut out = Vec::with_capacity(config.length);
        let mut ranked: Vec<(u32, u32)> = Vec::new();
        let mut weights: Vec<f64> = Vec::with_capacity(top_k);
        for _ in 0..config.length {
            let c = self.backoff(&history);
            // Seen tokens by count, then unseen tokens (all at the smoothing
            // floor) in index order; equal counts keep index order.
            ranked.clear();
            ranked.extend_from_slice(&c.next);
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let seen_top = ranked.len().min(top_k);
            let unseen_top = (top_k - seen_top).min(self.vocab - ranked.len());
            let next = if greedy {
                ranked.first().map_or_else(|| first_unseen(&c.next, 0), |e| e.0)
            } else {
                let a = self.smoothing;
                let log_max = (ranked.first().map_or(0.0, |e| e.1 as f64) + a).ln();
                let inv_t = 1.0 / config.temperature;
                let weight = |n: f64| (((n + a).ln() - log_max) * inv_t).exp();
                weights.clear();
                weights.extend(ranked[..seen_top].iter().map(|e| weight(e.1 as f64)));
                let unseen_w = weight(0.0);
                let seen_total: f64 = weights.iter().sum();
                let total = seen_total + unseen_w * unseen_top as f64;
                let mut u = rng::uniform(&mut r) * total;
                let mut pick = None;
                for (e, &w) in ranked[..seen_top].iter().zip(&weights) {
                    if u < w {
                        pick = Some(e.0);
                        break;
                    }
                    u -= w;
                }
                match pick {
                    Some(t) => t,
                    None if unseen_top > 0 => {
                        let m = ((u / unseen_w) as usize).min(unseen_top - 1);
                        first_unseen(&c.next, m)
                    }
                    None => ranked[seen_top - 1].0,
                }
            };
            out.push(next);
            if needed > 0 {
                history.remove(0);
                history.push(next);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn config(top_k: usize, temperature: f64, seed: u64, length: usize) -> GenerationConfig {
        GenerationConfig {
            top_k,
            temperature,
            seed,
            length,
        }
    }

    #[test]
    fn repeated_token_is_near_certain() {
        let m = train_ngram(&[vec![3; 50]], 2, 8, 0.01).unwrap();
        let p = m.probability(&[3], 3);
        let expected = (49.0 + 0.01) / (49.0 + 0.08);
        assert!((p - expected).abs() < 1e-12);
        assert!(p > 0.99);
    }

    #[test]
    fn counts_match_sliding_window_tally() {
        let corpus = vec![vec![0, 1, 2, 1, 2, 1, 0], vec![2, 2, 1], vec![1]];
        let m = train_ngram(&corpus, 3, 3, 0.5).unwrap();
        let mut tally: HashMap<(Vec<u32>, u32), u32> = HashMap::new();
        for seq in &corpus {
            for w in seq.windows(3) {
                *tally.entry((w[..2].to_vec(), w[2])).or_default() += 1;
            }
        }
        for ((ctx, next), n) in &tally {
            assert_eq!(m.counts(ctx).unwrap().count(*next), *n);
        }
        let total: u64 = m.tables[2].values().map(|c| c.total).sum();
        assert_eq!(total, tally.values().map(|&n| n as u64).sum::<u64>());
        // Contexts never straddle sequences.
        assert!(m.counts(&[0, 2]).is_none());
        assert_eq!(m.counts(&[]).unwrap().total, 11);
    }

    #[test]
    fn merge_adds_counts() {
        let a = train_ngram(&[vec![0, 1, 0, 1]], 2, 4, 0.01).unwrap();
        let b = train_ngram(&[vec![2, 3, 1, 0]], 2, 4, 0.01).unwrap();
        let both = train_ngram(&[vec![0, 1, 0, 1], vec![2, 3, 1, 0]], 2, 4, 0.01).unwrap();
        assert_eq!(a.merge(&b).unwrap(), both);
    }

    #[test]
    fn empty_corpus() {
        assert!(matches!(train_ngram(&[], 3, 4, 0.01), Err(Error::EmptyCorpus)));
        assert!(matches!(train_ngram(&[vec![]], 3, 4, 0.01), Err(Error::EmptyCorpus)));
        assert!(matches!(train_ngram(&[vec![9]], 3, 4, 0.01), Err(Error::InvalidToken { .. })));
    }

    #[test]
    fn greedy_reproduces_a_memorized_pattern() {
        let pattern: Vec<u32> = [0, 3, 1, 4, 2].iter().cycle().take(200).copied().collect();
        let m = train_ngram(&[pattern.clone()], 3, 5, 0.01).unwrap();
        let out = m.generate(&pattern[..2], &config(250, 0.0, 0, 50)).unwrap();
        assert_eq!(out, pattern[2..52].to_vec());
        let top1 = m.generate(&pattern[..2], &config(1, 1.0, 7, 50)).unwrap();
        assert_eq!(top1, out);
    }

    #[test]
    fn prompt_too_short() {
        let m = train_ngram(&[vec![0, 1, 2, 3]], 3, 4, 0.01).unwrap();
        assert!(matches!(
            m.generate(&[1], &GenerationConfig::default()),
            Err(Error::PromptTooShort { got: 1, needed: 2, order: 3 })
        ));
    }

    #[test]
    fn unseen_context_backs_off() {
        let m = train_ngram(&[vec![0, 1, 1, 1, 1]], 3, 3, 0.01).unwrap();
        // [2, 2] never occurs; the unigram table prefers token 1.
        let p = m.distribution(&[2, 2]);
        assert!(p[1] > p[0] && p[0] > p[2]);
    }

    #[test]
    fn top_k_limits_support() {
        let corpus = vec![(0..40u32).map(|i| i % 10).collect::<Vec<_>>()];
        let m = train_ngram(&corpus, 1, 10, 1.0).unwrap();
        let out = m.generate(&[], &config(3, 1.0, 1, 500)).unwrap();
        // Unigram counts are equal, so the top three are the lowest tokens.
        assert!(out.iter().all(|&t| t < 3));
        assert!((0..3).all(|t| out.contains(&t)));
    }

    #[test]
    fn sampling_is_seeded() {
        let corpus = vec![(0..300u32).map(|i| (i * 7 + i / 5) % 16).collect::<Vec<_>>()];
        let m = train_ngram(&corpus, 3, 16, 0.01).unwrap();
        let a = m.generate(&[1, 2], &config(250, 1.0, 42, 100)).unwrap();
        assert_eq!(a, m.generate(&[1, 2], &config(250, 1.0, 42, 100)).unwrap());
        assert_ne!(a, m.generate(&[1, 2], &config(250, 1.0, 43, 100)).unwrap());
    }

    #[test]
    fn sampling_frequencies_follow_the_distribution() {
        // Unigram model with counts 3:1 and negligible smoothing.
        let m = train_ngram(&[vec![0, 0, 0, 1]], 1, 2, 1e-9).unwrap();
        let out = m.generate(&[], &config(2, 1.0, 5, 20_000)).unwrap();
        let share = out.iter().filter(|&&t| t == 0).count() as f64 / out.len() as f64;
        assert!((share - 0.75).abs() < 0.015, "{share}");
        // Temperature 0.5 squares the odds: 9:1.
        let out = m.generate(&[], &config(2, 0.5, 5, 20_000)).unwrap();
        let share = out.iter().filter(|&&t| t == 0).count() as f64 / out.len() as f64;
        assert!((share - 0.9).abs() < 0.015, "{share}");
    }

    proptest! {
        #[test]
        fn distributions_are_normalized(
            seq in prop::collection::vec(0u32..6, 1..60),
            ctx in prop::collection::vec(0u32..6, 0..3),
            alpha in 0.001f64..2.0,
        ) {
            let m = train_ngram(&[seq], 3, 6, alpha).unwrap();
            let p = m.distribution(&ctx);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| x > 0.0));
        }
    }
}

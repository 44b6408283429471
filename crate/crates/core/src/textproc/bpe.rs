use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, IoContext, Result};

pub const END_OF_WORD: &str = "</w>";

/// Ordered list of symbol-pair merges.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

fn split_word(word: &str) -> Vec<String> {
    let mut syms: Vec<String> = word.chars().map(String::from).collect();
    syms.push(END_OF_WORD.to_string());
    syms
}

fn merge_pair(syms: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == left && syms[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(syms[i].clone());
            i += 1;
        }
    }
    out
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Self {
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        Self { merges, ranks }
    }

    /// Greedy joint BPE: each iteration merges the most frequent adjacent
    /// pair (ties: lexicographically smallest pair). Stops after `n_merges`
    /// or once no pair occurs more than once.
    pub fn learn<'a, I, S>(corpus: I, n_merges: usize) -> Self
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for sent in corpus {
            for w in sent.as_ref() {
                *freq.entry(w.as_str()).or_default() += 1;
            }
        }
        let mut words: Vec<(Vec<String>, u64)> = freq
            .into_iter()
            .map(|(w, f)| (split_word(w), f))
            .collect();
        words.sort();
        let mut merges = Vec::new();
        while merges.len() < n_merges {
            let mut pairs: HashMap<(&str, &str), u64> = HashMap::new();
            for (syms, f) in &words {
                for w in syms.windows(2) {
                    *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += f;
                }
            }
            let best = pairs
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)));
            let Some(((l, r), f)) = best else { break };
            if f <= 1 {
                break;
            }
            let (l, r) = (l.to_string(), r.to_string());
            for (syms, _) in &mut words {
                *syms = merge_pair(syms, &l, &r);
            }
            merges.push((l, r));
        }
        Self::from_merges(merges)
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    /// Segments one word; the last subword carries the end-of-word marker.
    pub fn apply_word(&self, word: &str) -> Vec<String> {
        let mut syms = split_word(word);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (l, r) = &self.merges[rank];
            syms = merge_pair(&syms, l, r);
        }
        if syms.len() > 1 && syms.last().map(String::as_str) == Some(END_OF_WORD) {
            syms.pop();
            syms.last_mut().unwrap().push_str(END_OF_WORD);
        }
        syms
    }

    pub fn apply<S: AsRef<str>>(&self, words: &[S]) -> Vec<String> {
        words
            .iter()
            .flat_map(|w| self.apply_word(w.as_ref()))
            .collect()
    }

    /// Inverse of [`BpeModel::apply`].
    pub fn restore<S: AsRef<str>>(subwords: &[S]) -> Result<Vec<String>> {
        let mut out = Vec::new();
        let mut cur = String::new();
        for s in subwords {
            let s = s.as_ref();
            let (body, ends) = match s.strip_suffix(END_OF_WORD) {
                Some(b) => (b, true),
                None => (s, false),
            };
            if body.contains(END_OF_WORD) || (body.is_empty() && (cur.is_empty() || !ends)) {
                return Err(Error::Format(format!("misplaced end-of-word marker in {s:?}")));
            }
            cur.push_str(body);
            if ends {
                out.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            return Err(Error::Format(format!("subword sequence ends mid-word at {cur:?}")));
        }
        Ok(out)
    }

    /// One merge per line, `left right`, in merge order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(path).ctx(format!("create {}", path.display()))?,
        );
        for (l, r) in &self.merges {
            writeln!(f, "{l} {r}").ctx("write bpe model")?;
        }
        f.flush().ctx("write bpe model")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).ctx(format!("read {}", path.display()))?;
        let mut merges = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split(' ');
            match (it.next(), it.next(), it.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => return Err(Error::Format(format!("bpe line {}: {line:?}", ln + 1))),
            }
        }
        Ok(Self::from_merges(merges))
    }
}

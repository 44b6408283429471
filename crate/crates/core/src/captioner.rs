//! Pivot-conditioned multilingual captioner. Every parameter is shared by
//! the two languages except the word embedding matrices, which double as
//! tied output layers; after training they live in one joint space and are
//! exported, frozen, to the translation model.

use std::collections::BTreeMap;
use std::ops::Deref;

use numkit::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beam::{beam_search, DEFAULT_BEAM};
use crate::error::{Error, Result};
use crate::layers::{tied_logits, AttnDecoder, Linear, Memory, Stepper};
use crate::optim::{fit, TrainReport, TrainSchedule};
use crate::synthpivot::{PivotFeature, SceneRecord};
use crate::textproc::{Preprocessor, BOS, EOS, PAD, RESERVED};
use crate::Lang;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptionerConfig {
    /// Decoder width; also the embedding width (tied output layer).
    pub hidden: usize,
    pub attention: usize,
    pub schedule: TrainSchedule,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for CaptionerConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            attention: 64,
            schedule: TrainSchedule::default(),
            max_len: 40,
            seed: 0,
        }
    }
}

/// Parameter-name prefixes; the embedding tables are the only
/// language-specific parameters.
pub const EMB_A: &str = "cap.emb.a";
pub const EMB_B: &str = "cap.emb.b";

#[derive(Debug, Clone)]
pub struct CaptionModel {
    pub store: ParamStore,
    pub feat: Linear,
    pub dec: AttnDecoder,
    pub emb_a: ParamId,
    pub emb_b: ParamId,
    pub feature_dim: usize,
}

/// One training caption: per-fact features (`M×dim`) and word ids.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionExample {
    pub lang: Lang,
    pub features: Tensor,
    pub ids: Vec<usize>,
}

impl CaptionExample {
    pub fn new(lang: Lang, f: &PivotFeature, ids: Vec<usize>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Data("empty caption".into()));
        }
        Ok(Self {
            lang,
            features: Tensor::new(vec![f.count(), f.dim], f.data.clone())?,
            ids,
        })
    }

    pub fn facts(&self) -> usize {
        self.features.rows()
    }
}

pub fn examples(records: &[SceneRecord], pre: &Preprocessor) -> Result<Vec<CaptionExample>> {
    records
        .iter()
        .map(|r| CaptionExample::new(r.caption.lang, &r.features, pre.encode(r.caption.lang, &r.caption.tokens)))
        .collect()
}

impl CaptionModel {
    pub fn new(feature_dim: usize, vocab_a: usize, vocab_b: usize, cfg: &CaptionerConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seeds::derive_seed(cfg.seed, "captioner-init", 0));
        let mut store = ParamStore::new();
        let h = cfg.hidden;
        let feat = Linear::new(&mut store, "cap.feat", feature_dim, h, true, &mut rng)?;
        let dec = AttnDecoder::new(&mut store, "cap.dec", h, h, h, cfg.attention, &mut rng)?;
        let emb_a = store.insert(EMB_A, Tensor::randn(&[vocab_a, h], 0.1, &mut rng))?;
        let emb_b = store.insert(EMB_B, Tensor::randn(&[vocab_b, h], 0.1, &mut rng))?;
        Ok(Self {
            store,
            feat,
            dec,
            emb_a,
            emb_b,
            feature_dim,
        })
    }

    pub fn emb(&self, lang: Lang) -> ParamId {
        match lang {
            Lang::A => self.emb_a,
            Lang::B => self.emb_b,
        }
    }

    /// Projected facts `P` (`(B·M)×H`) as the attention memory, and the
    /// initial state: the mean of each scene's projected facts.
    fn encode(&self, g: &mut Graph, store: &ParamStore, feats: Tensor, batch: usize, m: usize) -> Result<(Memory, Var)> {
        let f = g.constant(feats);
        let p = self.feat.forward(g, store, f)?;
        let p = g.tanh(p)?;
        let avg = g.constant(Tensor::filled(&[batch, m], 1.0 / m as f64));
        let h0 = g.weighted_row_sum(avg, p)?;
        Ok((self.dec.attn.memory(g, store, p, m)?, h0))
    }

    /// Summed token NLL of a batch sharing language and fact count.
    pub fn batch_nll(&self, g: &mut Graph, store: &ParamStore, batch: &[&CaptionExample]) -> Result<Var> {
        let lang = batch[0].lang;
        let m = batch[0].facts();
        if batch.iter().any(|e| e.lang != lang || e.facts() != m) {
            return Err(Error::Contract("caption batch mixes languages or fact counts".into()));
        }
        let b = batch.len();
        let steps = batch.iter().map(|e| e.ids.len()).max().unwrap_or(0) + 1;
        let mut feats = Vec::with_capacity(b * m * self.feature_dim);
        for e in batch {
            feats.extend_from_slice(e.features.data());
        }
        let (mem, h0) = self.encode(g, store, Tensor::new(vec![b * m, self.feature_dim], feats)?, b, m)?;
        let (inputs, targets, weights) = teacher_layout(batch.iter().map(|e| e.ids.as_slice()), b, steps);
        let emb = g.param(store, self.emb(lang));
        let states = self.dec.teacher(g, store, emb, &mem, &inputs, steps, h0)?;
        let logits = tied_logits(g, states, emb, None)?;
        Ok(g.cross_entropy(logits, &targets, &weights)?)
    }

    /// Mean per-token NLL over a corpus.
    pub fn mean_nll(&self, store: &ParamStore, data: &[CaptionExample], batch_size: usize) -> Result<f64> {
        let mut total = 0.0;
        let mut tokens = 0usize;
        for batch in buckets(data, batch_size) {
            let mut g = Graph::inference();
            let l = self.batch_nll(&mut g, store, &batch)?;
            total += g.value(l).item();
            tokens += batch.iter().map(|e| e.ids.len() + 1).sum::<usize>();
        }
        if tokens == 0 {
            return Err(Error::Data("empty validation corpus".into()));
        }
        Ok(total / tokens as f64)
    }

    pub fn caption_beam(&self, features: &PivotFeature, lang: Lang, beam_width: usize, max_len: usize) -> Result<Vec<usize>> {
        if beam_width < 1 {
            return Err(Error::Contract("beam width must be at least 1".into()));
        }
        let mut g = Graph::inference();
        let m = features.count();
        let feats = Tensor::new(vec![m, features.dim], features.data.clone())?;
        let (mem, h0) = self.encode(&mut g, &self.store, feats, 1, m)?;
        let emb = g.param(&self.store, self.emb(lang));
        let mut st = Stepper::new(g, &self.store, &self.dec, emb, None, mem.z, m, h0);
        beam_search(&mut st, beam_width, max_len)
    }

    pub fn export_embeddings(&self) -> JointEmbeddings {
        JointEmbeddings {
            w_x: FrozenMatrix(self.store.value(self.emb_a).clone()),
            w_y: FrozenMatrix(self.store.value(self.emb_b).clone()),
        }
    }
}

/// Decoder inputs (time-major, BOS-shifted), targets (batch-major, EOS
/// appended, PAD beyond) and token weights (0 on padding).
pub fn teacher_layout<'a>(seqs: impl Iterator<Item = &'a [usize]> + Clone, batch: usize, steps: usize) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let mut inputs = vec![PAD; steps * batch];
    let mut targets = vec![PAD; steps * batch];
    let mut weights = vec![0.0; steps * batch];
    for (b, s) in seqs.enumerate() {
        inputs[b] = BOS;
        for t in 1..steps {
            if t - 1 < s.len() {
                inputs[t * batch + b] = s[t - 1];
            }
        }
        for t in 0..=s.len() {
            targets[b * steps + t] = if t < s.len() { s[t] } else { EOS };
            weights[b * steps + t] = 1.0;
        }
    }
    (inputs, targets, weights)
}

/// Deterministic buckets by (language, fact count), each chunked.
pub fn buckets(data: &[CaptionExample], batch_size: usize) -> Vec<Vec<&CaptionExample>> {
    let mut groups: BTreeMap<(Lang, usize), Vec<&CaptionExample>> = BTreeMap::new();
    for e in data {
        groups.entry((e.lang, e.facts())).or_default().push(e);
    }
    groups
        .into_values()
        .flat_map(|g| g.chunks(batch_size).map(<[_]>::to_vec).collect::<Vec<_>>())
        .collect()
}

/// Shuffled buckets, alternating between the languages.
fn epoch_batches<'a>(data: &'a [CaptionExample], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<&'a CaptionExample>> {
    let mut by_lang: [Vec<Vec<&CaptionExample>>; 2] = Default::default();
    let mut groups: BTreeMap<(Lang, usize), Vec<&CaptionExample>> = BTreeMap::new();
    for e in data {
        groups.entry((e.lang, e.facts())).or_default().push(e);
    }
    for ((lang, _), mut g) in groups {
        g.shuffle(rng);
        by_lang[lang as usize].extend(g.chunks(batch_size).map(<[_]>::to_vec));
    }
    for l in &mut by_lang {
        l.shuffle(rng);
    }
    let [a, b] = by_lang;
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut ia, mut ib) = (a.into_iter(), b.into_iter());
    loop {
        match (ia.next(), ib.next()) {
            (None, None) => break,
            (x, y) => out.extend(x.into_iter().chain(y)),
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainedCaptioner {
    pub model: CaptionModel,
    pub report: TrainReport,
}

pub fn train_captioner(
    train: &[CaptionExample],
    valid: &[CaptionExample],
    feature_dim: usize,
    vocab_a: usize,
    vocab_b: usize,
    cfg: &CaptionerConfig,
) -> Result<TrainedCaptioner> {
    for lang in [Lang::A, Lang::B] {
        if !train.iter().any(|e| e.lang == lang) {
            return Err(Error::Data(format!("no training captions in language {lang}")));
        }
    }
    if valid.is_empty() {
        return Err(Error::Data("empty validation corpus".into()));
    }
    let mut model = CaptionModel::new(feature_dim, vocab_a, vocab_b, cfg)?;
    let mut store = std::mem::take(&mut model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(crate::seeds::derive_seed(cfg.seed, "captioner-batches", 0));
    let bs = cfg.schedule.batch_size;
    let report = fit(
        &mut store,
        &cfg.schedule,
        &mut rng,
        |r| epoch_batches(train, bs, r),
        |g, s, b| {
            let l = model.batch_nll(g, s, b)?;
            Ok(g.scale(l, 1.0 / b.len() as f64))
        },
        |s| model.mean_nll(s, valid, bs),
    )?;
    model.store = store;
    Ok(TrainedCaptioner { model, report })
}

/// Read-only embedding table handed to downstream stages.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenMatrix(Tensor);

impl FrozenMatrix {
    pub fn new(t: Tensor) -> Self {
        Self(t)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    /// A mutable copy, detached from the frozen original.
    pub fn to_owned_tensor(&self) -> Tensor {
        self.0.clone()
    }
}

impl Deref for FrozenMatrix {
    type Target = Tensor;

    fn deref(&self) -> &Tensor {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointEmbeddings {
    pub w_x: FrozenMatrix,
    pub w_y: FrozenMatrix,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (norm(u) * norm(v))
}

/// The `k` target words (non-reserved ids) most cosine-similar to source
/// word `word`, most similar first, ties by id.
pub fn word_nn(word: usize, k: usize, w_x: &Tensor, w_y: &Tensor) -> Result<Vec<(usize, f64)>> {
    if k < 1 {
        return Err(Error::Contract("k must be at least 1".into()));
    }
    if word >= w_x.rows() {
        return Err(Error::Data(format!("source id {word} outside vocabulary of {}", w_x.rows())));
    }
    let q = w_x.row(word);
    if norm(q) == 0.0 {
        return Err(Error::Degenerate(format!("source id {word} has a zero-norm embedding")));
    }
    let mut scored = Vec::with_capacity(w_y.rows());
    for j in RESERVED.len()..w_y.rows() {
        let r = w_y.row(j);
        if norm(r) == 0.0 {
            return Err(Error::Degenerate(format!("target id {j} has a zero-norm embedding")));
        }
        scored.push((j, cosine(q, r)));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    /// Ground-truth source, generated target.
    #[serde(rename = "x_ygen")]
    XGenY,
    /// Generated source, ground-truth target.
    #[serde(rename = "xgen_y")]
    GenXY,
    /// Both sides generated.
    #[serde(rename = "xgen_ygen")]
    GenXGenY,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoPair {
    pub pair_id: usize,
    pub provenance: Provenance,
    pub src_tokens: Vec<String>,
    pub tgt_tokens: Vec<String>,
    pub scene_id: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PseudoReport {
    pub emitted: usize,
    pub skipped_empty: usize,
    pub dropped_duplicates: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PseudoPairSet {
    pub pairs: Vec<PseudoPair>,
    pub report: PseudoReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoConfig {
    pub beam_width: usize,
    pub max_len: usize,
    /// Drop a generated-generated pair identical to one already emitted.
    pub dedup: bool,
}

impl Default for PseudoConfig {
    fn default() -> Self {
        Self {
            beam_width: DEFAULT_BEAM,
            max_len: 40,
            dedup: false,
        }
    }
}

/// Captions each pivot in the missing language (and its own, for the
/// generated-generated stream) and emits the induced pairs, source side
/// always in language A.
pub fn make_pseudo_pairs(
    d_x: &[SceneRecord],
    d_y: &[SceneRecord],
    model: &CaptionModel,
    pre: &Preprocessor,
    cfg: &PseudoConfig,
) -> Result<PseudoPairSet> {
    let mut out = PseudoPairSet::default();
    let mut seen = std::collections::HashSet::new();
    let gen = |f: &PivotFeature, lang: Lang| -> Result<Vec<String>> {
        let ids = model.caption_beam(f, lang, cfg.beam_width, cfg.max_len)?;
        Ok(pre.decode_lossy(lang, &ids))
    };
    let mut emit = |out: &mut PseudoPairSet, prov: Provenance, src: Vec<String>, tgt: Vec<String>, scene: u64| {
        if src.is_empty() || tgt.is_empty() {
            out.report.skipped_empty += 1;
            return;
        }
        if cfg.dedup && prov == Provenance::GenXGenY && !seen.insert((src.clone(), tgt.clone())) {
            out.report.dropped_duplicates += 1;
            return;
        }
        out.pairs.push(PseudoPair {
            pair_id: out.pairs.len(),
            provenance: prov,
            src_tokens: src,
            tgt_tokens: tgt,
            scene_id: scene,
        });
    };
    for r in d_x {
        let y_gen = gen(&r.features, Lang::B)?;
        let x_gen = gen(&r.features, Lang::A)?;
        emit(&mut out, Provenance::XGenY, r.caption.tokens.clone(), y_gen.clone(), r.scene.id);
        emit(&mut out, Provenance::GenXGenY, x_gen, y_gen, r.scene.id);
    }
    for r in d_y {
        let x_gen = gen(&r.features, Lang::A)?;
        let y_gen = gen(&r.features, Lang::B)?;
        emit(&mut out, Provenance::GenXY, x_gen.clone(), r.caption.tokens.clone(), r.scene.id);
        emit(&mut out, Provenance::GenXGenY, x_gen, y_gen, r.scene.id);
    }
    out.report.emitted = out.pairs.len();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn teacher_layout_pads_after_eos() {
        let a = [5usize, 6];
        let b = [7usize];
        let (inp, tgt, w) = teacher_layout([&a[..], &b[..]].into_iter(), 2, 3);
        assert_eq!(inp, vec![BOS, BOS, 5, 7, 6, PAD]);
        assert_eq!(tgt, vec![5, 6, EOS, 7, EOS, PAD]);
        assert_eq!(w, vec![1.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn nearest_neighbours() {
        let w_x = Tensor::new(vec![5, 2], vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.3, 0.7]).unwrap();
        let w_y = Tensor::new(vec![7, 2], vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.3, 0.7, 0.0, 1.0]).unwrap();
        let nn = word_nn(4, 1, &w_x, &w_y).unwrap();
        assert_eq!(nn[0].0, 5);
        assert_eq!(word_nn(4, 99, &w_x, &w_y).unwrap().len(), 3);
        let zero = Tensor::new(vec![5, 2], vec![0.0; 10]).unwrap();
        assert!(matches!(word_nn(4, 1, &zero, &w_y), Err(Error::Degenerate(_))));
    }
}

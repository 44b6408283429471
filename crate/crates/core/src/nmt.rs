//! Shared multilingual encoder-decoder. One bidirectional encoder and one
//! attention decoder serve both languages; only the embedding tables
//! differ, and those are frozen copies of the captioner's joint space
//! (or seeded random trainable tables for the ablation).

use std::collections::BTreeMap;

use numkit::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::beam::{beam_search, DEFAULT_BEAM};
use crate::captioner::{teacher_layout, JointEmbeddings};
use crate::error::{Error, Result};
use crate::layers::{tied_logits, AttnDecoder, Linear, Lstm, Memory, Stepper};
use crate::optim::{fit, TrainReport, TrainSchedule};
use crate::seeds::derive_seed;
use crate::textproc::RESERVED;
use crate::Lang;

pub const EMB_A: &str = "nmt.emb.a";
pub const EMB_B: &str = "nmt.emb.b";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionParams {
    pub p_drop: f64,
    pub p_insert: f64,
    pub jitter: usize,
}

impl Default for CorruptionParams {
    fn default() -> Self {
        Self {
            p_drop: 0.1,
            p_insert: 0.1,
            jitter: 3,
        }
    }
}

impl CorruptionParams {
    pub const NONE: CorruptionParams = CorruptionParams {
        p_drop: 0.0,
        p_insert: 0.0,
        jitter: 0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("drop", self.p_drop), ("insert", self.p_insert)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Drop, insert, then locally shuffle. Insertions are uniform over the
/// non-reserved ids below `vocab_size`. Never returns an empty sequence.
pub fn corrupt<R: Rng + ?Sized>(ids: &[usize], p: &CorruptionParams, vocab_size: usize, rng: &mut R) -> Vec<usize> {
    let mut kept: Vec<usize> = ids
        .iter()
        .copied()
        .filter(|_| p.p_drop <= 0.0 || rng.random::<f64>() >= p.p_drop)
        .collect();
    if kept.is_empty() && !ids.is_empty() {
        kept.push(ids[rng.random_range(0..ids.len())]);
    }
    let mut out = Vec::with_capacity(kept.len() * 2);
    let insertable = vocab_size > RESERVED.len();
    for t in kept {
        if insertable && p.p_insert > 0.0 && rng.random::<f64>() < p.p_insert {
            out.push(rng.random_range(RESERVED.len()..vocab_size));
        }
        out.push(t);
    }
    if p.jitter > 0 {
        // sort keys i + U[0, k+1) move no element more than k places
        let mut keyed: Vec<(f64, usize)> = out
            .iter()
            .enumerate()
            .map(|(i, &t)| (i as f64 + rng.random::<f64>() * (p.jitter + 1) as f64, t))
            .collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
        out = keyed.into_iter().map(|x| x.1).collect();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmtConfig {
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub attention: usize,
    pub schedule: TrainSchedule,
    pub corruption: CorruptionParams,
    pub lambda: f64,
    pub max_len: usize,
    pub beam_width: usize,
    pub seed: u64,
}

impl Default for NmtConfig {
    fn default() -> Self {
        Self {
            enc_hidden: 32,
            dec_hidden: 64,
            attention: 64,
            schedule: TrainSchedule::default(),
            corruption: CorruptionParams::default(),
            lambda: 1.0,
            max_len: 60,
            beam_width: DEFAULT_BEAM,
            seed: 0,
        }
    }
}

/// Where the word embeddings come from.
#[derive(Debug, Clone)]
pub enum EmbeddingSource<'a> {
    /// Frozen copies of the captioner export.
    Pivot(&'a JointEmbeddings),
    /// Seeded random trainable tables of the given vocabulary sizes.
    Random { vocab_a: usize, vocab_b: usize },
}

#[derive(Debug, Clone)]
pub struct NmtModel {
    pub store: ParamStore,
    pub emb_a: ParamId,
    pub emb_b: ParamId,
    pub enc_fwd: Lstm,
    pub enc_bwd: Lstm,
    pub bridge: Option<Linear>,
    pub dec: AttnDecoder,
    pub temperature: ParamId,
}

/// Encoder outputs for a batch of equal-length sources.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `z_t` for each position, `B × 2H_enc`.
    pub z: Vec<Var>,
    pub memory: Memory,
    pub h0: Var,
}

impl NmtModel {
    pub fn new(emb: EmbeddingSource<'_>, cfg: &NmtConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "nmt-init", 0));
        let mut store = ParamStore::new();
        let (emb_a, emb_b) = match emb {
            EmbeddingSource::Pivot(j) => (
                store.insert_frozen(EMB_A, j.w_x.to_owned_tensor())?,
                store.insert_frozen(EMB_B, j.w_y.to_owned_tensor())?,
            ),
            EmbeddingSource::Random { vocab_a, vocab_b } => (
                store.insert(EMB_A, Tensor::randn(&[vocab_a, cfg.dec_hidden], 0.1, &mut rng))?,
                store.insert(EMB_B, Tensor::randn(&[vocab_b, cfg.dec_hidden], 0.1, &mut rng))?,
            ),
        };
        let d = store.value(emb_a).cols();
        if d != cfg.dec_hidden || store.value(emb_b).cols() != d {
            return Err(Error::Config(format!(
                "embedding width {d} must equal the decoder width {}",
                cfg.dec_hidden
            )));
        }
        let he = cfg.enc_hidden;
        let enc_fwd = Lstm::new(&mut store, "nmt.enc.fwd", &[d], he, &mut rng)?;
        let enc_bwd = Lstm::new(&mut store, "nmt.enc.bwd", &[d], he, &mut rng)?;
        let bridge = if 2 * he != cfg.dec_hidden {
            Some(Linear::new(&mut store, "nmt.bridge", 2 * he, cfg.dec_hidden, true, &mut rng)?)
        } else {
            None
        };
        let dec = AttnDecoder::new(&mut store, "nmt.dec", d, 2 * he, cfg.dec_hidden, cfg.attention, &mut rng)?;
        let temperature = store.insert("nmt.temperature", Tensor::scalar(1.0))?;
        Ok(Self {
            store,
            emb_a,
            emb_b,
            enc_fwd,
            enc_bwd,
            bridge,
            dec,
            temperature,
        })
    }

    pub fn emb(&self, lang: Lang) -> ParamId {
        match lang {
            Lang::A => self.emb_a,
            Lang::B => self.emb_b,
        }
    }

    pub fn vocab_size(&self, lang: Lang) -> usize {
        self.store.value(self.emb(lang)).rows()
    }

    /// Bidirectional encoding of `batch` sources of length `len`, ids laid
    /// out time-major. The decoder starts from `z_T`.
    pub fn encode_batch(&self, g: &mut Graph, store: &ParamStore, ids: &[usize], lang: Lang, len: usize, batch: usize) -> Result<Encoded> {
        if len == 0 {
            return Err(Error::Contract("cannot encode an empty sentence".into()));
        }
        let emb = g.param(store, self.emb(lang));
        let x = g.lookup(emb, ids)?;
        let pf = self.enc_fwd.project(g, store, 0, x)?;
        let pb = self.enc_bwd.project(g, store, 0, x)?;
        let hf = self.enc_fwd.run(g, store, pf, len, batch, false)?;
        let hb = self.enc_bwd.run(g, store, pb, len, batch, true)?;
        let z = hf
            .iter()
            .zip(&hb)
            .map(|(&f, &b)| g.concat_cols(&[f, b]))
            .collect::<numkit::Result<Vec<_>>>()?;
        let zz = g.interleave_rows(&z)?;
        let memory = self.dec.attn.memory(g, store, zz, len)?;
        let last = z[len - 1];
        let h0 = match &self.bridge {
            Some(l) => l.forward(g, store, last)?,
            None => last,
        };
        Ok(Encoded { z, memory, h0 })
    }

    pub fn encode(&self, g: &mut Graph, ids: &[usize], lang: Lang) -> Result<Encoded> {
        self.encode_batch(g, &self.store, ids, lang, ids.len(), 1)
    }

    /// `Σ_b Σ_t w[b][t] · −log p(target_t | target_<t, source)` for a
    /// batch sharing source length and language pair. `weights[b]` has one
    /// entry per target token plus one for EOS.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_nll(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        src_lang: Lang,
        tgt_lang: Lang,
        srcs: &[&[usize]],
        tgts: &[&[usize]],
        weights: &[&[f64]],
    ) -> Result<Var> {
        let b = srcs.len();
        let len = srcs[0].len();
        if srcs.iter().any(|s| s.len() != len) {
            return Err(Error::Contract("batch sources differ in length".into()));
        }
        for (t, w) in tgts.iter().zip(weights) {
            if w.len() != t.len() + 1 {
                return Err(Error::Contract(format!(
                    "{} token weights for a {}-token target",
                    w.len(),
                    t.len()
                )));
            }
        }
        let mut ids = vec![0; len * b];
        for (bi, s) in srcs.iter().enumerate() {
            for (t, &id) in s.iter().enumerate() {
                ids[t * b + bi] = id;
            }
        }
        let enc = self.encode_batch(g, store, &ids, src_lang, len, b)?;
        let steps = tgts.iter().map(|t| t.len()).max().unwrap_or(0) + 1;
        let (inputs, targets, mut tw) = teacher_layout(tgts.iter().copied(), b, steps);
        for (bi, w) in weights.iter().enumerate() {
            tw[bi * steps..bi * steps + w.len()].copy_from_slice(w);
        }
        let emb = g.param(store, self.emb(tgt_lang));
        let temp = g.param(store, self.temperature);
        let states = self.dec.teacher(g, store, emb, &enc.memory, &inputs, steps, enc.h0)?;
        let logits = tied_logits(g, states, emb, Some(temp))?;
        Ok(g.cross_entropy(logits, &targets, &tw)?)
    }

    /// Weighted pivot loss of one pair in one direction:
    /// `β · Σ_t α_t · −log p(y_t | y_<t, x)`, EOS weighted by `β`.
    #[allow(clippy::too_many_arguments)]
    pub fn decode_nll(&self, g: &mut Graph, src: &[usize], src_lang: Lang, tgt: &[usize], tgt_lang: Lang, alpha: &[f64], beta: f64) -> Result<Var> {
        if alpha.len() != tgt.len() {
            return Err(Error::Contract(format!(
                "{} token weights for a {}-token target",
                alpha.len(),
                tgt.len()
            )));
        }
        if !(beta >= 0.0) {
            return Err(Error::Contract(format!("sentence weight {beta} is negative")));
        }
        let w = token_weights(alpha, beta);
        self.batch_nll(g, &self.store, src_lang, tgt_lang, &[src], &[tgt], &[&w])
    }

    /// `−log p(s | encode(corrupt(s)))` in the sentence's own language.
    pub fn ae_loss<R: Rng + ?Sized>(&self, g: &mut Graph, ids: &[usize], lang: Lang, p: &CorruptionParams, rng: &mut R) -> Result<Var> {
        let noisy = corrupt(ids, p, self.vocab_size(lang), rng);
        let w = vec![1.0; ids.len() + 1];
        self.batch_nll(g, &self.store, lang, lang, &[&noisy], &[ids], &[&w])
    }

    pub fn translate_beam(&self, src: &[usize], src_lang: Lang, tgt_lang: Lang, beam_width: usize, max_len: usize) -> Result<Vec<usize>> {
        if src.is_empty() {
            return Err(Error::Contract("cannot translate an empty sentence".into()));
        }
        let mut g = Graph::inference();
        let enc = self.encode(&mut g, src, src_lang)?;
        let emb = g.param(&self.store, self.emb(tgt_lang));
        let temp = g.param(&self.store, self.temperature);
        let mut st = Stepper::new(g, &self.store, &self.dec, emb, Some(temp), enc.memory.z, src.len(), enc.h0);
        beam_search(&mut st, beam_width, max_len)
    }
}

/// `[β·α_1, …, β·α_T, β]`: the EOS step carries the sentence weight.
pub fn token_weights(alpha: &[f64], beta: f64) -> Vec<f64> {
    alpha.iter().map(|a| a * beta).chain([beta]).collect()
}

/// A weighted pseudo pair: source in language A, target in language B.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPair {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
    pub alpha_src: Vec<f64>,
    pub alpha_tgt: Vec<f64>,
    pub beta: f64,
}

impl WeightedPair {
    pub fn unweighted(src: Vec<usize>, tgt: Vec<usize>) -> Self {
        Self {
            alpha_src: vec![1.0; src.len()],
            alpha_tgt: vec![1.0; tgt.len()],
            src,
            tgt,
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonoSentence {
    pub lang: Lang,
    pub ids: Vec<usize>,
}

/// One directed training example with its per-token weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub src_lang: Lang,
    pub tgt_lang: Lang,
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Both translation directions of every pair.
pub fn pivot_examples(pairs: &[WeightedPair]) -> Vec<Example> {
    let mut out = Vec::with_capacity(2 * pairs.len());
    for p in pairs {
        out.push(Example {
            src_lang: Lang::A,
            tgt_lang: Lang::B,
            src: p.src.clone(),
            tgt: p.tgt.clone(),
            weights: token_weights(&p.alpha_tgt, p.beta),
        });
        out.push(Example {
            src_lang: Lang::B,
            tgt_lang: Lang::A,
            src: p.tgt.clone(),
            tgt: p.src.clone(),
            weights: token_weights(&p.alpha_src, p.beta),
        });
    }
    out
}

/// Denoising examples with fresh corruption, weighted by `λ`.
pub fn ae_examples<R: Rng + ?Sized>(mono: &[MonoSentence], p: &CorruptionParams, lambda: f64, vocab: [usize; 2], rng: &mut R) -> Vec<Example> {
    mono.iter()
        .map(|m| Example {
            src_lang: m.lang,
            tgt_lang: m.lang,
            src: corrupt(&m.ids, p, vocab[m.lang as usize], rng),
            tgt: m.ids.clone(),
            weights: vec![lambda; m.ids.len() + 1],
        })
        .collect()
}

/// Buckets by (languages, source length), chunked; shuffled when an rng is
/// given.
pub fn batches<'a>(examples: &'a [Example], batch_size: usize, rng: Option<&mut ChaCha8Rng>) -> Vec<Vec<&'a Example>> {
    let mut groups: BTreeMap<(Lang, Lang, usize), Vec<&Example>> = BTreeMap::new();
    for e in examples {
        groups.entry((e.src_lang, e.tgt_lang, e.src.len())).or_default().push(e);
    }
    let mut out = Vec::new();
    match rng {
        Some(rng) => {
            for mut g in groups.into_values() {
                g.shuffle(rng);
                out.extend(g.chunks(batch_size).map(<[_]>::to_vec));
            }
            out.shuffle(rng);
        }
        None => {
            for g in groups.into_values() {
                out.extend(g.chunks(batch_size).map(<[_]>::to_vec));
            }
        }
    }
    out
}

/// Summed weighted NLL of one bucketed batch.
pub fn examples_loss(model: &NmtModel, g: &mut Graph, store: &ParamStore, batch: &[&Example]) -> Result<Var> {
    let srcs: Vec<&[usize]> = batch.iter().map(|e| e.src.as_slice()).collect();
    let tgts: Vec<&[usize]> = batch.iter().map(|e| e.tgt.as_slice()).collect();
    let ws: Vec<&[f64]> = batch.iter().map(|e| e.weights.as_slice()).collect();
    model.batch_nll(g, store, batch[0].src_lang, batch[0].tgt_lang, &srcs, &tgts, &ws)
}

/// `L_pivot + λ·L_ae` over the given pairs and monolingual sentences.
pub fn total_loss<R: Rng + ?Sized>(
    model: &NmtModel,
    g: &mut Graph,
    pairs: &[WeightedPair],
    mono: &[MonoSentence],
    lambda: f64,
    p: &CorruptionParams,
    rng: &mut R,
) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::Contract(format!("λ = {lambda} is negative")));
    }
    let vocab = [model.vocab_size(Lang::A), model.vocab_size(Lang::B)];
    let mut ex = pivot_examples(pairs);
    if lambda > 0.0 {
        ex.extend(ae_examples(mono, p, lambda, vocab, rng));
    }
    let mut terms = Vec::new();
    for b in batches(&ex, usize::MAX, None) {
        terms.push(examples_loss(model, g, &model.store, &b)?);
    }
    if terms.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    Ok(g.add_all(&terms)?)
}

/// Training and validation material for one run.
#[derive(Debug, Clone, Default)]
pub struct NmtData {
    pub train_pairs: Vec<WeightedPair>,
    pub train_mono: Vec<MonoSentence>,
    pub valid_pairs: Vec<WeightedPair>,
    pub valid_mono: Vec<MonoSentence>,
}

#[derive(Debug, Clone)]
pub struct TrainedNmt {
    pub model: NmtModel,
    pub report: TrainReport,
}

/// Mean per-example loss of fixed examples.
fn mean_loss(model: &NmtModel, store: &ParamStore, examples: &[Example], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for b in batches(examples, batch_size, None) {
        let mut g = Graph::inference();
        let l = examples_loss(model, &mut g, store, &b)?;
        total += g.value(l).item();
    }
    Ok(total / examples.len().max(1) as f64)
}

pub fn train_nmt(model: NmtModel, data: &NmtData, cfg: &NmtConfig) -> Result<TrainedNmt> {
    cfg.corruption.validate()?;
    if !(cfg.lambda >= 0.0) {
        return Err(Error::Config(format!("λ = {} is negative", cfg.lambda)));
    }
    let use_ae = cfg.lambda > 0.0 && !data.train_mono.is_empty();
    if data.train_pairs.is_empty() && !use_ae {
        return Err(Error::Data("nothing to train on".into()));
    }
    let vocab = [model.vocab_size(Lang::A), model.vocab_size(Lang::B)];
    let pivot = pivot_examples(&data.train_pairs);
    let mut valid = pivot_examples(&data.valid_pairs);
    if use_ae {
        let mut vr = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "nmt-valid-noise", 0));
        valid.extend(ae_examples(&data.valid_mono, &cfg.corruption, cfg.lambda, vocab, &mut vr));
    }
    if valid.is_empty() {
        return Err(Error::Data("empty validation set".into()));
    }
    let mut model = model;
    let mut store = std::mem::take(&mut model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "nmt-batches", 0));
    let bs = cfg.schedule.batch_size;
    // Corruption is redrawn every epoch, so batches own their examples.
    let report = fit(
        &mut store,
        &cfg.schedule,
        &mut rng,
        |r| {
            let mut ex = pivot.clone();
            if use_ae {
                ex.extend(ae_examples(&data.train_mono, &cfg.corruption, cfg.lambda, vocab, r));
            }
            let idx = batch_indices(&ex, bs, r);
            idx.into_iter()
                .map(|b| b.into_iter().map(|i| ex[i].clone()).collect::<Vec<_>>())
                .collect()
        },
        |g, s, b: &Vec<Example>| {
            let refs: Vec<&Example> = b.iter().collect();
            let l = examples_loss(&model, g, s, &refs)?;
            Ok(g.scale(l, 1.0 / b.len() as f64))
        },
        |s| mean_loss(&model, s, &valid, bs),
    )?;
    model.store = store;
    Ok(TrainedNmt { model, report })
}

fn batch_indices(examples: &[Example], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<(Lang, Lang, usize), Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        groups.entry((e.src_lang, e.tgt_lang, e.src.len())).or_default().push(i);
    }
    let mut out = Vec::new();
    for mut g in groups.into_values() {
        g.shuffle(rng);
        out.extend(g.chunks(batch_size).map(<[_]>::to_vec));
    }
    out.shuffle(rng);
    out
}

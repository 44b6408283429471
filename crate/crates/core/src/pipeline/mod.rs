//! Staged driver: gen-data → train-captioner → gen-pseudo → weigh →
//! train-nmt → eval, each stage logged in a run manifest and skipped when
//! its inputs and settings are unchanged.
//!
//! A run has a shared directory (data, captioner, pseudo pairs, weights)
//! and its own directory (translation model, evaluation). They coincide
//! for a single run; ablation variants share one upstream.

mod checkpoint;
mod config;
mod manifest;

pub use checkpoint::{Checkpoint, NamedTensor, MAGIC, VERSION};
pub use config::{LossSet, TrainConfig, STAGE_KEYS};
pub use manifest::{file_digest, FileDigest, RunManifest, StageRecord, StageStatus, MANIFEST_FILE};

use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::captioner::{
    examples, make_pseudo_pairs, train_captioner, CaptionModel, JointEmbeddings, Provenance, PseudoPair, PseudoReport,
};
use crate::emdweight::weigh_corpus;
use crate::error::{Error, IoContext, Result};
use crate::evalkit::{
    ablation_report, bleu4, lexicon_precision, BleuReport, LexiconPrecision, ScoreRow, CAPTION_CONFIG, SCORES_FILE,
    SUPERVISED_CONFIGS,
};
use crate::nmt::{train_nmt, EmbeddingSource, MonoSentence, NmtData, NmtModel, WeightedPair};
use crate::optim::TrainReport;
use crate::synthpivot::{gen_dataset, gen_parallel_split, id_space, read_dataset, write_dataset, Dataset, Inventory};
use crate::textproc::{BpeModel, Preprocessor, Vocabulary};
use crate::Lang;

pub const STAGES: [&str; 6] = ["gen-data", "train-captioner", "gen-pseudo", "weigh", "train-nmt", "eval"];

pub const CAPTIONER_TAG: &str = "captioner";
pub const NMT_TAG: &str = "nmt";

/// Where a run reads and writes, and the label its scores carry.
#[derive(Debug, Clone)]
pub struct RunDirs {
    pub shared: PathBuf,
    pub own: PathBuf,
    pub label: String,
}

impl RunDirs {
    pub fn single(out: &Path, label: &str) -> Self {
        Self {
            shared: out.into(),
            own: out.into(),
            label: label.into(),
        }
    }

    pub fn data(&self) -> PathBuf {
        self.shared.join("data")
    }
    pub fn captioner(&self) -> PathBuf {
        self.shared.join("captioner")
    }
    pub fn captioner_ckpt(&self) -> PathBuf {
        self.captioner().join("model.ckpt")
    }
    pub fn pseudo(&self) -> PathBuf {
        self.shared.join("pseudo")
    }
    pub fn weigh(&self) -> PathBuf {
        self.shared.join("weigh")
    }
    pub fn nmt(&self) -> PathBuf {
        self.own.join("nmt")
    }
    pub fn nmt_ckpt(&self) -> PathBuf {
        self.nmt().join("model.ckpt")
    }
    pub fn eval(&self) -> PathBuf {
        self.own.join("eval")
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Re-run this stage even when it is current.
    pub force_stage: Option<String>,
}

impl RunOptions {
    fn forced(&self, stage: &str) -> bool {
        self.force_stage.as_deref() == Some(stage)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.force_stage {
            Some(s) if !STAGES.contains(&s.as_str()) => {
                Err(Error::Config(format!("unknown stage {s:?}; stages are {}", STAGES.join(", "))))
            }
            _ => Ok(()),
        }
    }
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).ctx(format!("create {}", p.display()))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    std::fs::write(path, s).ctx(format!("write {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).ctx(format!("read {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = std::fs::File::create(path).ctx(format!("create {}", path.display()))?;
    let mut w = BufWriter::new(f);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n").ctx(format!("write {}", path.display()))?;
    }
    w.flush().ctx(format!("write {}", path.display()))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).ctx(format!("open {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.ctx(format!("read {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), n + 1)))?);
    }
    Ok(out)
}

fn write_lines(path: &Path, sents: &[Vec<String>]) -> Result<()> {
    let text: String = sents.iter().map(|s| s.join(" ") + "\n").collect();
    std::fs::write(path, text).ctx(format!("write {}", path.display()))
}

// ---------------------------------------------------------------- data

fn preprocessor_files(dir: &Path) -> [PathBuf; 3] {
    [dir.join("vocab.a.txt"), dir.join("vocab.b.txt"), dir.join("bpe.txt")]
}

pub fn load_preprocessor(data_dir: &Path) -> Result<Preprocessor> {
    let [va, vb, bpe] = preprocessor_files(data_dir);
    Ok(Preprocessor {
        bpe: if bpe.exists() { Some(BpeModel::load(&bpe)?) } else { None },
        vocab_a: Vocabulary::load(&va)?,
        vocab_b: Vocabulary::load(&vb)?,
    })
}

fn fit_preprocessor(d: &Dataset, cfg: &TrainConfig) -> Preprocessor {
    let a: Vec<Vec<String>> = d.train_x.iter().map(|r| r.caption.tokens.clone()).collect();
    let b: Vec<Vec<String>> = d.train_y.iter().map(|r| r.caption.tokens.clone()).collect();
    Preprocessor::fit(&a, &b, cfg.min_count, cfg.bpe_merges)
}

fn stage_gen_data(cfg: &TrainConfig, dirs: &RunDirs) -> Result<Vec<PathBuf>> {
    let dir = dirs.data();
    mkdir(&dir)?;
    let d = gen_dataset(&cfg.synth(), cfg.stage_seed("gen-data"))?;
    write_dataset(&dir, &d)?;
    let pre = fit_preprocessor(&d, cfg);
    let [va, vb, bpe] = preprocessor_files(&dir);
    pre.vocab_a.save(&va)?;
    pre.vocab_b.save(&vb)?;
    let mut out: Vec<PathBuf> = ["features.bin", "manifest.jsonl", "lexicon.tsv", "test.a.txt", "test.b.txt"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    out.extend([va, vb]);
    match &pre.bpe {
        Some(m) => {
            m.save(&bpe)?;
            out.push(bpe);
        }
        None if bpe.exists() => std::fs::remove_file(&bpe).ctx("remove stale bpe.txt")?,
        None => {}
    }
    Ok(out)
}

fn data_outputs(dirs: &RunDirs) -> Vec<PathBuf> {
    let dir = dirs.data();
    let mut v: Vec<PathBuf> = ["features.bin", "manifest.jsonl", "lexicon.tsv", "vocab.a.txt", "vocab.b.txt"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    let bpe = dir.join("bpe.txt");
    if bpe.exists() {
        v.push(bpe);
    }
    v
}

// ----------------------------------------------------------- captioner

pub fn load_captioner(dirs: &RunDirs, cfg: &TrainConfig, data: &Dataset, pre: &Preprocessor) -> Result<CaptionModel> {
    let ck = Checkpoint::load(&dirs.captioner_ckpt())?;
    ck.expect_stage(CAPTIONER_TAG)?;
    let mut m = CaptionModel::new(data.feature_dim, pre.vocab_a.len(), pre.vocab_b.len(), &cfg.captioner())?;
    ck.restore_into(&mut m.store)?;
    Ok(m)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptionerSummary {
    pub train: TrainReport,
    pub lexicon_p1: LexiconPrecision,
    pub lexicon_p5: LexiconPrecision,
    pub chance_p1: f64,
    pub caption_bleu_a: BleuReport,
    pub caption_bleu_b: BleuReport,
}

fn limit<T>(xs: &[T], n: usize) -> &[T] {
    if n == 0 {
        xs
    } else {
        &xs[..n.min(xs.len())]
    }
}

fn stage_train_captioner(cfg: &TrainConfig, dirs: &RunDirs) -> Result<Vec<PathBuf>> {
    let data = read_dataset(&dirs.data())?;
    let pre = load_preprocessor(&dirs.data())?;
    let dir = dirs.captioner();
    mkdir(&dir)?;
    let train: Vec<_> = examples(&data.train_x, &pre)?.into_iter().chain(examples(&data.train_y, &pre)?).collect();
    let valid: Vec<_> = examples(&data.valid_x, &pre)?.into_iter().chain(examples(&data.valid_y, &pre)?).collect();
    let ccfg = cfg.captioner();
    let mut t = train_captioner(&train, &valid, data.feature_dim, pre.vocab_a.len(), pre.vocab_b.len(), &ccfg)?;
    t.model.store.round_f32();
    let ck = Checkpoint::from_store(&t.model.store, CAPTIONER_TAG, &cfg.stage_hash("train-captioner"));
    ck.save(&dirs.captioner_ckpt())?;

    let emb = t.model.export_embeddings();
    let p1 = lexicon_precision(&emb.w_x, &emb.w_y, &data.lexicon, &pre, 1)?;
    let p5 = lexicon_precision(&emb.w_x, &emb.w_y, &data.lexicon, &pre, 5)?;
    let candidates = pre.vocab_b.len().saturating_sub(crate::textproc::RESERVED.len()).max(1);

    let mut caption_bleu = Vec::new();
    for (lang, recs) in [(Lang::A, &data.valid_x), (Lang::B, &data.valid_y)] {
        let recs = limit(recs, cfg.eval_limit);
        let mut hyps = Vec::with_capacity(recs.len());
        for r in recs {
            let ids = t.model.caption_beam(&r.features, lang, cfg.beam_width, cfg.max_len)?;
            hyps.push(pre.decode_lossy(lang, &ids));
        }
        let refs: Vec<Vec<String>> = recs.iter().map(|r| r.caption.tokens.clone()).collect();
        caption_bleu.push(bleu4(&hyps, &refs)?);
    }
    let hash = cfg.stage_hash("train-captioner");
    let rows = vec![
        ScoreRow::new("caption_a", CAPTION_CONFIG, cfg.seed, &caption_bleu[0], &hash),
        ScoreRow::new("caption_b", CAPTION_CONFIG, cfg.seed, &caption_bleu[1], &hash),
    ];
    let summary = CaptionerSummary {
        train: t.report,
        lexicon_p1: p1,
        lexicon_p5: p5,
        chance_p1: 1.0 / candidates as f64,
        caption_bleu_a: caption_bleu[0].clone(),
        caption_bleu_b: caption_bleu[1].clone(),
    };
    let (summary_path, scores_path) = (dir.join("summary.json"), dir.join(SCORES_FILE));
    write_json(&summary_path, &summary)?;
    write_json(&scores_path, &rows)?;
    Ok(vec![dirs.captioner_ckpt(), summary_path, scores_path])
}

// -------------------------------------------------------------- pseudo

fn pseudo_files(dirs: &RunDirs) -> [PathBuf; 2] {
    [dirs.pseudo().join("train.jsonl"), dirs.pseudo().join("valid.jsonl")]
}

fn stage_gen_pseudo(cfg: &TrainConfig, dirs: &RunDirs) -> Result<Vec<PathBuf>> {
    let data = read_dataset(&dirs.data())?;
    let pre = load_preprocessor(&dirs.data())?;
    let model = load_captioner(dirs, cfg, &data, &pre)?;
    mkdir(&dirs.pseudo())?;
    let pc = cfg.pseudo();
    let train = make_pseudo_pairs(&data.train_x, &data.train_y, &model, &pre, &pc)?;
    let valid = make_pseudo_pairs(&data.valid_x, &data.valid_y, &model, &pre, &pc)?;
    let [tp, vp] = pseudo_files(dirs);
    write_jsonl(&tp, &train.pairs)?;
    write_jsonl(&vp, &valid.pairs)?;
    let rp = dirs.pseudo().join("report.json");
    #[derive(Serialize)]
    struct Both<'a> {
        train: &'a PseudoReport,
        valid: &'a PseudoReport,
    }
    write_json(&rp, &Both { train: &train.report, valid: &valid.report })?;
    Ok(vec![tp, vp, rp])
}

// --------------------------------------------------------------- weigh

/// A pseudo pair annotated with its transport distance and weights over
/// model tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeighedPair {
    pub pair_id: usize,
    pub provenance: Provenance,
    pub scene_id: u64,
    pub src_tokens: Vec<String>,
    pub tgt_tokens: Vec<String>,
    pub d: f64,
    pub alpha_src: Vec<f64>,
    pub alpha_tgt: Vec<f64>,
    pub beta: f64,
    pub degenerate: bool,
}

fn weigh_files(dirs: &RunDirs) -> [PathBuf; 2] {
    [dirs.weigh().join("train.jsonl"), dirs.weigh().join("valid.jsonl")]
}

/// Weighs pairs against the pivot embeddings; each set uses its own
/// minimum distance.
pub fn weigh_pairs(pairs: &[PseudoPair], emb: &JointEmbeddings, pre: &Preprocessor, cfg: &TrainConfig) -> Result<Vec<WeighedPair>> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let ids: Vec<(Vec<usize>, Vec<usize>)> = pairs
        .iter()
        .map(|p| (pre.encode(Lang::A, &p.src_tokens), pre.encode(Lang::B, &p.tgt_tokens)))
        .collect();
    let wc = weigh_corpus(&ids, &emb.w_x, &emb.w_y, &cfg.weights())?;
    Ok(pairs
        .iter()
        .zip(wc.weights)
        .map(|(p, w)| WeighedPair {
            pair_id: p.pair_id,
            provenance: p.provenance,
            scene_id: p.scene_id,
            src_tokens: p.src_tokens.clone(),
            tgt_tokens: p.tgt_tokens.clone(),
            d: w.d,
            alpha_src: w.alpha_src,
            alpha_tgt: w.alpha_tgt,
            beta: w.beta,
            degenerate: w.degenerate,
        })
        .collect())
}

fn stage_weigh(cfg: &TrainConfig, dirs: &RunDirs) -> Result<Vec<PathBuf>> {
    let data = read_dataset(&dirs.data())?;
    let pre = load_preprocessor(&dirs.data())?;
    let emb = load_captioner(dirs, cfg, &data, &pre)?.export_embeddings();
    mkdir(&dirs.weigh())?;
    let mut out = Vec::new();
    for (src, dst) in pseudo_files(dirs).iter().zip(weigh_files(dirs)) {
        let pairs: Vec<PseudoPair> = read_jsonl(src)?;
        write_jsonl(&dst, &weigh_pairs(&pairs, &emb, &pre, cfg)?)?;
        out.push(dst);
    }
    Ok(out)
}

// ----------------------------------------------------------------- nmt

/// What the translation model trains on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NmtMode {
    /// Pseudo pairs and/or monolingual captions, per the config switches.
    ZeroResource,
    /// Held-out parallel data, this fraction of it, plain NLL.
    Supervised(f64),
}

fn to_weighted(p: &WeighedPair, pre: &Preprocessor, reweight: bool) -> WeightedPair {
    let src = pre.encode(Lang::A, &p.src_tokens);
    let tgt = pre.encode(Lang::B, &p.tgt_tokens);
    if reweight {
        WeightedPair {
            src,
            tgt,
            alpha_src: p.alpha_src.clone(),
            alpha_tgt: p.alpha_tgt.clone(),
            beta: p.beta,
        }
    } else {
        WeightedPair::unweighted(src, tgt)
    }
}

fn mono(recs: &[crate::synthpivot::SceneRecord], pre: &Preprocessor) -> Vec<MonoSentence> {
    recs.iter()
        .map(|r| MonoSentence {
            lang: r.caption.lang,
            ids: pre.encode(r.caption.lang, &r.caption.tokens),
        })
        .collect()
}

fn parallel(cfg: &TrainConfig, base: u64, n: usize, pre: &Preprocessor) -> Result<Vec<WeightedPair>> {
    let pairs = gen_parallel_split(cfg.stage_seed("gen-data"), base, n, &cfg.synth(), &Inventory::default())?;
    Ok(pairs
        .into_iter()
        .map(|p| WeightedPair::unweighted(pre.encode(Lang::A, &p.a), pre.encode(Lang::B, &p.b)))
        .collect())
}

fn nmt_data(cfg: &TrainConfig, dirs: &RunDirs, mode: NmtMode, data: &Dataset, pre: &Preprocessor) -> Result<NmtData> {
    match mode {
        NmtMode::Supervised(f) => {
            let n = ((cfg.n_train as f64 * f).round() as usize).max(1);
            Ok(NmtData {
                train_pairs: parallel(cfg, id_space::PARALLEL_TRAIN, n, pre)?,
                valid_pairs: parallel(cfg, id_space::PARALLEL_VALID, cfg.n_valid, pre)?,
                ..NmtData::default()
            })
        }
        NmtMode::ZeroResource => {
            let mut d = NmtData::default();
            if cfg.losses.uses_pivot() {
                let [tw, vw] = weigh_files(dirs);
                let load = |p: &Path| -> Result<Vec<WeightedPair>> {
                    Ok(read_jsonl::<WeighedPair>(p)?.iter().map(|w| to_weighted(w, pre, cfg.reweight)).collect())
                };
                d.train_pairs = load(&tw)?;
                d.valid_pairs = load(&vw)?;
            }
            if cfg.losses.uses_ae() {
                d.train_mono = mono(&data.train_x, pre).into_iter().chain(mono(&data.train_y, pre)).collect();
                d.valid_mono = mono(&data.valid_x, pre).into_iter().chain(mono(&data.valid_y, pre)).collect();
            }
            Ok(d)
        }
    }
}

fn uses_pivot_embeddings(cfg: &TrainConfig, mode: NmtMode) -> bool {
    mode == NmtMode::ZeroResource && cfg.pivot_embeddings
}

/// An untrained model with the embeddings the mode calls for.
fn nmt_skeleton(cfg: &TrainConfig, dirs: &RunDirs, mode: NmtMode, data: &Dataset, pre: &Preprocessor) -> Result<NmtModel> {
    if uses_pivot_embeddings(cfg, mode) {
        let emb = load_captioner(dirs, cfg, data, pre)?.export_embeddings();
        NmtModel::new(EmbeddingSource::Pivot(&emb), &cfg.nmt())
    } else {
        NmtModel::new(
            EmbeddingSource::Random {
                vocab_a: pre.vocab_a.len(),
                vocab_b: pre.vocab_b.len(),
            },
            &cfg.nmt(),
        )
    }
}

fn nmt_config(cfg: &TrainConfig, mode: NmtMode) -> TrainConfig {
    match mode {
        NmtMode::ZeroResource => cfg.clone(),
        NmtMode::Supervised(_) => TrainConfig {
            losses: LossSet::Pivot,
            reweight: false,
            pivot_embeddings: false,
            nmt_epochs: cfg.sup_epochs,
            ..cfg.clone()
        },
    }
}

fn stage_train_nmt(cfg: &TrainConfig, dirs: &RunDirs, mode: NmtMode, hash: &str) -> Result<Vec<PathBuf>> {
    let cfg = &nmt_config(cfg, mode);
    let data = read_dataset(&dirs.data())?;
    let pre = load_preprocessor(&dirs.data())?;
    mkdir(&dirs.nmt())?;
    let nd = nmt_data(cfg, dirs, mode, &data, &pre)?;
    let model = nmt_skeleton(cfg, dirs, mode, &data, &pre)?;
    let mut t = train_nmt(model, &nd, &cfg.nmt())?;
    t.model.store.round_f32();
    Checkpoint::from_store(&t.model.store, NMT_TAG, hash).save(&dirs.nmt_ckpt())?;
    let rp = dirs.nmt().join("report.json");
    write_json(&rp, &t.report)?;
    Ok(vec![dirs.nmt_ckpt(), rp])
}

/// A trained translation model with its text front end.
pub struct Translator {
    pub model: NmtModel,
    pub pre: Preprocessor,
    pub beam_width: usize,
    pub max_len: usize,
}

impl Translator {
    pub fn load(cfg: &TrainConfig, dirs: &RunDirs, mode: NmtMode) -> Result<Self> {
        let cfg = &nmt_config(cfg, mode);
        let data = read_dataset(&dirs.data())?;
        let pre = load_preprocessor(&dirs.data())?;
        let ck = Checkpoint::load(&dirs.nmt_ckpt())?;
        ck.expect_stage(NMT_TAG)?;
        let mut model = nmt_skeleton(cfg, dirs, mode, &data, &pre)?;
        ck.restore_into(&mut model.store)?;
        Ok(Self {
            model,
            pre,
            beam_width: cfg.beam_width,
            max_len: cfg.max_len,
        })
    }

    pub fn translate<S: AsRef<str>>(&self, words: &[S], src: Lang) -> Result<Vec<String>> {
        let ids = self.pre.encode(src, words);
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.model.translate_beam(&ids, src, src.other(), self.beam_width, self.max_len)?;
        Ok(self.pre.decode_lossy(src.other(), &out))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub label: String,
    pub seed: u64,
    pub config_hash: String,
    pub a2b: BleuReport,
    pub b2a: BleuReport,
}

fn stage_eval(cfg: &TrainConfig, dirs: &RunDirs, mode: NmtMode) -> Result<Vec<PathBuf>> {
    let tr = Translator::load(cfg, dirs, mode)?;
    let data = read_dataset(&dirs.data())?;
    let test = limit(&data.test, cfg.eval_limit);
    mkdir(&dirs.eval())?;
    let mut reports = Vec::new();
    let mut out = Vec::new();
    for (dir, src) in [("a2b", Lang::A), ("b2a", Lang::B)] {
        let mut hyps = Vec::with_capacity(test.len());
        let mut refs = Vec::with_capacity(test.len());
        for p in test {
            let (s, r) = match src {
                Lang::A => (&p.a, &p.b),
                Lang::B => (&p.b, &p.a),
            };
            hyps.push(tr.translate(s, src)?);
            refs.push(r.clone());
        }
        let path = dirs.eval().join(format!("hyp.{dir}.txt"));
        write_lines(&path, &hyps)?;
        out.push(path);
        reports.push(bleu4(&hyps, &refs)?);
    }
    let hash = cfg.hash();
    let summary = EvalSummary {
        label: dirs.label.clone(),
        seed: cfg.seed,
        config_hash: hash.clone(),
        a2b: reports[0].clone(),
        b2a: reports[1].clone(),
    };
    let rows = vec![
        ScoreRow::new("a2b", &dirs.label, cfg.seed, &reports[0], &hash),
        ScoreRow::new("b2a", &dirs.label, cfg.seed, &reports[1], &hash),
    ];
    let (bp, sp) = (dirs.eval().join("bleu.json"), dirs.eval().join(SCORES_FILE));
    write_json(&bp, &summary)?;
    write_json(&sp, &rows)?;
    out.extend([bp, sp]);
    Ok(out)
}

// -------------------------------------------------------------- driver

/// Runs the shared stages up to and including `until`.
fn run_shared(cfg: &TrainConfig, dirs: &RunDirs, until: &str, opts: &RunOptions) -> Result<RunManifest> {
    let mut m = RunManifest::open(&dirs.shared)?;
    let stop = STAGES.iter().position(|s| *s == until).unwrap_or(STAGES.len() - 1);
    let [tp, vp] = pseudo_files(dirs);
    let steps: [(&str, Vec<PathBuf>); 4] = [
        ("gen-data", vec![]),
        ("train-captioner", data_outputs(dirs)),
        ("gen-pseudo", vec![dirs.captioner_ckpt()]),
        ("weigh", vec![dirs.captioner_ckpt(), tp, vp]),
    ];
    for (i, (stage, inputs)) in steps.into_iter().enumerate() {
        if i > stop {
            break;
        }
        let inputs = if stage == "gen-pseudo" || stage == "weigh" {
            data_outputs(dirs).into_iter().chain(inputs).collect()
        } else {
            inputs
        };
        let hash = cfg.stage_hash(stage);
        m.run(stage, &hash, cfg.stage_seed(stage), &inputs, opts.forced(stage), || match stage {
            "gen-data" => stage_gen_data(cfg, dirs),
            "train-captioner" => stage_train_captioner(cfg, dirs),
            "gen-pseudo" => stage_gen_pseudo(cfg, dirs),
            _ => stage_weigh(cfg, dirs),
        })?;
    }
    Ok(m)
}

fn run_own(cfg: &TrainConfig, dirs: &RunDirs, mode: NmtMode, until: &str, opts: &RunOptions) -> Result<RunManifest> {
    let mut m = RunManifest::open(&dirs.own)?;
    let hash = match mode {
        NmtMode::ZeroResource => cfg.stage_hash("train-nmt"),
        NmtMode::Supervised(f) => format!("{}-sup{f}", cfg.stage_hash("train-nmt")),
    };
    let mut inputs = data_outputs(dirs);
    if uses_pivot_embeddings(cfg, mode) {
        inputs.push(dirs.captioner_ckpt());
    }
    if mode == NmtMode::ZeroResource && cfg.losses.uses_pivot() {
        inputs.extend(weigh_files(dirs));
    }
    m.run("train-nmt", &hash, cfg.stage_seed("train-nmt"), &inputs, opts.forced("train-nmt"), || {
        stage_train_nmt(cfg, dirs, mode, &hash)
    })?;
    if until == "eval" {
        let mut ein = inputs.clone();
        ein.push(dirs.nmt_ckpt());
        let ehash = format!("{hash}-{}-{}", cfg.stage_hash("eval"), dirs.label);
        m.run("eval", &ehash, cfg.stage_seed("eval"), &ein, opts.forced("eval"), || stage_eval(cfg, dirs, mode))?;
    }
    Ok(m)
}

/// Runs every stage through `until`, skipping those already current.
pub fn run_until(cfg: &TrainConfig, dirs: &RunDirs, until: &str, opts: &RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    opts.validate()?;
    let pos = STAGES
        .iter()
        .position(|s| *s == until)
        .ok_or_else(|| Error::Config(format!("unknown stage {until:?}")))?;
    let shared = run_shared(cfg, dirs, until, opts)?;
    if pos < 4 {
        return Ok(shared);
    }
    let mut own = run_own(cfg, dirs, NmtMode::ZeroResource, until, opts)?;
    if dirs.own != dirs.shared {
        own.executed.splice(0..0, shared.executed);
        own.skipped.splice(0..0, shared.skipped);
    } else {
        own.executed = shared.executed.into_iter().chain(own.executed).collect();
        own.skipped = shared.skipped.into_iter().chain(own.skipped).collect();
        own.records = RunManifest::open(&dirs.own)?.records;
    }
    Ok(own)
}

pub fn run_progressive(cfg: &TrainConfig, dirs: &RunDirs, opts: &RunOptions) -> Result<RunManifest> {
    run_until(cfg, dirs, "eval", opts)
}

/// Trains and scores the supervised reference on `fraction` of the
/// held-out parallel split; shares the data stage with `dirs.shared`.
pub fn run_supervised_baseline(cfg: &TrainConfig, dirs: &RunDirs, fraction: f64, opts: &RunOptions) -> Result<EvalSummary> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    cfg.validate()?;
    opts.validate()?;
    run_shared(cfg, dirs, "gen-data", opts)?;
    run_own(cfg, dirs, NmtMode::Supervised(fraction), "eval", opts)?;
    read_json(&dirs.eval().join("bleu.json"))
}

/// The zero-resource ablation cells: name and config overrides.
pub fn ablation_variants(base: &TrainConfig) -> Vec<(&'static str, TrainConfig)> {
    let v = |losses, reweight, pivot_embeddings| TrainConfig {
        losses,
        reweight,
        pivot_embeddings,
        ..base.clone()
    };
    vec![
        ("pivot_noreweight", v(LossSet::Pivot, false, true)),
        ("pivot_reweight", v(LossSet::Pivot, true, true)),
        ("ae_random_emb", v(LossSet::Ae, true, false)),
        ("ae_pivot_emb", v(LossSet::Ae, true, true)),
        ("combined", v(LossSet::PivotAe, true, true)),
    ]
}

/// Every ablation cell and supervised fraction for each seed under
/// `out/seed_S`, then the report under `out`.
pub fn ablate(base: &TrainConfig, seeds: &[u64], out: &Path, opts: &RunOptions) -> Result<crate::evalkit::AblationReport> {
    for &seed in seeds {
        let cfg = TrainConfig { seed, ..base.clone() };
        let shared = out.join(format!("seed_{seed}"));
        let root = RunDirs::single(&shared, "shared");
        run_until(&cfg, &root, "weigh", opts)?;
        for (name, vcfg) in ablation_variants(&cfg) {
            let dirs = RunDirs {
                shared: shared.clone(),
                own: shared.join(name),
                label: name.into(),
            };
            run_own(&vcfg, &dirs, NmtMode::ZeroResource, "eval", opts)?;
        }
        for (name, f) in SUPERVISED_CONFIGS {
            let dirs = RunDirs {
                shared: shared.clone(),
                own: shared.join(name),
                label: name.into(),
            };
            run_own(&cfg, &dirs, NmtMode::Supervised(f), "eval", opts)?;
        }
    }
    report(out)
}

/// Writes `report.md` and `report.csv` for every score file under `out`.
pub fn report(out: &Path) -> Result<crate::evalkit::AblationReport> {
    let rep = ablation_report(out)?;
    std::fs::write(out.join("report.md"), &rep.markdown).ctx("write report.md")?;
    std::fs::write(out.join("report.csv"), &rep.csv).ctx("write report.csv")?;
    Ok(rep)
}

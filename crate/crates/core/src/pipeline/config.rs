use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::captioner::{CaptionerConfig, PseudoConfig};
use crate::emdweight::WeightConfig;
use crate::error::{Error, IoContext, Result};
use crate::nmt::{CorruptionParams, NmtConfig};
use crate::optim::TrainSchedule;
use crate::seeds::{derive_seed, hex_digest};
use crate::synthpivot::SynthConfig;

/// Which terms enter the translation objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSet {
    Pivot,
    Ae,
    PivotAe,
}

impl LossSet {
    pub fn as_str(self) -> &'static str {
        match self {
            LossSet::Pivot => "pivot",
            LossSet::Ae => "ae",
            LossSet::PivotAe => "pivot+ae",
        }
    }

    pub fn uses_pivot(self) -> bool {
        self != LossSet::Ae
    }

    pub fn uses_ae(self) -> bool {
        self != LossSet::Pivot
    }
}

impl FromStr for LossSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pivot" => Ok(LossSet::Pivot),
            "ae" => Ok(LossSet::Ae),
            "pivot+ae" => Ok(LossSet::PivotAe),
            _ => Err(Error::Config(format!("losses must be pivot, ae or pivot+ae, got {s:?}"))),
        }
    }
}

impl Display for LossSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Every tunable of a run. Parsed from flat `key = value` files.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub max_facts: usize,
    pub sigma: f64,
    pub diversity: f64,
    pub min_count: u64,
    pub bpe_merges: usize,

    pub cap_hidden: usize,
    pub cap_attention: usize,
    pub cap_epochs: usize,

    pub pseudo_dedup: bool,
    pub lambda_token: f64,
    pub lambda_sent: f64,

    pub enc_hidden: usize,
    pub nmt_attention: usize,
    pub nmt_epochs: usize,
    /// Epochs of the supervised reference, which sees fewer examples per epoch.
    pub sup_epochs: usize,
    pub lambda: f64,
    pub p_drop: f64,
    pub p_insert: f64,
    pub jitter: usize,
    pub reweight: bool,
    pub pivot_embeddings: bool,
    pub losses: LossSet,

    pub lr: f64,
    pub batch_size: usize,
    pub clip: f64,
    pub patience: usize,
    pub beam_width: usize,
    pub max_len: usize,
    pub eval_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let corr = CorruptionParams::default();
        let w = WeightConfig::default();
        let sched = TrainSchedule::default();
        Self {
            seed: 1,
            n_train: synth.n_train,
            n_valid: synth.n_valid,
            n_test: synth.n_test,
            max_facts: synth.max_facts,
            sigma: synth.sigma,
            diversity: synth.diversity,
            min_count: 0,
            bpe_merges: 0,
            cap_hidden: 64,
            cap_attention: 64,
            cap_epochs: 30,
            pseudo_dedup: false,
            lambda_token: w.lambda_token,
            lambda_sent: w.lambda_sent,
            enc_hidden: 32,
            nmt_attention: 64,
            nmt_epochs: 30,
            sup_epochs: 30,
            lambda: 1.0,
            p_drop: corr.p_drop,
            p_insert: corr.p_insert,
            jitter: corr.jitter,
            reweight: true,
            pivot_embeddings: true,
            losses: LossSet::PivotAe,
            lr: sched.lr,
            batch_size: sched.batch_size,
            clip: sched.clip,
            patience: sched.patience,
            beam_width: 5,
            max_len: 60,
            eval_limit: 0,
        }
    }
}

/// Keys each stage reads, in pipeline order; a stage's fingerprint covers
/// its own keys and those of every earlier stage.
pub const STAGE_KEYS: [(&str, &[&str]); 6] = [
    (
        "gen-data",
        &["seed", "n_train", "n_valid", "n_test", "max_facts", "sigma", "diversity", "min_count", "bpe_merges"],
    ),
    (
        "train-captioner",
        &["cap_hidden", "cap_attention", "cap_epochs", "lr", "batch_size", "clip", "patience"],
    ),
    ("gen-pseudo", &["beam_width", "max_len", "pseudo_dedup"]),
    ("weigh", &["lambda_token", "lambda_sent"]),
    (
        "train-nmt",
        &[
            "enc_hidden", "nmt_attention", "nmt_epochs", "sup_epochs", "lambda", "p_drop", "p_insert", "jitter", "reweight",
            "pivot_embeddings", "losses",
        ],
    ),
    ("eval", &["eval_limit"]),
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "n_train" => self.n_train = parse(key, v)?,
            "n_valid" => self.n_valid = parse(key, v)?,
            "n_test" => self.n_test = parse(key, v)?,
            "max_facts" => self.max_facts = parse(key, v)?,
            "sigma" => self.sigma = parse(key, v)?,
            "diversity" => self.diversity = parse(key, v)?,
            "min_count" => self.min_count = parse(key, v)?,
            "bpe_merges" => self.bpe_merges = parse(key, v)?,
            "cap_hidden" => self.cap_hidden = parse(key, v)?,
            "cap_attention" => self.cap_attention = parse(key, v)?,
            "cap_epochs" => self.cap_epochs = parse(key, v)?,
            "pseudo_dedup" => self.pseudo_dedup = parse_bool(key, v)?,
            "lambda_token" => self.lambda_token = parse(key, v)?,
            "lambda_sent" => self.lambda_sent = parse(key, v)?,
            "enc_hidden" => self.enc_hidden = parse(key, v)?,
            "nmt_attention" => self.nmt_attention = parse(key, v)?,
            "nmt_epochs" => self.nmt_epochs = parse(key, v)?,
            "sup_epochs" => self.sup_epochs = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "p_drop" => self.p_drop = parse(key, v)?,
            "p_insert" => self.p_insert = parse(key, v)?,
            "jitter" => self.jitter = parse(key, v)?,
            "reweight" => self.reweight = parse_bool(key, v)?,
            "pivot_embeddings" => self.pivot_embeddings = parse_bool(key, v)?,
            "losses" => self.losses = v.parse()?,
            "lr" => self.lr = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "clip" => self.clip = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "beam_width" => self.beam_width = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "eval_limit" => self.eval_limit = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// All keys with their canonical value text, in declaration order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("n_train", self.n_train.to_string()),
            ("n_valid", self.n_valid.to_string()),
            ("n_test", self.n_test.to_string()),
            ("max_facts", self.max_facts.to_string()),
            ("sigma", self.sigma.to_string()),
            ("diversity", self.diversity.to_string()),
            ("min_count", self.min_count.to_string()),
            ("bpe_merges", self.bpe_merges.to_string()),
            ("cap_hidden", self.cap_hidden.to_string()),
            ("cap_attention", self.cap_attention.to_string()),
            ("cap_epochs", self.cap_epochs.to_string()),
            ("pseudo_dedup", self.pseudo_dedup.to_string()),
            ("lambda_token", self.lambda_token.to_string()),
            ("lambda_sent", self.lambda_sent.to_string()),
            ("enc_hidden", self.enc_hidden.to_string()),
            ("nmt_attention", self.nmt_attention.to_string()),
            ("nmt_epochs", self.nmt_epochs.to_string()),
            ("sup_epochs", self.sup_epochs.to_string()),
            ("lambda", self.lambda.to_string()),
            ("p_drop", self.p_drop.to_string()),
            ("p_insert", self.p_insert.to_string()),
            ("jitter", self.jitter.to_string()),
            ("reweight", self.reweight.to_string()),
            ("pivot_embeddings", self.pivot_embeddings.to_string()),
            ("losses", self.losses.to_string()),
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("clip", self.clip.to_string()),
            ("patience", self.patience.to_string()),
            ("beam_width", self.beam_width.to_string()),
            ("max_len", self.max_len.to_string()),
            ("eval_limit", self.eval_limit.to_string()),
        ]
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
            }
            cfg.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                e => e,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).ctx(format!("read {}", path.display()))?;
        let text = std::str::from_utf8(&bytes)?;
        Self::parse_str(text)
    }

    /// The canonical file form: every key, sorted.
    pub fn to_text(&self) -> String {
        let mut e = self.entries();
        e.sort();
        e.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.synth().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.corruption().validate().map_err(|e| Error::Config(e.to_string()))?;
        let positive = [
            ("cap_hidden", self.cap_hidden),
            ("cap_attention", self.cap_attention),
            ("enc_hidden", self.enc_hidden),
            ("nmt_attention", self.nmt_attention),
            ("batch_size", self.batch_size),
            ("beam_width", self.beam_width),
            ("max_len", self.max_len),
            ("patience", self.patience),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        for (k, v) in [
            ("lambda_token", self.lambda_token),
            ("lambda_sent", self.lambda_sent),
            ("lambda", self.lambda),
            ("clip", self.clip),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be finite and nonnegative, got {v}")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.losses.uses_ae() && self.lambda == 0.0 {
            return Err(Error::Config(format!("losses = {} needs lambda > 0", self.losses)));
        }
        Ok(())
    }

    /// Short fingerprint of the full configuration.
    pub fn hash(&self) -> String {
        fingerprint(self.entries())
    }

    /// Fingerprint of the keys that `stage` and its upstream stages read.
    pub fn stage_hash(&self, stage: &str) -> String {
        let mut keys: Vec<&str> = Vec::new();
        for (s, ks) in STAGE_KEYS {
            keys.extend_from_slice(ks);
            if s == stage {
                break;
            }
        }
        fingerprint(self.entries().into_iter().filter(|(k, _)| keys.contains(k)).collect())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage, 0)
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_train: self.n_train,
            n_valid: self.n_valid,
            n_test: self.n_test,
            max_facts: self.max_facts,
            sigma: self.sigma,
            diversity: self.diversity,
        }
    }

    fn schedule(&self, epochs: usize) -> TrainSchedule {
        TrainSchedule {
            epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            clip: self.clip,
            patience: self.patience,
        }
    }

    pub fn captioner(&self) -> CaptionerConfig {
        CaptionerConfig {
            hidden: self.cap_hidden,
            attention: self.cap_attention,
            schedule: self.schedule(self.cap_epochs),
            max_len: self.max_len,
            seed: self.stage_seed("train-captioner"),
        }
    }

    pub fn pseudo(&self) -> PseudoConfig {
        PseudoConfig {
            beam_width: self.beam_width,
            max_len: self.max_len,
            dedup: self.pseudo_dedup,
        }
    }

    pub fn weights(&self) -> WeightConfig {
        WeightConfig {
            lambda_token: self.lambda_token,
            lambda_sent: self.lambda_sent,
            ..WeightConfig::default()
        }
    }

    pub fn corruption(&self) -> CorruptionParams {
        CorruptionParams {
            p_drop: self.p_drop,
            p_insert: self.p_insert,
            jitter: self.jitter,
        }
    }

    /// The decoder width follows the captioner so pivot embeddings fit.
    pub fn nmt(&self) -> NmtConfig {
        NmtConfig {
            enc_hidden: self.enc_hidden,
            dec_hidden: self.cap_hidden,
            attention: self.nmt_attention,
            schedule: self.schedule(self.nmt_epochs),
            corruption: self.corruption(),
            lambda: if self.losses.uses_ae() { self.lambda } else { 0.0 },
            max_len: self.max_len,
            beam_width: self.beam_width,
            seed: self.stage_seed("train-nmt"),
        }
    }
}

fn fingerprint(mut entries: Vec<(&str, String)>) -> String {
    entries.sort();
    let text: String = entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    hex_digest(text.as_bytes())[..16].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut c = TrainConfig::default();
        c.sigma = 0.0;
        c.losses = LossSet::Ae;
        c.reweight = false;
        let back = TrainConfig::parse_str(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn comments_blank_lines_and_errors() {
        let c = TrainConfig::parse_str("# run\n\nseed = 7  # master\nlosses = pivot\n").unwrap();
        assert_eq!((c.seed, c.losses), (7, LossSet::Pivot));
        for bad in ["nope = 1", "seed", "seed = x", "seed = 1\nseed = 2", "sigma = -1", "batch_size = 0"] {
            assert!(matches!(TrainConfig::parse_str(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn stage_hash_ignores_downstream_keys() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        b.reweight = false;
        assert_eq!(a.stage_hash("weigh"), b.stage_hash("weigh"));
        assert_ne!(a.stage_hash("train-nmt"), b.stage_hash("train-nmt"));
        b.sigma = 0.0;
        assert_ne!(a.stage_hash("gen-data"), b.stage_hash("gen-data"));
    }
}

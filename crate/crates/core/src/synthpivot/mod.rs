//! Synthetic stand-in for image-caption data.
//!
//! A scene is a small set of grounded facts `(entity, attribute, action,
//! location)`. Its pivot features are one vector per fact (concatenated
//! one-hot concept indicators plus Gaussian noise). Captions verbalize a
//! random subset of the facts in one of two artificial languages:
//!
//! * A: `a <attr> <entity> <action> in the <location>`, clauses joined by
//!   `and`, sentence ends with `.`
//! * B: `<entity> <attr> ko <location> ni <action>`, clauses joined by `su`
//!   (verb-final)
//!
//! The `diversity` knob controls how many facts a caption mentions, which is
//! what makes captions of the same scene noisy as mutual translations.

mod concepts;
mod io;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use concepts::*;
pub use io::{read_dataset, read_lexicon, write_dataset, FeatureFile};

use crate::error::{Error, Result};
use crate::seeds::derive_seed;
use crate::Lang;

pub type Fact = [usize; 4];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneSpec {
    pub id: u64,
    /// Distinct facts in canonical (sorted) order.
    pub facts: Vec<Fact>,
}

/// One feature vector per fact, row-major `count × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotFeature {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl PivotFeature {
    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundedCaption {
    pub scene_id: u64,
    pub lang: Lang,
    pub tokens: Vec<String>,
    /// Indices into the scene's facts, ascending.
    pub facts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub max_facts: usize,
    pub sigma: f64,
    pub diversity: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train: 4000,
            n_valid: 500,
            n_test: 1000,
            max_facts: 3,
            sigma: 0.1,
            diversity: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_valid == 0 || self.n_test == 0 {
            return Err(Error::Config("dataset sizes must be positive".into()));
        }
        if self.max_facts == 0 {
            return Err(Error::Config("max_facts must be at least 1".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.diversity) {
            return Err(Error::Config(format!(
                "diversity must lie in [0, 1], got {}",
                self.diversity
            )));
        }
        Ok(())
    }
}

/// Bijective map between the content words of the two languages.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SynthLexicon {
    pub pairs: Vec<(String, String)>,
}

impl SynthLexicon {
    pub fn from_inventory(inv: &Inventory) -> Self {
        Self {
            pairs: inv
                .slots
                .iter()
                .flatten()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        }
    }

    pub fn a_to_b(&self) -> HashMap<&str, &str> {
        self.pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn sample_scene<R: Rng + ?Sized>(
    rng: &mut R,
    id: u64,
    inv: &Inventory,
    max_facts: usize,
) -> Result<SceneSpec> {
    if inv.slots.iter().any(Vec::is_empty) {
        return Err(Error::Config("concept inventories must be non-empty".into()));
    }
    if max_facts == 0 {
        return Err(Error::Config("max_facts must be at least 1".into()));
    }
    let distinct: usize = inv.slots.iter().map(Vec::len).product();
    let m = rng.random_range(1..=max_facts).min(distinct);
    let mut facts: Vec<Fact> = Vec::with_capacity(m);
    while facts.len() < m {
        let f = [
            rng.random_range(0..inv.slots[0].len()),
            rng.random_range(0..inv.slots[1].len()),
            rng.random_range(0..inv.slots[2].len()),
            rng.random_range(0..inv.slots[3].len()),
        ];
        if !facts.contains(&f) {
            facts.push(f);
        }
    }
    facts.sort_unstable();
    Ok(SceneSpec { id, facts })
}

fn clause(inv: &Inventory, lang: Lang, f: &Fact) -> Vec<String> {
    let w = |slot: usize| -> &'static str {
        let (a, b) = inv.slots[slot][f[slot]];
        match lang {
            Lang::A => a,
            Lang::B => b,
        }
    };
    let words: Vec<&str> = match lang {
        Lang::A => vec![A_ARTICLE, w(1), w(0), w(2), A_PREP, A_DET, w(3)],
        Lang::B => vec![w(0), w(1), B_SUBJ, w(3), B_LOC, w(2)],
    };
    words.into_iter().map(str::to_string).collect()
}

/// Surface form of a list of facts in canonical grammar.
pub fn verbalize(inv: &Inventory, lang: Lang, facts: &[Fact]) -> Vec<String> {
    let mut out = Vec::new();
    for (k, f) in facts.iter().enumerate() {
        if k > 0 {
            out.push(match lang {
                Lang::A => A_CONJ,
                Lang::B => B_CONJ,
            }
            .to_string());
        }
        out.extend(clause(inv, lang, f));
    }
    if lang == Lang::A {
        out.push(A_END.to_string());
    }
    out
}

/// Verbalizes a random subset of the scene: each fact is kept with
/// probability `1 − diversity`; an empty draw falls back to one uniformly
/// chosen fact. `diversity = 0` consumes no randomness.
pub fn render_caption<R: Rng + ?Sized>(
    scene: &SceneSpec,
    inv: &Inventory,
    lang: Lang,
    diversity: f64,
    rng: &mut R,
) -> GroundedCaption {
    let mut keep: Vec<usize> = if diversity <= 0.0 {
        (0..scene.facts.len()).collect()
    } else {
        (0..scene.facts.len())
            .filter(|_| rng.random::<f64>() >= diversity)
            .collect()
    };
    if keep.is_empty() {
        keep.push(rng.random_range(0..scene.facts.len()));
    }
    let facts: Vec<Fact> = keep.iter().map(|&i| scene.facts[i]).collect();
    GroundedCaption {
        scene_id: scene.id,
        lang,
        tokens: verbalize(inv, lang, &facts),
        facts: keep,
    }
}

/// Parses a canonical caption back into facts.
pub fn parse_caption<S: AsRef<str>>(inv: &Inventory, lang: Lang, tokens: &[S]) -> Result<Vec<Fact>> {
    let toks: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let bad = || Error::Data(format!("not a canonical {lang} caption: {}", toks.join(" ")));
    let body = match lang {
        Lang::A => toks.strip_suffix(&[A_END]).ok_or_else(bad)?,
        Lang::B => &toks[..],
    };
    let conj = match lang {
        Lang::A => A_CONJ,
        Lang::B => B_CONJ,
    };
    let lookup = |slot: usize, w: &str| -> Option<usize> {
        inv.slots[slot].iter().position(|(a, b)| match lang {
            Lang::A => *a == w,
            Lang::B => *b == w,
        })
    };
    let mut facts = Vec::new();
    for cl in body.split(|t| *t == conj) {
        let f = match (lang, cl) {
            (Lang::A, [art, at, en, ac, pr, de, lo])
                if *art == A_ARTICLE && *pr == A_PREP && *de == A_DET =>
            {
                [lookup(0, en), lookup(1, at), lookup(2, ac), lookup(3, lo)]
            }
            (Lang::B, [en, at, su, lo, ni, ac]) if *su == B_SUBJ && *ni == B_LOC => {
                [lookup(0, en), lookup(1, at), lookup(2, ac), lookup(3, lo)]
            }
            _ => return Err(bad()),
        };
        match f {
            [Some(e), Some(a), Some(v), Some(l)] => facts.push([e, a, v, l]),
            _ => return Err(bad()),
        }
    }
    Ok(facts)
}

/// Translates a canonical language-A caption word by word through the
/// lexicon and re-orders it with the language-B grammar.
pub fn lexicon_translate<S: AsRef<str>>(
    inv: &Inventory,
    lexicon: &SynthLexicon,
    tokens_a: &[S],
) -> Result<Vec<String>> {
    let map = lexicon.a_to_b();
    let facts = parse_caption(inv, Lang::A, tokens_a)?;
    let mut out = Vec::new();
    for (k, f) in facts.iter().enumerate() {
        if k > 0 {
            out.push(B_CONJ.to_string());
        }
        let word = |slot: usize| -> Result<String> {
            let a = inv.slots[slot][f[slot]].0;
            map.get(a)
                .map(|b| b.to_string())
                .ok_or_else(|| Error::Data(format!("lexicon lacks {a}")))
        };
        out.extend([
            word(0)?,
            word(1)?,
            B_SUBJ.to_string(),
            word(3)?,
            B_LOC.to_string(),
            word(2)?,
        ]);
    }
    Ok(out)
}

/// One vector per fact: one-hot indicators per slot plus `N(0, σ²)` noise,
/// rounded through `f32` (the on-disk precision).
pub fn pivot_features<R: Rng + ?Sized>(
    scene: &SceneSpec,
    inv: &Inventory,
    sigma: f64,
    rng: &mut R,
) -> PivotFeature {
    let dim = inv.feature_dim();
    let off = inv.offsets();
    let mut data = vec![0.0; dim * scene.facts.len()];
    for (i, f) in scene.facts.iter().enumerate() {
        let row = &mut data[i * dim..(i + 1) * dim];
        for k in 0..4 {
            row[off[k] + f[k]] = 1.0;
        }
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("sigma is finite");
            for x in row.iter_mut() {
                *x += normal.sample(rng);
            }
        }
    }
    for x in &mut data {
        *x = *x as f32 as f64;
    }
    PivotFeature { dim, data }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub scene: SceneSpec,
    pub caption: GroundedCaption,
    pub features: PivotFeature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelPair {
    pub scene_id: u64,
    pub a: Vec<String>,
    pub b: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train_x: Vec<SceneRecord>,
    pub train_y: Vec<SceneRecord>,
    pub valid_x: Vec<SceneRecord>,
    pub valid_y: Vec<SceneRecord>,
    pub test: Vec<ParallelPair>,
    pub lexicon: SynthLexicon,
    pub feature_dim: usize,
}

/// Scene-id blocks. Every split owns a disjoint id range, so a scene
/// appears in exactly one split and one language.
pub mod id_space {
    pub const TRAIN_X: u64 = 0;
    pub const TRAIN_Y: u64 = 1 << 32;
    pub const VALID_X: u64 = 2 << 32;
    pub const VALID_Y: u64 = 3 << 32;
    pub const TEST: u64 = 4 << 32;
    pub const PARALLEL_TRAIN: u64 = 5 << 32;
    pub const PARALLEL_VALID: u64 = 6 << 32;
}

fn scene_rng(seed: u64, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, "scene", id))
}

/// Generates one captioned scene. Depends only on `(seed, id)` and the
/// configuration, never on generation order.
pub fn gen_record(seed: u64, id: u64, lang: Lang, cfg: &SynthConfig, inv: &Inventory) -> Result<SceneRecord> {
    let mut rng = scene_rng(seed, id);
    let scene = sample_scene(&mut rng, id, inv, cfg.max_facts)?;
    let caption = render_caption(&scene, inv, lang, cfg.diversity, &mut rng);
    let features = pivot_features(&scene, inv, cfg.sigma, &mut rng);
    Ok(SceneRecord {
        scene,
        caption,
        features,
    })
}

/// A held-out scene rendered in both languages with all facts in canonical
/// order, so the two sides are exact translations.
pub fn gen_parallel(seed: u64, id: u64, cfg: &SynthConfig, inv: &Inventory) -> Result<ParallelPair> {
    let mut rng = scene_rng(seed, id);
    let scene = sample_scene(&mut rng, id, inv, cfg.max_facts)?;
    Ok(ParallelPair {
        scene_id: id,
        a: verbalize(inv, Lang::A, &scene.facts),
        b: verbalize(inv, Lang::B, &scene.facts),
    })
}

pub fn gen_parallel_split(seed: u64, base: u64, n: usize, cfg: &SynthConfig, inv: &Inventory) -> Result<Vec<ParallelPair>> {
    (0..n as u64).map(|i| gen_parallel(seed, base + i, cfg, inv)).collect()
}

pub fn gen_dataset(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    gen_dataset_with(cfg, seed, &Inventory::default())
}

pub fn gen_dataset_with(cfg: &SynthConfig, seed: u64, inv: &Inventory) -> Result<Dataset> {
    cfg.validate()?;
    let split = |base: u64, n: usize, lang: Lang| -> Result<Vec<SceneRecord>> {
        (0..n as u64)
            .map(|i| gen_record(seed, base + i, lang, cfg, inv))
            .collect()
    };
    Ok(Dataset {
        train_x: split(id_space::TRAIN_X, cfg.n_train, Lang::A)?,
        train_y: split(id_space::TRAIN_Y, cfg.n_train, Lang::B)?,
        valid_x: split(id_space::VALID_X, cfg.n_valid, Lang::A)?,
        valid_y: split(id_space::VALID_Y, cfg.n_valid, Lang::B)?,
        test: gen_parallel_split(seed, id_space::TEST, cfg.n_test, cfg, inv)?,
        lexicon: SynthLexicon::from_inventory(inv),
        feature_dim: inv.feature_dim(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(s: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(s)
    }

    #[test]
    fn single_fact_and_determinism() {
        let inv = Inventory::default();
        let s = sample_scene(&mut rng(1), 0, &inv, 1).unwrap();
        assert_eq!(s.facts.len(), 1);
        let a = sample_scene(&mut rng(9), 0, &inv, 3).unwrap();
        let b = sample_scene(&mut rng(9), 0, &inv, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_inventory_is_config_error() {
        let inv = Inventory::truncated([3, 0, 2, 2]);
        assert!(matches!(
            sample_scene(&mut rng(0), 0, &inv, 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn fact_count_is_uniform_chi_square() {
        let inv = Inventory::default();
        let mut r = rng(42);
        let mut hist = [0f64; 4];
        let n = 1000;
        for i in 0..n {
            let s = sample_scene(&mut r, i, &inv, 4).unwrap();
            hist[s.facts.len() - 1] += 1.0;
            let mut f = s.facts.clone();
            f.dedup();
            assert_eq!(f.len(), s.facts.len());
        }
        let e = n as f64 / 4.0;
        let chi2: f64 = hist.iter().map(|o| (o - e) * (o - e) / e).sum();
        // 3 degrees of freedom, 1% critical value
        assert!(chi2 < 11.345, "chi2 = {chi2}, hist = {hist:?}");
    }

    #[test]
    fn canonical_caption_of_single_fact_scene() {
        let inv = Inventory::default();
        let s = SceneSpec {
            id: 0,
            facts: vec![[0, 0, 0, 0]],
        };
        let c = render_caption(&s, &inv, Lang::A, 0.0, &mut rng(0));
        assert_eq!(c.tokens.join(" "), "a red dog runs in the park .");
        let c = render_caption(&s, &inv, Lang::B, 0.0, &mut rng(0));
        assert_eq!(c.tokens.join(" "), "kavo roki ko paro ni teku");
    }

    #[test]
    fn language_b_is_verb_final() {
        let inv = Inventory::default();
        let verbs: Vec<&str> = inv.slots[2].iter().map(|p| p.1).collect();
        let mut r = rng(3);
        for i in 0..500 {
            let s = sample_scene(&mut r, i, &inv, 3).unwrap();
            let c = render_caption(&s, &inv, Lang::B, 0.5, &mut r);
            assert!(verbs.contains(&c.tokens.last().unwrap().as_str()));
        }
    }

    #[test]
    fn high_diversity_renders_differ() {
        let inv = Inventory::default();
        let scene = SceneSpec {
            id: 0,
            facts: vec![[0, 1, 2, 3], [4, 5, 6, 7], [8, 2, 3, 1]],
        };
        let mut r = rng(17);
        let trials = 1000;
        let differ = (0..trials)
            .filter(|_| {
                let a = render_caption(&scene, &inv, Lang::A, 0.8, &mut r);
                let b = render_caption(&scene, &inv, Lang::A, 0.8, &mut r);
                a.facts != b.facts
            })
            .count();
        assert!(differ as f64 / trials as f64 > 0.5, "{differ}");
    }

    #[test]
    fn diversity_extremes() {
        let inv = Inventory::default();
        let scene = sample_scene(&mut rng(5), 0, &inv, 3).unwrap();
        let a = render_caption(&scene, &inv, Lang::A, 0.0, &mut rng(1));
        let b = render_caption(&scene, &inv, Lang::A, 0.0, &mut rng(2));
        assert_eq!(a, b);
        assert_eq!(a.facts.len(), scene.facts.len());
        let c = render_caption(&scene, &inv, Lang::B, 1.0, &mut rng(3));
        assert_eq!(c.facts.len(), 1);
    }

    #[test]
    fn features_exact_without_noise() {
        let inv = Inventory::default();
        let scene = SceneSpec {
            id: 0,
            facts: vec![[1, 2, 3, 4], [0, 0, 0, 0]],
        };
        let f = pivot_features(&scene, &inv, 0.0, &mut rng(0));
        assert_eq!(f.count(), 2);
        let mut expect = vec![0.0; inv.feature_dim()];
        for (k, o) in inv.offsets().iter().enumerate() {
            expect[o + [1, 2, 3, 4][k]] = 1.0;
        }
        assert_eq!(f.vector(0), expect.as_slice());
    }

    #[test]
    fn feature_noise_mean_converges() {
        let inv = Inventory::default();
        let scene = SceneSpec {
            id: 0,
            facts: vec![[1, 2, 3, 4]],
        };
        let exact = pivot_features(&scene, &inv, 0.0, &mut rng(0));
        let (n, sigma) = (10_000, 0.1);
        let mut r = rng(8);
        let mut mean = vec![0.0; inv.feature_dim()];
        for _ in 0..n {
            let f = pivot_features(&scene, &inv, sigma, &mut r);
            for (m, x) in mean.iter_mut().zip(&f.data) {
                *m += x / n as f64;
            }
        }
        let bound = 3.0 * sigma / (n as f64).sqrt();
        for (m, e) in mean.iter().zip(&exact.data) {
            assert!((m - e).abs() < bound, "{m} vs {e}");
        }
    }

    #[test]
    fn dataset_contracts() {
        let cfg = SynthConfig {
            n_train: 60,
            n_valid: 10,
            n_test: 25,
            ..SynthConfig::default()
        };
        let d = gen_dataset(&cfg, 11).unwrap();
        let xs: std::collections::HashSet<u64> = d.train_x.iter().map(|r| r.scene.id).collect();
        assert!(d.train_y.iter().all(|r| !xs.contains(&r.scene.id)));
        assert_eq!(d.test.len(), 25);
        let inv = Inventory::default();
        let a2b = d.lexicon.a_to_b();
        for p in &d.test {
            assert_eq!(lexicon_translate(&inv, &d.lexicon, &p.a).unwrap(), p.b);
            for w in &p.a {
                let function = [A_ARTICLE, A_PREP, A_DET, A_CONJ, A_END].contains(&w.as_str());
                assert!(function || a2b.contains_key(w.as_str()));
            }
        }
        assert_eq!(gen_dataset(&cfg, 11).unwrap(), d);
        assert!(gen_dataset(&SynthConfig { n_test: 0, ..cfg }, 1).is_err());
    }
}

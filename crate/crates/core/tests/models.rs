use numkit::{grad_check_params, Graph, ParamStore, Tensor};
use pivotmt::captioner::{train_captioner, CaptionExample, CaptionModel, CaptionerConfig, FrozenMatrix, JointEmbeddings};
use pivotmt::nmt::{
    total_loss, train_nmt, CorruptionParams, EmbeddingSource, MonoSentence, NmtConfig, NmtData, NmtModel, WeightedPair,
};
use pivotmt::optim::TrainSchedule;
use pivotmt::synthpivot::PivotFeature;
use pivotmt::Lang;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const VOCAB: usize = 10;

fn tiny_nmt(seed: u64, enc_hidden: usize) -> NmtConfig {
    NmtConfig {
        enc_hidden,
        dec_hidden: 4,
        attention: 4,
        seed,
        ..NmtConfig::default()
    }
}

fn sentence(rng: &mut ChaCha8Rng, max: usize) -> Vec<usize> {
    let n = rng.random_range(1..=max);
    (0..n).map(|_| rng.random_range(4..VOCAB)).collect()
}

fn weighted(rng: &mut ChaCha8Rng) -> WeightedPair {
    let src = sentence(rng, 5);
    let tgt = sentence(rng, 5);
    WeightedPair {
        alpha_src: (0..src.len()).map(|_| rng.random_range(0.1..1.0)).collect(),
        alpha_tgt: (0..tgt.len()).map(|_| rng.random_range(0.1..1.0)).collect(),
        beta: rng.random_range(0.2..1.0),
        src,
        tgt,
    }
}

#[test]
fn nmt_loss_gradients_match_finite_differences() {
    for seed in 0..20 {
        // Odd seeds use a bridge between encoder and decoder widths.
        let model = NmtModel::new(
            EmbeddingSource::Random { vocab_a: VOCAB, vocab_b: VOCAB },
            &tiny_nmt(seed, if seed % 2 == 0 { 2 } else { 3 }),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<WeightedPair> = (0..2).map(|_| weighted(&mut rng)).collect();
        let mono: Vec<MonoSentence> = [Lang::A, Lang::B]
            .iter()
            .map(|&lang| MonoSentence { lang, ids: sentence(&mut rng, 5) })
            .collect();
        let p = CorruptionParams::default();
        let f = |g: &mut Graph, s: &ParamStore| {
            let m = NmtModel { store: s.clone(), ..model.clone() };
            let mut r = ChaCha8Rng::seed_from_u64(seed + 1000);
            Ok(total_loss(&m, g, &pairs, &mono, 1.0, &p, &mut r).unwrap())
        };
        let rep = grad_check_params(f, &model.store, TOL).unwrap();
        assert!(rep.passed(), "seed {seed}: {rep:?}");
    }
}

fn features(rng: &mut ChaCha8Rng, m: usize, dim: usize) -> PivotFeature {
    PivotFeature { dim, data: (0..m * dim).map(|_| rng.random_range(-1.0..1.0)).collect() }
}

#[test]
fn captioner_loss_gradients_match_finite_differences() {
    let cfg = |seed| CaptionerConfig { hidden: 4, attention: 4, seed, ..CaptionerConfig::default() };
    for seed in 0..20 {
        let model = CaptionModel::new(6, VOCAB, VOCAB, &cfg(seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lang = if seed % 2 == 0 { Lang::A } else { Lang::B };
        let m = 1 + (seed as usize % 3);
        let ex: Vec<CaptionExample> = (0..2)
            .map(|_| CaptionExample::new(lang, &features(&mut rng, m, 6), sentence(&mut rng, 5)).unwrap())
            .collect();
        let refs: Vec<&CaptionExample> = ex.iter().collect();
        let f = |g: &mut Graph, s: &ParamStore| {
            Ok(model.batch_nll(g, s, &refs).unwrap())
        };
        let rep = grad_check_params(f, &model.store, TOL).unwrap();
        assert!(rep.passed(), "seed {seed}: {rep:?}");
    }
}

#[test]
fn only_embeddings_are_language_specific() {
    let cap = CaptionModel::new(6, VOCAB, VOCAB, &CaptionerConfig { hidden: 4, attention: 4, ..CaptionerConfig::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for lang in [Lang::A, Lang::B] {
        let ex = CaptionExample::new(lang, &features(&mut rng, 2, 6), vec![5, 6, 7]).unwrap();
        let mut s = cap.store.clone();
        s.zero_grad();
        let mut g = Graph::new();
        let l = cap.batch_nll(&mut g, &s, &[&ex]).unwrap();
        g.backward_into(l, &mut s).unwrap();
        let nonzero = |name: &str| s.grad(s.id(name).unwrap()).iter().any(|&x| x != 0.0);
        let (own, other) = match lang {
            Lang::A => ("cap.emb.a", "cap.emb.b"),
            Lang::B => ("cap.emb.b", "cap.emb.a"),
        };
        assert!(nonzero(own));
        assert!(!nonzero(other));
        // Every non-embedding parameter receives gradient from either language.
        for (name, _, _) in cap.store.iter() {
            if !name.starts_with("cap.emb") {
                assert!(nonzero(name), "{name} unused by language {lang}");
            }
        }
    }
    let nmt = NmtModel::new(EmbeddingSource::Random { vocab_a: VOCAB, vocab_b: VOCAB }, &tiny_nmt(0, 2)).unwrap();
    let mono = [MonoSentence { lang: Lang::A, ids: vec![5, 6, 7] }];
    let mut s = nmt.store.clone();
    s.zero_grad();
    let mut g = Graph::new();
    let l = total_loss(&nmt, &mut g, &[], &mono, 1.0, &CorruptionParams::NONE, &mut rng).unwrap();
    g.backward_into(l, &mut s).unwrap();
    for (name, _, _) in nmt.store.iter() {
        let used = s.grad(s.id(name).unwrap()).iter().any(|&x| x != 0.0);
        assert_eq!(used, name != "nmt.emb.b", "{name}");
    }
}

fn pivot_embeddings(seed: u64) -> JointEmbeddings {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = || {
        let mut x = Tensor::randn(&[VOCAB, 4], 1.0, &mut rng);
        x.round_f32();
        FrozenMatrix::new(x)
    };
    JointEmbeddings { w_x: t(), w_y: t() }
}

fn small_schedule(epochs: usize) -> TrainSchedule {
    TrainSchedule { epochs, batch_size: 4, lr: 1e-2, patience: epochs, ..TrainSchedule::default() }
}

#[test]
fn pivot_embeddings_stay_frozen_through_training() {
    let emb = pivot_embeddings(3);
    let cfg = NmtConfig { schedule: small_schedule(3), ..tiny_nmt(3, 2) };
    let model = NmtModel::new(EmbeddingSource::Pivot(&emb), &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pairs: Vec<WeightedPair> = (0..8).map(|_| weighted(&mut rng)).collect();
    let mono: Vec<MonoSentence> = (0..8).map(|i| MonoSentence { lang: if i % 2 == 0 { Lang::A } else { Lang::B }, ids: sentence(&mut rng, 5) }).collect();
    let data = NmtData { train_pairs: pairs.clone(), train_mono: mono.clone(), valid_pairs: pairs, valid_mono: mono };
    let before = model.store.clone();
    let t = train_nmt(model, &data, &cfg).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(t.model.store.value(t.model.emb_a)), bits(emb.w_x.tensor()));
    assert_eq!(bits(t.model.store.value(t.model.emb_b)), bits(emb.w_y.tensor()));
    let moved = t.model.store.iter().zip(before.iter()).filter(|((_, a, _), (_, b, _))| bits(a) != bits(b)).count();
    assert!(moved > 0);
}

#[test]
fn autoencoder_overfits_a_single_sentence() {
    let cfg = NmtConfig {
        schedule: small_schedule(150),
        corruption: CorruptionParams::NONE,
        dec_hidden: 16,
        enc_hidden: 8,
        attention: 16,
        ..NmtConfig::default()
    };
    let s = vec![5, 8, 6, 9];
    let mono = vec![MonoSentence { lang: Lang::A, ids: s.clone() }];
    let data = NmtData { train_mono: mono.clone(), valid_mono: mono, ..NmtData::default() };
    let model = NmtModel::new(EmbeddingSource::Random { vocab_a: VOCAB, vocab_b: VOCAB }, &cfg).unwrap();
    let t = train_nmt(model, &data, &cfg).unwrap();
    assert!(t.report.best_valid < 0.05, "{}", t.report.best_valid);
    assert_eq!(t.model.translate_beam(&s, Lang::A, Lang::A, 1, 10).unwrap(), s);
}

fn nll(model: &NmtModel, src: &[usize], tgt: &[usize], w: &[f64]) -> f64 {
    let mut g = Graph::new();
    let l = model.batch_nll(&mut g, &model.store, Lang::A, Lang::B, &[src], &[tgt], &[w]).unwrap();
    g.value(l).item()
}

#[test]
fn weighted_nll_matches_direct_formula() {
    let model = NmtModel::new(EmbeddingSource::Pivot(&pivot_embeddings(5)), &tiny_nmt(5, 2)).unwrap();
    let (src, tgt) = (vec![4, 7, 9], vec![6, 8]);
    // Per-step negative log-likelihoods: unit weight on one step at a time.
    let steps: Vec<f64> = (0..3)
        .map(|k| nll(&model, &src, &tgt, &(0..3).map(|j| if j == k { 1.0 } else { 0.0 }).collect::<Vec<_>>()))
        .collect();
    let alpha = [1.0, 2f64.powi(-10)];
    for beta in [1.0, 1.0 / 32.0, 0.3] {
        let mut g = Graph::new();
        let l = model.decode_nll(&mut g, &src, Lang::A, &tgt, Lang::B, &alpha, beta).unwrap();
        let direct = beta * (alpha[0] * steps[0] + alpha[1] * steps[1] + steps[2]);
        assert!((g.value(l).item() - direct).abs() < 1e-12, "β {beta}");
    }
}

#[test]
fn sentence_weight_scales_loss_and_gradient() {
    let model = NmtModel::new(EmbeddingSource::Random { vocab_a: VOCAB, vocab_b: VOCAB }, &tiny_nmt(8, 2)).unwrap();
    let (src, tgt) = (vec![4, 5, 9], vec![7, 6, 8]);
    let alpha = [0.5, 1.0, 0.25];
    let loss_and_grad = |beta: f64| {
        let mut s = model.store.clone();
        s.zero_grad();
        let mut g = Graph::new();
        let l = model.decode_nll(&mut g, &src, Lang::A, &tgt, Lang::B, &alpha, beta).unwrap();
        let v = g.value(l).item();
        g.backward_into(l, &mut s).unwrap();
        (v, s.ids().flat_map(|id| s.grad(id).to_vec()).collect::<Vec<f64>>())
    };
    let (l0, g0) = loss_and_grad(0.0);
    assert_eq!(l0, 0.0);
    assert!(g0.iter().all(|&x| x == 0.0));
    let (l1, g1) = loss_and_grad(0.4);
    let (l2, g2) = loss_and_grad(0.8);
    assert!((l2 - 2.0 * l1).abs() < 1e-12 * l1.abs().max(1.0));
    for (a, b) in g1.iter().zip(&g2) {
        assert!((b - 2.0 * a).abs() < 1e-12 * a.abs().max(1e-3));
    }
}

#[test]
fn captioner_learns_a_fixed_mapping() {
    let dim = 6;
    // Fact k is a one-hot feature; its caption is word 4 + k in both languages.
    let mut train = Vec::new();
    for k in 0..dim {
        let mut f = vec![0.0; dim];
        f[k] = 1.0;
        let pf = PivotFeature { dim, data: f };
        for lang in [Lang::A, Lang::B] {
            let w = if lang == Lang::A { 4 + k } else { 4 + (k + 3) % dim };
            train.push(CaptionExample::new(lang, &pf, vec![w]).unwrap());
        }
    }
    let cfg = CaptionerConfig { hidden: 16, attention: 16, schedule: small_schedule(200), ..CaptionerConfig::default() };
    let t = train_captioner(&train, &train, dim, 4 + dim, 4 + dim, &cfg).unwrap();
    assert!(t.report.best_valid < t.report.epochs[0].valid_loss);
    for k in 0..dim {
        let mut f = vec![0.0; dim];
        f[k] = 1.0;
        let pf = PivotFeature { dim, data: f };
        assert_eq!(t.model.caption_beam(&pf, Lang::A, 3, 5).unwrap(), vec![4 + k]);
        assert_eq!(t.model.caption_beam(&pf, Lang::B, 3, 5).unwrap(), vec![4 + (k + 3) % dim]);
    }
    let only_a: Vec<_> = train.iter().filter(|e| e.lang == Lang::A).cloned().collect();
    assert!(train_captioner(&only_a, &train, dim, 10, 10, &cfg).is_err());
}

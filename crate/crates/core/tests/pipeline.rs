use std::path::Path;

use numkit::{ParamStore, Tensor};
use pivotmt::pipeline::{
    ablation_variants, run_progressive, run_supervised_baseline, Checkpoint, RunDirs, RunOptions, StageStatus, TrainConfig,
    MANIFEST_FILE, STAGES,
};
use pivotmt::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny() -> TrainConfig {
    TrainConfig::parse_str(
        "n_train = 120\nn_valid = 30\nn_test = 20\ncap_hidden = 16\ncap_attention = 16\n\
         enc_hidden = 8\nnmt_attention = 16\ncap_epochs = 2\nnmt_epochs = 2\nbatch_size = 16\nbeam_width = 2\nmax_len = 20\n",
    )
    .unwrap()
}

fn store() -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut s = ParamStore::new();
    s.insert("w", Tensor::randn(&[3, 5], 1.0, &mut rng)).unwrap();
    s.insert_frozen("emb", Tensor::randn(&[7, 2], 1.0, &mut rng)).unwrap();
    s.insert("t", Tensor::scalar(0.25)).unwrap();
    s.round_f32();
    s
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    let ck = Checkpoint::from_store(&store(), "nmt", "abc");
    ck.save(&p).unwrap();
    let back = Checkpoint::load(&p).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes().unwrap(), std::fs::read(&p).unwrap());
    let mut s = store();
    let w = s.id("w").unwrap();
    s.value_mut(w).unwrap().data_mut()[0] = 9.0;
    back.restore_into(&mut s).unwrap();
    for ((_, a, _), (_, b, _)) in s.iter().zip(store().iter()) {
        let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
}

#[test]
fn checkpoint_errors_are_distinct() {
    let p = Path::new("x.ckpt");
    let bytes = Checkpoint::from_store(&store(), "nmt", "abc").to_bytes().unwrap();

    let mut bad = bytes.clone();
    bad[0] = b'Q';
    assert!(matches!(Checkpoint::from_bytes(&bad, p), Err(Error::BadMagic { .. })));

    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(Checkpoint::from_bytes(&bad, p), Err(Error::VersionMismatch { found: 9, .. })));

    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], p), Err(Error::Truncated { .. })));

    // First tensor "w": header (4+4+4+3+4+3+4) then name, dtype, flag, rank, dims.
    let len_at = 26 + 4 + 1 + 1 + 1 + 4 + 16;
    assert_eq!(u64::from_le_bytes(bytes[len_at..len_at + 8].try_into().unwrap()), 60);
    for v in [0x7fu8, 0x01] {
        let mut bad = bytes.clone();
        bad[len_at + 1] = v;
        assert!(matches!(Checkpoint::from_bytes(&bad, p), Err(Error::Truncated { .. })));
    }

    let ck = Checkpoint::from_bytes(&bytes, p).unwrap();
    assert!(matches!(ck.expect_stage("captioner"), Err(Error::StageMismatch { .. })));
}

#[test]
fn frozen_tensor_must_match_on_restore() {
    let ck = Checkpoint::from_store(&store(), "nmt", "abc");
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut other = ParamStore::new();
    other.insert("w", Tensor::randn(&[3, 5], 1.0, &mut rng)).unwrap();
    other.insert_frozen("emb", Tensor::randn(&[7, 2], 1.0, &mut rng)).unwrap();
    other.insert("t", Tensor::scalar(0.0)).unwrap();
    assert!(matches!(ck.restore_into(&mut other), Err(Error::Contract(_))));
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn progressive_run_is_resumable_and_deterministic() {
    let cfg = tiny();
    let t1 = tempfile::tempdir().unwrap();
    let t2 = tempfile::tempdir().unwrap();
    let d1 = RunDirs::single(t1.path(), "combined");
    let d2 = RunDirs::single(t2.path(), "combined");
    let opts = RunOptions::default();

    let m = run_progressive(&cfg, &d1, &opts).unwrap();
    assert_eq!(m.executed, STAGES.to_vec());
    assert!(m.records.iter().all(|r| r.status == StageStatus::Completed));

    let again = run_progressive(&cfg, &d1, &opts).unwrap();
    assert!(again.executed.is_empty(), "{:?}", again.executed);
    assert_eq!(again.skipped.len(), STAGES.len());

    run_progressive(&cfg, &d2, &opts).unwrap();
    for f in ["nmt/model.ckpt", "captioner/model.ckpt", "eval/hyp.a2b.txt", "eval/hyp.b2a.txt", "weigh/train.jsonl"] {
        assert_eq!(read(&t1.path().join(f)), read(&t2.path().join(f)), "{f}");
    }

    // Pivot embeddings reach the translation checkpoint untouched.
    let cap = Checkpoint::load(&t1.path().join("captioner/model.ckpt")).unwrap();
    let nmt = Checkpoint::load(&t1.path().join("nmt/model.ckpt")).unwrap();
    for (c, n) in [("cap.emb.a", "nmt.emb.a"), ("cap.emb.b", "nmt.emb.b")] {
        let (c, n) = (cap.get(c).unwrap(), nmt.get(n).unwrap());
        assert!(n.frozen);
        assert_eq!(c.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), n.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    // Forcing a stage re-runs it; unchanged downstream outputs stay current.
    let forced = run_progressive(&cfg, &d1, &RunOptions { force_stage: Some("eval".into()) }).unwrap();
    assert_eq!(forced.executed, vec!["eval".to_string()]);

    // A changed downstream setting re-runs only the stages that read it.
    let changed = TrainConfig { reweight: false, ..cfg.clone() };
    let m = run_progressive(&changed, &d1, &opts).unwrap();
    assert_eq!(m.executed, vec!["train-nmt".to_string(), "eval".to_string()]);

    let lines = std::fs::read_to_string(t1.path().join(MANIFEST_FILE)).unwrap().lines().count();
    assert_eq!(lines, 6 + 1 + 2);
}

#[test]
fn failure_is_recorded_and_stops_downstream() {
    let t = tempfile::tempdir().unwrap();
    let d = RunDirs::single(t.path(), "x");
    // A vocabulary threshold that removes every word leaves nothing to caption.
    let cfg = TrainConfig { min_count: 1_000_000, ..tiny() };
    assert!(run_progressive(&cfg, &d, &RunOptions::default()).is_err());
    let text = std::fs::read_to_string(t.path().join(MANIFEST_FILE)).unwrap();
    assert!(text.lines().last().unwrap().contains("\"failed\""));
    assert!(!t.path().join("pseudo").exists());
}

#[test]
fn unknown_forced_stage_is_config_error() {
    let t = tempfile::tempdir().unwrap();
    let err = run_progressive(&tiny(), &RunDirs::single(t.path(), "x"), &RunOptions { force_stage: Some("nope".into()) })
        .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn supervised_baseline_runs_and_rejects_bad_fraction() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let dirs = RunDirs {
        shared: t.path().into(),
        own: t.path().join("sup"),
        label: "supervised_100".into(),
    };
    let r = run_supervised_baseline(&cfg, &dirs, 1.0, &RunOptions::default()).unwrap();
    assert!((0.0..=1.0).contains(&r.a2b.bleu4));
    assert!(!t.path().join("captioner").exists());
    assert!(matches!(run_supervised_baseline(&cfg, &dirs, 0.0, &RunOptions::default()), Err(Error::Config(_))));
}

#[test]
fn ablation_switches_touch_only_translation_keys() {
    let base = TrainConfig::default();
    for (_, v) in ablation_variants(&base) {
        assert_eq!(v.stage_hash("weigh"), base.stage_hash("weigh"));
    }
}

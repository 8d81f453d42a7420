mod common;

use geopoi_core::ingest::{DatasetSplit, Part};
use geopoi_core::recommender::{
    build_prompt, load_model, rank, save_model, train, Ablation, TokenVocab, TrainedModel,
};
use geopoi_core::synthetic::{transition_cycle, CycleSpec};
use proptest::prelude::*;

use common::{checkin, random_table, tiny_config, tiny_split};

#[test]
fn one_event_prompt_has_one_slot_of_each_kind() {
    let split = tiny_split();
    let tokens = TokenVocab::new(&split.vocab);
    let ev = checkin("a", 0, 0);
    let p = build_prompt(std::slice::from_ref(&ev), None, &tokens, &split.vocab, 32).unwrap();
    assert_eq!((p.spatial_slots.len(), p.poi_slots.len()), (1, 1));
    assert!(p.poi_slots[0] < p.spatial_slots[0]);
    assert!(p.spatial_slots[0] < p.len());
    assert!(build_prompt(&[], None, &tokens, &split.vocab, 32).is_err());
}

#[test]
fn long_prefix_keeps_most_recent_events() {
    let split = tiny_split();
    let tokens = TokenVocab::new(&split.vocab);
    let prefix: Vec<_> = (0..40).map(|h| checkin("a", h % 5, h as i64)).collect();
    let p = build_prompt(&prefix, None, &tokens, &split.vocab, 32).unwrap();
    assert_eq!(p.num_events(), 32);
    let expected: Vec<(f64, f64)> = prefix[8..].iter().map(|c| c.coord()).collect();
    assert_eq!(p.event_coords, expected);
}

#[test]
fn token_count_is_affine_in_events() {
    let split = tiny_split();
    let tokens = TokenVocab::new(&split.vocab);
    let len = |k: usize| {
        let prefix: Vec<_> = (0..k).map(|h| checkin("a", h % 5, h as i64)).collect();
        build_prompt(&prefix, None, &tokens, &split.vocab, 32).unwrap().len() as i64
    };
    let (l1, l2, l3) = (len(1), len(2), len(3));
    let a = l2 - l1;
    assert_eq!(l3 - l2, a);
    assert!(a > 0);
    let b = l1 - a;
    for k in [5, 17, 32] {
        assert_eq!(len(k), a * k as i64 + b);
    }
}

#[test]
fn unknown_user_and_category_use_reserved_tokens() {
    let split = tiny_split();
    let tokens = TokenVocab::new(&split.vocab);
    let mut ev = checkin("stranger", 1, 0);
    ev.category = "Unseen".into();
    let p = build_prompt(&[ev.clone()], None, &tokens, &split.vocab, 32).unwrap();
    assert!(p.tokens.contains(&tokens.user_token("stranger")));
    assert!(p.tokens.contains(&tokens.category_token("Unseen")));
    assert!(tokens.user_token("stranger") < tokens.first_user_token());
    ev.poi_id = "nowhere".into();
    assert!(build_prompt(&[ev], None, &tokens, &split.vocab, 32).is_err());
}

fn model(ablation: Ablation) -> (DatasetSplit, TrainedModel) {
    let split = tiny_split();
    let cfg = tiny_config();
    let table = random_table(&split.vocab, cfg.embed.dim, 2);
    let m = TrainedModel::init(&cfg, ablation, &split.vocab, Some(&table)).unwrap();
    (split, m)
}

#[test]
fn logits_cover_the_vocabulary() {
    let (split, m) = model(Ablation::FULL);
    let prompts = m.prompts(&split, Part::Train).unwrap();
    let logits = m.logits(&prompts).unwrap();
    assert_eq!(logits.len(), prompts.len());
    assert!(logits.iter().all(|l| l.len() == split.vocab.num_pois()));
    let ranking = m.predict(&prompts[0]).unwrap();
    assert_eq!(ranking[0], rank(&logits[0])[0]);
}

#[test]
fn attention_is_causal() {
    let (split, m) = model(Ablation::FULL);
    let prompts = m.prompts(&split, Part::Train).unwrap();
    let seq = prompts.iter().max_by_key(|p| p.len()).unwrap();
    let t = seq.len();
    let d = m.config.model.dim;
    let p = m.surrogate.num_pois;
    let base = m.surrogate.position_logits(&m.store, seq, None).unwrap();
    let delta: Vec<f64> = (0..d).map(|i| 0.5 + 0.1 * i as f64).collect();

    let last = m.surrogate.position_logits(&m.store, seq, Some((t - 1, &delta))).unwrap();
    assert_eq!(base.data()[..(t - 1) * p], last.data()[..(t - 1) * p]);
    assert_ne!(base.data()[(t - 1) * p..], last.data()[(t - 1) * p..]);

    let j = t / 2;
    let mid = m.surrogate.position_logits(&m.store, seq, Some((j + 1, &delta))).unwrap();
    assert_eq!(base.data()[..(j + 1) * p], mid.data()[..(j + 1) * p]);
    assert_ne!(base.data()[(j + 1) * p..], mid.data()[(j + 1) * p..]);
}

#[test]
fn removing_gcim_changes_logits() {
    let (split, full) = model(Ablation::FULL);
    let (_, bare) = model(Ablation { no_gcim: true, no_fourier: false, no_pam: false });
    let prompts = full.prompts(&split, Part::Train).unwrap();
    assert_ne!(full.logits(&prompts).unwrap(), bare.logits(&prompts).unwrap());
    assert!(!bare.store.names().any(|n| n.starts_with("gcim.")));
}

fn toy_split() -> (DatasetSplit, geopoi_core::Config) {
    let data = transition_cycle(&CycleSpec {
        pois: 6,
        users: 5,
        events: 21,
        ..CycleSpec::default()
    });
    let mut cfg = tiny_config();
    cfg.set("max_epochs", "3").unwrap();
    cfg.set("patience", "10").unwrap();
    cfg.set("batch_size", "8").unwrap();
    cfg.set("lr", "0.01").unwrap();
    let split = DatasetSplit::from_checkins(&data, &cfg.ingest);
    (split, cfg)
}

#[test]
fn loss_decreases_on_toy_set() {
    let (split, cfg) = toy_split();
    let total = split.train.len() + split.val.len() + split.test.len();
    assert_eq!(total, 100);
    let table = random_table(&split.vocab, cfg.embed.dim, 3);
    let out = train(&split, &cfg, Ablation::FULL, Some(&table)).unwrap();
    let losses: Vec<f64> = out.history.iter().map(|h| h.train_loss).collect();
    assert_eq!(losses.len(), 3);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn same_seed_same_result() {
    let (split, cfg) = toy_split();
    let table = random_table(&split.vocab, cfg.embed.dim, 3);
    let a = train(&split, &cfg, Ablation::FULL, Some(&table)).unwrap();
    let b = train(&split, &cfg, Ablation::FULL, Some(&table)).unwrap();
    let val: Vec<_> = a.history.iter().map(|h| h.val_acc).collect();
    assert_eq!(val, b.history.iter().map(|h| h.val_acc).collect::<Vec<_>>());
    assert_eq!(a.model.store, b.model.store);
}

#[test]
fn empty_training_split_is_an_error() {
    let (mut split, cfg) = toy_split();
    split.train.clear();
    let table = random_table(&split.vocab, cfg.embed.dim, 3);
    assert!(train(&split, &cfg, Ablation::FULL, Some(&table)).is_err());
}

#[test]
fn ranking_ties_and_shift() {
    let mut logits = vec![0.0; 10];
    logits[7] = 2.0;
    logits[3] = 2.0;
    let r = rank(&logits);
    assert_eq!(&r[..2], &[3, 7]);
    let shifted: Vec<f64> = logits.iter().map(|x| x + 123.5).collect();
    assert_eq!(rank(&shifted), r);
}

proptest! {
    #[test]
    fn ranking_is_a_permutation(logits in proptest::collection::vec(-5.0f64..5.0, 1..40), shift in -100.0f64..100.0) {
        let r = rank(&logits);
        let mut sorted = r.clone();
        sorted.sort();
        prop_assert_eq!(sorted, (0..logits.len()).collect::<Vec<_>>());
        prop_assert!(r.windows(2).all(|w| logits[w[0]] >= logits[w[1]]));
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(r[0], logits.iter().position(|&x| x == top).unwrap());
        let shifted: Vec<f64> = logits.iter().map(|x| x + shift.round()).collect();
        prop_assert_eq!(rank(&shifted), r);
    }
}

#[test]
fn checkpoint_round_trip() {
    for ablation in [Ablation::FULL, Ablation { no_gcim: false, no_fourier: false, no_pam: true }] {
        let (split, m) = model(ablation);
        let dir = tempfile::tempdir().unwrap();
        save_model(&m, dir.path()).unwrap();
        let back = load_model(dir.path()).unwrap();
        assert_eq!(back.ablation, m.ablation);
        assert_eq!(back.config, m.config);
        assert_eq!(back.vocab, m.vocab);
        assert_eq!(back.store, m.store);
        let prompts = m.prompts(&split, Part::Test).unwrap();
        assert_eq!(back.logits(&prompts).unwrap(), m.logits(&prompts).unwrap());
    }
}

#[test]
fn tampered_vocab_is_rejected() {
    let (_, m) = model(Ablation::FULL);
    let dir = tempfile::tempdir().unwrap();
    save_model(&m, dir.path()).unwrap();
    let path = dir.path().join("vocab.json");
    let text = std::fs::read_to_string(&path).unwrap().replace("\"p1\"", "\"q1\"");
    std::fs::write(&path, text).unwrap();
    assert!(load_model(dir.path()).is_err());
}

use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use drbt::corpus::{DomainSpec, Lexicon, PairCorpus, Provenance, RepairSide, TokenSeq, TripleCorpus};
use drbt::model::{init_dr, init_nmt, DecodeParams, Direction, DrModel, NmtModel, TransformerConfig};
use drbt::pipeline::{
    back_translate, copy_corpus, direction_columns, fine_tune, joint_train, mix_semi_supervised, repair_corpus,
    corpus_loss, round_trip, stage_seed, steps_per_epoch, train, JointData, JointTrainConfig, ModelRegistry, Persist, TrainSchedule,
    DIRECTIONS,
};

fn lexicon() -> Lexicon {
    Lexicon::new(&DomainSpec::default()).unwrap()
}

fn tiny(vocab: usize) -> TransformerConfig {
    TransformerConfig {
        num_layers: 1,
        num_heads: 2,
        d_model: 8,
        d_hidden: 8,
        max_len: 10,
        ..TransformerConfig::default()
    }
    .with_vocab(vocab, vocab)
}

/// Random sentences over ids 4..12, valid in any vocabulary used here.
fn sentences(n: usize, seed: u64) -> Vec<TokenSeq> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=5);
            TokenSeq::new((0..len).map(|_| rng.gen_range(4..12)).collect()).unwrap()
        })
        .collect()
}

/// Models briefly trained to copy, so that most decodes terminate.
fn models(vocab: usize) -> (NmtModel, NmtModel) {
    let c = tiny(vocab);
    let text = sentences(200, 99);
    let sched = TrainSchedule {
        lr_max: 1e-2,
        warmup_steps: 20,
        max_tokens: 128,
        clip_norm: 1.0,
    };
    let fit = |m: NmtModel| train(&m, &[&text[..], &text[..]], 150, &sched, 1).unwrap().0;
    (
        fit(init_nmt(&c, Direction::SrcToTgt, 1).unwrap()),
        fit(init_nmt(&c, Direction::TgtToSrc, 2).unwrap()),
    )
}

fn schedule() -> TrainSchedule {
    TrainSchedule {
        warmup_steps: 2,
        max_tokens: 64,
        ..TrainSchedule::fine_tune()
    }
}

fn joint_cfg(iterations: usize, repair: bool) -> JointTrainConfig {
    JointTrainConfig {
        iterations,
        repair,
        nmt_epochs: 1.0,
        dr_epochs: 1.0,
        dr_init_epochs: 1.0,
        schedule: schedule(),
        dr_init_schedule: schedule(),
        decode: DecodeParams::greedy(8),
        ..JointTrainConfig::default()
    }
}

#[test]
fn back_translation_conserves_rows_and_order() {
    let v = 30;
    let (fwd, bwd) = models(v);
    let mono = sentences(40, 3);
    for model in [&fwd, &bwd] {
        let b = back_translate(model, &mono, &DecodeParams::greedy(6), 1).unwrap();
        assert_eq!(b.corpus.len() + b.failed.len(), mono.len());
        assert!(b.corpus.provenance().iter().all(|&p| p == Provenance::BackTranslated));
        let kept: Vec<&TokenSeq> = (0..mono.len()).filter(|i| !b.failed.contains(i)).map(|i| &mono[i]).collect();
        // The monolingual text stays on its own language's side.
        let side = match model.direction {
            Direction::SrcToTgt => b.corpus.src(),
            Direction::TgtToSrc => b.corpus.tgt(),
        };
        assert_eq!(side.iter().collect::<Vec<_>>(), kept);
    }
}

#[test]
fn round_trip_needs_opposite_directions() {
    let v = 30;
    let (fwd, bwd) = models(v);
    let mono = sentences(20, 4);
    let p = DecodeParams::greedy(6);
    assert!(round_trip(&fwd, &fwd, &mono, &p, 1).is_err());
    let b = round_trip(&fwd, &bwd, &mono, &p, 1).unwrap();
    assert_eq!(b.corpus.side, RepairSide::Source);
    assert_eq!(b.corpus.len() + b.failed.len(), mono.len());
    let kept: Vec<TokenSeq> = (0..mono.len()).filter(|i| !b.failed.contains(i)).map(|i| mono[i].clone()).collect();
    assert_eq!(b.corpus.reference(), &kept[..]);
    assert_eq!(round_trip(&bwd, &fwd, &mono, &p, 1).unwrap().corpus.side, RepairSide::Target);
}

fn synthetic() -> PairCorpus {
    let s = sentences(25, 5);
    let t = sentences(25, 6);
    PairCorpus::with_provenance(s, t, Provenance::BackTranslated).unwrap()
}

#[test]
fn repair_keeps_conditioning_side() {
    let v = 30;
    let syn = synthetic();
    let p = DecodeParams::greedy(6);
    for side in [RepairSide::Source, RepairSide::Target] {
        let dr: DrModel = init_dr(&tiny(v), side, 7).unwrap();
        let r = repair_corpus(&dr, &syn, &p, 2).unwrap();
        assert_eq!(r.corpus.len(), syn.len());
        assert!(r.corpus.provenance().iter().all(|&p| p == Provenance::Repaired));
        let (kept, fixed, drafts) = match side {
            RepairSide::Source => (r.corpus.tgt(), r.corpus.src(), syn.src()),
            RepairSide::Target => (r.corpus.src(), r.corpus.tgt(), syn.tgt()),
        };
        assert_eq!(kept, match side {
            RepairSide::Source => syn.tgt(),
            RepairSide::Target => syn.src(),
        });
        for &i in &r.failed {
            assert_eq!(fixed[i], drafts[i]);
        }
    }
}

#[test]
fn repair_rejects_non_synthetic_pairs() {
    let v = 30;
    let s = sentences(5, 8);
    let auth = PairCorpus::with_provenance(s.clone(), s, Provenance::Authentic).unwrap();
    let dr = init_dr(&tiny(v), RepairSide::Source, 1).unwrap();
    assert!(repair_corpus(&dr, &auth, &DecodeParams::greedy(6), 1).is_err());
}

#[test]
fn copy_and_mix() {
    let mono = sentences(10, 9);
    let c = copy_corpus(&mono);
    assert_eq!(c.src(), &mono[..]);
    assert_eq!(c.tgt(), &mono[..]);
    assert!(c.provenance().iter().all(|&p| p == Provenance::Copied));
    let s = sentences(4, 10);
    let auth = PairCorpus::with_provenance(s.clone(), s, Provenance::Authentic).unwrap();
    let m = mix_semi_supervised(&auth, &c);
    assert_eq!(m.len(), 14);
    assert_eq!(&m.provenance()[..4], &[Provenance::Authentic; 4]);
    assert_eq!(&m.provenance()[4..], &[Provenance::Copied; 10]);
}

#[test]
fn fine_tune_budget_is_epochs_times_batches() {
    let v = 30;
    let (fwd, _) = models(v);
    let pairs = synthetic();
    let cols = direction_columns(&pairs, Direction::SrcToTgt);
    let per = steps_per_epoch(&cols, 64).unwrap();
    let (_, steps) = fine_tune(&fwd, &cols, 1.5, &schedule(), 1).unwrap();
    assert_eq!(steps, ((per as f64) * 1.5).ceil() as usize);
}

#[test]
fn zero_iterations_leave_models_alone() {
    let v = 30;
    let (fwd, bwd) = models(v);
    let mono = sentences(10, 11);
    let data = JointData {
        mono_src: &mono,
        mono_tgt: &mono,
        authentic: None,
        out_domain: None,
    };
    let reg = ModelRegistry::new(fwd.clone(), bwd.clone()).unwrap();
    let out = joint_train(&joint_cfg(0, true), &tiny(v), reg, data, 1, None).unwrap();
    assert_eq!(out.registry.nmt_count(), 1);
    assert_eq!(out.registry.dr_count(), 0);
    assert_eq!(out.registry.latest_nmt(Direction::SrcToTgt), &fwd);
    assert!(out.iterations.is_empty());
}

/// Iterative back-translation written out directly.
fn reference_iter_bt(
    cfg: &JointTrainConfig,
    fwd: &NmtModel,
    bwd: &NmtModel,
    mono_src: &[TokenSeq],
    mono_tgt: &[TokenSeq],
    seed: u64,
) -> Vec<[NmtModel; 2]> {
    let mut cur = [fwd.clone(), bwd.clone()];
    let mut out = vec![cur.clone()];
    for k in 0..cfg.iterations {
        let to_tgt = back_translate(&cur[1], mono_tgt, &cfg.decode, 1).unwrap().corpus;
        let to_src = back_translate(&cur[0], mono_src, &cfg.decode, 1).unwrap().corpus;
        let a = fine_tune(&cur[0], &[to_tgt.src(), to_tgt.tgt()], cfg.nmt_epochs, &cfg.schedule, stage_seed(seed, k, "src2tgt"))
            .unwrap()
            .0;
        let b = fine_tune(&cur[1], &[to_src.tgt(), to_src.src()], cfg.nmt_epochs, &cfg.schedule, stage_seed(seed, k, "tgt2src"))
            .unwrap()
            .0;
        cur = [a, b];
        out.push(cur.clone());
    }
    out
}

fn bytes(m: &NmtModel) -> Vec<u8> {
    m.params.iter().flat_map(|(_, t)| t.values().iter().flat_map(|x| x.to_le_bytes())).collect()
}

#[test]
fn iter_bt_matches_reference_loop() {
    let v = 30;
    let (fwd, bwd) = models(v);
    let ms = sentences(30, 12);
    let mt = sentences(30, 13);
    let cfg = joint_cfg(2, false);
    let data = JointData {
        mono_src: &ms,
        mono_tgt: &mt,
        authentic: None,
        out_domain: None,
    };
    let reg = ModelRegistry::new(fwd.clone(), bwd.clone()).unwrap();
    let out = joint_train(&cfg, &tiny(v), reg, data, 21, None).unwrap();
    let want = reference_iter_bt(&cfg, &fwd, &bwd, &ms, &mt, 21);
    assert_eq!(out.registry.nmt_count(), want.len());
    assert_eq!(out.registry.dr_count(), 0);
    for (k, pair) in want.iter().enumerate() {
        for (i, dir) in DIRECTIONS.into_iter().enumerate() {
            assert_eq!(bytes(out.registry.nmt(dir, k).unwrap()), bytes(&pair[i]), "iteration {k} {}", dir.name());
        }
    }
}

#[test]
fn joint_training_records_lineage_provenance_and_files() {
    let lex = lexicon();
    let v = lex.vocab().len();
    let (fwd, bwd) = models(v);
    let ms = sentences(20, 14);
    let mt = sentences(20, 15);
    let s = sentences(6, 16);
    let auth = PairCorpus::with_provenance(s.clone(), s, Provenance::Authentic).unwrap();
    let data = JointData {
        mono_src: &ms,
        mono_tgt: &mt,
        authentic: Some(&auth),
        out_domain: None,
    };
    let dir = tempfile::tempdir().unwrap();
    let persist = Persist {
        dir: dir.path(),
        vocab: lex.vocab(),
    };
    let reg = ModelRegistry::new(fwd, bwd).unwrap();
    let out = joint_train(&joint_cfg(2, true), &tiny(v), reg, data, 3, Some(persist)).unwrap();
    assert_eq!(out.registry.nmt_count(), 3);
    assert_eq!(out.registry.dr_count(), 3);
    out.registry.check_lineage().unwrap();
    let lineage = out.registry.lineage();
    assert!(lineage.contains(&("nmt.src2tgt@2".to_string(), Some("nmt.src2tgt@1".to_string()))));
    assert!(lineage.contains(&("nmt.tgt2src@0".to_string(), None)));
    let init = out.initial_triples.as_ref().unwrap();
    assert_eq!(init[0].side, RepairSide::Source);
    for rec in &out.iterations {
        let rep = rec.repaired.as_ref().unwrap();
        for i in 0..2 {
            assert_eq!(rep[i].corpus.len(), rec.bt[i].corpus.len());
            let p = rec.nmt_train[i].provenance();
            assert_eq!(&p[..auth.len()], &[Provenance::Authentic; 6]);
            assert!(p[auth.len()..].iter().all(|&x| x == Provenance::Repaired));
            assert_eq!(rec.nmt_train[i].len(), auth.len() + rep[i].corpus.len());
        }
        let t = rec.triples.as_ref().unwrap();
        assert!(t.iter().all(|t: &TripleCorpus| t.len() >= auth.len()));
    }
    for k in 0..2 {
        let it = dir.path().join(format!("iter{k}"));
        for name in ["bt.src2tgt.src", "bt.tgt2src.tgt", "repaired.src2tgt.src", "repaired.tgt2src.tgt", "triples.src.draft", "triples.tgt.ref"] {
            assert!(it.join(name).is_file(), "missing iter{k}/{name}");
        }
    }
    let lines = fs::read_to_string(dir.path().join("iter0/bt.src2tgt.tgt")).unwrap();
    assert_eq!(lines.lines().count(), out.iterations[0].bt[0].corpus.len());
}

#[test]
fn joint_training_is_thread_independent() {
    let v = 30;
    let (fwd, bwd) = models(v);
    let ms = sentences(16, 17);
    let mt = sentences(16, 18);
    let data = JointData {
        mono_src: &ms,
        mono_tgt: &mt,
        authentic: None,
        out_domain: None,
    };
    let run = |threads| {
        let cfg = JointTrainConfig {
            threads,
            ..joint_cfg(1, true)
        };
        joint_train(&cfg, &tiny(v), ModelRegistry::new(fwd.clone(), bwd.clone()).unwrap(), data, 5, None).unwrap()
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn identity_repair_reaches_copying_regime() {
    let v = 16;
    let cfg = TransformerConfig {
        eps_ls: 0.0,
        dropout: 0.0,
        d_model: 16,
        d_hidden: 32,
        ..tiny(v)
    };
    let drafts = sentences(300, 31);
    let conds = sentences(300, 32);
    let dr = init_dr(&cfg, RepairSide::Source, 3).unwrap();
    let cols = [&drafts[..], &conds[..], &drafts[..]];
    let sched = TrainSchedule {
        lr_max: 1e-2,
        warmup_steps: 30,
        max_tokens: 256,
        clip_norm: 1.0,
    };
    let (trained, _) = train(&dr, &cols, 400, &sched, 4).unwrap();
    let loss = corpus_loss(&trained, &cols, 256).unwrap();
    assert!(loss < 0.2 * (v as f64).ln(), "loss {loss}");
}

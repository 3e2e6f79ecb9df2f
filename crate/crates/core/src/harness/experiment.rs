use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use super::checkpoint::{load_nmt, save_checkpoint};
use super::config::{ExperimentConfig, Method};
use super::report::{analysis_tsv, Cell, Curve, LineageEntry, PremiseCheck, RepairAnalysis, ReportHeader, RunReport, DIRECTION_NAMES};
use crate::corpus::{
    generate_splits, write_pairs, write_seqs, DomainSplits, DomainTag, Lexicon, PairCorpus, SentencePool, TokenSeq,
};
use crate::error::{Error, Result};
use crate::eval::{bucketed_word_fscore, corpus_bleu_opt, freq_table, perplexity, train_lm};
use crate::model::{decode_batch, init_nmt, DecodeParams, Direction, NmtModel};
use crate::pipeline::{
    copy_corpus, direction_columns, fine_tune, joint_train, stage_seed, train, JointData, JointOutcome,
    JointTrainConfig, ModelRegistry, Persist, DIRECTIONS,
};

/// Generated corpora of one seed.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub lexicon: Lexicon,
    pub out: DomainSplits,
    pub inside: DomainSplits,
}

pub fn generate_data(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentData> {
    let lexicon = Lexicon::new(&cfg.domain)?;
    let mut pool = SentencePool::new();
    let out = generate_splits(&lexicon, DomainTag::Out, cfg.out_sizes, true, seed, &mut pool)?;
    let inside = generate_splits(&lexicon, DomainTag::In, cfg.in_sizes, false, seed, &mut pool)?;
    Ok(ExperimentData { lexicon, out, inside })
}

/// Writes every split as text under `dir`.
pub fn write_data(data: &ExperimentData, dir: &Path) -> Result<()> {
    let v = data.lexicon.vocab();
    for (name, s) in [("out", &data.out), ("in", &data.inside)] {
        write_pairs(dir, &format!("{name}.train"), v, &s.train)?;
        write_pairs(dir, &format!("{name}.dev"), v, &s.dev)?;
        write_pairs(dir, &format!("{name}.test"), v, &s.test)?;
        write_seqs(&dir.join(format!("{name}.mono.src")), v, s.mono_src.sents())?;
        write_seqs(&dir.join(format!("{name}.mono.tgt")), v, s.mono_tgt.sents())?;
    }
    Ok(())
}

fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.out_dir.join(format!("seed{seed}"))
}

fn pretrain_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    seed_dir(cfg, seed).join("pretrain")
}

fn ckpt_name(dir: Direction) -> String {
    format!("nmt.{}.ckpt", dir.name())
}

/// Trains both base translation models on out-of-domain pairs.
pub fn pretrain(cfg: &ExperimentConfig, data: &ExperimentData, seed: u64) -> Result<[NmtModel; 2]> {
    let v = data.lexicon.vocab().len();
    let mcfg = cfg.model.clone().with_vocab(v, v);
    let mut out = Vec::with_capacity(2);
    for dir in DIRECTIONS {
        let init = init_nmt(&mcfg, dir, stage_seed(seed, 0, &format!("init.{}", dir.name())))?;
        let cols = direction_columns(&data.out.train, dir);
        let (m, log) = train(&init, &cols, cfg.pretrain_steps, &cfg.pretrain, stage_seed(seed, 0, &format!("pretrain.{}", dir.name())))?;
        info!("seed {seed}: pretrained {} for {} steps, final loss {:.3}", dir.name(), cfg.pretrain_steps, log.tail_mean(50));
        out.push(m);
    }
    let b = out.pop().expect("two");
    let a = out.pop().expect("two");
    Ok([a, b])
}

/// The config lines that determine the pretrained models.
fn pretrain_stamp(cfg: &ExperimentConfig) -> String {
    cfg.to_kv()
        .lines()
        .filter(|l| ["domain.", "in.", "out.", "model.", "pretrain."].iter().any(|p| l.starts_with(p)))
        .map(|l| format!("{l}\n"))
        .collect()
}

/// Pretrains and saves both base models, or loads them when checkpoints
/// written under the same config already exist.
pub fn pretrain_cached(cfg: &ExperimentConfig, data: &ExperimentData, seed: u64) -> Result<[NmtModel; 2]> {
    let dir = pretrain_dir(cfg, seed);
    let stamp = dir.join("config.kv");
    let echo = pretrain_stamp(cfg);
    if fs::read_to_string(&stamp).ok().as_deref() == Some(echo.as_str()) {
        let a = load_nmt(&dir.join(ckpt_name(Direction::SrcToTgt)));
        let b = load_nmt(&dir.join(ckpt_name(Direction::TgtToSrc)));
        if let (Ok(a), Ok(b)) = (a, b) {
            info!("seed {seed}: reusing pretrained models in {}", dir.display());
            return Ok([a, b]);
        }
    }
    let models = pretrain(cfg, data, seed)?;
    for m in &models {
        save_checkpoint(m, &dir.join(ckpt_name(m.direction)))?;
    }
    fs::write(&stamp, echo).map_err(|e| Error::io(&stamp, e))?;
    Ok(models)
}

fn test_pairs(data: &ExperimentData, dir: Direction, dev: bool) -> (&[TokenSeq], &[TokenSeq]) {
    let split = if dev { &data.inside.dev } else { &data.inside.test };
    let [a, b] = direction_columns(split, dir);
    (a, b)
}

/// Corpus BLEU of `model` on an in-domain split; failed decodes score as
/// empty hypotheses.
pub fn score(model: &NmtModel, src: &[TokenSeq], refs: &[TokenSeq], params: &DecodeParams, threads: usize) -> Result<f64> {
    let out = decode_batch(model, src, params, threads)?;
    let hyps: Vec<Option<&[u32]>> = out
        .iter()
        .map(|d| if d.truncated || d.tokens.is_empty() { None } else { Some(&d.tokens[..]) })
        .collect();
    Ok(corpus_bleu_opt(&hyps, refs)?.score)
}

/// Scores of a model pair on the in-domain test (or dev) split.
fn eval_pair(cfg: &ExperimentConfig, data: &ExperimentData, models: [&NmtModel; 2], dev: bool) -> Result<[f64; 2]> {
    let mut s = [0.0; 2];
    for (i, dir) in DIRECTIONS.into_iter().enumerate() {
        let (src, refs) = test_pairs(data, dir, dev);
        s[i] = score(models[i], src, refs, &cfg.eval_decode, cfg.joint.threads)?;
    }
    Ok(s)
}

/// Share of in-domain conflict-token images on the test targets that the
/// base forward model fails to produce, matched as a bag of tokens.
fn conflict_premise(cfg: &ExperimentConfig, data: &ExperimentData, fwd: &NmtModel, seed: u64) -> Result<PremiseCheck> {
    let spec = data.lexicon.spec();
    let ids: HashSet<u32> = (0..spec.conflict_size)
        .filter_map(|c| data.lexicon.vocab().id(&spec.shared_image(DomainTag::In, c)))
        .collect();
    let (src, refs) = test_pairs(data, Direction::SrcToTgt, false);
    let out = decode_batch(fwd, src, &cfg.eval_decode, cfg.joint.threads)?;
    let (mut total, mut missed) = (0usize, 0usize);
    for (d, r) in out.iter().zip(refs) {
        let mut hyp = d.tokens.clone();
        for t in r.ids().iter().filter(|t| ids.contains(t)) {
            total += 1;
            match hyp.iter().position(|h| h == t) {
                Some(p) => {
                    hyp.swap_remove(p);
                }
                None => missed += 1,
            }
        }
    }
    Ok(PremiseCheck {
        seed,
        conflict_tokens: total,
        conflict_miss_rate: if total == 0 { 0.0 } else { missed as f64 / total as f64 },
    })
}

/// A joint-training run shared by methods that read different iterations.
struct LoopRun {
    name: String,
    outcome: JointOutcome,
}

fn run_loop(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    base: &[NmtModel; 2],
    seed: u64,
    name: &str,
    repair: bool,
    iterations: usize,
    authentic: Option<&PairCorpus>,
) -> Result<LoopRun> {
    let jc = JointTrainConfig {
        iterations,
        repair,
        ..cfg.joint.clone()
    };
    let v = data.lexicon.vocab().len();
    let dr_cfg = cfg.dr_model.clone().with_vocab(v, v);
    let final_dir = seed_dir(cfg, seed).join("runs").join(name);
    let tmp = final_dir.with_extension("tmp");
    let _ = fs::remove_dir_all(&tmp);
    let jd = JointData {
        mono_src: data.inside.mono_src.sents(),
        mono_tgt: data.inside.mono_tgt.sents(),
        authentic,
        out_domain: Some(&data.out.train),
    };
    let reg = ModelRegistry::new(base[0].clone(), base[1].clone())?;
    let persist = Persist {
        dir: &tmp,
        vocab: data.lexicon.vocab(),
    };
    let outcome = joint_train(&jc, &dr_cfg, reg, jd, stage_seed(seed, 0, name), Some(persist))?;
    for k in 0..outcome.registry.nmt_count() {
        for dir in DIRECTIONS {
            let m = outcome.registry.nmt(dir, k).expect("snapshot");
            save_checkpoint(m, &tmp.join("ckpt").join(format!("nmt.{}@{k}.ckpt", dir.name())))?;
        }
    }
    for k in 0..outcome.registry.dr_count() {
        for side in [crate::corpus::RepairSide::Source, crate::corpus::RepairSide::Target] {
            let m = outcome.registry.dr(side, k).expect("snapshot");
            save_checkpoint(m, &tmp.join("ckpt").join(format!("dr.{}@{k}.ckpt", side.name())))?;
        }
    }
    let _ = fs::remove_dir_all(&final_dir);
    fs::rename(&tmp, &final_dir).map_err(|e| Error::io(&final_dir, e))?;
    Ok(LoopRun {
        name: name.to_string(),
        outcome,
    })
}

fn snapshot_pair(run: &LoopRun, k: usize) -> Result<[&NmtModel; 2]> {
    let get = |d| {
        run.outcome
            .registry
            .nmt(d, k)
            .ok_or_else(|| Error::contract(format!("run {} has no iteration {k}", run.name)))
    };
    Ok([get(Direction::SrcToTgt)?, get(Direction::TgtToSrc)?])
}

/// Repair effect on the first iteration's synthetic data, per direction.
fn repair_analysis(data: &ExperimentData, run: &LoopRun, seed: u64) -> Result<Vec<RepairAnalysis>> {
    let rec = run
        .outcome
        .iterations
        .first()
        .ok_or_else(|| Error::contract("repair run has no iterations"))?;
    let repaired = rec.repaired.as_ref().ok_or_else(|| Error::contract("run did not repair"))?;
    let mut out = Vec::new();
    for (i, dir) in DIRECTIONS.into_iter().enumerate() {
        let bt = &rec.bt[i];
        let (gold_all, before, after, out_side, in_mono): (&[TokenSeq], &[TokenSeq], &[TokenSeq], &[TokenSeq], &[TokenSeq]) = match dir {
            Direction::SrcToTgt => (
                &data.inside.mono_tgt_gold,
                bt.corpus.src(),
                repaired[i].corpus.src(),
                data.out.train.src(),
                data.inside.mono_src.sents(),
            ),
            Direction::TgtToSrc => (
                &data.inside.mono_src_gold,
                bt.corpus.tgt(),
                repaired[i].corpus.tgt(),
                data.out.train.tgt(),
                data.inside.mono_tgt.sents(),
            ),
        };
        let gold: Vec<TokenSeq> = (0..gold_all.len())
            .filter(|j| bt.failed.binary_search(j).is_err())
            .map(|j| gold_all[j].clone())
            .collect();
        let as_opt = |xs: &[TokenSeq]| -> Vec<Option<Vec<u32>>> { xs.iter().map(|s| Some(s.ids().to_vec())).collect() };
        let bleu = |xs: &[TokenSeq]| -> Result<f64> {
            let h = as_opt(xs);
            let h: Vec<Option<&[u32]>> = h.iter().map(|o| o.as_deref()).collect();
            Ok(corpus_bleu_opt(&h, &gold)?.score)
        };
        let freq = freq_table(out_side);
        let lm_in = train_lm(in_mono, 3)?;
        let lm_out = train_lm(out_side, 3)?;
        out.push(RepairAnalysis {
            seed,
            direction: dir.name().to_string(),
            rows: gold.len(),
            bleu_before: bleu(before)?,
            bleu_after: bleu(after)?,
            fscore_before: bucketed_word_fscore(before, &gold, &freq)?,
            fscore_after: bucketed_word_fscore(after, &gold, &freq)?,
            ppl_in_before: perplexity(&lm_in, before)?,
            ppl_in_after: perplexity(&lm_in, after)?,
            ppl_out_before: perplexity(&lm_out, before)?,
            ppl_out_after: perplexity(&lm_out, after)?,
        });
    }
    Ok(out)
}

fn curves(cfg: &ExperimentConfig, data: &ExperimentData, run: &LoopRun, method: Method, seed: u64) -> Result<Vec<Curve>> {
    let n = run.outcome.registry.nmt_count();
    let mut per_dir = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for k in 0..n {
        let s = eval_pair(cfg, data, snapshot_pair(run, k)?, true)?;
        per_dir[0].push(s[0]);
        per_dir[1].push(s[1]);
    }
    Ok(DIRECTIONS
        .iter()
        .enumerate()
        .map(|(i, d)| Curve {
            method: method.to_string(),
            seed,
            direction: d.name().to_string(),
            dev_bleu: per_dir[i].clone(),
        })
        .collect())
}

/// Everything one seed contributes to the report.
#[derive(Debug, Default)]
pub struct SeedResult {
    pub cells: Vec<Cell>,
    pub analysis: Vec<RepairAnalysis>,
    pub premise: Option<PremiseCheck>,
    pub curves: Vec<Curve>,
    pub lineage: Vec<LineageEntry>,
}

fn push_cells(res: &mut SeedResult, method: Method, seed: u64, outcome: Result<[f64; 2]>) {
    for (i, d) in DIRECTION_NAMES.iter().enumerate() {
        let (test_bleu, error) = match &outcome {
            Ok(s) => (Some(s[i]), None),
            Err(e) => (None, Some(e.to_string())),
        };
        res.cells.push(Cell {
            method: method.to_string(),
            seed,
            direction: d.to_string(),
            test_bleu,
            error,
        });
    }
}

fn save_method_models(cfg: &ExperimentConfig, seed: u64, method: Method, models: [&NmtModel; 2]) -> Result<()> {
    let dir = seed_dir(cfg, seed).join(method.to_string().replace(':', "-"));
    for m in models {
        save_checkpoint(m, &dir.join(ckpt_name(m.direction)))?;
    }
    Ok(())
}

/// Runs every configured method for one seed. Method failures are recorded
/// in their cells; only data generation and pretraining failures abort.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    let data = generate_data(cfg, seed)?;
    write_data(&data, &seed_dir(cfg, seed).join("data"))?;
    let base = pretrain_cached(cfg, &data, seed)?;
    let mut res = SeedResult::default();
    match conflict_premise(cfg, &data, &base[0], seed) {
        Ok(p) => {
            info!("seed {seed}: base misses {:.1}% of {} conflict images", 100.0 * p.conflict_miss_rate, p.conflict_tokens);
            res.premise = Some(p);
        }
        Err(e) => warn!("seed {seed}: premise check failed: {e}"),
    }
    let t = cfg.joint.iterations;
    let wants = |ms: &[Method]| cfg.methods.iter().any(|m| ms.contains(m));
    let loop_len = |iter_method: Method| {
        if cfg.methods.contains(&iter_method) {
            t.max(cfg.curve_iterations).max(1)
        } else {
            1
        }
    };
    let bt_loop = if wants(&[Method::Bt, Method::IterBt]) {
        Some(run_loop(cfg, &data, &base, seed, "bt-loop", false, loop_len(Method::IterBt), None))
    } else {
        None
    };
    let dr_loop = if wants(&[Method::Drbt, Method::IterDrbt]) {
        Some(run_loop(cfg, &data, &base, seed, "repair-loop", true, loop_len(Method::IterDrbt), None))
    } else {
        None
    };
    for &method in &cfg.methods {
        let outcome: Result<[f64; 2]> = (|| {
            let models: [NmtModel; 2] = match method {
                Method::Base => base.clone(),
                Method::Copy => {
                    let mut out = Vec::with_capacity(2);
                    for (i, dir) in DIRECTIONS.into_iter().enumerate() {
                        // Copied target-language text mixed with the out-of-domain pairs.
                        let mono = match dir {
                            Direction::SrcToTgt => data.inside.mono_tgt.sents(),
                            Direction::TgtToSrc => data.inside.mono_src.sents(),
                        };
                        let mut pairs = copy_corpus(mono);
                        pairs.extend(&data.out.train);
                        let (m, _) = fine_tune(&base[i], &direction_columns(&pairs, dir), cfg.joint.nmt_epochs, &cfg.joint.schedule, stage_seed(seed, 0, &format!("copy.{}", dir.name())))?;
                        out.push(m);
                    }
                    let b = out.pop().expect("two");
                    [out.pop().expect("two"), b]
                }
                Method::Bt | Method::Drbt => {
                    let run = loop_ref(if method == Method::Bt { &bt_loop } else { &dr_loop })?;
                    let [a, b] = snapshot_pair(run, 1)?;
                    [a.clone(), b.clone()]
                }
                Method::IterBt | Method::IterDrbt => {
                    let run = loop_ref(if method == Method::IterBt { &bt_loop } else { &dr_loop })?;
                    res.curves.extend(curves(cfg, &data, run, method, seed)?);
                    let [a, b] = snapshot_pair(run, t)?;
                    [a.clone(), b.clone()]
                }
                Method::Semi(n) => {
                    let auth = data.inside.train.truncated(n);
                    let run = run_loop(cfg, &data, &base, seed, &format!("semi-{n}"), true, t, Some(&auth))?;
                    push_lineage(&mut res, seed, &run);
                    let [a, b] = snapshot_pair(&run, t)?;
                    [a.clone(), b.clone()]
                }
            };
            save_method_models(cfg, seed, method, [&models[0], &models[1]])?;
            eval_pair(cfg, &data, [&models[0], &models[1]], false)
        })();
        if let Err(e) = &outcome {
            warn!("seed {seed}: method {method} failed: {e}");
        } else if let Ok(s) = &outcome {
            info!("seed {seed}: {method} test BLEU {:.2} / {:.2}", s[0], s[1]);
        }
        push_cells(&mut res, method, seed, outcome);
    }
    for l in [&bt_loop, &dr_loop].into_iter().flatten().flatten() {
        push_lineage(&mut res, seed, l);
    }
    if let Some(Ok(run)) = &dr_loop {
        match repair_analysis(&data, run, seed) {
            Ok(a) => res.analysis.extend(a),
            Err(e) => warn!("seed {seed}: repair analysis failed: {e}"),
        }
    }
    Ok(res)
}

fn loop_ref(l: &Option<Result<LoopRun>>) -> Result<&LoopRun> {
    match l {
        Some(Ok(r)) => Ok(r),
        Some(Err(e)) => Err(Error::contract(format!("shared run failed: {e}"))),
        None => Err(Error::contract("shared run not scheduled")),
    }
}

fn push_lineage(res: &mut SeedResult, seed: u64, run: &LoopRun) {
    for (id, parent) in run.outcome.registry.lineage() {
        res.lineage.push(LineageEntry {
            seed,
            run: run.name.clone(),
            id,
            parent,
        });
    }
}

fn failed_seed(cfg: &ExperimentConfig, seed: u64, e: &Error) -> SeedResult {
    let mut res = SeedResult::default();
    for &m in &cfg.methods {
        push_cells(&mut res, m, seed, Err(Error::contract(format!("seed setup failed: {e}"))));
    }
    res
}

/// Runs the full experiment and writes the report into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut report = RunReport {
        header: ReportHeader {
            format: 1,
            generated_at: timestamp(),
        },
        config: cfg.to_kv(),
        methods: cfg.methods.iter().map(Method::to_string).collect(),
        seeds: cfg.seeds.clone(),
        ..RunReport::default()
    };
    for &seed in &cfg.seeds {
        let res = run_seed(cfg, seed).unwrap_or_else(|e| {
            warn!("seed {seed} failed: {e}");
            failed_seed(cfg, seed, &e)
        });
        report.cells.extend(res.cells);
        report.analysis.extend(res.analysis);
        report.premise.extend(res.premise);
        report.curves.extend(res.curves);
        report.lineage.extend(res.lineage);
    }
    report.metrics_tsv = analysis_tsv(&report.analysis);
    super::report::emit_report(&report, &cfg.out_dir)?;
    Ok(report)
}

fn timestamp() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}

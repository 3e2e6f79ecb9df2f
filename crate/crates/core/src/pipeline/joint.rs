use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::construct::{
    authentic_triples, back_translate, direction_columns, mix_semi_supervised, repair_corpus, round_trip,
    triple_columns, Built,
};
use super::train::{steps_per_epoch, train, TrainSchedule};
use crate::corpus::{write_pairs, write_triples, PairCorpus, RepairSide, TokenSeq, TripleCorpus, Vocab};
use crate::error::{Error, Result};
use crate::model::{init_dr, DecodeParams, Direction, DrModel, NmtModel, Seq2Seq, TransformerConfig};

pub const DIRECTIONS: [Direction; 2] = [Direction::SrcToTgt, Direction::TgtToSrc];

/// The repair model that fixes training data for `dir`: the source side of
/// source-to-target pairs, the target side of the reverse.
pub fn repair_side_for(dir: Direction) -> RepairSide {
    match dir {
        Direction::SrcToTgt => RepairSide::Source,
        Direction::TgtToSrc => RepairSide::Target,
    }
}

fn dir_index(d: Direction) -> usize {
    match d {
        Direction::SrcToTgt => 0,
        Direction::TgtToSrc => 1,
    }
}

fn side_index(s: RepairSide) -> usize {
    match s {
        RepairSide::Source => 0,
        RepairSide::Target => 1,
    }
}

/// Deterministic per-stage seed.
pub fn stage_seed(seed: u64, iteration: usize, stage: &str) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for b in (iteration as u64).to_le_bytes().iter().chain(stage.as_bytes()) {
        h = (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3);
        h ^= h >> 29;
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<M> {
    pub id: String,
    /// Snapshot this one was fine-tuned from; `None` for base models and
    /// freshly initialized repair models.
    pub parent: Option<String>,
    pub model: M,
}

/// Every model snapshot produced by joint training, per iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRegistry {
    nmt: [Vec<Snapshot<NmtModel>>; 2],
    dr: [Vec<Snapshot<DrModel>>; 2],
}

fn snapshot_id(tag: &str, k: usize) -> String {
    format!("{tag}@{k}")
}

impl ModelRegistry {
    pub fn new(fwd: NmtModel, bwd: NmtModel) -> Result<Self> {
        if fwd.direction != Direction::SrcToTgt || bwd.direction != Direction::TgtToSrc {
            return Err(Error::contract("registry needs a source-to-target and a target-to-source model"));
        }
        let base = |m: NmtModel| Snapshot {
            id: snapshot_id(&m.kind().tag(), 0),
            parent: None,
            model: m,
        };
        Ok(Self {
            nmt: [vec![base(fwd)], vec![base(bwd)]],
            dr: [Vec::new(), Vec::new()],
        })
    }

    pub fn nmt(&self, dir: Direction, k: usize) -> Option<&NmtModel> {
        self.nmt[dir_index(dir)].get(k).map(|s| &s.model)
    }

    pub fn latest_nmt(&self, dir: Direction) -> &NmtModel {
        &self.nmt[dir_index(dir)].last().expect("base model").model
    }

    pub fn dr(&self, side: RepairSide, k: usize) -> Option<&DrModel> {
        self.dr[side_index(side)].get(k).map(|s| &s.model)
    }

    pub fn latest_dr(&self, side: RepairSide) -> Option<&DrModel> {
        self.dr[side_index(side)].last().map(|s| &s.model)
    }

    /// Translation snapshots per direction (base included).
    pub fn nmt_count(&self) -> usize {
        self.nmt[0].len()
    }

    pub fn dr_count(&self) -> usize {
        self.dr[0].len()
    }

    fn push_nmt(&mut self, m: NmtModel) {
        let list = &mut self.nmt[dir_index(m.direction)];
        let parent = list.last().map(|s| s.id.clone());
        list.push(Snapshot {
            id: snapshot_id(&m.kind().tag(), list.len()),
            parent,
            model: m,
        });
    }

    fn push_dr(&mut self, m: DrModel) {
        let list = &mut self.dr[side_index(m.side)];
        let parent = list.last().map(|s| s.id.clone());
        list.push(Snapshot {
            id: snapshot_id(&m.kind().tag(), list.len()),
            parent,
            model: m,
        });
    }

    /// `(id, parent)` of every snapshot.
    pub fn lineage(&self) -> Vec<(String, Option<String>)> {
        let nmt = self.nmt.iter().flatten().map(|s| (s.id.clone(), s.parent.clone()));
        let dr = self.dr.iter().flatten().map(|s| (s.id.clone(), s.parent.clone()));
        nmt.chain(dr).collect()
    }

    /// Each snapshot after the first of its role derives from its predecessor.
    pub fn check_lineage(&self) -> Result<()> {
        let check = |ids: Vec<(&String, &Option<String>)>| -> Result<()> {
            for (i, (id, parent)) in ids.iter().enumerate() {
                let want = if i == 0 { None } else { Some(ids[i - 1].0) };
                if parent.as_ref() != want {
                    return Err(Error::contract(format!("snapshot {id} has broken lineage")));
                }
            }
            Ok(())
        };
        for l in &self.nmt {
            check(l.iter().map(|s| (&s.id, &s.parent)).collect())?;
        }
        for l in &self.dr {
            check(l.iter().map(|s| (&s.id, &s.parent)).collect())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTrainConfig {
    /// Iteration count T.
    pub iterations: usize,
    /// Repair synthetic data with the repair models; off gives iterative
    /// back-translation.
    pub repair: bool,
    /// Fine-tuning budget per stage, in epochs over the constructed corpus.
    pub nmt_epochs: f64,
    pub dr_epochs: f64,
    /// Budget for training the repair models from scratch before the first
    /// iteration.
    pub dr_init_epochs: f64,
    pub schedule: TrainSchedule,
    pub dr_init_schedule: TrainSchedule,
    /// Decoding used to build synthetic corpora.
    pub decode: DecodeParams,
    pub mix_out_domain: bool,
    /// Keep synthetic corpora of earlier iterations instead of regenerating.
    pub accumulate: bool,
    pub threads: usize,
}

impl Default for JointTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2,
            repair: true,
            nmt_epochs: 2.0,
            dr_epochs: 2.0,
            dr_init_epochs: 30.0,
            schedule: TrainSchedule::fine_tune(),
            dr_init_schedule: TrainSchedule::pretrain(),
            decode: DecodeParams::greedy(15),
            mix_out_domain: false,
            accumulate: false,
            threads: 1,
        }
    }
}

impl JointTrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, e) in [
            ("nmt_epochs", self.nmt_epochs),
            ("dr_epochs", self.dr_epochs),
            ("dr_init_epochs", self.dr_init_epochs),
        ] {
            if !(e > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        self.schedule.validate()?;
        self.dr_init_schedule.validate()?;
        self.decode.validate()?;
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// Data for joint training. Pair corpora are in (source, target) order.
#[derive(Debug, Clone, Copy)]
pub struct JointData<'a> {
    pub mono_src: &'a [TokenSeq],
    pub mono_tgt: &'a [TokenSeq],
    /// Authentic in-domain pairs for the semi-supervised setting.
    pub authentic: Option<&'a PairCorpus>,
    /// Out-of-domain pairs, mixed in when the config asks for it.
    pub out_domain: Option<&'a PairCorpus>,
}

/// Corpora and budgets of one iteration, indexed by translation direction
/// (source-to-target first).
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub bt: [Built<PairCorpus>; 2],
    pub repaired: Option<[Built<PairCorpus>; 2]>,
    /// The exact corpora each translation model was fine-tuned on.
    pub nmt_train: [PairCorpus; 2],
    /// Triples the repair models were fine-tuned on after this iteration,
    /// indexed by repair side.
    pub triples: Option<[TripleCorpus; 2]>,
    pub nmt_steps: [usize; 2],
    pub dr_steps: [usize; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointOutcome {
    pub registry: ModelRegistry,
    /// Round-trip triples used to train the initial repair models.
    pub initial_triples: Option<[TripleCorpus; 2]>,
    pub iterations: Vec<IterationRecord>,
}

/// Where per-iteration corpora are written.
#[derive(Debug, Clone, Copy)]
pub struct Persist<'a> {
    pub dir: &'a Path,
    pub vocab: &'a Vocab,
}

impl Persist<'_> {
    fn iter_dir(&self, k: usize) -> PathBuf {
        self.dir.join(format!("iter{k}"))
    }
}

fn budget(columns: &[&[TokenSeq]], epochs: f64, max_tokens: usize) -> Result<usize> {
    let per = steps_per_epoch(columns, max_tokens)?;
    Ok(((per as f64) * epochs).ceil().max(1.0) as usize)
}

/// Fine-tunes `model` for `epochs` over `columns`.
pub fn fine_tune<M: Seq2Seq>(model: &M, columns: &[&[TokenSeq]], epochs: f64, schedule: &TrainSchedule, seed: u64) -> Result<(M, usize)> {
    let steps = budget(columns, epochs, schedule.max_tokens)?;
    Ok((train(model, columns, steps, schedule, seed)?.0, steps))
}

/// Trains both repair models on their triples: from `previous` when given,
/// otherwise from a fresh initialization.
pub fn train_dr_models(
    previous: Option<[&DrModel; 2]>,
    dr_config: &TransformerConfig,
    triples: [&TripleCorpus; 2],
    epochs: f64,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<([DrModel; 2], [usize; 2])> {
    let mut out = Vec::with_capacity(2);
    let mut steps = [0; 2];
    for (i, side) in [RepairSide::Source, RepairSide::Target].into_iter().enumerate() {
        if triples[i].side != side {
            return Err(Error::contract("triple corpus side does not match its repair model"));
        }
        let start = match previous {
            Some(p) => {
                if p[i].side != side {
                    return Err(Error::contract("repair model side mismatch"));
                }
                p[i].clone()
            }
            None => init_dr(dr_config, side, stage_seed(seed, 0, &format!("init.{}", side.name())))?,
        };
        let (m, s) = fine_tune(&start, &triple_columns(triples[i]), epochs, schedule, stage_seed(seed, 0, side.name()))?;
        out.push(m);
        steps[i] = s;
    }
    let b = out.pop().expect("two models");
    let a = out.pop().expect("two models");
    Ok(([a, b], steps))
}

fn round_trips(reg: &ModelRegistry, data: &JointData, cfg: &JointTrainConfig) -> Result<[TripleCorpus; 2]> {
    let fwd = reg.latest_nmt(Direction::SrcToTgt);
    let bwd = reg.latest_nmt(Direction::TgtToSrc);
    let mut src = round_trip(fwd, bwd, data.mono_src, &cfg.decode, cfg.threads)?.corpus;
    let mut tgt = round_trip(bwd, fwd, data.mono_tgt, &cfg.decode, cfg.threads)?.corpus;
    if let Some(auth) = data.authentic {
        src.extend(&authentic_triples(bwd, fwd, auth, RepairSide::Source, &cfg.decode, cfg.threads)?.corpus)?;
        tgt.extend(&authentic_triples(bwd, fwd, auth, RepairSide::Target, &cfg.decode, cfg.threads)?.corpus)?;
    }
    Ok([src, tgt])
}

fn persist_triples(p: &Persist, k: usize, t: &[TripleCorpus; 2]) -> Result<()> {
    for tc in t {
        write_triples(&p.iter_dir(k), &format!("triples.{}", tc.side.name()), p.vocab, tc)?;
    }
    Ok(())
}

/// Joint training of both translation models and both repair models.
///
/// Each iteration back-translates both monolingual corpora with the current
/// translation models, repairs the synthetic side with the current repair
/// models, fine-tunes each translation model on its repaired corpus, then
/// rebuilds round-trip triples with the updated translation models and
/// fine-tunes the repair models on them. Without repair this is iterative
/// back-translation.
pub fn joint_train(
    cfg: &JointTrainConfig,
    dr_config: &TransformerConfig,
    base: ModelRegistry,
    data: JointData,
    seed: u64,
    persist: Option<Persist>,
) -> Result<JointOutcome> {
    cfg.validate()?;
    if data.mono_src.is_empty() || data.mono_tgt.is_empty() {
        return Err(Error::contract("joint training needs both monolingual corpora"));
    }
    let mut reg = base;
    let mut initial_triples = None;
    if cfg.repair && cfg.iterations > 0 && reg.dr_count() == 0 {
        let t = round_trips(&reg, &data, cfg).map_err(|e| e.at_stage("round-trip", 0))?;
        if let Some(p) = &persist {
            persist_triples(p, 0, &t).map_err(|e| e.at_stage("persist", 0))?;
        }
        let (dr, _) = train_dr_models(None, dr_config, [&t[0], &t[1]], cfg.dr_init_epochs, &cfg.dr_init_schedule, stage_seed(seed, 0, "dr-init"))
            .map_err(|e| e.at_stage("dr-init", 0))?;
        let [a, b] = dr;
        reg.push_dr(a);
        reg.push_dr(b);
        initial_triples = Some(t);
    }
    let mut history: [Vec<PairCorpus>; 2] = [Vec::new(), Vec::new()];
    let mut records = Vec::with_capacity(cfg.iterations);
    for k in 0..cfg.iterations {
        let stage = |name: &'static str| move |e: Error| e.at_stage(name, k);
        let fwd = reg.latest_nmt(Direction::SrcToTgt).clone();
        let bwd = reg.latest_nmt(Direction::TgtToSrc).clone();
        // Data for training src->tgt comes from target text and vice versa.
        let bt = [
            back_translate(&bwd, data.mono_tgt, &cfg.decode, cfg.threads).map_err(stage("back-translate"))?,
            back_translate(&fwd, data.mono_src, &cfg.decode, cfg.threads).map_err(stage("back-translate"))?,
        ];
        let repaired = if cfg.repair {
            let mut out = Vec::with_capacity(2);
            for (i, dir) in DIRECTIONS.into_iter().enumerate() {
                let dr = reg
                    .latest_dr(repair_side_for(dir))
                    .ok_or_else(|| Error::contract("repair enabled without repair models"))?;
                out.push(repair_corpus(dr, &bt[i].corpus, &cfg.decode, cfg.threads).map_err(stage("repair"))?);
            }
            let b = out.pop().expect("two");
            let a = out.pop().expect("two");
            Some([a, b])
        } else {
            None
        };
        let mut nmt_train: Vec<PairCorpus> = Vec::with_capacity(2);
        let mut nmt_steps = [0; 2];
        let mut updated = Vec::with_capacity(2);
        for (i, dir) in DIRECTIONS.into_iter().enumerate() {
            let synthetic = match &repaired {
                Some(r) => r[i].corpus.clone(),
                None => bt[i].corpus.clone(),
            };
            history[i].push(synthetic.clone());
            let mut corpus = PairCorpus::default();
            if cfg.accumulate {
                for h in &history[i] {
                    corpus.extend(h);
                }
            } else {
                corpus = synthetic;
            }
            if let Some(auth) = data.authentic {
                corpus = mix_semi_supervised(auth, &corpus);
            }
            if cfg.mix_out_domain {
                if let Some(out) = data.out_domain {
                    corpus.extend(out);
                }
            }
            let model = reg.latest_nmt(dir);
            let (m, s) = fine_tune(model, &direction_columns(&corpus, dir), cfg.nmt_epochs, &cfg.schedule, stage_seed(seed, k, dir.name()))
                .map_err(stage("fine-tune"))?;
            nmt_steps[i] = s;
            updated.push(m);
            nmt_train.push(corpus);
        }
        for m in updated {
            reg.push_nmt(m);
        }
        let mut triples = None;
        let mut dr_steps = [0; 2];
        if cfg.repair {
            let t = round_trips(&reg, &data, cfg).map_err(stage("round-trip"))?;
            let prev = [
                reg.latest_dr(RepairSide::Source).expect("initialized"),
                reg.latest_dr(RepairSide::Target).expect("initialized"),
            ];
            let (dr, s) = train_dr_models(Some(prev), dr_config, [&t[0], &t[1]], cfg.dr_epochs, &cfg.schedule, stage_seed(seed, k + 1, "dr"))
                .map_err(stage("repair-train"))?;
            let [a, b] = dr;
            reg.push_dr(a);
            reg.push_dr(b);
            dr_steps = s;
            triples = Some(t);
        }
        let b = nmt_train.pop().expect("two");
        let a = nmt_train.pop().expect("two");
        let rec = IterationRecord {
            iteration: k,
            bt,
            repaired,
            nmt_train: [a, b],
            triples,
            nmt_steps,
            dr_steps,
        };
        if let Some(p) = &persist {
            persist_iteration(p, &rec).map_err(stage("persist"))?;
        }
        records.push(rec);
    }
    reg.check_lineage()?;
    Ok(JointOutcome {
        registry: reg,
        initial_triples,
        iterations: records,
    })
}

fn persist_iteration(p: &Persist, rec: &IterationRecord) -> Result<()> {
    let dir = p.iter_dir(rec.iteration);
    for (i, d) in DIRECTIONS.into_iter().enumerate() {
        write_pairs(&dir, &format!("bt.{}", d.name()), p.vocab, &rec.bt[i].corpus)?;
        if let Some(r) = &rec.repaired {
            write_pairs(&dir, &format!("repaired.{}", d.name()), p.vocab, &r[i].corpus)?;
        }
    }
    if let Some(t) = &rec.triples {
        // Triples built after iteration k train the repair models used in k + 1.
        persist_triples(p, rec.iteration + 1, t)?;
    }
    Ok(())
}

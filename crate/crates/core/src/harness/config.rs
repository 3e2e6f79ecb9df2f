use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::corpus::{DomainSpec, SplitSizes};
use crate::error::{Error, Result};
use crate::model::{DecodeParams, Strategy, TransformerConfig};
use crate::pipeline::{JointTrainConfig, TrainSchedule};

/// An adaptation method evaluated by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Base,
    Copy,
    Bt,
    IterBt,
    Drbt,
    IterDrbt,
    /// Iterative domain-repaired back-translation with this many authentic
    /// in-domain pairs.
    Semi(usize),
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "base" => Method::Base,
            "copy" => Method::Copy,
            "bt" => Method::Bt,
            "iter-bt" => Method::IterBt,
            "drbt" => Method::Drbt,
            "iter-drbt" => Method::IterDrbt,
            "dali-bt" | "dali-bt-excluded" => {
                return Err(Error::Config("the lexicon-induction baseline is not implemented".into()))
            }
            _ => match s.strip_prefix("semi:").map(str::parse::<usize>) {
                Some(Ok(n)) if n > 0 => Method::Semi(n),
                _ => return Err(Error::Config(format!("unknown method `{s}`"))),
            },
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Base => f.write_str("base"),
            Method::Copy => f.write_str("copy"),
            Method::Bt => f.write_str("bt"),
            Method::IterBt => f.write_str("iter-bt"),
            Method::Drbt => f.write_str("drbt"),
            Method::IterDrbt => f.write_str("iter-drbt"),
            Method::Semi(n) => write!(f, "semi:{n}"),
        }
    }
}

/// Everything one experiment needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub domain: DomainSpec,
    pub out_sizes: SplitSizes,
    pub in_sizes: SplitSizes,
    pub model: TransformerConfig,
    pub dr_model: TransformerConfig,
    pub pretrain: TrainSchedule,
    pub pretrain_steps: usize,
    pub joint: JointTrainConfig,
    /// Iterations tracked for the dev curve of the iterative methods.
    pub curve_iterations: usize,
    pub eval_decode: DecodeParams,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            domain: DomainSpec::default(),
            out_sizes: SplitSizes {
                train: 10_000,
                mono_src: 0,
                mono_tgt: 0,
                dev: 500,
                test: 0,
            },
            in_sizes: SplitSizes {
                train: 2_000,
                mono_src: 5_000,
                mono_tgt: 5_000,
                dev: 500,
                test: 1_000,
            },
            model: TransformerConfig::default(),
            dr_model: TransformerConfig::default(),
            pretrain: TrainSchedule::pretrain(),
            pretrain_steps: 4_000,
            joint: JointTrainConfig::default(),
            curve_iterations: 3,
            eval_decode: DecodeParams::default(),
            methods: vec![Method::Base, Method::Copy, Method::Bt, Method::IterBt, Method::Drbt, Method::IterDrbt],
            seeds: vec![1, 2, 3],
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn sizes_kv(prefix: &str, s: &SplitSizes, m: &mut BTreeMap<String, String>) {
    for (k, v) in [
        ("train", s.train),
        ("mono_src", s.mono_src),
        ("mono_tgt", s.mono_tgt),
        ("dev", s.dev),
        ("test", s.test),
    ] {
        m.insert(format!("{prefix}.{k}"), v.to_string());
    }
}

fn model_kv(prefix: &str, c: &TransformerConfig, m: &mut BTreeMap<String, String>) {
    for (k, v) in [
        ("num_layers", c.num_layers.to_string()),
        ("num_heads", c.num_heads.to_string()),
        ("d_model", c.d_model.to_string()),
        ("d_hidden", c.d_hidden.to_string()),
        ("dropout", c.dropout.to_string()),
        ("eps_ls", c.eps_ls.to_string()),
        ("max_len", c.max_len.to_string()),
        ("tie_embeddings", c.tie_embeddings.to_string()),
        ("condition_first", c.condition_first.to_string()),
    ] {
        m.insert(format!("{prefix}.{k}"), v);
    }
}

fn schedule_kv(prefix: &str, s: &TrainSchedule, m: &mut BTreeMap<String, String>) {
    m.insert(format!("{prefix}.lr_max"), s.lr_max.to_string());
    m.insert(format!("{prefix}.warmup_steps"), s.warmup_steps.to_string());
    m.insert(format!("{prefix}.max_tokens"), s.max_tokens.to_string());
    m.insert(format!("{prefix}.clip_norm"), s.clip_norm.to_string());
}

fn decode_kv(prefix: &str, d: &DecodeParams, m: &mut BTreeMap<String, String>) {
    let strategy = match d.strategy {
        Strategy::Greedy => "greedy",
        Strategy::Beam => "beam",
    };
    m.insert(format!("{prefix}.strategy"), strategy.into());
    m.insert(format!("{prefix}.beam_size"), d.beam_size.to_string());
    m.insert(format!("{prefix}.length_penalty"), d.length_penalty.to_string());
    m.insert(format!("{prefix}.max_decode_len"), d.max_decode_len.to_string());
}

struct Value<'a> {
    key: &'a str,
    raw: &'a str,
}

impl Value<'_> {
    fn bad(&self) -> Error {
        Error::Config(format!("invalid value `{}` for `{}`", self.raw, self.key))
    }

    fn int(&self) -> Result<usize> {
        self.raw.parse().map_err(|_| self.bad())
    }

    fn real(&self) -> Result<f64> {
        self.raw.parse().map_err(|_| self.bad())
    }

    fn flag(&self) -> Result<bool> {
        self.raw.parse().map_err(|_| self.bad())
    }
}

fn set_sizes(s: &mut SplitSizes, field: &str, v: &Value) -> Result<bool> {
    let slot = match field {
        "train" => &mut s.train,
        "mono_src" => &mut s.mono_src,
        "mono_tgt" => &mut s.mono_tgt,
        "dev" => &mut s.dev,
        "test" => &mut s.test,
        _ => return Ok(false),
    };
    *slot = v.int()?;
    Ok(true)
}

fn set_model(c: &mut TransformerConfig, field: &str, v: &Value) -> Result<bool> {
    match field {
        "num_layers" => c.num_layers = v.int()?,
        "num_heads" => c.num_heads = v.int()?,
        "d_model" => c.d_model = v.int()?,
        "d_hidden" => c.d_hidden = v.int()?,
        "dropout" => c.dropout = v.real()?,
        "eps_ls" => c.eps_ls = v.real()?,
        "max_len" => c.max_len = v.int()?,
        "tie_embeddings" => c.tie_embeddings = v.flag()?,
        "condition_first" => c.condition_first = v.flag()?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_schedule(s: &mut TrainSchedule, field: &str, v: &Value) -> Result<bool> {
    match field {
        "lr_max" => s.lr_max = v.real()?,
        "warmup_steps" => s.warmup_steps = v.int()? as u64,
        "max_tokens" => s.max_tokens = v.int()?,
        "clip_norm" => s.clip_norm = v.real()?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_decode(d: &mut DecodeParams, field: &str, v: &Value) -> Result<bool> {
    match field {
        "strategy" => {
            d.strategy = match v.raw {
                "greedy" => Strategy::Greedy,
                "beam" => Strategy::Beam,
                _ => return Err(v.bad()),
            }
        }
        "beam_size" => d.beam_size = v.int()?,
        "length_penalty" => d.length_penalty = v.real()?,
        "max_decode_len" => d.max_decode_len = v.int()?,
        _ => return Ok(false),
    }
    Ok(true)
}

impl ExperimentConfig {
    /// Flat `key=value` form with dotted namespaces, keys sorted.
    pub fn to_kv(&self) -> String {
        let mut m = BTreeMap::new();
        for line in self.domain.to_kv().lines() {
            let (k, v) = line.split_once('=').expect("domain kv");
            m.insert(format!("domain.{k}"), v.to_string());
        }
        sizes_kv("out", &self.out_sizes, &mut m);
        sizes_kv("in", &self.in_sizes, &mut m);
        model_kv("model", &self.model, &mut m);
        model_kv("dr_model", &self.dr_model, &mut m);
        schedule_kv("pretrain", &self.pretrain, &mut m);
        m.insert("pretrain.steps".into(), self.pretrain_steps.to_string());
        let j = &self.joint;
        m.insert("joint.iterations".into(), j.iterations.to_string());
        m.insert("joint.nmt_epochs".into(), j.nmt_epochs.to_string());
        m.insert("joint.dr_epochs".into(), j.dr_epochs.to_string());
        m.insert("joint.dr_init_epochs".into(), j.dr_init_epochs.to_string());
        m.insert("joint.mix_out_domain".into(), j.mix_out_domain.to_string());
        m.insert("joint.accumulate".into(), j.accumulate.to_string());
        m.insert("joint.threads".into(), j.threads.to_string());
        schedule_kv("joint.schedule", &j.schedule, &mut m);
        schedule_kv("joint.dr_init_schedule", &j.dr_init_schedule, &mut m);
        decode_kv("joint.decode", &j.decode, &mut m);
        m.insert("curve_iterations".into(), self.curve_iterations.to_string());
        decode_kv("eval.decode", &self.eval_decode, &mut m);
        m.insert("methods".into(), join(&self.methods));
        m.insert("seeds".into(), join(&self.seeds));
        m.insert("out_dir".into(), self.out_dir.display().to_string());
        m.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let v = Value { key, raw };
        let unknown = || Error::Config(format!("unknown key `{key}`"));
        let (ns, field) = key.split_once('.').unwrap_or(("", key));
        let known = match ns {
            "domain" => {
                self.domain.set(field, raw)?;
                true
            }
            "out" => set_sizes(&mut self.out_sizes, field, &v)?,
            "in" => set_sizes(&mut self.in_sizes, field, &v)?,
            "model" => set_model(&mut self.model, field, &v)?,
            "dr_model" => set_model(&mut self.dr_model, field, &v)?,
            "pretrain" if field == "steps" => {
                self.pretrain_steps = v.int()?;
                true
            }
            "pretrain" => set_schedule(&mut self.pretrain, field, &v)?,
            "eval" => match field.strip_prefix("decode.") {
                Some(f) => set_decode(&mut self.eval_decode, f, &v)?,
                None => false,
            },
            "joint" => {
                let j = &mut self.joint;
                if let Some(f) = field.strip_prefix("schedule.") {
                    set_schedule(&mut j.schedule, f, &v)?
                } else if let Some(f) = field.strip_prefix("dr_init_schedule.") {
                    set_schedule(&mut j.dr_init_schedule, f, &v)?
                } else if let Some(f) = field.strip_prefix("decode.") {
                    set_decode(&mut j.decode, f, &v)?
                } else {
                    match field {
                        "iterations" => j.iterations = v.int()?,
                        "nmt_epochs" => j.nmt_epochs = v.real()?,
                        "dr_epochs" => j.dr_epochs = v.real()?,
                        "dr_init_epochs" => j.dr_init_epochs = v.real()?,
                        "mix_out_domain" => j.mix_out_domain = v.flag()?,
                        "accumulate" => j.accumulate = v.flag()?,
                        "threads" => j.threads = v.int()?,
                        _ => return Err(unknown()),
                    }
                    true
                }
            }
            "" => {
                match field {
                    "curve_iterations" => self.curve_iterations = v.int()?,
                    "methods" => {
                        self.methods = raw
                            .split(',')
                            .map(str::trim)
                            .filter(|s| !s.is_empty())
                            .map(Method::parse)
                            .collect::<Result<_>>()?
                    }
                    "seeds" => {
                        self.seeds = raw
                            .split(',')
                            .map(str::trim)
                            .filter(|s| !s.is_empty())
                            .map(|s| s.parse().map_err(|_| v.bad()))
                            .collect::<Result<_>>()?
                    }
                    "out_dir" => self.out_dir = PathBuf::from(raw),
                    _ => return Err(unknown()),
                }
                true
            }
            _ => false,
        };
        if known {
            Ok(())
        } else {
            Err(unknown())
        }
    }

    /// Parses `key=value` lines over the defaults; `#` starts a comment line.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("methods and seeds must be nonempty".into()));
        }
        let s = &self.in_sizes;
        if self.out_sizes.train == 0 || s.mono_src == 0 || s.mono_tgt == 0 || s.dev == 0 || s.test == 0 {
            return Err(Error::Config("corpus sizes must be positive".into()));
        }
        if self.out_sizes.dev == 0 || self.pretrain_steps == 0 {
            return Err(Error::Config("out-domain dev size and pretraining steps must be positive".into()));
        }
        let semi_max = self.methods.iter().filter_map(|m| match m {
            Method::Semi(n) => Some(*n),
            _ => None,
        });
        if let Some(n) = semi_max.max() {
            if n > s.train {
                return Err(Error::Config(format!("semi:{n} needs at least {n} in-domain training pairs")));
            }
        }
        // Vocabulary sizes come from the lexicon at run time.
        self.model.clone().with_vocab(5, 5).validate()?;
        self.dr_model.clone().with_vocab(5, 5).validate()?;
        self.pretrain.validate()?;
        self.joint.validate()?;
        self.eval_decode.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut c = ExperimentConfig::default();
        c.methods.push(Method::Semi(100));
        c.seeds = vec![7];
        c.joint.iterations = 3;
        c.model.d_model = 32;
        c.eval_decode = DecodeParams::greedy(9);
        let back = ExperimentConfig::from_kv(&c.to_kv()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn dotted_keys_and_comments() {
        let c = ExperimentConfig::from_kv("# toy\nmodel.d_model = 32\njoint.schedule.lr_max=0.002\nmethods=base,semi:500\n").unwrap();
        assert_eq!(c.model.d_model, 32);
        assert_eq!(c.joint.schedule.lr_max, 0.002);
        assert_eq!(c.methods, vec![Method::Base, Method::Semi(500)]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::from_kv("nope=1").is_err());
        assert!(ExperimentConfig::from_kv("model.d_model=abc").is_err());
        assert!(ExperimentConfig::from_kv("methods=").is_err());
        assert!(ExperimentConfig::from_kv("methods=dali-bt").is_err());
        assert!(ExperimentConfig::from_kv("methods=semi:0").is_err());
        assert!(ExperimentConfig::from_kv("in.test=0").is_err());
        assert!(ExperimentConfig::from_kv("methods=semi:5000").is_err());
        assert!(ExperimentConfig::from_kv("line without equals").is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Base, Method::Copy, Method::Bt, Method::IterBt, Method::Drbt, Method::IterDrbt, Method::Semi(42)] {
            assert_eq!(Method::parse(&m.to_string()).unwrap(), m);
        }
    }
}

//! Run configuration: model architecture plus training hyperparameters,
//! loadable from a plain `key = value` file (with `#` comments) and
//! overridable key-by-key from CLI flags. Unknown keys and unparsable
//! values are hard errors so typos never silently fall back to defaults.

use std::path::Path;

use crate::error::{Error, Result};
use crate::network::ModelConfig;

/// How the learning rate evolves over a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrSchedule {
    /// The configured rate at every step.
    #[default]
    Constant,
    /// Half-cosine decay from the configured rate toward zero (the last
    /// step still uses a small positive rate).
    Cosine,
}

impl LrSchedule {
    /// The learning rate at `iter` of `total` given the base rate.
    pub fn at(self, base: f64, iter: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let t = iter as f64 / total.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }
}

impl std::fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LrSchedule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(format!("unknown schedule {other:?} (constant|cosine)")),
        }
    }
}

/// Training-loop hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Optimizer steps to run.
    pub iters: usize,
    /// Adam learning rate (the peak rate under a decaying schedule).
    pub lr: f64,
    /// Learning-rate schedule over the run.
    pub lr_schedule: LrSchedule,
    /// Learning-rate multiplier for the offset decoders and copy tags.
    /// Values above one make the upsampler children redistribute across the
    /// shape faster than the backbone features change.
    pub offset_lr_mult: f64,
    /// Pairs whose gradients are averaged per optimizer step.
    pub batch: usize,
    /// Write a training-log row every this many iterations (first and last
    /// iterations are always logged). Zero disables intermediate rows.
    pub log_every: usize,
    /// Write a metrics report every this many iterations. Zero disables.
    pub eval_every: usize,
    /// Write a checkpoint every this many iterations (a final checkpoint is
    /// always written). Zero disables intermediate checkpoints.
    pub checkpoint_every: usize,
    /// Seed for weight initialization and example ordering.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 500,
            lr: 1e-3,
            lr_schedule: LrSchedule::Constant,
            offset_lr_mult: 1.0,
            batch: 1,
            log_every: 10,
            eval_every: 0,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

/// Everything a run needs: what the network looks like and how to train it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Parses file contents and applies every assignment in order.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::BadConfig(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::UnreadableFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        self.apply_text(&text)
    }

    /// Applies one assignment. Keys mirror the struct fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::BadConfig(format!("key {key}: cannot parse value {value:?}"))
            })
        }
        fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
            value
                .split(',')
                .map(|v| parse::<usize>(key, v.trim()))
                .collect()
        }
        fn parse_bool(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" | "1" | "on" => Ok(true),
                "false" | "0" | "off" => Ok(false),
                other => Err(Error::BadConfig(format!(
                    "key {key}: expected a boolean, got {other:?}"
                ))),
            }
        }
        match key {
            "c" => self.model.c = parse(key, value)?,
            "n_in" => self.model.n_in = parse(key, value)?,
            "n_coarse" => self.model.n_coarse = parse(key, value)?,
            "up_ratios" => self.model.up_ratios = parse_list(key, value)?,
            "merge_target" => self.model.merge_target = parse(key, value)?,
            "ccm_res" => self.model.ccm_res = parse(key, value)?,
            "heads" => self.model.heads = parse(key, value)?,
            "edge_dims" => {
                let dims = parse_list(key, value)?;
                if dims.len() != 2 {
                    return Err(Error::BadConfig(format!(
                        "key {key}: expected two comma-separated widths, got {value:?}"
                    )));
                }
                self.model.edge_dims = (dims[0], dims[1]);
            }
            "edge_k" => self.model.edge_k = parse(key, value)?,
            "incep_kernels" => self.model.incep_kernels = parse_list(key, value)?,
            "incep_width" => self.model.incep_width = parse(key, value)?,
            "use_ccm" => self.model.use_ccm = parse_bool(key, value)?,
            "use_alignment" => self.model.use_alignment = parse_bool(key, value)?,
            "use_inception" => self.model.use_inception = parse_bool(key, value)?,
            "iters" => self.train.iters = parse(key, value)?,
            "lr" => self.train.lr = parse(key, value)?,
            "lr_schedule" => {
                self.train.lr_schedule =
                    value.parse().map_err(|e| Error::BadConfig(format!("key {key}: {e}")))?;
            }
            "offset_lr_mult" => self.train.offset_lr_mult = parse(key, value)?,
            "batch" => self.train.batch = parse(key, value)?,
            "log_every" => self.train.log_every = parse(key, value)?,
            "eval_every" => self.train.eval_every = parse(key, value)?,
            "checkpoint_every" => self.train.checkpoint_every = parse(key, value)?,
            "seed" => self.train.seed = parse(key, value)?,
            other => {
                return Err(Error::BadConfig(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    /// Validates cross-field constraints, delegating model checks.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.train.iters == 0 {
            return Err(Error::BadConfig("iters must be positive".into()));
        }
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return Err(Error::BadConfig(format!(
                "lr must be finite and positive, got {}",
                self.train.lr
            )));
        }
        if self.train.batch == 0 {
            return Err(Error::BadConfig("batch must be positive".into()));
        }
        if !(self.train.offset_lr_mult > 0.0 && self.train.offset_lr_mult.is_finite()) {
            return Err(Error::BadConfig(format!(
                "offset_lr_mult must be finite and positive, got {}",
                self.train.offset_lr_mult
            )));
        }
        Ok(())
    }

    /// Serializes every field as `key = value` lines, parseable back.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let list = |v: &[usize]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        format!(
            "c = {}\nn_in = {}\nn_coarse = {}\nup_ratios = {}\nmerge_target = {}\n\
             ccm_res = {}\nheads = {}\nedge_dims = {},{}\nedge_k = {}\n\
             incep_kernels = {}\nincep_width = {}\nuse_ccm = {}\nuse_alignment = {}\n\
             use_inception = {}\niters = {}\nlr = {}\nlr_schedule = {}\n\
             offset_lr_mult = {}\nbatch = {}\nlog_every = {}\neval_every = {}\n\
             checkpoint_every = {}\nseed = {}\n",
            m.c,
            m.n_in,
            m.n_coarse,
            list(&m.up_ratios),
            m.merge_target,
            m.ccm_res,
            m.heads,
            m.edge_dims.0,
            m.edge_dims.1,
            m.edge_k,
            list(&m.incep_kernels),
            m.incep_width,
            m.use_ccm,
            m.use_alignment,
            m.use_inception,
            t.iters,
            t.lr,
            t.lr_schedule,
            t.offset_lr_mult,
            t.batch,
            t.log_every,
            t.eval_every,
            t.checkpoint_every,
            t.seed,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_assignments_comments_and_blanks() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "# architecture\nc = 16\nup_ratios = 4, 2  # two stages\n\nlr = 0.01\nuse_ccm = off\n",
        )
        .unwrap();
        assert_eq!(cfg.model.c, 16);
        assert_eq!(cfg.model.up_ratios, vec![4, 2]);
        assert_eq!(cfg.train.lr, 0.01);
        assert!(!cfg.model.use_ccm);
    }

    #[test]
    fn text_roundtrip_preserves_everything() {
        let mut cfg = RunConfig::default();
        cfg.set("c", "24").unwrap();
        cfg.set("edge_dims", "8,12").unwrap();
        cfg.set("seed", "99").unwrap();
        cfg.set("use_inception", "false").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg, "to_text followed by apply_text must be the identity");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("banana", "1").is_err(), "unknown keys must not be ignored");
        assert!(cfg.set("c", "many").is_err());
        assert!(cfg.set("use_ccm", "maybe").is_err());
        assert!(cfg.set("edge_dims", "1,2,3").is_err());
        assert!(cfg.apply_text("c: 12\n").is_err(), "colon syntax is not accepted");
    }

    #[test]
    fn cosine_schedule_decays_from_peak_toward_zero() {
        let s = LrSchedule::Cosine;
        assert_eq!(s.at(0.01, 0, 500), 0.01, "step zero runs at the peak rate");
        let rates: Vec<f64> = (0..500).map(|i| s.at(0.01, i, 500)).collect();
        assert!(
            rates.windows(2).all(|w| w[1] < w[0]),
            "cosine decay must be strictly decreasing"
        );
        let last = rates[499];
        assert!(
            last > 0.0 && last < 0.01 * 0.001,
            "final step keeps a tiny positive rate, got {last}"
        );
        assert_eq!(LrSchedule::Constant.at(0.01, 250, 500), 0.01);
        assert_eq!("cosine".parse::<LrSchedule>().unwrap(), LrSchedule::Cosine);
        assert!("linear".parse::<LrSchedule>().is_err());
        let mut cfg = RunConfig::default();
        cfg.set("lr_schedule", "cosine").unwrap();
        assert_eq!(cfg.train.lr_schedule, LrSchedule::Cosine);
        assert!(cfg.set("lr_schedule", "warmup").is_err());
    }

    #[test]
    fn validate_rejects_degenerate_training_setups() {
        let mut cfg = RunConfig::default();
        cfg.train.iters = 0;
        assert!(cfg.validate().is_err());
        cfg.train.iters = 10;
        cfg.train.lr = -1.0;
        assert!(cfg.validate().is_err());
        cfg.train.lr = 0.1;
        cfg.train.batch = 0;
        assert!(cfg.validate().is_err());
        cfg.train.batch = 1;
        cfg.validate().unwrap();
    }
}

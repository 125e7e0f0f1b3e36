use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Mlp,
    Cnn,
    Lstm,
    Gru,
    Tcn,
    Transformer,
    S4d,
    S5,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::Mlp,
        ModelKind::Cnn,
        ModelKind::Lstm,
        ModelKind::Gru,
        ModelKind::Tcn,
        ModelKind::Transformer,
        ModelKind::S4d,
        ModelKind::S5,
    ];

    pub fn is_recurrent(self) -> bool {
        matches!(self, ModelKind::Lstm | ModelKind::Gru)
    }

    /// Whether the per-step representation only depends on past frames.
    pub fn is_causal(self) -> bool {
        matches!(self, ModelKind::Lstm | ModelKind::Gru | ModelKind::Tcn | ModelKind::S4d | ModelKind::S5)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Mlp => "MLP",
            ModelKind::Cnn => "CNN",
            ModelKind::Lstm => "LSTM",
            ModelKind::Gru => "GRU",
            ModelKind::Tcn => "TCN",
            ModelKind::Transformer => "Transformer",
            ModelKind::S4d => "S4D",
            ModelKind::S5 => "S5",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown model {s:?} (MLP, CNN, LSTM, GRU, TCN, Transformer, S4D, S5)")))
    }
}

/// Architecture hyperparameters. Fields that a kind does not use are ignored
/// but still validated for range.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Width of hidden representations.
    pub hidden: usize,
    /// Number of hidden layers or blocks.
    pub depth: usize,
    pub dropout: f64,
    /// Convolution kernel size (CNN, TCN).
    pub kernel: usize,
    /// Attention heads (Transformer).
    pub heads: usize,
    /// Full state size `n`, even (S4D, S5).
    pub state: usize,
    /// Add sinusoidal positions before the first attention block.
    pub positional: bool,
}

impl ModelConfig {
    /// Full-size defaults.
    pub fn default_for(kind: ModelKind) -> Self {
        let base = ModelConfig {
            kind,
            hidden: 128,
            depth: 4,
            dropout: 0.1,
            kernel: 5,
            heads: 4,
            state: 64,
            positional: true,
        };
        match kind {
            ModelKind::Mlp => ModelConfig {
                hidden: 512,
                depth: 2,
                ..base
            },
            ModelKind::Lstm | ModelKind::Gru => ModelConfig {
                hidden: 256,
                depth: 2,
                ..base
            },
            ModelKind::Tcn => ModelConfig {
                depth: 6,
                kernel: 3,
                ..base
            },
            _ => base,
        }
    }

    /// Reduced widths for single-core desk runs.
    pub fn bench(kind: ModelKind) -> Self {
        let d = ModelConfig::default_for(kind);
        match kind {
            ModelKind::Mlp => ModelConfig { hidden: 128, ..d },
            ModelKind::Cnn => ModelConfig { hidden: 32, ..d },
            ModelKind::Lstm | ModelKind::Gru => ModelConfig { hidden: 48, ..d },
            ModelKind::Tcn => ModelConfig {
                hidden: 32,
                depth: 4,
                ..d
            },
            ModelKind::Transformer => ModelConfig {
                hidden: 32,
                depth: 2,
                ..d
            },
            ModelKind::S4d | ModelKind::S5 => ModelConfig {
                hidden: 64,
                depth: 2,
                state: 16,
                ..d
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(format!("{} config: {m}", self.kind)));
        if self.hidden == 0 {
            return err("hidden width must be at least 1".into());
        }
        if self.depth == 0 {
            return err("depth must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        match self.kind {
            ModelKind::Cnn if self.kernel % 2 == 0 => err(format!("kernel {} must be odd for a centred convolution", self.kernel)),
            ModelKind::Cnn | ModelKind::Tcn if self.kernel < 2 => err(format!("kernel {} must be at least 2", self.kernel)),
            ModelKind::Tcn if self.depth > 16 => err(format!("depth {} gives dilations beyond 2^15", self.depth)),
            ModelKind::Transformer if self.heads == 0 || self.hidden % self.heads != 0 => {
                err(format!("hidden {} must be divisible by heads {}", self.hidden, self.heads))
            }
            ModelKind::S4d | ModelKind::S5 if self.state == 0 || self.state % 2 != 0 => {
                err(format!("state size {} must be a positive even number", self.state))
            }
            _ => Ok(()),
        }
    }

    /// Frames visible to one output step of a TCN: `1 + (k−1)·Σ 2^i`.
    pub fn receptive_field(&self) -> Option<usize> {
        (self.kind == ModelKind::Tcn).then(|| 1 + (self.kernel - 1) * ((1 << self.depth) - 1))
    }

    /// `key = value` lines, one per field.
    pub fn to_text(&self) -> String {
        format!(
            "kind = {}\nhidden = {}\ndepth = {}\ndropout = {}\nkernel = {}\nheads = {}\nstate = {}\npositional = {}\n",
            self.kind, self.hidden, self.depth, self.dropout, self.kernel, self.heads, self.state, self.positional
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default_for(ModelKind::Mlp);
        let mut seen = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed config line {line:?}")))?;
            let v = v.trim();
            let num = |v: &str| v.parse::<usize>().map_err(|_| Error::Checkpoint(format!("bad value {v:?} for {}", k.trim())));
            match k.trim() {
                "kind" => cfg.kind = v.parse()?,
                "hidden" => cfg.hidden = num(v)?,
                "depth" => cfg.depth = num(v)?,
                "dropout" => cfg.dropout = v.parse().map_err(|_| Error::Checkpoint(format!("bad dropout {v:?}")))?,
                "kernel" => cfg.kernel = num(v)?,
                "heads" => cfg.heads = num(v)?,
                "state" => cfg.state = num(v)?,
                "positional" => cfg.positional = v.parse().map_err(|_| Error::Checkpoint(format!("bad flag {v:?}")))?,
                other => return Err(Error::Checkpoint(format!("unknown config key {other:?}"))),
            }
            seen += 1;
        }
        if seen != 8 {
            return Err(Error::Checkpoint(format!("config echo has {seen} keys, expected 8")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

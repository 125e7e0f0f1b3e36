//! Run configuration: a TOML file whose keys are all optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vrident::dataset::{Drift, SynthConfig};
use vrident::evaluation::windows_for_minutes;
use vrident::models::{ModelConfig, ModelKind};
use vrident::preprocess::Encoding;
use vrident::training::TrainConfig;
use vrident::{Error, Result};

/// Shown after `--help`. Every key of [`RunConfig`] must appear here.
pub const CONFIG_HELP: &str = "\
CONFIGURATION FILE (TOML, every key optional, unknown keys are rejected)

  seed = 42                  base seed; grid cell i uses seed + i
  precision = 32             float width for training and checkpoints: 32 or 64
  jobs = 1                   grid cells trained or evaluated in parallel
  out_dir = \"runs\"           checkpoints/, logs/, metrics.csv, plots and table.txt go here

  [data]
  dir = \"data\"               dataset directory holding manifest.csv and one CSV per session

  [synth]                    settings for `vrident synth`
  n_users = 8                at least 2
  minutes_per_session = 10.0
  rate_hz = 15               15 or 90
  noise_std = 0.0005         positional sensor noise, metres
  session_shift = 0.03       relative change of each user's traits between sessions
  drift_offset = 0.0         constant controller displacement added to session 2, metres
  drift_rate = 0.0           controller drift speed in session 2, metres per second

  [ingest]                   settings for `vrident ingest`
  index = \"raw/index.csv\"    user_id,session_id,rate_hz,path of the source recordings
  time_scale = 1.0           multiplier taking source timestamps to seconds
  [ingest.columns]           schema column = source column, for columns whose names differ
  t = \"time\"                 e.g.; unlisted columns are looked up under their own name

  [grid]
  models = [\"MLP\", \"CNN\", \"LSTM\", \"GRU\", \"TCN\", \"Transformer\", \"S4D\", \"S5\"]
  encodings = [\"BR\", \"BRV\", \"BRA\"]
  preset = \"bench\"           \"bench\" (reduced widths) or \"full\"
  minutes = [0.3333333333, 1.0, 2.0, 5.0]
                             test lengths of the MRR sweep; each at least one 20 s window

  [train]
  lr = 0.001
  batch_size = 64
  max_epochs = 100
  patience = 5               epochs without a strictly better validation accuracy

Flags override the file; each flag also reads VRIDENT_<NAME> (VRIDENT_CONFIG,
VRIDENT_JOBS, VRIDENT_SEED, VRIDENT_PRECISION).
";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: u32,
    pub jobs: usize,
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub synth: SynthSection,
    pub ingest: IngestSection,
    pub grid: GridSection,
    pub train: TrainSection,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dir: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_users: usize,
    pub minutes_per_session: f64,
    pub rate_hz: u32,
    pub noise_std: f64,
    pub session_shift: f64,
    pub drift_offset: f64,
    pub drift_rate: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub index: PathBuf,
    pub time_scale: f64,
    pub columns: std::collections::BTreeMap<String, String>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub models: Vec<String>,
    pub encodings: Vec<String>,
    pub preset: String,
    pub minutes: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            precision: 32,
            jobs: 1,
            out_dir: "runs".into(),
            data: DataSection::default(),
            synth: SynthSection::default(),
            ingest: IngestSection::default(),
            grid: GridSection::default(),
            train: TrainSection::default(),
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { dir: "data".into() }
    }
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthConfig::new(8, 10.0, 0);
        SynthSection {
            n_users: s.n_users,
            minutes_per_session: s.minutes_per_session,
            rate_hz: s.rate_hz,
            noise_std: s.noise_std,
            session_shift: s.session_shift,
            drift_offset: 0.0,
            drift_rate: 0.0,
        }
    }
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            index: "raw/index.csv".into(),
            time_scale: 1.0,
            columns: Default::default(),
        }
    }
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            models: ModelKind::ALL.iter().map(ToString::to_string).collect(),
            encodings: Encoding::ALL.iter().map(ToString::to_string).collect(),
            preset: "bench".into(),
            minutes: vec![1.0 / 3.0, 1.0, 2.0, 5.0],
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.lr,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
        }
    }
}

/// One (model, encoding) pair of the grid with its position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub index: usize,
    pub model: ModelKind,
    pub encoding: Encoding,
}

impl Cell {
    pub fn name(&self) -> String {
        format!("{}_{}", self.model, self.encoding)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.precision != 32 && self.precision != 64 {
            return err(format!("precision must be 32 or 64, got {}", self.precision));
        }
        if self.jobs == 0 {
            return err("jobs must be at least 1".into());
        }
        self.cells()?;
        if self.grid.minutes.is_empty() {
            return err("grid.minutes is empty".into());
        }
        for &m in &self.grid.minutes {
            windows_for_minutes(m)?;
        }
        self.model_config(ModelKind::Mlp)?;
        self.train_config(0).validate()
    }

    pub fn models(&self) -> Result<Vec<ModelKind>> {
        nonempty("grid.models", &self.grid.models)?.iter().map(|s| s.parse()).collect()
    }

    pub fn encodings(&self) -> Result<Vec<Encoding>> {
        nonempty("grid.encodings", &self.grid.encodings)?.iter().map(|s| s.parse()).collect()
    }

    /// Model-major order; the index feeds the cell seed.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let (models, encodings) = (self.models()?, self.encodings()?);
        let mut cells = Vec::new();
        for &model in &models {
            for &encoding in &encodings {
                if cells.iter().any(|c: &Cell| c.model == model && c.encoding == encoding) {
                    return Err(Error::Config(format!("grid lists {model} with {encoding} twice")));
                }
                cells.push(Cell {
                    index: cells.len(),
                    model,
                    encoding,
                });
            }
        }
        Ok(cells)
    }

    pub fn model_config(&self, kind: ModelKind) -> Result<ModelConfig> {
        match self.grid.preset.as_str() {
            "bench" => Ok(ModelConfig::bench(kind)),
            "full" => Ok(ModelConfig::default_for(kind)),
            p => Err(Error::Config(format!("grid.preset must be \"bench\" or \"full\", got {p:?}"))),
        }
    }

    pub fn cell_seed(&self, cell: &Cell) -> u64 {
        self.seed.wrapping_add(cell.index as u64)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let s = &self.synth;
        if s.n_users < 2 {
            return Err(Error::Config(format!("synth.n_users must be at least 2, got {}", s.n_users)));
        }
        if s.rate_hz != 15 && s.rate_hz != 90 {
            return Err(Error::Config(format!("synth.rate_hz must be 15 or 90, got {}", s.rate_hz)));
        }
        if !(s.minutes_per_session > 0.0) {
            return Err(Error::Config("synth.minutes_per_session must be positive".into()));
        }
        let drift = (s.drift_offset != 0.0 || s.drift_rate != 0.0).then_some(Drift {
            offset: s.drift_offset,
            rate: s.drift_rate,
        });
        Ok(SynthConfig {
            n_users: s.n_users,
            minutes_per_session: s.minutes_per_session,
            seed: self.seed,
            rate_hz: s.rate_hz,
            noise_std: s.noise_std,
            session_shift: s.session_shift,
            drift,
        })
    }

    pub fn manifest(&self) -> PathBuf {
        self.data.dir.join("manifest.csv")
    }

    pub fn checkpoint_path(&self, cell: &Cell) -> PathBuf {
        self.out_dir.join("checkpoints").join(format!("{}.ckpt", cell.name()))
    }

    pub fn log_path(&self, cell: &Cell) -> PathBuf {
        self.out_dir.join("logs").join(format!("{}.csv", cell.name()))
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.out_dir.join("metrics.csv")
    }
}

fn nonempty<'a>(key: &str, v: &'a [String]) -> Result<&'a [String]> {
    if v.is_empty() {
        Err(Error::Config(format!("{key} is empty")))
    } else {
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn help_documents_every_key() {
        let text = toml::to_string(&RunConfig::default()).unwrap();
        let mut keys = 0;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let key = match line.strip_prefix('[') {
                Some(section) => format!("[{}", section),
                None => format!("{} =", line.split(" =").next().unwrap()),
            };
            assert!(CONFIG_HELP.contains(&key), "{key} missing from the help text");
            keys += 1;
        }
        assert!(keys >= 25, "only {keys} keys serialised");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sead = 1").is_err());
        assert!(RunConfig::parse("[train]\nlearning_rate = 0.1").is_err());
    }

    #[test]
    fn cells_are_model_major() {
        let c = RunConfig::parse("[grid]\nmodels = [\"CNN\", \"S4D\"]\nencodings = [\"BR\", \"BRA\"]").unwrap();
        let cells = c.cells().unwrap();
        let names: Vec<String> = cells.iter().map(Cell::name).collect();
        assert_eq!(names, ["CNN_BR", "CNN_BRA", "S4D_BR", "S4D_BRA"]);
        assert_eq!(c.cell_seed(&cells[3]), 45);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in [
            "precision = 16",
            "jobs = 0",
            "[grid]\nminutes = []",
            "[grid]\nminutes = [0.1]",
            "[grid]\nmodels = [\"RNN\"]",
            "[grid]\nmodels = [\"CNN\", \"CNN\"]",
            "[grid]\npreset = \"huge\"",
            "[train]\nbatch_size = 0",
        ] {
            assert!(matches!(RunConfig::parse(text).unwrap().validate(), Err(Error::Config(_))), "{text}");
        }
        let one = RunConfig::parse("[synth]\nn_users = 1").unwrap();
        assert!(matches!(one.synth_config(), Err(Error::Config(_))));
    }
}

//! Flat `key = value` experiment files.
//!
//! Blank lines and `#` comments are ignored. Every key is checked against
//! the chosen track, so a misspelt or misplaced key is an error rather than
//! a silently ignored setting.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clipnet::rl::{DqnConfig, EpsilonSchedule, DQN_SCHEDULE};
use clipnet::run::NetSpec;
use clipnet::supervised::{gen_blobs, gen_regression, load_csv, CsvSchema, Dataset, TrainConfig};
use clipnet::{ActivationKind, ClipConfig, GradMode, HeadKind, Layout, StepSchedule};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Track {
    Regress,
    Classify,
    Dqn,
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Track::Regress => "regress",
            Track::Classify => "classify",
            Track::Dqn => "dqn",
        })
    }
}

impl FromStr for Track {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "regress" => Ok(Track::Regress),
            "classify" => Ok(Track::Classify),
            "dqn" => Ok(Track::Dqn),
            _ => Err(CliError::Config(format!(
                "unknown track '{s}' (expected regress, classify or dqn)"
            ))),
        }
    }
}

/// Where supervised data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        n: usize,
        dim: usize,
        /// Noise SD for regression, cluster separation for classification.
        param: f64,
        seed: u64,
    },
    Csv {
        path: PathBuf,
        classes: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub track: Track,
    pub seeds: Vec<u64>,
    pub hidden: Vec<usize>,
    pub activations: Vec<ActivationKind>,
    /// `None` disables clipping.
    pub lambda: Option<f64>,
    pub schedule: StepSchedule,
    pub init_radius: Option<f64>,
    pub moments: Vec<u32>,
    pub tail_multiples: Vec<f64>,
    pub out_dir: Option<PathBuf>,
    pub data: Option<DataSource>,
    pub train: TrainConfig,
    pub dqn: DqnConfig,
}

const COMMON_KEYS: &[&str] = &[
    "track",
    "seeds",
    "hidden",
    "activation",
    "lambda",
    "schedule",
    "init_radius",
    "moments",
    "tail_multiples",
    "out_dir",
    "batch_size",
    "eval_every",
    "telemetry_stride",
    "grad_mode",
];
const SUPERVISED_KEYS: &[&str] = &[
    "data",
    "n",
    "dim",
    "classes",
    "data_seed",
    "epochs",
    "train_fraction",
    "max_steps",
];
const DQN_KEYS: &[&str] = &[
    "gamma",
    "target",
    "eval_episodes",
    "max_episode_steps",
    "total_steps",
    "replay_capacity",
    "learning_starts",
    "eps_start",
    "eps_end",
    "eps_anneal",
    "state_bound",
    "obs_scale",
];

fn allowed(track: Track, key: &str) -> bool {
    COMMON_KEYS.contains(&key)
        || match track {
            Track::Regress => SUPERVISED_KEYS.contains(&key) || key == "noise_sd",
            Track::Classify => SUPERVISED_KEYS.contains(&key) || key == "separation",
            Track::Dqn => DQN_KEYS.contains(&key),
        }
}

fn bad(key: &str, v: &str, why: impl fmt::Display) -> CliError {
    CliError::Config(format!("{key} = {v}: {why}"))
}

fn num<T: FromStr>(key: &str, v: &str) -> CliResult<T>
where
    T::Err: fmt::Display,
{
    v.parse().map_err(|e| bad(key, v, e))
}

fn list<T: FromStr>(key: &str, v: &str) -> CliResult<Vec<T>>
where
    T::Err: fmt::Display,
{
    v.split(',').map(|p| num(key, p.trim())).collect()
}

/// `0,1,2` or a half-open range `0..5`.
fn seeds(v: &str) -> CliResult<Vec<u64>> {
    let out = match v.split_once("..") {
        Some((a, b)) => {
            let (a, b): (u64, u64) = (num("seeds", a.trim())?, num("seeds", b.trim())?);
            (a..b).collect()
        }
        None => list("seeds", v)?,
    };
    if out.is_empty() {
        return Err(bad("seeds", v, "no seeds"));
    }
    let mut sorted = out.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(bad("seeds", v, "duplicate seed"));
    }
    Ok(out)
}

fn grad_mode(v: &str) -> CliResult<GradMode> {
    match v {
        "standard" => Ok(GradMode::Standard),
        "alternate" => Ok(GradMode::Alternate),
        _ => Err(bad("grad_mode", v, "expected standard or alternate")),
    }
}

fn grad_mode_tag(m: GradMode) -> &'static str {
    match m {
        GradMode::Standard => "standard",
        GradMode::Alternate => "alternate",
    }
}

fn core<'a>(key: &'a str, v: &'a str) -> impl FnOnce(clipnet::Error) -> CliError + 'a {
    move |e| bad(key, v, e)
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Splits text into ordered `(line, key, value)` entries.
fn entries(text: &str) -> CliResult<Vec<(usize, String, String)>> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!(
                "line {}: expected 'key = value', got '{line}'",
                i + 1
            ))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(CliError::Config(format!(
                "line {}: empty key or value",
                i + 1
            )));
        }
        if out.iter().any(|(_, key, _)| key == k) {
            return Err(CliError::Config(format!(
                "line {}: duplicate key '{k}'",
                i + 1
            )));
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Track defaults before any key is applied.
    pub fn defaults(track: Track) -> Self {
        let tgelu = ActivationKind::tgelu(-2.0, 2.0).expect("valid thresholds");
        let (hidden, data) = match track {
            Track::Regress => (
                vec![16],
                Some(DataSource::Synthetic {
                    n: 1000,
                    dim: 4,
                    param: 0.1,
                    seed: 0,
                }),
            ),
            Track::Classify => (
                vec![16],
                Some(DataSource::Synthetic {
                    n: 4000,
                    dim: 16,
                    param: 4.0,
                    seed: 0,
                }),
            ),
            Track::Dqn => (vec![64, 64], None),
        };
        Self {
            track,
            seeds: vec![0],
            activations: vec![tgelu; hidden.len()],
            hidden,
            lambda: match track {
                Track::Classify => None,
                _ => Some(1.0),
            },
            schedule: match track {
                Track::Dqn => DQN_SCHEDULE,
                _ => StepSchedule::default(),
            },
            init_radius: None,
            moments: vec![1, 2],
            tail_multiples: vec![0.5, 1.0, 2.0],
            out_dir: None,
            data,
            train: TrainConfig::default(),
            dqn: DqnConfig::default(),
        }
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        Self::parse_in(text, None)
    }

    /// Reads a config file; relative data paths resolve against its folder.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_in(&text, path.parent())
    }

    fn parse_in(text: &str, base: Option<&Path>) -> CliResult<Self> {
        let entries = entries(text)?;
        let track: Track = entries
            .iter()
            .find(|(_, k, _)| k == "track")
            .ok_or_else(|| CliError::Config("missing required key 'track'".into()))?
            .2
            .parse()?;
        let mut c = Self::defaults(track);
        for (line, k, _) in &entries {
            if !allowed(track, k) {
                return Err(CliError::Config(format!(
                    "line {line}: unknown key '{k}' for track {track}"
                )));
            }
        }
        let get = |key: &str| {
            entries
                .iter()
                .find(|(_, k, _)| k == key)
                .map(|(_, _, v)| v.as_str())
        };

        if let Some(v) = get("seeds") {
            c.seeds = seeds(v)?;
        }
        if let Some(v) = get("hidden") {
            c.hidden = list("hidden", v)?;
        }
        c.activations = match get("activation") {
            Some(v) => v
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<ActivationKind>()
                        .map_err(core("activation", v))
                })
                .collect::<CliResult<_>>()?,
            None => vec![c.activations[0]],
        };
        if c.activations.len() == 1 {
            c.activations = vec![c.activations[0]; c.hidden.len()];
        }
        if let Some(v) = get("lambda") {
            c.lambda = match v {
                "none" => None,
                _ => Some(num("lambda", v)?),
            };
        }
        if let Some(v) = get("schedule") {
            c.schedule = v.parse().map_err(core("schedule", v))?;
        }
        if let Some(v) = get("init_radius") {
            c.init_radius = Some(num("init_radius", v)?);
        }
        if let Some(v) = get("moments") {
            c.moments = list("moments", v)?;
        }
        if let Some(v) = get("tail_multiples") {
            c.tail_multiples = list("tail_multiples", v)?;
        }
        if let Some(v) = get("out_dir") {
            c.out_dir = Some(PathBuf::from(v));
        }
        let dqn = track == Track::Dqn;
        if let Some(v) = get("grad_mode") {
            let m = grad_mode(v)?;
            if dqn {
                c.dqn.grad_mode = m
            } else {
                c.train.grad_mode = m
            }
        }
        if let Some(v) = get("batch_size") {
            let b = num("batch_size", v)?;
            if dqn {
                c.dqn.batch_size = b
            } else {
                c.train.batch_size = b
            }
        }
        if let Some(v) = get("telemetry_stride") {
            let t = num("telemetry_stride", v)?;
            if dqn {
                c.dqn.telemetry_stride = t
            } else {
                c.train.telemetry_stride = t
            }
        }
        if let Some(v) = get("eval_every") {
            if dqn {
                c.dqn.eval_every = num("eval_every", v)?;
            } else {
                c.train.eval_every = num("eval_every", v)?;
            }
        }

        match track {
            Track::Regress | Track::Classify => c.apply_supervised(&get, base)?,
            Track::Dqn => c.apply_dqn(&get)?,
        }
        c.validate()?;
        Ok(c)
    }

    fn apply_supervised<'a>(
        &mut self,
        get: &impl Fn(&str) -> Option<&'a str>,
        base: Option<&Path>,
    ) -> CliResult<()> {
        let param_key = match self.track {
            Track::Regress => "noise_sd",
            _ => "separation",
        };
        let source = get("data").unwrap_or("synthetic");
        self.data = Some(if source == "synthetic" {
            if get("classes").is_some() {
                return Err(CliError::Config("classes only applies to csv data".into()));
            }
            let Some(DataSource::Synthetic {
                n,
                dim,
                param,
                seed,
            }) = self.data.clone()
            else {
                unreachable!("supervised defaults are synthetic")
            };
            DataSource::Synthetic {
                n: get("n").map_or(Ok(n), |v| num("n", v))?,
                dim: get("dim").map_or(Ok(dim), |v| num("dim", v))?,
                param: get(param_key).map_or(Ok(param), |v| num(param_key, v))?,
                seed: get("data_seed").map_or(Ok(seed), |v| num("data_seed", v))?,
            }
        } else {
            for k in ["n", "dim", "data_seed", param_key] {
                if get(k).is_some() {
                    return Err(CliError::Config(format!(
                        "{k} only applies to synthetic data"
                    )));
                }
            }
            if self.track == Track::Regress && get("classes").is_some() {
                return Err(CliError::Config(
                    "classes does not apply to regression".into(),
                ));
            }
            let path = PathBuf::from(source);
            let path = match base {
                Some(b) if path.is_relative() => b.join(path),
                _ => path,
            };
            DataSource::Csv {
                path,
                classes: get("classes").map(|v| num("classes", v)).transpose()?,
            }
        });
        if let Some(v) = get("epochs") {
            self.train.epochs = num("epochs", v)?;
        }
        if let Some(v) = get("train_fraction") {
            self.train.train_fraction = num("train_fraction", v)?;
        }
        if let Some(v) = get("max_steps") {
            self.train.max_steps = Some(num("max_steps", v)?);
        }
        Ok(())
    }

    fn apply_dqn<'a>(&mut self, get: &impl Fn(&str) -> Option<&'a str>) -> CliResult<()> {
        let d = &mut self.dqn;
        if let Some(v) = get("gamma") {
            d.gamma = num("gamma", v)?;
        }
        if let Some(v) = get("target") {
            d.target = v.parse().map_err(core("target", v))?;
        }
        if let Some(v) = get("eval_episodes") {
            d.eval_episodes = num("eval_episodes", v)?;
        }
        if let Some(v) = get("max_episode_steps") {
            d.max_episode_steps = num("max_episode_steps", v)?;
        }
        if let Some(v) = get("total_steps") {
            d.total_steps = num("total_steps", v)?;
        }
        if let Some(v) = get("replay_capacity") {
            d.replay_capacity = num("replay_capacity", v)?;
        }
        if let Some(v) = get("learning_starts") {
            d.learning_starts = num("learning_starts", v)?;
        }
        let mut eps: EpsilonSchedule = d.epsilon;
        if let Some(v) = get("eps_start") {
            eps.eps_start = num("eps_start", v)?;
        }
        if let Some(v) = get("eps_end") {
            eps.eps_end = num("eps_end", v)?;
        }
        if let Some(v) = get("eps_anneal") {
            eps.anneal_steps = num("eps_anneal", v)?;
        }
        d.epsilon = eps;
        if let Some(v) = get("state_bound") {
            d.state_bound = num("state_bound", v)?;
        }
        if let Some(v) = get("obs_scale") {
            let s: Vec<f64> = list("obs_scale", v)?;
            d.obs_scale = s
                .try_into()
                .map_err(|_| bad("obs_scale", v, "expected 4 values"))?;
        }
        Ok(())
    }

    fn validate(&self) -> CliResult<()> {
        let cfg = |e: clipnet::Error| CliError::Config(e.to_string());
        if self.hidden.is_empty() {
            return Err(CliError::Config("hidden needs at least one layer".into()));
        }
        if self.activations.len() != self.hidden.len() {
            return Err(CliError::Config(format!(
                "{} activations for {} hidden layers",
                self.activations.len(),
                self.hidden.len()
            )));
        }
        if let Some(l) = self.lambda {
            ClipConfig::new(l).map_err(cfg)?;
        }
        if self.track == Track::Classify && self.lambda.is_some() {
            return Err(CliError::Config(
                "classification trains with plain SGD; set lambda = none or omit it".into(),
            ));
        }
        if let Some(r) = self.init_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(CliError::Config(format!(
                    "init_radius must be positive, got {r}"
                )));
            }
        }
        if self.moments.contains(&0) {
            return Err(CliError::Config("moment orders must be at least 1".into()));
        }
        if self
            .tail_multiples
            .iter()
            .any(|m| !(m.is_finite() && *m > 0.0))
        {
            return Err(CliError::Config("tail multiples must be positive".into()));
        }
        self.schedule.validate().map_err(cfg)?;
        match self.track {
            Track::Dqn => self.dqn.validate().map_err(cfg)?,
            _ => {
                self.train.validate().map_err(cfg)?;
                if let Some(DataSource::Synthetic { n, dim, param, .. }) = &self.data {
                    if *n == 0 || *dim == 0 || !(param.is_finite() && *param >= 0.0) {
                        return Err(CliError::Config(
                            "synthetic data needs n, dim >= 1 and a finite, non-negative parameter"
                                .into(),
                        ));
                    }
                    if self.track == Track::Classify && n % 2 != 0 {
                        return Err(CliError::Config(format!(
                            "blob data needs an even n, got {n}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Materializes the dataset of a supervised track.
    pub fn dataset(&self) -> CliResult<Dataset> {
        let data = match &self.data {
            Some(DataSource::Synthetic {
                n,
                dim,
                param,
                seed,
            }) => match self.track {
                Track::Regress => gen_regression(*n, *dim, *param, *seed),
                _ => gen_blobs(*n, *dim, *param, *seed),
            },
            Some(DataSource::Csv { path, classes }) => {
                let schema = match self.track {
                    Track::Regress => CsvSchema::Regression,
                    _ => CsvSchema::Classification { classes: *classes },
                };
                load_csv(path, schema)
            }
            None => {
                return Err(CliError::Config(format!(
                    "track {} has no dataset",
                    self.track
                )))
            }
        };
        data.map_err(|e| CliError::Config(format!("data: {e}")))
    }

    /// Network and optimizer settings; `input_dim` and `head` come from the
    /// track's data.
    pub fn net_spec(&self, input_dim: usize, head: HeadKind) -> CliResult<NetSpec> {
        let layout = Layout::new(input_dim, &self.hidden, &self.activations, head)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let clip = self
            .lambda
            .map(ClipConfig::new)
            .transpose()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let mut spec = NetSpec::new(layout, self.schedule, clip);
        if let Some(r) = self.init_radius {
            spec.init_radius = r;
        }
        Ok(spec)
    }

    /// Every setting with defaults resolved, in file order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut p: Vec<(&'static str, String)> = vec![
            ("track", self.track.to_string()),
            ("seeds", join(&self.seeds)),
            ("hidden", join(&self.hidden)),
            ("activation", join(&self.activations)),
            (
                "lambda",
                self.lambda.map_or("none".into(), |l| l.to_string()),
            ),
            ("schedule", self.schedule.to_string()),
        ];
        if let Some(r) = self.init_radius {
            p.push(("init_radius", r.to_string()));
        }
        p.push(("moments", join(&self.moments)));
        p.push(("tail_multiples", join(&self.tail_multiples)));
        if let Some(o) = &self.out_dir {
            p.push(("out_dir", o.display().to_string()));
        }
        match self.track {
            Track::Dqn => {
                let d = &self.dqn;
                p.extend([
                    ("batch_size", d.batch_size.to_string()),
                    ("eval_every", d.eval_every.to_string()),
                    ("telemetry_stride", d.telemetry_stride.to_string()),
                    ("grad_mode", grad_mode_tag(d.grad_mode).to_string()),
                    ("gamma", d.gamma.to_string()),
                    ("target", d.target.to_string()),
                    ("eval_episodes", d.eval_episodes.to_string()),
                    ("max_episode_steps", d.max_episode_steps.to_string()),
                    ("total_steps", d.total_steps.to_string()),
                    ("replay_capacity", d.replay_capacity.to_string()),
                    ("learning_starts", d.learning_starts.to_string()),
                    ("eps_start", d.epsilon.eps_start.to_string()),
                    ("eps_end", d.epsilon.eps_end.to_string()),
                    ("eps_anneal", d.epsilon.anneal_steps.to_string()),
                    ("state_bound", d.state_bound.to_string()),
                    ("obs_scale", join(&d.obs_scale)),
                ]);
            }
            _ => {
                let t = &self.train;
                p.extend([
                    ("batch_size", t.batch_size.to_string()),
                    ("eval_every", t.eval_every.to_string()),
                    ("telemetry_stride", t.telemetry_stride.to_string()),
                    ("grad_mode", grad_mode_tag(t.grad_mode).to_string()),
                ]);
                match &self.data {
                    Some(DataSource::Synthetic {
                        n,
                        dim,
                        param,
                        seed,
                    }) => {
                        let key = if self.track == Track::Regress {
                            "noise_sd"
                        } else {
                            "separation"
                        };
                        p.extend([
                            ("data", "synthetic".to_string()),
                            ("n", n.to_string()),
                            ("dim", dim.to_string()),
                            (key, param.to_string()),
                            ("data_seed", seed.to_string()),
                        ]);
                    }
                    Some(DataSource::Csv { path, classes }) => {
                        p.push(("data", path.display().to_string()));
                        if let Some(c) = classes {
                            p.push(("classes", c.to_string()));
                        }
                    }
                    None => {}
                }
                p.push(("epochs", t.epochs.to_string()));
                p.push(("train_fraction", t.train_fraction.to_string()));
                if let Some(m) = t.max_steps {
                    p.push(("max_steps", m.to_string()));
                }
            }
        }
        p
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    /// The effective config in file syntax; parsing it gives `self` back.
    pub fn to_text(&self) -> String {
        self.to_pairs()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

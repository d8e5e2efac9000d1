use std::fmt::Write as _;
use std::path::PathBuf;

use crate::agent::{AgentConfig, CriticChoice};
use crate::error::{Error, Result};
use crate::losses::{LossMode, PenaltyTarget, QuantileSpec};
use crate::mdp::EnvSpec;
use crate::targets::{TargetKind, TargetSpec};

/// Training method; each maps to one target estimator and critic loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Her,
    Mher,
    MherLambda,
    TmherLambda,
    QrMher,
    BrMher,
    IsMher,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Her,
        Method::Mher,
        Method::MherLambda,
        Method::TmherLambda,
        Method::QrMher,
        Method::BrMher,
        Method::IsMher,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Her => "her",
            Method::Mher => "mher",
            Method::MherLambda => "mher_lambda",
            Method::TmherLambda => "tmher_lambda",
            Method::QrMher => "qr_mher",
            Method::BrMher => "br_mher",
            Method::IsMher => "is_mher",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn target_kind(self) -> TargetKind {
        match self {
            Method::Her => TargetKind::Her,
            Method::Mher => TargetKind::Mher,
            Method::MherLambda | Method::QrMher => TargetKind::MherLambda,
            Method::TmherLambda | Method::BrMher => TargetKind::TmherLambda,
            Method::IsMher => TargetKind::Retrace,
        }
    }

    pub fn loss_mode(self) -> LossMode {
        match self {
            Method::QrMher | Method::BrMher => LossMode::Quantile,
            _ => LossMode::HuberMean,
        }
    }
}

/// Task names: `grid<N>` for an `N x N` grid, or `point`.
pub fn task_env(task: &str) -> Option<EnvSpec<f64>> {
    if task == "point" {
        return Some(EnvSpec::point());
    }
    let size: usize = task.strip_prefix("grid")?.parse().ok()?;
    (size >= 2).then(|| EnvSpec::grid(size))
}

/// A validated experiment description.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: String,
    pub method: Method,
    pub n: usize,
    pub lambda: f64,
    pub rho: f64,
    pub kappa: f64,
    /// Overrides the `1 - 1/T` default.
    pub gamma: Option<f64>,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub cycles_per_epoch: usize,
    pub episodes_per_cycle: usize,
    pub batches_per_cycle: usize,
    pub eval_episodes: usize,
    pub warmup_episodes: usize,
    /// Record wall-clock seconds; when off the column is left empty and runs
    /// are byte-for-byte reproducible.
    pub wall_clock: bool,
    /// Critic used for the TD-error and advantage profiles.
    pub profile_critic: CriticChoice,
    /// What the quadratic action penalty acts on.
    pub penalty_on: PenaltyTarget,
}

/// Horizon used when a multi-step method does not set `n`.
pub const DEFAULT_N: usize = 3;

const KEYS: &[&str] = &[
    "task",
    "method",
    "n",
    "lambda",
    "rho",
    "kappa",
    "gamma",
    "epochs",
    "seeds",
    "output_dir",
    "hidden",
    "batch_size",
    "cycles_per_epoch",
    "episodes_per_cycle",
    "batches_per_cycle",
    "eval_episodes",
    "warmup_episodes",
    "wall_clock",
    "profile_critic",
    "penalty_on",
];

impl ExperimentConfig {
    /// Fully resolved configuration as `key=value` lines; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let join = |v: &[String]| v.join(",");
        let _ = writeln!(out, "task={}", self.task);
        let _ = writeln!(out, "method={}", self.method.name());
        let _ = writeln!(out, "n={}", self.n);
        let _ = writeln!(out, "lambda={}", self.lambda);
        let _ = writeln!(out, "rho={}", self.rho);
        let _ = writeln!(out, "kappa={}", self.kappa);
        if let Some(g) = self.gamma {
            let _ = writeln!(out, "gamma={g}");
        }
        let _ = writeln!(out, "epochs={}", self.epochs);
        let _ = writeln!(
            out,
            "seeds={}",
            join(&self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>())
        );
        if let Some(d) = &self.output_dir {
            let _ = writeln!(out, "output_dir={}", d.display());
        }
        let _ = writeln!(
            out,
            "hidden={}",
            join(&self.hidden.iter().map(|s| s.to_string()).collect::<Vec<_>>())
        );
        let _ = writeln!(out, "batch_size={}", self.batch_size);
        let _ = writeln!(out, "cycles_per_epoch={}", self.cycles_per_epoch);
        let _ = writeln!(out, "episodes_per_cycle={}", self.episodes_per_cycle);
        let _ = writeln!(out, "batches_per_cycle={}", self.batches_per_cycle);
        let _ = writeln!(out, "eval_episodes={}", self.eval_episodes);
        let _ = writeln!(out, "warmup_episodes={}", self.warmup_episodes);
        let _ = writeln!(out, "wall_clock={}", self.wall_clock);
        let _ = writeln!(
            out,
            "profile_critic={}",
            match self.profile_critic {
                CriticChoice::Live => "live",
                CriticChoice::Target => "target",
            }
        );
        let _ = writeln!(
            out,
            "penalty_on={}",
            match self.penalty_on {
                PenaltyTarget::PreActivation => "pre_activation",
                PenaltyTarget::Action => "action",
            }
        );
        out
    }

    pub fn env(&self) -> EnvSpec<f64> {
        task_env(&self.task).expect("validated task")
    }

    /// Run directory name below the output root: `<method>_<task>_n<n>`.
    pub fn run_name(&self) -> String {
        format!("{}_{}_n{}", self.method.name(), self.task, self.n)
    }

    pub fn target_spec(&self) -> TargetSpec<f64> {
        TargetSpec {
            kind: self.method.target_kind(),
            n: self.n,
            lambda: self.lambda,
        }
    }

    /// Trainer configuration for one seed.
    pub fn agent_config(&self, seed: u64) -> AgentConfig<f64> {
        let env = self.env();
        let mut c = AgentConfig::for_env(&env);
        if let Some(g) = self.gamma {
            c.gamma = g;
        }
        c.hidden = self.hidden.clone();
        c.batch_size = self.batch_size;
        c.cycles_per_epoch = self.cycles_per_epoch;
        c.episodes_per_cycle = self.episodes_per_cycle;
        c.batches_per_cycle = self.batches_per_cycle;
        c.eval_episodes = self.eval_episodes;
        c.warmup_episodes = self.warmup_episodes;
        c.target = self.target_spec();
        c.loss = self.method.loss_mode();
        c.quantile = QuantileSpec {
            rho: self.rho,
            kappa: self.kappa,
        };
        c.penalty_on = self.penalty_on;
        c.seed = seed;
        c
    }
}

fn parse_err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse { line, msg: msg.into() })
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid value {v:?} for {key}"),
    })
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|x| parse_num(line, key, x.trim())).collect()
}

/// Parses the flat `key=value` format: one key per line, `#` starts a
/// comment, blank lines are ignored. Unset keys take their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut task: Option<(usize, String)> = None;
    let mut method: Option<(usize, Method)> = None;
    let mut n: Option<(usize, usize)> = None;
    let mut cfg = ExperimentConfig {
        task: "grid10".into(),
        method: Method::BrMher,
        n: 0,
        lambda: 0.7,
        rho: 0.75,
        kappa: 10.0,
        gamma: None,
        epochs: 50,
        seeds: vec![111, 222, 333, 444, 555],
        output_dir: None,
        hidden: vec![],
        batch_size: 1024,
        cycles_per_epoch: 0,
        episodes_per_cycle: 12,
        batches_per_cycle: 40,
        eval_episodes: 120,
        warmup_episodes: 100,
        wall_clock: true,
        profile_critic: CriticChoice::Live,
        penalty_on: PenaltyTarget::PreActivation,
    };
    let mut seen = std::collections::HashSet::new();
    let mut lines_of = std::collections::HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return parse_err(line, format!("expected key=value, got {content:?}"));
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return parse_err(line, format!("unknown key {key:?}"));
        }
        if !seen.insert(key.to_string()) {
            return parse_err(line, format!("duplicate key {key:?}"));
        }
        lines_of.insert(key, line);
        match key {
            "task" => {
                if task_env(value).is_none() {
                    return parse_err(line, format!("unknown task {value:?}; expected grid<N> or point"));
                }
                task = Some((line, value.to_string()));
            }
            "method" => match Method::parse(value) {
                Some(m) => method = Some((line, m)),
                None => return parse_err(line, format!("unknown method {value:?}")),
            },
            "n" => n = Some((line, parse_num(line, key, value)?)),
            "lambda" => cfg.lambda = parse_num(line, key, value)?,
            "rho" => cfg.rho = parse_num(line, key, value)?,
            "kappa" => cfg.kappa = parse_num(line, key, value)?,
            "gamma" => cfg.gamma = Some(parse_num(line, key, value)?),
            "epochs" => cfg.epochs = parse_num(line, key, value)?,
            "seeds" => cfg.seeds = parse_list(line, key, value)?,
            "output_dir" => cfg.output_dir = Some(PathBuf::from(value)),
            "hidden" => cfg.hidden = parse_list(line, key, value)?,
            "batch_size" => cfg.batch_size = parse_num(line, key, value)?,
            "cycles_per_epoch" => cfg.cycles_per_epoch = parse_num(line, key, value)?,
            "episodes_per_cycle" => cfg.episodes_per_cycle = parse_num(line, key, value)?,
            "batches_per_cycle" => cfg.batches_per_cycle = parse_num(line, key, value)?,
            "eval_episodes" => cfg.eval_episodes = parse_num(line, key, value)?,
            "warmup_episodes" => cfg.warmup_episodes = parse_num(line, key, value)?,
            "wall_clock" => cfg.wall_clock = parse_num(line, key, value)?,
            "profile_critic" => {
                cfg.profile_critic = match value {
                    "live" => CriticChoice::Live,
                    "target" => CriticChoice::Target,
                    _ => return parse_err(line, format!("profile_critic must be live or target, got {value:?}")),
                }
            }
            "penalty_on" => {
                cfg.penalty_on = match value {
                    "pre_activation" => PenaltyTarget::PreActivation,
                    "action" => PenaltyTarget::Action,
                    _ => {
                        return parse_err(
                            line,
                            format!("penalty_on must be pre_activation or action, got {value:?}"),
                        )
                    }
                }
            }
            _ => unreachable!("key list checked above"),
        }
    }

    if let Some((_, t)) = task {
        cfg.task = t;
    }
    if let Some((_, m)) = method {
        cfg.method = m;
    }
    let env = cfg.env();
    let method_line = method.map_or(0, |(l, _)| l);
    cfg.n = match (cfg.method, n) {
        (Method::Her, Some((line, k))) if k != 1 => {
            return parse_err(line, format!("method her fixes n=1, got n={k}"));
        }
        (Method::Her, _) => 1,
        (_, Some((line, 0))) => return parse_err(line, "n must be at least 1"),
        (_, Some((_, k))) => k,
        (_, None) => DEFAULT_N,
    };
    if cfg.method == Method::IsMher && !env.is_discrete() {
        return parse_err(method_line, "is_mher needs a discrete-action task");
    }
    let line = |k: &str| lines_of.get(k).copied().unwrap_or(0);
    if !(0.0..=1.0).contains(&cfg.lambda) {
        return parse_err(line("lambda"), "lambda must lie in [0, 1]");
    }
    if !(cfg.rho > 0.0 && cfg.rho < 1.0) {
        return parse_err(line("rho"), "rho must lie in (0, 1)");
    }
    if !(cfg.kappa > 0.0) {
        return parse_err(line("kappa"), "kappa must be positive");
    }
    if let Some(g) = cfg.gamma {
        if !(g > 0.0 && g < 1.0) {
            return parse_err(line("gamma"), "gamma must lie in (0, 1)");
        }
    }
    if cfg.seeds.is_empty() {
        return parse_err(line("seeds"), "at least one seed is required");
    }
    let mut uniq = cfg.seeds.clone();
    uniq.sort_unstable();
    uniq.dedup();
    if uniq.len() != cfg.seeds.len() {
        return parse_err(line("seeds"), "seeds must be distinct");
    }
    for (k, v) in [
        ("epochs", cfg.epochs),
        ("batch_size", cfg.batch_size),
        ("episodes_per_cycle", cfg.episodes_per_cycle),
        ("batches_per_cycle", cfg.batches_per_cycle),
        ("eval_episodes", cfg.eval_episodes),
    ] {
        if v == 0 {
            return parse_err(line(k), format!("{k} must be positive"));
        }
    }
    if lines_of.contains_key("cycles_per_epoch") && cfg.cycles_per_epoch == 0 {
        return parse_err(line("cycles_per_epoch"), "cycles_per_epoch must be positive");
    }
    if cfg.hidden.contains(&0) {
        return parse_err(line("hidden"), "hidden widths must be positive");
    }
    let defaults = AgentConfig::for_env(&env);
    if cfg.hidden.is_empty() {
        cfg.hidden = defaults.hidden;
    }
    if cfg.cycles_per_epoch == 0 {
        cfg.cycles_per_epoch = defaults.cycles_per_epoch;
    }
    if let Err(e) = cfg.agent_config(cfg.seeds[0]).validate(&env) {
        return Err(Error::Config(e.to_string()));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_for_br_mher() {
        let c = parse_config("method=br_mher\ntask=grid10\nn=10").unwrap();
        assert_eq!(c.method, Method::BrMher);
        assert_eq!(c.n, 10);
        assert_eq!((c.lambda, c.rho, c.kappa), (0.7, 0.75, 10.0));
        assert_eq!(c.seeds, vec![111, 222, 333, 444, 555]);
        assert_eq!(c.epochs, 50);
        assert_eq!(c.hidden, vec![512; 3]);
        assert_eq!(c.cycles_per_epoch, 10);
        let a = c.agent_config(111);
        assert!((a.gamma - (1.0 - 1.0 / 30.0)).abs() < 1e-15);
        assert_eq!(a.target.kind, TargetKind::TmherLambda);
        assert_eq!(a.loss, LossMode::Quantile);
    }

    #[test]
    fn her_fixes_n() {
        match parse_config("method=her\nn=5") {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("n=1"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert_eq!(parse_config("method=her").unwrap().n, 1);
    }

    #[test]
    fn gamma_override() {
        let c = parse_config("gamma=0.9").unwrap();
        assert_eq!(c.agent_config(1).gamma, 0.9);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_config("# comment\n\nmethod=mher\nbogus=1").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 4, .. }), "{e}");
        let e = parse_config("task=grid10\nmethod=is_mher\ntask=point").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = parse_config("task=point\nmethod=is_mher").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = parse_config("method=mher\nn=abc").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
    }

    #[test]
    fn method_mapping_is_total() {
        use LossMode::*;
        use TargetKind::*;
        let want = [
            (Method::Her, Her, HuberMean),
            (Method::Mher, Mher, HuberMean),
            (Method::MherLambda, MherLambda, HuberMean),
            (Method::TmherLambda, TmherLambda, HuberMean),
            (Method::QrMher, MherLambda, Quantile),
            (Method::BrMher, TmherLambda, Quantile),
            (Method::IsMher, Retrace, HuberMean),
        ];
        for (m, k, l) in want {
            assert_eq!((m.target_kind(), m.loss_mode()), (k, l), "{}", m.name());
            assert_eq!(Method::parse(m.name()), Some(m));
        }
    }

    #[test]
    fn resolved_text_round_trips() {
        let c = parse_config("method=mher_lambda\ntask=grid5\nn=4\nseeds=1,2\nhidden=32,32\nwall_clock=false\ngamma=0.95\npenalty_on=action").unwrap();
        assert_eq!(parse_config(&c.to_text()).unwrap(), c);
    }
}

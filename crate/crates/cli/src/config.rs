//! INI-style scenario files.
//!
//! ```text
//! [graph]
//! N = 5
//! edge = 1 2        # optional third field: weight
//! [agents]
//! ts = 0.1
//! mass = 1          # every agent
//! u_max = 1
//! agent = 3 2 0.5   # agent 3: mass 2, u_max 0.5
//! [mpc]
//! T = 10
//! [sim]
//! seed = 42
//! ```
//!
//! Agents are numbered from 1. Everything after `#` or `;` is a comment.

use std::collections::BTreeSet;
use std::path::PathBuf;

use dmpc::{InfoGraph, LtiAgent, Scenario, SimConfig};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    At { line: usize, message: String },
    #[error("{0}")]
    Global(String),
}

fn at(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::At {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputFormats {
    pub csv: bool,
    pub json: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub num_agents: usize,
    /// 0-based endpoints.
    pub edges: Vec<(usize, usize, f64)>,
    pub ts: f64,
    pub masses: Vec<f64>,
    pub u_max: Vec<f64>,
    pub sim: SimConfig,
    pub output_dir: PathBuf,
    pub formats: OutputFormats,
    /// Keys that were not given and took their default value.
    pub defaulted: BTreeSet<String>,
}

const DEFAULTABLE: &[&str] = &[
    "agents.ts",
    "agents.mass",
    "agents.u_max",
    "mpc.T",
    "mpc.rho",
    "mpc.admm_iters",
    "mpc.warm_start",
    "mpc.solver",
    "mpc.apply_averaged_input",
    "mpc.tolerance",
    "mpc.qp_tolerance",
    "mpc.dual_step",
    "sim.steps",
    "sim.noise_variance",
    "sim.seed",
    "sim.init_position_range",
    "sim.init_velocity_range",
    "output.directory",
    "output.formats",
];

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut section: Option<(String, usize)> = None;
    let mut seen_sections = BTreeSet::new();
    let mut given = BTreeSet::new();
    let mut num_agents: Option<(usize, usize)> = None;
    let mut raw_edges: Vec<(usize, usize, usize, f64)> = Vec::new();
    let mut per_agent: Vec<(usize, usize, f64, f64)> = Vec::new();
    let mut cfg = ScenarioConfig {
        num_agents: 0,
        edges: Vec::new(),
        ts: 0.1,
        masses: Vec::new(),
        u_max: Vec::new(),
        sim: SimConfig::default(),
        output_dir: PathBuf::from("out"),
        formats: OutputFormats { csv: true, json: true },
        defaulted: BTreeSet::new(),
    };
    let mut mass = 1.0;
    let mut u_max = 1.0;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split(['#', ';']).next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| at(line, format!("malformed section header '{content}'")))?
                .trim();
            if !["graph", "agents", "mpc", "sim", "output"].contains(&name) {
                return Err(at(line, format!("unknown section [{name}]")));
            }
            if !seen_sections.insert(name.to_string()) {
                return Err(at(line, format!("section [{name}] appears twice")));
            }
            section = Some((name.to_string(), line));
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| at(line, format!("expected 'key = value', got '{content}'")))?;
        let Some((sec, _)) = section.as_ref() else {
            return Err(at(line, format!("key '{key}' outside of any section")));
        };
        if value.is_empty() {
            return Err(at(line, format!("key '{key}' has no value")));
        }
        let full = format!("{sec}.{key}");
        if key != "edge" && key != "agent" && !given.insert(full.clone()) {
            return Err(at(line, format!("key '{key}' given twice in [{sec}]")));
        }
        match (sec.as_str(), key) {
            ("graph", "N") => num_agents = Some((parse_num(line, key, value)?, line)),
            ("graph", "edge") => {
                let fields: Vec<&str> = value.split_whitespace().collect();
                if fields.len() == 3 && ["->", "<-"].contains(&fields[1]) {
                    return Err(at(line, "directed edges are not supported; use 'edge = i j'"));
                }
                let (i, j, w) = match fields.as_slice() {
                    [i, j] => (parse_num(line, "edge", i)?, parse_num(line, "edge", j)?, 1.0),
                    [i, j, w] => (
                        parse_num(line, "edge", i)?,
                        parse_num(line, "edge", j)?,
                        parse_num(line, "edge weight", w)?,
                    ),
                    _ => return Err(at(line, format!("edge needs 'i j [weight]', got '{value}'"))),
                };
                raw_edges.push((line, i, j, w));
            }
            ("agents", "ts") => cfg.ts = parse_num(line, key, value)?,
            ("agents", "mass") => mass = parse_num(line, key, value)?,
            ("agents", "u_max") => u_max = parse_input_bound(line, value)?,
            ("agents", "agent") => {
                let fields: Vec<&str> = value.split_whitespace().collect();
                let [agent, m, u] = fields.as_slice() else {
                    return Err(at(line, format!("agent needs 'index mass u_max', got '{value}'")));
                };
                let agent: usize = parse_num(line, "agent index", agent)?;
                if per_agent.iter().any(|(_, a, _, _)| *a == agent) {
                    return Err(at(line, format!("agent {agent} given twice")));
                }
                per_agent.push((line, agent, parse_num(line, "mass", m)?, parse_input_bound(line, u)?));
            }
            ("mpc", "T") => cfg.sim.horizon = parse_num(line, key, value)?,
            ("mpc", "rho") => cfg.sim.rho = parse_num(line, key, value)?,
            ("mpc", "admm_iters") => cfg.sim.admm_iterations = parse_num(line, key, value)?,
            ("mpc", "warm_start") => cfg.sim.warm_start = parse_bool(line, key, value)?,
            ("mpc", "solver") => cfg.sim.solver = value.parse().map_err(|e: dmpc::Error| at(line, e.to_string()))?,
            ("mpc", "apply_averaged_input") => cfg.sim.apply_averaged_input = parse_bool(line, key, value)?,
            ("mpc", "tolerance") => cfg.sim.admm_tolerance = Some(parse_num(line, key, value)?),
            ("mpc", "qp_tolerance") => cfg.sim.qp_tolerance = parse_num(line, key, value)?,
            ("mpc", "dual_step") => cfg.sim.dual_step = parse_num(line, key, value)?,
            ("sim", "steps") => cfg.sim.num_steps = parse_num(line, key, value)?,
            ("sim", "noise_variance") => cfg.sim.noise_variance = parse_num(line, key, value)?,
            ("sim", "seed") => cfg.sim.seed = parse_num(line, key, value)?,
            ("sim", "init_position_range") => cfg.sim.init_position_range = parse_num(line, key, value)?,
            ("sim", "init_velocity_range") => cfg.sim.init_velocity_range = parse_num(line, key, value)?,
            ("output", "directory") => cfg.output_dir = PathBuf::from(value),
            ("output", "formats") => {
                let mut formats = OutputFormats {
                    csv: false,
                    json: false,
                };
                for f in value.split(',').map(str::trim) {
                    match f {
                        "csv" => formats.csv = true,
                        "json" => formats.json = true,
                        other => return Err(at(line, format!("unknown output format '{other}'"))),
                    }
                }
                cfg.formats = formats;
            }
            _ => return Err(at(line, format!("unknown key '{key}' in [{sec}]"))),
        }
    }

    let Some((n, n_line)) = num_agents else {
        return Err(if seen_sections.contains("graph") {
            ConfigError::Global("missing required key N in [graph]".into())
        } else {
            ConfigError::Global("missing required section [graph]".into())
        });
    };
    if n < 1 {
        return Err(at(n_line, "N must be at least 1"));
    }
    cfg.num_agents = n;
    let mut seen_edges = BTreeSet::new();
    for &(line, i, j, w) in &raw_edges {
        for v in [i, j] {
            if v < 1 || v > n {
                return Err(at(line, format!("agent {v} out of range 1..={n}")));
            }
        }
        if i == j {
            return Err(at(line, format!("self-loop on agent {i}")));
        }
        if !(w > 0.0) || !w.is_finite() {
            return Err(at(line, format!("edge weight must be positive, got {w}")));
        }
        if !seen_edges.insert((i.min(j), i.max(j))) {
            return Err(at(line, format!("duplicate edge {i}-{j}")));
        }
        cfg.edges.push((i - 1, j - 1, w));
    }
    cfg.masses = vec![mass; n];
    cfg.u_max = vec![u_max; n];
    for &(line, agent, m, u) in &per_agent {
        if agent < 1 || agent > n {
            return Err(at(line, format!("agent {agent} out of range 1..={n}")));
        }
        cfg.masses[agent - 1] = m;
        cfg.u_max[agent - 1] = u;
    }
    cfg.defaulted = DEFAULTABLE
        .iter()
        .filter(|k| !given.contains(**k))
        .map(|k| k.to_string())
        .collect();
    cfg.sim.validate().map_err(|e| ConfigError::Global(e.to_string()))?;
    cfg.scenario()?;
    Ok(cfg)
}

fn parse_num<F: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<F, ConfigError> {
    value
        .parse()
        .map_err(|_| at(line, format!("invalid value '{value}' for {key}")))
}

fn parse_input_bound(line: usize, value: &str) -> Result<f64, ConfigError> {
    if matches!(value, "inf" | "none") {
        return Ok(f64::INFINITY);
    }
    parse_num(line, "u_max", value)
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(at(line, format!("invalid boolean '{value}' for {key}"))),
    }
}

impl ScenarioConfig {
    pub fn scenario(&self) -> Result<Scenario<f64>, ConfigError> {
        let graph =
            InfoGraph::from_edges(self.num_agents, &self.edges).map_err(|e| ConfigError::Global(e.to_string()))?;
        let agents = self
            .masses
            .iter()
            .zip(&self.u_max)
            .enumerate()
            .map(|(i, (&m, &u))| {
                LtiAgent::double_integrator_3d(self.ts, m, u)
                    .map_err(|e| ConfigError::Global(format!("agent {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Scenario::new(graph, agents).map_err(|e| ConfigError::Global(e.to_string()))
    }

    /// `key = value` lines of the full effective config, defaults marked.
    pub fn echo_lines(&self) -> Vec<String> {
        let s = &self.sim;
        let mut entries: Vec<(String, String)> = vec![
            ("graph.N".into(), self.num_agents.to_string()),
            ("agents.ts".into(), self.ts.to_string()),
            ("mpc.T".into(), s.horizon.to_string()),
            ("mpc.rho".into(), s.rho.to_string()),
            ("mpc.admm_iters".into(), s.admm_iterations.to_string()),
            ("mpc.warm_start".into(), s.warm_start.to_string()),
            ("mpc.solver".into(), s.solver.name().to_string()),
            ("mpc.apply_averaged_input".into(), s.apply_averaged_input.to_string()),
            (
                "mpc.tolerance".into(),
                s.admm_tolerance.map_or("none".to_string(), |v| v.to_string()),
            ),
            ("mpc.qp_tolerance".into(), s.qp_tolerance.to_string()),
            ("mpc.dual_step".into(), s.dual_step.to_string()),
            ("sim.steps".into(), s.num_steps.to_string()),
            ("sim.noise_variance".into(), s.noise_variance.to_string()),
            ("sim.seed".into(), s.seed.to_string()),
            ("sim.init_position_range".into(), s.init_position_range.to_string()),
            ("sim.init_velocity_range".into(), s.init_velocity_range.to_string()),
            ("output.directory".into(), self.output_dir.display().to_string()),
            ("output.formats".into(), self.format_list()),
        ];
        for (i, j, w) in &self.edges {
            entries.push(("graph.edge".into(), format!("{} {} {w}", i + 1, j + 1)));
        }
        for (i, (m, u)) in self.masses.iter().zip(&self.u_max).enumerate() {
            entries.push(("agents.agent".into(), format!("{} {m} {u}", i + 1)));
        }
        entries
            .into_iter()
            .map(|(k, v)| {
                let tag = if self.is_default(&k) { " (default)" } else { "" };
                format!("{k} = {v}{tag}")
            })
            .collect()
    }

    fn is_default(&self, key: &str) -> bool {
        self.defaulted.contains(key)
    }

    fn format_list(&self) -> String {
        let mut v = Vec::new();
        if self.formats.csv {
            v.push("csv");
        }
        if self.formats.json {
            v.push("json");
        }
        v.join(",")
    }

    pub fn to_json(&self) -> Value {
        json!({
            "graph": {
                "N": self.num_agents,
                "edges": self.edges.iter().map(|(i, j, w)| json!([i + 1, j + 1, w])).collect::<Vec<_>>(),
            },
            "agents": { "ts": self.ts, "mass": self.masses, "u_max": self.u_max.iter().map(|u| if u.is_finite() { json!(u) } else { json!("inf") }).collect::<Vec<_>>() },
            "sim": serde_json::to_value(&self.sim).expect("config serializes"),
            "output": { "directory": self.output_dir.display().to_string(), "formats": self.format_list() },
            "defaulted": self.defaulted.iter().collect::<Vec<_>>(),
        })
    }
}

//! Run configuration: flat `section.key = value` text with `#` comments.
//! Arrays are comma lists; `system.beta` is `N` comma-separated rows of `N`
//! whitespace-separated entries whose diagonal repeats `system.mu`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{NodalError, Result};
use crate::flow::FlowPolicy;
use crate::grid::{build_grid, Grid, RadialDomain};
use crate::search::SearchOptions;
use crate::seeds::{self, BumpBasis};
use crate::system::{BlockStructure, SystemParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    pub dim: usize,
    pub r_inner: f64,
    pub r_outer: f64,
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n: usize,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlocksConfig {
    pub p: usize,
    pub prescription: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub k: usize,
    pub count_target: usize,
    pub budget: usize,
    pub epsilon: f64,
    pub eps_node: Option<f64>,
    pub tol_distinct: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub system: SystemConfig,
    pub blocks: BlocksConfig,
    /// Resolved policy: unset keys take the grid defaults.
    pub flow: FlowPolicy,
    pub search: SearchConfig,
    pub output_dir: String,
}

const KEYS: &[&str] = &[
    "domain.dim",
    "domain.r_inner",
    "domain.r_outer",
    "domain.grid_points",
    "system.N",
    "system.lambda",
    "system.mu",
    "system.beta",
    "blocks.p",
    "blocks.prescription",
    "flow.dt0",
    "flow.dt_min",
    "flow.dt_max",
    "flow.t_max",
    "flow.blow_threshold",
    "flow.zero_threshold",
    "flow.stat_tol",
    "flow.sample_every",
    "search.K",
    "search.count_target",
    "search.budget",
    "search.epsilon",
    "search.eps_node",
    "search.tol_distinct",
    "search.rng_seed",
    "output.dir",
];

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

fn err(line: usize, key: &str, msg: impl std::fmt::Display) -> NodalError {
    if line == 0 {
        NodalError::Config(format!("{key}: {msg}"))
    } else {
        NodalError::Config(format!("line {line}, {key}: {msg}"))
    }
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(NodalError::Config(format!("line {}: expected key = value", i + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(err(i + 1, k, "unknown key"));
            }
            if map.insert(k.to_string(), (i + 1, v.to_string())).is_some() {
                return Err(err(i + 1, k, "duplicate key"));
            }
        }
        Ok(Self { map })
    }

    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.map.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some((l, v)) => v.parse::<T>().map(Some).map_err(|e| err(l, key, e)),
        }
    }

    fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| err(0, key, "missing"))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let (l, v) = self.raw(key).ok_or_else(|| err(0, key, "missing"))?;
        v.split(',')
            .map(|s| s.trim().parse::<T>().map_err(|e| err(l, key, e)))
            .collect()
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let e = Entries::parse(text)?;
        let domain = DomainConfig {
            dim: e.require("domain.dim")?,
            r_inner: e.get("domain.r_inner")?.unwrap_or(0.0),
            r_outer: e.require("domain.r_outer")?,
            grid_points: e.require("domain.grid_points")?,
        };
        let n: usize = e.require("system.N")?;
        let lambda: Vec<f64> = e.list("system.lambda")?;
        let mu: Vec<f64> = e.list("system.mu")?;
        let (bl, braw) = e.raw("system.beta").ok_or_else(|| err(0, "system.beta", "missing"))?;
        let beta: Vec<Vec<f64>> = braw
            .split(',')
            .map(|row| {
                row.split_whitespace()
                    .map(|s| s.parse::<f64>().map_err(|x| err(bl, "system.beta", x)))
                    .collect()
            })
            .collect::<Result<_>>()?;
        if lambda.len() != n {
            return Err(err(e.raw("system.lambda").unwrap().0, "system.lambda", format!("expected {n} values")));
        }
        if mu.len() != n {
            return Err(err(e.raw("system.mu").unwrap().0, "system.mu", format!("expected {n} values")));
        }
        if beta.len() != n || beta.iter().any(|r| r.len() != n) {
            return Err(err(bl, "system.beta", format!("expected {n} rows of {n} entries")));
        }
        for j in 0..n {
            if beta[j][j] != mu[j] {
                return Err(err(bl, "system.beta", format!("diagonal entry {} differs from mu", j + 1)));
            }
        }
        let blocks = BlocksConfig {
            p: e.require("blocks.p")?,
            prescription: e.list("blocks.prescription")?,
        };
        let cfg_domain = RadialDomain::annulus(domain.dim, domain.r_inner, domain.r_outer, domain.grid_points);
        cfg_domain.validate()?;
        let grid = build_grid(cfg_domain)?;
        let d = FlowPolicy::for_grid(&grid);
        let flow = FlowPolicy {
            dt0: e.get("flow.dt0")?.unwrap_or(d.dt0),
            dt_min: e.get("flow.dt_min")?.unwrap_or(d.dt_min),
            dt_max: e.get("flow.dt_max")?.unwrap_or(d.dt_max),
            t_max: e.get("flow.t_max")?.unwrap_or(d.t_max),
            blow_threshold: e.get("flow.blow_threshold")?.unwrap_or(d.blow_threshold),
            zero_threshold: e.get("flow.zero_threshold")?.unwrap_or(d.zero_threshold),
            stat_tol: e.get("flow.stat_tol")?.unwrap_or(d.stat_tol),
            sample_every: e.get("flow.sample_every")?.unwrap_or(d.sample_every),
            ..d
        };
        let eps_node = match e.raw("search.eps_node") {
            None => None,
            Some((_, "auto")) => None,
            Some((l, v)) => Some(v.parse::<f64>().map_err(|x| err(l, "search.eps_node", x))?),
        };
        let defaults = SearchOptions::default();
        let search = SearchConfig {
            k: e.get("search.K")?.unwrap_or(1),
            count_target: e.get("search.count_target")?.unwrap_or(1),
            budget: e.get("search.budget")?.unwrap_or(20),
            epsilon: e.get("search.epsilon")?.unwrap_or(defaults.epsilon),
            eps_node,
            tol_distinct: e.get("search.tol_distinct")?.unwrap_or(defaults.tol_distinct),
            rng_seed: e.get("search.rng_seed")?.unwrap_or(1),
        };
        let cfg = RunConfig {
            domain,
            system: SystemConfig { n, lambda, mu, beta },
            blocks,
            flow,
            search,
            output_dir: e.get("output.dir")?.unwrap_or_else(|| "out".to_string()),
        };
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads config text, or the `config` object of a run manifest.
    pub fn load(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            let v: serde_json::Value =
                serde_json::from_str(text).map_err(|e| NodalError::Config(format!("manifest: {e}")))?;
            let c = v
                .get("config")
                .ok_or_else(|| NodalError::Config("manifest: no config object".into()))?;
            let cfg: RunConfig = serde_json::from_value(c.clone())
                .map_err(|e| NodalError::Config(format!("manifest config: {e}")))?;
            cfg.check()?;
            Ok(cfg)
        } else {
            Self::parse(text)
        }
    }

    fn check(&self) -> Result<()> {
        self.grid()?;
        self.params()?;
        self.block_structure()?.check_against(&self.params()?)?;
        self.flow.validate()?;
        if self.search.k == 0 {
            return Err(err(0, "search.K", "must be at least 1"));
        }
        if !(self.search.epsilon > 0.0) || !(self.search.tol_distinct > 0.0) {
            return Err(err(0, "search", "epsilon and tol_distinct must be positive"));
        }
        Ok(())
    }

    pub fn domain(&self) -> RadialDomain {
        let d = &self.domain;
        RadialDomain::annulus(d.dim, d.r_inner, d.r_outer, d.grid_points)
    }

    pub fn grid(&self) -> Result<Grid> {
        build_grid(self.domain())
    }

    pub fn params(&self) -> Result<SystemParams> {
        let n = self.system.n;
        let mut coupling = Vec::with_capacity(n * n);
        for row in &self.system.beta {
            coupling.extend_from_slice(row);
        }
        SystemParams::new(self.system.lambda.clone(), coupling)
    }

    pub fn block_structure(&self) -> Result<BlockStructure> {
        BlockStructure::new(self.blocks.p, self.blocks.prescription.clone())
    }

    pub fn basis(&self, grid: &Grid) -> Result<BumpBasis> {
        seeds::build_basis(grid, &self.block_structure()?, self.search.k)
    }

    pub fn search_options(&self) -> SearchOptions {
        SearchOptions {
            epsilon: self.search.epsilon,
            eps_node: self.search.eps_node,
            tol_distinct: self.search.tol_distinct,
            ..SearchOptions::default()
        }
    }

    /// The config in its text form; `parse` of the result gives `self` back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let d = &self.domain;
        let _ = writeln!(s, "domain.dim = {}", d.dim);
        let _ = writeln!(s, "domain.r_inner = {:?}", d.r_inner);
        let _ = writeln!(s, "domain.r_outer = {:?}", d.r_outer);
        let _ = writeln!(s, "domain.grid_points = {}", d.grid_points);
        let _ = writeln!(s, "system.N = {}", self.system.n);
        let _ = writeln!(s, "system.lambda = {}", list(&self.system.lambda));
        let _ = writeln!(s, "system.mu = {}", list(&self.system.mu));
        let rows: Vec<String> = self
            .system
            .beta
            .iter()
            .map(|r| r.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" "))
            .collect();
        let _ = writeln!(s, "system.beta = {}", rows.join(", "));
        let _ = writeln!(s, "blocks.p = {}", self.blocks.p);
        let pres: Vec<String> = self.blocks.prescription.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "blocks.prescription = {}", pres.join(", "));
        let f = &self.flow;
        let _ = writeln!(s, "flow.dt0 = {:?}", f.dt0);
        let _ = writeln!(s, "flow.dt_min = {:?}", f.dt_min);
        let _ = writeln!(s, "flow.dt_max = {:?}", f.dt_max);
        let _ = writeln!(s, "flow.t_max = {:?}", f.t_max);
        let _ = writeln!(s, "flow.blow_threshold = {:?}", f.blow_threshold);
        let _ = writeln!(s, "flow.zero_threshold = {:?}", f.zero_threshold);
        let _ = writeln!(s, "flow.stat_tol = {:?}", f.stat_tol);
        let _ = writeln!(s, "flow.sample_every = {}", f.sample_every);
        let q = &self.search;
        let _ = writeln!(s, "search.K = {}", q.k);
        let _ = writeln!(s, "search.count_target = {}", q.count_target);
        let _ = writeln!(s, "search.budget = {}", q.budget);
        let _ = writeln!(s, "search.epsilon = {:?}", q.epsilon);
        match q.eps_node {
            Some(v) => {
                let _ = writeln!(s, "search.eps_node = {v:?}");
            }
            None => {
                let _ = writeln!(s, "search.eps_node = auto");
            }
        }
        let _ = writeln!(s, "search.tol_distinct = {:?}", q.tol_distinct);
        let _ = writeln!(s, "search.rng_seed = {}", q.rng_seed);
        let _ = writeln!(s, "output.dir = {}", self.output_dir);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const COUPLED: &str = "\
# two components, one block
domain.dim = 1
domain.r_outer = 1
domain.grid_points = 300
system.N = 2
system.lambda = 1, 1
system.mu = 1, 1
system.beta = 1 -1.5, -1.5 1
blocks.p = 2
blocks.prescription = 1
search.K = 2
search.count_target = 3
";

    #[test]
    fn parses_and_round_trips() {
        let c = RunConfig::parse(COUPLED).unwrap();
        assert_eq!(c.system.beta[0][1], -1.5);
        assert_eq!(c.domain.r_inner, 0.0);
        assert_eq!(c.search.k, 2);
        assert_eq!(c.flow.dt0, FlowPolicy::for_grid(&c.grid().unwrap()).dt0);
        let again = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(c, again);
        let json = serde_json::json!({ "config": c }).to_string();
        assert_eq!(RunConfig::load(&json).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        let unknown = format!("{COUPLED}flow.colour = 3\n");
        let e = RunConfig::parse(&unknown).unwrap_err().to_string();
        assert!(e.contains("line 13") && e.contains("unknown key"), "{e}");
        let short_row = COUPLED.replace("1 -1.5, -1.5 1", "1 -1.5, -1.5");
        assert!(RunConfig::parse(&short_row).unwrap_err().to_string().contains("system.beta"));
        let dim4 = COUPLED.replace("domain.dim = 1", "domain.dim = 4");
        assert!(RunConfig::parse(&dim4).is_err());
        let dup = format!("{COUPLED}search.K = 1\n");
        assert!(RunConfig::parse(&dup).unwrap_err().to_string().contains("duplicate"));
        let diag = COUPLED.replace("1 -1.5, -1.5 1", "2 -1.5, -1.5 1");
        assert!(RunConfig::parse(&diag).is_err());
        let missing = COUPLED.replace("system.N = 2\n", "");
        assert!(RunConfig::parse(&missing).unwrap_err().to_string().contains("system.N"));
    }

    #[test]
    fn eps_node_auto_or_value() {
        let c = RunConfig::parse(&format!("{COUPLED}search.eps_node = 1e-8\n")).unwrap();
        assert_eq!(c.search.eps_node, Some(1e-8));
        let c = RunConfig::parse(&format!("{COUPLED}search.eps_node = auto\n")).unwrap();
        assert_eq!(c.search.eps_node, None);
    }
}

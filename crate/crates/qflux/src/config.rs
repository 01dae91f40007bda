//! Flat `key = value` run configuration files.
//!
//! Recognized keys: structure, domain, bc, rhs, epsilon, out, seed.
//! Blank lines and `#` comments are skipped; every key has a default, so
//! the empty file is valid. Unknown keys are errors.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::expr::Expr;
use crate::grid::{GridDomain, GridError, ScalarField};
use crate::solver::{BoundaryCondition, SolveOptions};
use crate::structure::{StructureError, StructureFunction};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected 'key = value', got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for '{key}': {msg}")]
    BadValue { line: usize, key: String, msg: String },
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("rhs file {path}: {msg}")]
    RhsFile { path: PathBuf, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum StructureSpec {
    PowerLaw { p: f64 },
    Constant { c: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    Square { l: f64, h: f64 },
    Rect { x0: f64, y0: f64, w: f64, d: f64, h: f64 },
    Disk { r: f64, h: f64 },
    Annulus { r0: f64, r1: f64, h: f64 },
}

impl DomainSpec {
    pub fn h(&self) -> f64 {
        match *self {
            DomainSpec::Square { h, .. }
            | DomainSpec::Rect { h, .. }
            | DomainSpec::Disk { h, .. }
            | DomainSpec::Annulus { h, .. } => h,
        }
    }

    pub fn with_h(&self, h: f64) -> Self {
        let mut s = self.clone();
        match &mut s {
            DomainSpec::Square { h: slot, .. }
            | DomainSpec::Rect { h: slot, .. }
            | DomainSpec::Disk { h: slot, .. }
            | DomainSpec::Annulus { h: slot, .. } => *slot = h,
        }
        s
    }

    pub fn name(&self) -> &'static str {
        match self {
            DomainSpec::Square { .. } => "square",
            DomainSpec::Rect { .. } => "rect",
            DomainSpec::Disk { .. } => "disk",
            DomainSpec::Annulus { .. } => "annulus",
        }
    }

    pub fn build(&self) -> Result<Arc<GridDomain>, GridError> {
        match *self {
            DomainSpec::Square { l, h } => GridDomain::rectangle(l, l, h),
            DomainSpec::Rect { x0, y0, w, d, h } => GridDomain::rectangle_at(x0, y0, w, d, h),
            DomainSpec::Disk { r, h } => GridDomain::disk(r, h),
            DomainSpec::Annulus { r0, r1, h } => GridDomain::annulus(r0, r1, h),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RhsSpec {
    Expr { src: String, expr: Expr },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub structure: StructureSpec,
    pub domain: DomainSpec,
    pub bc: BoundaryCondition,
    pub rhs: RhsSpec,
    /// Target for the regularization schedule; 0 means "finish on the raw
    /// nonlinearity".
    pub epsilon: f64,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            structure: StructureSpec::PowerLaw { p: 2.0 },
            domain: DomainSpec::Square { l: 1.0, h: 1.0 / 32.0 },
            bc: BoundaryCondition::Dirichlet,
            rhs: RhsSpec::Expr { src: "1".into(), expr: Expr::Num(1.0) },
            epsilon: 1e-4,
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn build_structure(&self) -> Result<StructureFunction, StructureError> {
        match self.structure {
            StructureSpec::PowerLaw { p } => StructureFunction::power_law(p),
            StructureSpec::Constant { c } => StructureFunction::constant(c),
        }
    }

    pub fn build_domain(&self) -> Result<Arc<GridDomain>, GridError> {
        self.domain.build()
    }

    pub fn build_rhs(&self, domain: &Arc<GridDomain>) -> Result<ScalarField, ConfigError> {
        match &self.rhs {
            RhsSpec::Expr { expr, .. } => Ok(ScalarField::from_fn(domain, |x, y| expr.eval(x, y))),
            RhsSpec::File(path) => load_nodal_csv(path, domain),
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions::with_target_epsilon(self.epsilon)
    }
}

/// Nodal data as `x,y,value` rows; a header row is skipped. Rows must land
/// on grid nodes; nodes not mentioned stay zero.
fn load_nodal_csv(path: &Path, domain: &Arc<GridDomain>) -> Result<ScalarField, ConfigError> {
    let bad = |msg: String| ConfigError::RhsFile { path: path.to_path_buf(), msg };
    let text = std::fs::read_to_string(path)?;
    let mut f = ScalarField::zeros(domain);
    let h = domain.spacing();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        let header = ln == 0 && line.split(',').any(|c| c.trim().parse::<f64>().is_err());
        if line.is_empty() || line.starts_with('#') || header {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 3 {
            return Err(bad(format!("row {}: expected x,y,value", ln + 1)));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("row {}: bad number '{s}'", ln + 1)));
        let (x, y, v) = (num(cols[0])?, num(cols[1])?, num(cols[2])?);
        let i = ((x - domain.x(0)) / h).round() as isize;
        let j = ((y - domain.y(0)) / h).round() as isize;
        if !domain.in_domain(i, j)
            || (domain.x(i as usize) - x).abs() > 1e-9
            || (domain.y(j as usize) - y).abs() > 1e-9
        {
            return Err(bad(format!("row {}: ({x}, {y}) is not a domain node", ln + 1)));
        }
        f.set(i as usize, j as usize, v);
    }
    Ok(f)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    parse_config_str(&std::fs::read_to_string(path)?)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(ConfigError::Syntax { line, text: body.to_string() });
        };
        let (key, value) = (key.trim(), value.trim());
        let bad = |msg: String| ConfigError::BadValue { line, key: key.to_string(), msg };
        match key {
            "structure" => cfg.structure = parse_structure(value).map_err(bad)?,
            "domain" => cfg.domain = parse_domain(value).map_err(bad)?,
            "bc" => {
                cfg.bc = match value {
                    "dirichlet" => BoundaryCondition::Dirichlet,
                    "neumann" => BoundaryCondition::Neumann,
                    other => return Err(bad(format!("expected dirichlet|neumann, got '{other}'"))),
                }
            }
            "rhs" => cfg.rhs = parse_rhs(value).map_err(bad)?,
            "epsilon" => {
                let eps: f64 = value.parse().map_err(|_| bad(format!("bad number '{value}'")))?;
                if !(0.0..1.0).contains(&eps) {
                    return Err(bad(format!("epsilon {eps} must lie in [0, 1)")));
                }
                cfg.epsilon = eps;
            }
            "out" => cfg.out = PathBuf::from(value),
            "seed" => {
                cfg.seed = value.parse().map_err(|_| bad(format!("bad integer '{value}'")))?
            }
            _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
        }
    }
    Ok(cfg)
}

fn kv_pairs(s: &str) -> Result<Vec<(String, f64)>, String> {
    s.split(',')
        .map(|part| {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("expected name=number, got '{part}'"))?;
            let num: f64 = v.trim().parse().map_err(|_| format!("bad number '{}'", v.trim()))?;
            Ok((k.trim().to_string(), num))
        })
        .collect()
}

fn take(pairs: &[(String, f64)], want: &[&str], kind: &str) -> Result<Vec<f64>, String> {
    for (k, _) in pairs {
        if !want.contains(&k.as_str()) {
            return Err(format!("unknown field '{k}' for {kind}"));
        }
    }
    want.iter()
        .map(|w| {
            pairs
                .iter()
                .find(|(k, _)| k == w)
                .map(|&(_, v)| v)
                .ok_or_else(|| format!("{kind} needs '{w}'"))
        })
        .collect()
}

pub fn parse_structure(value: &str) -> Result<StructureSpec, String> {
    let (kind, rest) = value.split_once(':').unwrap_or((value, ""));
    let pairs = if rest.is_empty() { Vec::new() } else { kv_pairs(rest)? };
    match kind.trim() {
        "powerlaw" => {
            let v = take(&pairs, &["p"], "powerlaw")?;
            Ok(StructureSpec::PowerLaw { p: v[0] })
        }
        "constant" => {
            let v = take(&pairs, &["c"], "constant")?;
            Ok(StructureSpec::Constant { c: v[0] })
        }
        other => Err(format!("unknown structure '{other}' (powerlaw|constant)")),
    }
}

pub fn parse_domain(value: &str) -> Result<DomainSpec, String> {
    let (kind, rest) = value.split_once(':').unwrap_or((value, ""));
    let pairs = if rest.is_empty() { Vec::new() } else { kv_pairs(rest)? };
    match kind.trim() {
        "square" => {
            let v = take(&pairs, &["l", "h"], "square")?;
            Ok(DomainSpec::Square { l: v[0], h: v[1] })
        }
        "rect" => {
            let v = take(&pairs, &["x0", "y0", "w", "d", "h"], "rect")?;
            Ok(DomainSpec::Rect { x0: v[0], y0: v[1], w: v[2], d: v[3], h: v[4] })
        }
        "disk" => {
            let v = take(&pairs, &["r", "h"], "disk")?;
            Ok(DomainSpec::Disk { r: v[0], h: v[1] })
        }
        "annulus" => {
            let v = take(&pairs, &["r0", "r1", "h"], "annulus")?;
            Ok(DomainSpec::Annulus { r0: v[0], r1: v[1], h: v[2] })
        }
        other => Err(format!("unknown domain '{other}' (square|rect|disk|annulus)")),
    }
}

pub fn parse_rhs(value: &str) -> Result<RhsSpec, String> {
    if let Some(src) = value.strip_prefix("expr:") {
        let expr = Expr::parse(src).map_err(|e| e.to_string())?;
        return Ok(RhsSpec::Expr { src: src.to_string(), expr });
    }
    if let Some(path) = value.strip_prefix("file:") {
        return Ok(RhsSpec::File(PathBuf::from(path.trim())));
    }
    Err(format!("expected expr:<formula> or file:<csv>, got '{value}'"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let cfg = parse_config_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.domain.h(), 1.0 / 32.0);
        assert!(cfg.build_domain().is_ok());
    }

    #[test]
    fn full_config_round_trip() {
        let text = "\
# a run
structure = powerlaw:p=3
domain = disk:r=1,h=0.0625
bc = neumann
rhs = expr:sin(pi*x)*sin(pi*y)
epsilon = 1e-3
out = results/run1
seed = 42  # trailing comment
";
        let cfg = parse_config_str(text).unwrap();
        assert_eq!(cfg.structure, StructureSpec::PowerLaw { p: 3.0 });
        assert_eq!(cfg.domain, DomainSpec::Disk { r: 1.0, h: 0.0625 });
        assert_eq!(cfg.bc, BoundaryCondition::Neumann);
        assert_eq!(cfg.epsilon, 1e-3);
        assert_eq!(cfg.out, PathBuf::from("results/run1"));
        assert_eq!(cfg.seed, 42);
        let dom = cfg.build_domain().unwrap();
        let f = cfg.build_rhs(&dom).unwrap();
        let (i, j) = (dom.nx() / 2, dom.ny() / 2 + 3);
        let (x, y) = (dom.x(i), dom.y(j));
        let want = (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin();
        assert!((f.get(i, j) - want).abs() < 1e-14);
        assert_eq!(cfg.solve_options().epsilon_schedule, vec![1e-1, 1e-2, 1e-3]);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config_str("colour = red").unwrap_err();
        match err {
            ConfigError::UnknownKey { line, key } => {
                assert_eq!((line, key.as_str()), (1, "colour"));
            }
            other => panic!("{other}"),
        }
        assert!(parse_config_str("colour = red").unwrap_err().to_string().contains("colour"));
    }

    #[test]
    fn value_errors_name_the_key() {
        for text in [
            "bc = robin",
            "epsilon = -0.5",
            "epsilon = 1.5",
            "seed = -3",
            "domain = disk:r=1",
            "domain = disk:r=1,h=0.1,z=2",
            "domain = blob:r=1,h=0.1",
            "structure = powerlaw:q=3",
            "rhs = sin(x)",
            "rhs = expr:sin(",
        ] {
            let err = parse_config_str(text).unwrap_err();
            assert!(matches!(err, ConfigError::BadValue { .. }), "{text}: {err}");
            let key = text.split('=').next().unwrap().trim();
            assert!(err.to_string().contains(key), "{text}: {err}");
        }
    }

    #[test]
    fn missing_equals_is_syntax_error() {
        let err = parse_config_str("structure powerlaw\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 1, .. }), "{err}");
    }

    #[test]
    fn epsilon_zero_requests_raw_final_stage() {
        let cfg = parse_config_str("epsilon = 0").unwrap();
        let opts = cfg.solve_options();
        assert!(opts.final_raw);
        assert_eq!(opts.epsilon_schedule.len(), 4);
    }

    #[test]
    fn rhs_file_loads_nodal_values() {
        let dir = std::env::temp_dir().join("qflux-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f.csv");
        let dom = GridDomain::unit_square(0.25).unwrap();
        let mut text = String::from("x,y,f\n");
        for (i, j) in dom.in_domain_nodes() {
            text.push_str(&format!("{},{},{}\n", dom.x(i), dom.y(j), dom.x(i) + 2.0 * dom.y(j)));
        }
        std::fs::write(&path, text).unwrap();
        let cfg = parse_config_str(&format!("rhs = file:{}\ndomain = square:l=1,h=0.25", path.display())).unwrap();
        let f = cfg.build_rhs(&dom).unwrap();
        for (i, j) in dom.in_domain_nodes() {
            assert!((f.get(i, j) - (dom.x(i) + 2.0 * dom.y(j))).abs() < 1e-12);
        }
        std::fs::write(&path, "x,y,f\n0.1,0.1,3.0\n").unwrap();
        assert!(matches!(cfg.build_rhs(&dom), Err(ConfigError::RhsFile { .. })));
    }
}

//! File formats: histogram CSV, response CSV and the flat key/value config.
//!
//! All numeric output uses full-precision scientific notation (17 significant
//! digits) so that parse/serialize round trips are exact.

use std::fmt::Write as _;
use std::path::Path;

use unfold::histo::{BinGrid, Histogram, Kind, ResponseMatrix};
use unfold::math::Mat;
use unfold::stopping::MRule;
use unfold::UnfoldError;

/// CLI-level failure carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Malformed or unreadable input: exit 2.
    Parse(String),
    /// Library-level failure; grid mismatches exit 3, zero responses exit 4.
    Lib(UnfoldError),
    /// Output-side I/O failure: exit 1.
    Write(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Lib(UnfoldError::GridMismatch(_)) => 3,
            CliError::Lib(UnfoldError::ZeroResponse) => 4,
            CliError::Lib(_) => 1,
            CliError::Write(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Parse(msg) => write!(f, "parse error: {msg}"),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Write(msg) => write!(f, "write error: {msg}"),
        }
    }
}

impl From<UnfoldError> for CliError {
    fn from(e: UnfoldError) -> Self {
        CliError::Lib(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// 17-significant-digit scientific notation; round-trips every finite `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn read_to_string(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Write(format!("cannot write {}: {e}", path.display())))
}

fn parse_f64(field: &str, context: &str) -> CliResult<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| CliError::Parse(format!("{context}: bad number {field:?}")))
}

fn parse_usize(field: &str, context: &str) -> CliResult<usize> {
    field
        .trim()
        .parse::<usize>()
        .map_err(|_| CliError::Parse(format!("{context}: bad index {field:?}")))
}

fn parse_edges(line: &str, prefix: &str, path: &Path) -> CliResult<BinGrid> {
    let rest = line.strip_prefix(prefix).ok_or_else(|| {
        CliError::Parse(format!(
            "{}: expected header {prefix:?}, found {line:?}",
            path.display()
        ))
    })?;
    let edges = rest
        .split(',')
        .map(|tok| parse_f64(tok, "edges"))
        .collect::<CliResult<Vec<f64>>>()?;
    BinGrid::new(edges).map_err(|e| CliError::Parse(format!("{}: edges: {e}", path.display())))
}

/// Histogram CSV: `# edges: e0,e1,...` then `bin_index,value` rows.
/// Unlisted bins are zero.
pub fn read_histogram(path: &Path, kind: Kind) -> CliResult<Histogram> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| CliError::Parse(format!("{}: empty file", path.display())))?;
    let grid = parse_edges(header, "# edges:", path)?;
    let mut values = vec![0.0; grid.n_bins()];
    for line in lines {
        let mut parts = line.splitn(2, ',');
        let (i, v) = match (parts.next(), parts.next()) {
            (Some(i), Some(v)) => (i, v),
            _ => {
                return Err(CliError::Parse(format!(
                    "{}: expected `bin_index,value`, found {line:?}",
                    path.display()
                )))
            }
        };
        let i = parse_usize(i, "histogram row")?;
        if i >= values.len() {
            return Err(CliError::Parse(format!(
                "{}: bin_index {i} out of range ({} bins)",
                path.display(),
                values.len()
            )));
        }
        values[i] = parse_f64(v, "histogram row")?;
    }
    Histogram::new(grid, values, kind)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

pub fn write_histogram(path: &Path, h: &Histogram) -> CliResult<()> {
    let mut out = String::from("# edges: ");
    let edge_strs: Vec<String> = h.grid().edges().iter().map(|&e| fmt_f64(e)).collect();
    out.push_str(&edge_strs.join(","));
    out.push('\n');
    for (i, v) in h.values().iter().enumerate() {
        let _ = writeln!(out, "{i},{}", fmt_f64(*v));
    }
    write_file(path, &out)
}

/// Response CSV: measured-edge and truth-edge header lines, then `i,j,rho`
/// triplets; unlisted entries are zero.
pub fn read_response(path: &Path) -> CliResult<ResponseMatrix> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let h1 = lines
        .next()
        .ok_or_else(|| CliError::Parse(format!("{}: empty file", path.display())))?;
    let measured = parse_edges(h1, "# measured_edges:", path)?;
    let h2 = lines.next().ok_or_else(|| {
        CliError::Parse(format!("{}: missing truth-edges header", path.display()))
    })?;
    let truth = parse_edges(h2, "# truth_edges:", path)?;
    let mut rho = Mat::zeros(measured.n_bins(), truth.n_bins());
    for line in lines {
        let parts: Vec<&str> = line.splitn(3, ',').collect();
        if parts.len() != 3 {
            return Err(CliError::Parse(format!(
                "{}: expected `i,j,rho`, found {line:?}",
                path.display()
            )));
        }
        let i = parse_usize(parts[0], "response row")?;
        let j = parse_usize(parts[1], "response row")?;
        if i >= measured.n_bins() || j >= truth.n_bins() {
            return Err(CliError::Parse(format!(
                "{}: entry ({i},{j}) out of range ({}x{})",
                path.display(),
                measured.n_bins(),
                truth.n_bins()
            )));
        }
        rho.set(i, j, parse_f64(parts[2], "response row")?);
    }
    ResponseMatrix::new(measured, truth, rho)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

pub fn write_response(path: &Path, r: &ResponseMatrix) -> CliResult<()> {
    let fmt_edges = |edges: &[f64]| {
        edges
            .iter()
            .map(|&e| fmt_f64(e))
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = String::new();
    let _ = writeln!(out, "# measured_edges: {}", fmt_edges(r.measured_grid().edges()));
    let _ = writeln!(out, "# truth_edges: {}", fmt_edges(r.truth_grid().edges()));
    for i in 0..r.measured_grid().n_bins() {
        for j in 0..r.truth_grid().n_bins() {
            let v = r.at(i, j);
            if v != 0.0 {
                let _ = writeln!(out, "{i},{j},{}", fmt_f64(v));
            }
        }
    }
    write_file(path, &out)
}

/// Parsed run configuration with defaults applied.
#[derive(Debug, Clone)]
pub struct Config {
    pub n_max: usize,
    pub eps: f64,
    pub m_rule: MRule,
    pub weights_bias: f64,
    pub weights_stat: f64,
    pub smoothing_sigma: Option<f64>,
    pub systematics_sg_file: Option<String>,
    pub systematics_srho_file: Option<String>,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            n_max: unfold::unfolder::DEFAULT_N_MAX,
            eps: unfold::bias::DEFAULT_EPS,
            m_rule: MRule::default(),
            weights_bias: 1.0,
            weights_stat: 1.0,
            smoothing_sigma: None,
            systematics_sg_file: None,
            systematics_srho_file: None,
            seed: 0,
        }
    }
}

/// Flat `key = value` text; `#` starts a comment, unknown keys are rejected.
pub fn parse_config(path: &Path) -> CliResult<Config> {
    let text = read_to_string(path)?;
    let mut cfg = Config::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Parse(format!(
                "{}:{}: expected `key = value`, found {raw:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        let key = key.trim();
        let value = value.trim();
        let ctx = format!("{}:{} key {key}", path.display(), lineno + 1);
        match key {
            "n_max" => cfg.n_max = parse_usize(value, &ctx)?,
            "eps" => cfg.eps = parse_f64(value, &ctx)?,
            "m_rule" => {
                cfg.m_rule = MRule::parse(value)
                    .map_err(|e| CliError::Parse(format!("{ctx}: {e}")))?
            }
            "weights_bias" => cfg.weights_bias = parse_f64(value, &ctx)?,
            "weights_stat" => cfg.weights_stat = parse_f64(value, &ctx)?,
            "smoothing_sigma" => cfg.smoothing_sigma = Some(parse_f64(value, &ctx)?),
            "systematics_sg_file" => cfg.systematics_sg_file = Some(value.to_string()),
            "systematics_srho_file" => cfg.systematics_srho_file = Some(value.to_string()),
            "seed" => {
                cfg.seed = value
                    .parse::<u64>()
                    .map_err(|_| CliError::Parse(format!("{ctx}: bad seed {value:?}")))?
            }
            other => {
                return Err(CliError::Parse(format!(
                    "{}:{}: unknown key {other:?}",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    Ok(cfg)
}

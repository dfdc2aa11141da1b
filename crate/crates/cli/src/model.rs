//! Shared parsing of models, patterns, schemes, and sequences.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context};
use pmclab_core::alignment::ScoringScheme;
use pmclab_core::counters::TripletPattern;
use pmclab_core::markov::{build_general, build_ind, build_max, build_min, MarginalParams, PairState, TransitionMatrix};
use serde::{Deserialize, Serialize};

/// Model selector shared by all subcommands.
#[derive(Debug, Clone, clap::Args)]
pub struct ModelArgs {
    /// Model family: max | min | ind | general | json
    #[arg(long)]
    pub model: Option<String>,
    /// Marginal parameter p (transition 1 -> 1)
    #[arg(long)]
    pub p: Option<f64>,
    /// Marginal parameter q (transition 0 -> 1)
    #[arg(long)]
    pub q: Option<f64>,
    /// Irreducibility perturbation for max/min
    #[arg(long)]
    pub eps: Option<f64>,
    /// Y-marginal p' (general model)
    #[arg(long)]
    pub p_dash: Option<f64>,
    /// Y-marginal q' (general model)
    #[arg(long)]
    pub q_dash: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub mu1: Option<f64>,
    #[arg(long)]
    pub mu2: Option<f64>,
    /// Matrix JSON file (model = json)
    #[arg(long)]
    pub model_json: Option<PathBuf>,
}

/// Fully resolved model description (echoed into manifests).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum ModelSpec {
    Max { p: f64, q: f64, eps: f64 },
    Min { p: f64, q: f64, eps: f64 },
    Ind { p: f64, q: f64 },
    General(MarginalParams),
    Json { path: String },
}

impl ModelArgs {
    /// Resolve flags (with optional config-file fallback) to a spec.
    pub fn resolve(&self, fallback: Option<&ModelSpec>) -> anyhow::Result<ModelSpec> {
        if self.model.is_none() && self.model_json.is_none() {
            if let Some(f) = fallback {
                return Ok(f.clone());
            }
        }
        let family = self.model.as_deref().unwrap_or("max");
        let p = self.p.unwrap_or(0.9);
        let q = self.q.unwrap_or(0.7);
        let eps = self.eps.unwrap_or(0.05);
        Ok(match family {
            "max" => ModelSpec::Max { p, q, eps },
            "min" => ModelSpec::Min { p, q, eps },
            "ind" => ModelSpec::Ind { p, q },
            "general" => ModelSpec::General(MarginalParams {
                p,
                q,
                p_dash: self.p_dash.unwrap_or(p),
                q_dash: self.q_dash.unwrap_or(q),
                lambda1: self.lambda1.unwrap_or(self.p_dash.unwrap_or(p)),
                lambda2: self.lambda2.unwrap_or(self.q_dash.unwrap_or(q)),
                mu1: self.mu1.unwrap_or(self.p_dash.unwrap_or(p)),
                mu2: self.mu2.unwrap_or(self.q_dash.unwrap_or(q)),
            }),
            "json" => {
                let path = self
                    .model_json
                    .as_ref()
                    .ok_or_else(|| anyhow!("--model json requires --model-json <path>"))?;
                ModelSpec::Json {
                    path: path.display().to_string(),
                }
            }
            other => bail!("unknown model family `{other}` (max|min|ind|general|json)"),
        })
    }
}

impl ModelSpec {
    pub fn build(&self) -> anyhow::Result<TransitionMatrix> {
        Ok(match self {
            ModelSpec::Max { p, q, eps } => build_max(*p, *q, *eps)?,
            ModelSpec::Min { p, q, eps } => build_min(*p, *q, *eps)?,
            ModelSpec::Ind { p, q } => build_ind(*p, *q)?,
            ModelSpec::General(params) => build_general(*params)?,
            ModelSpec::Json { path } => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading model json {path}"))?;
                TransitionMatrix::from_json(&text)?
            }
        })
    }
}

/// Parse a pair like `1,1` or `(1,1)`.
pub fn parse_pair(text: &str) -> anyhow::Result<PairState> {
    let cleaned: String = text
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '(' && *c != ')')
        .collect();
    let parts: Vec<&str> = cleaned.split(',').collect();
    if parts.len() != 2 {
        bail!("pair `{text}` must be two comma-separated letters");
    }
    Ok(PairState::new(parts[0].parse()?, parts[1].parse()?))
}

/// Parse a triplet pattern: either a single pair (`A = B = D`) or three
/// pairs separated by `;` as `A;B;D`.
pub fn parse_pattern(text: &str) -> anyhow::Result<TripletPattern> {
    let parts: Vec<&str> = text.split(';').collect();
    match parts.len() {
        1 => Ok(TripletPattern::uniform(parse_pair(parts[0])?)),
        3 => Ok(TripletPattern::new(
            parse_pair(parts[0])?,
            parse_pair(parts[1])?,
            parse_pair(parts[2])?,
        )),
        _ => bail!("pattern `{text}` must be one pair or `A;B;D`"),
    }
}

/// Scoring-table file: `{ "k": 2, "entries": [...], "delta": 0.0 }`.
#[derive(Debug, Deserialize)]
struct TableFile {
    k: usize,
    entries: Vec<f64>,
    #[serde(default)]
    delta: f64,
}

/// Resolve a scoring scheme from `--scheme`, `--table-file`, `--delta`.
pub fn resolve_scheme(
    scheme: &str,
    table_file: Option<&PathBuf>,
    delta: Option<f64>,
    k: usize,
) -> anyhow::Result<ScoringScheme> {
    match scheme {
        "lcs" => {
            if delta.is_some_and(|d| d != 0.0) {
                bail!("--delta applies to table schemes only (the LCS scheme has delta = 0)");
            }
            Ok(ScoringScheme::lcs(k))
        }
        "table" => {
            let path = table_file.ok_or_else(|| anyhow!("--scheme table needs --table-file"))?;
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading table {}", path.display()))?;
            let tf: TableFile = serde_json::from_str(&text)?;
            Ok(ScoringScheme::new(
                tf.k,
                tf.entries,
                delta.unwrap_or(tf.delta),
            )?)
        }
        other => bail!("unknown scheme `{other}` (lcs|table)"),
    }
}

/// Parse a sequence given as one symbol per character (`0110`) or as
/// comma-separated letter indices (`0,1,1,0`).
pub fn parse_sequence(text: &str) -> anyhow::Result<Vec<u8>> {
    let trimmed = text.trim();
    if trimmed.contains(',') {
        trimmed
            .split(',')
            .map(|t| t.trim().parse::<u8>().map_err(|e| anyhow!("bad letter `{t}`: {e}")))
            .collect()
    } else {
        trimmed
            .chars()
            .map(|c| {
                c.to_digit(36)
                    .map(|d| d as u8)
                    .ok_or_else(|| anyhow!("bad symbol `{c}`"))
            })
            .collect()
    }
}

/// Parse a comma-separated list of numbers.
pub fn parse_list<T: std::str::FromStr>(text: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|e| anyhow!("bad value `{t}`: {e}"))
        })
        .collect()
}

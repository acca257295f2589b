//! Flat `key = value` experiment files. Blank lines and lines starting with
//! `#` are skipped; keys may appear once.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::CliError;

pub const KEYS: [&str; 8] = [
    "claim",
    "truth",
    "sample_sizes",
    "replications",
    "a_n",
    "seed",
    "grid_points",
    "M_policy",
];

#[derive(Debug, Default, Clone, PartialEq)]
pub struct ExperimentFile {
    pub claim: Option<String>,
    pub truth: Option<String>,
    pub sample_sizes: Option<Vec<usize>>,
    pub replications: Option<usize>,
    pub a_n: Option<String>,
    pub seed: Option<u64>,
    pub grid_points: Option<usize>,
    pub m_policy: Option<String>,
}

fn invalid(line: usize, message: impl Into<String>) -> CliError {
    CliError::Validity(format!("config line {line}: {}", message.into()))
}

fn number<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| invalid(line, format!("`{key}` expects a nonnegative integer, found `{value}`")))
}

pub fn parse(text: &str) -> Result<ExperimentFile, CliError> {
    let mut seen = BTreeMap::new();
    let mut out = ExperimentFile::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| invalid(line, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(invalid(line, format!("unknown key `{key}`")));
        }
        if let Some(first) = seen.insert(key.to_string(), line) {
            return Err(invalid(line, format!("`{key}` already set on line {first}")));
        }
        match key {
            "claim" => out.claim = Some(value.to_string()),
            "truth" => out.truth = Some(value.to_string()),
            "sample_sizes" => {
                out.sample_sizes = Some(
                    value
                        .split(',')
                        .map(|s| number(line, key, s.trim()))
                        .collect::<Result<_, _>>()?,
                )
            }
            "replications" => out.replications = Some(number(line, key, value)?),
            "a_n" => out.a_n = Some(value.to_string()),
            "seed" => out.seed = Some(number(line, key, value)?),
            "grid_points" => out.grid_points = Some(number(line, key, value)?),
            "M_policy" => out.m_policy = Some(value.to_string()),
            _ => unreachable!(),
        }
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<ExperimentFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_key() {
        let text = "# lemma 2 run\nclaim = lemma2\ntruth=reference\nsample_sizes = 250, 500,1000\n\
                    replications = 20\na_n = pow:0.2\nseed = 7\ngrid_points = 128\nM_policy = phi:0.1\n";
        let f = parse(text).unwrap();
        assert_eq!(f.sample_sizes, Some(vec![250, 500, 1000]));
        assert_eq!(f.seed, Some(7));
        assert_eq!(f.m_policy.as_deref(), Some("phi:0.1"));
        assert_eq!(f.a_n.as_deref(), Some("pow:0.2"));
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        assert!(parse("colour = red").is_err());
        assert!(parse("seed = 1\nseed = 2").is_err());
        assert!(parse("seed 1").is_err());
        assert!(parse("replications = -3").is_err());
    }
}

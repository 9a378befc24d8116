use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{EngineError, Finding, RunOptions, ScenarioConfig, Simulation};

/// A scenario file that is not well-formed TOML or does not match the
/// expected sections and keys.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// 1-based line and column of byte `offset` in `text`.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parses a scenario. Every section and key is required; unknown keys are
/// rejected.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ParseError> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ParseError {
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })
}

/// Line declaring `field` (`section.key`), if the text spells it out.
pub fn locate(text: &str, field: &str) -> Option<usize> {
    let (section, key) = field.rsplit_once('.').unwrap_or(("", field));
    let mut current = String::new();
    let mut section_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == section {
                section_line.get_or_insert(i + 1);
            }
            if current == field {
                return Some(i + 1);
            }
            continue;
        }
        if current == section
            && line
                .split_once('=')
                .is_some_and(|(k, _)| k.trim() == key)
        {
            return Some(i + 1);
        }
    }
    section_line
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issue {
    pub line: Option<usize>,
    #[serde(flatten)]
    pub finding: Finding,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.finding),
            None => write!(f, "{}", self.finding),
        }
    }
}

/// Everything wrong with a scenario, found without simulating it.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has(&self, field: &str) -> bool {
        self.issues.iter().any(|i| i.finding.field == field)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "valid");
        }
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// Range checks, then connectivity and plan-time feasibility of every piece
/// for each seed. Topology findings are skipped while range findings exist.
pub fn validate_config(cfg: &ScenarioConfig, seeds: &[u64]) -> Vec<Finding> {
    let findings = cfg.check();
    if !findings.is_empty() {
        return findings;
    }
    let mut out: Vec<Finding> = Vec::new();
    for &seed in seeds {
        let mut c = cfg.clone();
        c.run.seed = seed;
        let finding = match Simulation::new(&c, RunOptions::default()) {
            Err(EngineError::Topology(e)) => Some(Finding {
                field: "topology.range_m".into(),
                message: format!("seed {seed}: {e}"),
            }),
            Err(EngineError::Invalid(mut f)) => f.pop(),
            Ok(sim) => {
                let planned = sim.planned_pieces();
                let net = sim.net();
                let stuck = sim
                    .pieces()
                    .iter()
                    .filter(|p| net.is_alive(p.source) && net.is_alive(p.consumer))
                    .filter(|p| !planned.iter().any(|q| q.id == p.id))
                    .count();
                (stuck > 0).then(|| Finding {
                    field: "timing.l_max_ms".into(),
                    message: format!(
                        "seed {seed}: {stuck} of {} pieces have no path within {} ms at plan time",
                        sim.pieces().len(),
                        cfg.timing.l_max_ms
                    ),
                })
            }
        };
        out.extend(finding);
    }
    out
}

/// Full report for a scenario text, using its own seed when `seeds` is empty.
pub fn validate_text(text: &str, seeds: &[u64]) -> ValidationReport {
    let cfg = match parse_scenario(text) {
        Ok(cfg) => cfg,
        Err(e) => {
            return ValidationReport {
                issues: vec![Issue {
                    line: Some(e.line),
                    finding: Finding {
                        field: "scenario".into(),
                        message: format!("column {}: {}", e.column, e.message),
                    },
                }],
            }
        }
    };
    let own = [cfg.run.seed];
    let seeds = if seeds.is_empty() { &own[..] } else { seeds };
    let issues = validate_config(&cfg, seeds)
        .into_iter()
        .map(|finding| Issue {
            line: locate(text, &finding.field),
            finding,
        })
        .collect();
    ValidationReport { issues }
}

/// Renders a scenario in the file format read by [`parse_scenario`].
pub fn render_scenario(cfg: &ScenarioConfig) -> String {
    toml::to_string(cfg).expect("scenario serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_text() -> String {
        render_scenario(&ScenarioConfig::default())
    }

    #[test]
    fn default_scenario_round_trips_and_validates() {
        let text = default_text();
        assert_eq!(parse_scenario(&text).unwrap(), ScenarioConfig::default());
        let report = validate_text(&text, &[]);
        assert!(report.is_valid(), "{report}");
    }

    #[test]
    fn unknown_key_is_reported_with_its_line() {
        let text = default_text().replace("gamma = 0.5", "gamma = 0.5\ngama = 0.4");
        let want = text.lines().position(|l| l.starts_with("gama")).unwrap() + 1;
        let err = parse_scenario(&text).unwrap_err();
        assert_eq!(err.line, want);
        assert!(err.message.contains("gama"), "{}", err.message);
    }

    #[test]
    fn malformed_value_is_reported_with_its_line() {
        let text = default_text().replace("ttl = 2", "ttl = \"two\"");
        let want = text.lines().position(|l| l.starts_with("ttl")).unwrap() + 1;
        assert_eq!(parse_scenario(&text).unwrap_err().line, want);
    }

    #[test]
    fn missing_section_is_an_error() {
        let text = default_text();
        let cut = text.find("[energy]").unwrap();
        let end = text[cut..].find("\n\n").map_or(text.len(), |e| cut + e);
        let mut broken = text.clone();
        broken.replace_range(cut..end, "");
        assert!(parse_scenario(&broken).unwrap_err().message.contains("energy"));
    }

    #[test]
    fn gamma_out_of_range_is_located() {
        let text = default_text().replace("gamma = 0.5", "gamma = 1.5");
        let report = validate_text(&text, &[]);
        assert!(report.has("timing.gamma"));
        let line = text.lines().position(|l| l.starts_with("gamma")).unwrap() + 1;
        assert_eq!(report.issues[0].line, Some(line));
    }

    #[test]
    fn short_range_is_a_connectivity_finding() {
        let text = default_text().replace("range_m = 3.0", "range_m = 1.5");
        let report = validate_text(&text, &[]);
        assert!(report.has("topology.range_m"), "{report}");
        assert!(report.to_string().contains("disconnected"));
    }

    #[test]
    fn tight_latency_budget_is_infeasible_at_plan_time() {
        let text = default_text().replace("l_max_ms = 100.0", "l_max_ms = 15.0");
        let report = validate_text(&text, &[1, 2]);
        assert!(report.has("timing.l_max_ms"), "{report}");
    }

    #[test]
    fn locate_finds_keys_and_array_tables() {
        let text = "[run]\nseed = 3\n\n[[run.forced_deaths]]\ncycle = 5\n";
        assert_eq!(locate(text, "run.seed"), Some(2));
        assert_eq!(locate(text, "run.forced_deaths"), Some(4));
        assert_eq!(locate(text, "run.request_prob"), Some(1));
        assert_eq!(locate(text, "energy.eps_j"), None);
    }
}

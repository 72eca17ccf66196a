//! Plain-text `key = value` files. `#` starts a comment.

use std::str::FromStr;

use tm3_core::{FlowMode, MomentumSchedule, TrackerConfig};

use crate::error::{EvalError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_key_values(text: &str, file: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| EvalError::Parse {
            file: file.into(),
            line: idx + 1,
            message: "expected key = value".into(),
        })?;
        let value = value.trim().trim_matches('"');
        out.push(Entry { line: idx + 1, key: key.trim().to_string(), value: value.to_string() });
    }
    Ok(out)
}

pub(crate) fn parse_value<V: FromStr>(entry: &Entry, file: &str) -> Result<V> {
    entry.value.parse().map_err(|_| EvalError::Parse {
        file: file.into(),
        line: entry.line,
        message: format!("invalid value {:?} for {}", entry.value, entry.key),
    })
}

pub(crate) fn unknown_key(entry: &Entry, file: &str) -> EvalError {
    EvalError::Parse { file: file.into(), line: entry.line, message: format!("unknown key {:?}", entry.key) }
}

fn parse_flow_mode(entry: &Entry, file: &str) -> Result<FlowMode> {
    match entry.value.to_ascii_lowercase().as_str() {
        "both" => Ok(FlowMode::Both),
        "random_only" | "flow_r" => Ok(FlowMode::RandomOnly),
        "proposal_only" | "flow_e" => Ok(FlowMode::ProposalOnly),
        _ => Err(EvalError::Parse {
            file: file.into(),
            line: entry.line,
            message: format!("flow_mode must be both, random_only or proposal_only, got {:?}", entry.value),
        }),
    }
}

fn parse_momentum(entry: &Entry, file: &str) -> Result<MomentumSchedule> {
    match entry.value.to_ascii_lowercase().as_str() {
        "damped" => Ok(MomentumSchedule::Damped),
        "nesterov" => Ok(MomentumSchedule::Nesterov),
        "iteration_counter" => Ok(MomentumSchedule::IterationCounter),
        _ => Err(EvalError::Parse {
            file: file.into(),
            line: entry.line,
            message: format!("unknown momentum schedule {:?}", entry.value),
        }),
    }
}

/// Applies overrides on top of `base`; every field of [`TrackerConfig`] is
/// addressable by its name.
pub fn apply_tracker_overrides(base: TrackerConfig, entries: &[Entry], file: &str) -> Result<TrackerConfig> {
    let mut c = base;
    for e in entries {
        match e.key.as_str() {
            "n_r" => c.n_r = parse_value(e, file)?,
            "n_r_refined" => c.n_r_refined = parse_value(e, file)?,
            "n_e_refined" => c.n_e_refined = parse_value(e, file)?,
            "n_proposals" => c.n_proposals = parse_value(e, file)?,
            "tau" => c.tau = parse_value(e, file)?,
            "sigma1" => c.sigma1 = parse_value(e, file)?,
            "cap_c" => c.cap_c = parse_value(e, file)?,
            "sigma2" => c.sigma2 = parse_value(e, file)?,
            "beta" => c.beta = parse_value(e, file)?,
            "delta" => c.delta = parse_value(e, file)?,
            "n_d" => c.n_d = parse_value(e, file)?,
            "n_s" => c.n_s = parse_value(e, file)?,
            "k_codebook" => c.k_codebook = parse_value(e, file)?,
            "trivial_count" => c.trivial_count = parse_value(e, file)?,
            "tmpl_e_threshold" => c.tmpl_e_threshold = parse_value(e, file)?,
            "selection_interval" => c.selection_interval = parse_value(e, file)?,
            "sigma_s" => c.sigma_s = parse_value(e, file)?,
            "translation_cap" => c.translation_cap = parse_value(e, file)?,
            "seed" => c.seed = parse_value(e, file)?,
            "flow_mode" => c.flow_mode = parse_flow_mode(e, file)?,
            "memory_filtering" => c.memory_filtering = parse_value(e, file)?,
            "normalize_selection" => c.normalize_selection = parse_value(e, file)?,
            "momentum" => c.momentum = parse_momentum(e, file)?,
            _ => return Err(unknown_key(e, file)),
        }
    }
    c.validate()?;
    Ok(c)
}

pub fn parse_tracker_config(text: &str, file: &str) -> Result<TrackerConfig> {
    apply_tracker_overrides(TrackerConfig::default(), &parse_key_values(text, file)?, file)
}

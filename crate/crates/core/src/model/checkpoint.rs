//! Text checkpoints: a versioned header describing the architecture, then
//! the parameter block and the running normalization statistics, one
//! shortest round-trip float per line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Model, ModelSpec};
use crate::error::{Error, Result};

const MAGIC: &str = "eoerm-model";
const VERSION: u32 = 1;

fn render(model: &Model) -> String {
    let spec = model.spec();
    let mut out = String::new();
    writeln!(out, "{MAGIC} version={VERSION}").unwrap();
    writeln!(out, "input_dim={}", spec.input_dim).unwrap();
    let hidden: Vec<String> = spec.hidden.iter().map(|h| h.to_string()).collect();
    writeln!(out, "hidden={}", hidden.join(",")).unwrap();
    writeln!(out, "heads={}", spec.heads).unwrap();
    writeln!(out, "batch_norm={}", spec.batch_norm).unwrap();
    writeln!(out, "params={}", model.num_params()).unwrap();
    for p in model.params() {
        writeln!(out, "{p}").unwrap();
    }
    let stats = model.running_stats();
    writeln!(out, "running={}", stats.len()).unwrap();
    for v in stats {
        writeln!(out, "{v}").unwrap();
    }
    out
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, render(model))?;
    Ok(())
}

fn bad(reason: impl Into<String>) -> Error {
    Error::InvalidInput(format!("checkpoint: {}", reason.into()))
}

fn header<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<&'a str> {
    let line = lines.next().ok_or_else(|| bad(format!("missing `{key}`")))?;
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| bad(format!("expected `{key}=…`, found `{line}`")))
}

fn block<'a>(lines: &mut impl Iterator<Item = &'a str>, n: usize) -> Result<Vec<f64>> {
    (0..n)
        .map(|_| {
            let l = lines.next().ok_or_else(|| bad("truncated block"))?;
            l.parse().map_err(|_| bad(format!("bad number `{l}`")))
        })
        .collect()
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let first = lines.next().unwrap_or_default();
    let version = first
        .strip_prefix(MAGIC)
        .and_then(|r| r.trim().strip_prefix("version="))
        .ok_or_else(|| bad("missing header"))?;
    if version != VERSION.to_string() {
        return Err(bad(format!("unsupported version {version}")));
    }
    let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad integer `{s}`")));
    let input_dim = parse_usize(header(&mut lines, "input_dim")?)?;
    let hidden_s = header(&mut lines, "hidden")?;
    let hidden = if hidden_s.is_empty() {
        Vec::new()
    } else {
        hidden_s.split(',').map(parse_usize).collect::<Result<Vec<_>>>()?
    };
    let heads = parse_usize(header(&mut lines, "heads")?)?;
    let batch_norm = header(&mut lines, "batch_norm")? == "true";
    let mut model = Model::zeros(ModelSpec {
        input_dim,
        hidden,
        heads,
        batch_norm,
    })?;
    let n = parse_usize(header(&mut lines, "params")?)?;
    if n != model.num_params() {
        return Err(bad("parameter count does not match the architecture"));
    }
    model.set_params(&block(&mut lines, n)?)?;
    let r = parse_usize(header(&mut lines, "running")?)?;
    model.set_running_stats(&block(&mut lines, r)?)?;
    Ok(model)
}

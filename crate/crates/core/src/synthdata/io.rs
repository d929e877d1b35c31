//! Columnar text format for weak groups.
//!
//! A directory holds `manifest.txt` plus one `group_<s>.csv` per group. Each
//! group file starts with `#`-prefixed header lines (`weight`,
//! `cond_priors`, optional `label`), then a column header row, then one row
//! per sample. Floats are written in shortest round-trip form, so reading a
//! written directory reproduces the groups exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Group, LabelSet, Regime, WeakGroups};
use crate::error::{Error, Result};

const FORMAT_TAG: &str = "eoerm-groups v1";

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn write_groups(dir: &Path, groups: &WeakGroups) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    writeln!(manifest, "# {FORMAT_TAG}").unwrap();
    writeln!(manifest, "regime={}", groups.regime).unwrap();
    writeln!(manifest, "classes={}", groups.num_classes).unwrap();
    writeln!(manifest, "groups={}", groups.groups.len()).unwrap();
    writeln!(manifest, "dim={}", groups.dim()).unwrap();
    writeln!(manifest, "rank_deficient={}", groups.rank_deficient).unwrap();
    if let Some(q) = &groups.transition {
        for row in q.outer_iter() {
            writeln!(manifest, "transition={}", join(row.iter().copied())).unwrap();
        }
    }
    fs::write(dir.join("manifest.txt"), manifest)?;

    for (s, g) in groups.groups.iter().enumerate() {
        let mut out = String::new();
        writeln!(out, "# weight={}", g.weight).unwrap();
        writeln!(out, "# cond_priors={}", join(g.cond_priors.iter().copied())).unwrap();
        if let Some(label) = g.label {
            writeln!(out, "# label={label}").unwrap();
        }
        let d = g.x.ncols();
        let mut cols: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        if g.row_weights.is_some() {
            cols.push("row_weight".into());
        }
        if g.candidates.is_some() {
            cols.push("candidates".into());
        }
        writeln!(out, "{}", cols.join(",")).unwrap();
        for i in 0..g.len() {
            let mut line = join(g.x.row(i).iter().copied());
            if let Some(w) = &g.row_weights {
                write!(line, ",{}", w[i]).unwrap();
            }
            if let Some(c) = &g.candidates {
                write!(line, ",{}", c[i]).unwrap();
            }
            writeln!(out, "{line}").unwrap();
        }
        fs::write(dir.join(format!("group_{s}.csv")), out)?;
    }
    Ok(())
}

fn parse_f64(s: &str, ctx: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidInput(format!("{ctx}: bad number `{s}`")))
}

fn parse_list(s: &str, ctx: &str) -> Result<Vec<f64>> {
    s.split(',').map(|v| parse_f64(v, ctx)).collect()
}

pub fn read_groups(dir: &Path) -> Result<WeakGroups> {
    let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
    let mut regime = None;
    let mut classes = None;
    let mut count = None;
    let mut dim = 0usize;
    let mut rank_deficient = false;
    let mut transition_rows: Vec<Vec<f64>> = Vec::new();
    let mut lines = manifest.lines();
    if lines.next().map(|l| l.trim_start_matches("# ")) != Some(FORMAT_TAG) {
        return Err(Error::InvalidInput("manifest: missing format tag".into()));
    }
    for line in lines {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        match key {
            "regime" => regime = Some(value.parse::<Regime>()?),
            "classes" => classes = value.parse::<usize>().ok(),
            "groups" => count = value.parse::<usize>().ok(),
            "dim" => dim = value.parse().unwrap_or(0),
            "rank_deficient" => rank_deficient = value == "true",
            "transition" => transition_rows.push(parse_list(value, "transition")?),
            _ => {}
        }
    }
    let missing = |f: &str| Error::InvalidInput(format!("manifest: missing `{f}`"));
    let regime = regime.ok_or_else(|| missing("regime"))?;
    let num_classes = classes.ok_or_else(|| missing("classes"))?;
    let count = count.ok_or_else(|| missing("groups"))?;

    let mut groups = Vec::with_capacity(count);
    for s in 0..count {
        let path = dir.join(format!("group_{s}.csv"));
        let text = fs::read_to_string(&path)?;
        let ctx = path.display().to_string();
        let mut weight = None;
        let mut cond_priors = None;
        let mut label = None;
        let mut header: Option<Vec<String>> = None;
        let mut rows: Vec<f64> = Vec::new();
        let mut row_weights = Vec::new();
        let mut candidates = Vec::new();
        for line in text.lines() {
            if let Some(meta) = line.strip_prefix("# ") {
                if let Some((k, v)) = meta.split_once('=') {
                    match k {
                        "weight" => weight = Some(parse_f64(v, &ctx)?),
                        "cond_priors" => cond_priors = Some(parse_list(v, &ctx)?),
                        "label" => label = v.parse::<usize>().ok(),
                        _ => {}
                    }
                }
                continue;
            }
            let Some(cols) = &header else {
                header = Some(line.split(',').map(str::to_owned).collect());
                continue;
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(Error::InvalidInput(format!("{ctx}: ragged row")));
            }
            for (name, field) in cols.iter().zip(&fields) {
                match name.as_str() {
                    "row_weight" => row_weights.push(parse_f64(field, &ctx)?),
                    "candidates" => candidates.push(field.parse::<LabelSet>()?),
                    _ => rows.push(parse_f64(field, &ctx)?),
                }
            }
        }
        let cols = header.unwrap_or_default();
        let has_w = cols.iter().any(|c| c == "row_weight");
        let has_c = cols.iter().any(|c| c == "candidates");
        let d = cols.len() - has_w as usize - has_c as usize;
        let d = if d == 0 { dim } else { d };
        let n = if d == 0 { 0 } else { rows.len() / d };
        let x = Array2::from_shape_vec((n, d), rows).map_err(|e| Error::Shape(e.to_string()))?;
        let mut g = Group::new(
            x,
            weight.ok_or_else(|| Error::InvalidInput(format!("{ctx}: missing weight")))?,
            cond_priors.ok_or_else(|| Error::InvalidInput(format!("{ctx}: missing cond_priors")))?,
        );
        g.label = label;
        if has_w {
            g.row_weights = Some(Array1::from(row_weights));
        }
        if has_c {
            g.candidates = Some(candidates);
        }
        groups.push(g);
    }
    let transition = if transition_rows.is_empty() {
        None
    } else {
        let k = transition_rows.len();
        Some(
            Array2::from_shape_vec((k, k), transition_rows.concat())
                .map_err(|e| Error::Shape(e.to_string()))?,
        )
    };
    let out = WeakGroups {
        regime,
        num_classes,
        groups,
        transition,
        rank_deficient,
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{
        sample_cll, sample_pll, sample_weak_groups, uniform_transition, GaussianMixtureSpec,
        PriorMatrix, Source,
    };
    use proptest::prelude::*;

    fn source(k: usize) -> Source {
        let means: Vec<Vec<f64>> = (0..k).map(|c| vec![c as f64, -(c as f64)]).collect();
        let cov = vec![vec![1.0, 0.2], vec![0.2, 1.0]];
        Source::Gaussian(GaussianMixtureSpec::new(means, vec![cov; k], vec![1.0 / k as f64; k]).unwrap())
    }

    #[test]
    fn cll_and_pll_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cll = sample_cll(&source(3), &uniform_transition(3), 40, 1).unwrap().groups;
        write_groups(&dir.path().join("cll"), &cll).unwrap();
        assert_eq!(read_groups(&dir.path().join("cll")).unwrap(), cll);
        let pll = sample_pll(&source(4), 2.0, 30, 2).unwrap().groups;
        write_groups(&dir.path().join("pll"), &pll).unwrap();
        assert_eq!(read_groups(&dir.path().join("pll")).unwrap(), pll);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn sampled_groups_round_trip(seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0, n1 in 1usize..40, n2 in 1usize..40) {
            let pri = PriorMatrix::binary_pair(a, b).unwrap();
            let g = sample_weak_groups(&source(2), &pri, &[n1, n2], seed).unwrap().groups;
            let dir = tempfile::tempdir().unwrap();
            write_groups(dir.path(), &g).unwrap();
            prop_assert_eq!(read_groups(dir.path()).unwrap(), g);
        }
    }
}

//! Aggregation across run directories.

use crate::config::ConfigError;
use crate::run::{read_manifest, verify, RunDir, RunManifest};
use anyhow::{bail, Context};
use kpzlab::export::{fmt_f64, Plot, Series, EXPONENT_HEADERS};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

fn without_seed(v: &serde_json::Value) -> serde_json::Value {
    let mut v = v.clone();
    if let Some(o) = v.as_object_mut() {
        o.remove("master_seed");
    }
    v
}

/// `(name, value, stderr, fit_lo, fit_hi, n_replicas)`.
type ExponentRow = (String, f64, f64, f64, f64, usize);

fn read_exponents(dir: &Path, m: &RunManifest) -> anyhow::Result<Vec<ExponentRow>> {
    let Some(o) = m.outputs.iter().find(|o| o.path == "exponents.csv" || o.path == "exponents.json") else {
        return Ok(vec![]);
    };
    let p = dir.join(&o.path);
    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    let records: Vec<BTreeMap<String, String>> = if o.path.ends_with(".csv") {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        rd.deserialize().collect::<Result<_, _>>()?
    } else {
        let v: Vec<BTreeMap<String, serde_json::Value>> = serde_json::from_str(&text)?;
        v.into_iter().map(|r| r.into_iter().map(|(k, v)| (k, v.as_str().map(String::from).unwrap_or_else(|| v.to_string()))).collect()).collect()
    };
    records
        .iter()
        .map(|r| {
            let num = |k: &str| -> anyhow::Result<f64> { r.get(k).with_context(|| format!("missing column {k}"))?.parse::<f64>().with_context(|| format!("column {k}")) };
            Ok((r.get("name").cloned().unwrap_or_default(), num("value")?, num("stderr")?, num("fit_lo")?, num("fit_hi")?, num("n_replicas")? as usize))
        })
        .collect()
}

pub fn report(dirs: &[PathBuf], run: &mut RunDir) -> anyhow::Result<serde_json::Value> {
    if dirs.is_empty() {
        bail!(ConfigError("report needs at least one run directory".into()));
    }
    let mut manifests = Vec::new();
    for d in dirs {
        let m = read_manifest(d)?;
        let bad = verify(d, &m)?;
        if !bad.is_empty() {
            bail!("{}: digests do not match for {}", d.display(), bad.join(", "));
        }
        manifests.push(m);
    }
    let first = &manifests[0];
    for (d, m) in dirs.iter().zip(&manifests).skip(1) {
        if m.command != first.command || without_seed(&m.parameters) != without_seed(&first.parameters) {
            bail!(ConfigError(format!("{} has an incompatible parameter tree ({} vs {})", d.display(), m.command, first.command)));
        }
    }
    let runs: Vec<Vec<String>> =
        dirs.iter().zip(&manifests).map(|(d, m)| vec![d.display().to_string(), m.command.clone(), m.master_seed.to_string(), m.outputs.len().to_string()]).collect();
    run.write_records("runs", &["dir", "command", "master_seed", "outputs"], &runs)?;

    // pooled exponents: mean value, SE of the mean of independent estimates
    let mut pooled: BTreeMap<String, Vec<ExponentRow>> = BTreeMap::new();
    for (d, m) in dirs.iter().zip(&manifests) {
        for (name, v, se, lo, hi, n) in read_exponents(d, m)? {
            pooled.entry(name.clone()).or_default().push((name, v, se, lo, hi, n));
        }
    }
    if !pooled.is_empty() {
        let mut rows = Vec::new();
        let mut s = Series { label: "pooled".into(), err: Some(vec![]), ..Default::default() };
        for (k, (name, es)) in pooled.iter().enumerate() {
            let c = es.len() as f64;
            let (value, se) = if es.len() == 1 {
                (es[0].1, es[0].2)
            } else {
                (es.iter().map(|e| e.1).sum::<f64>() / c, es.iter().map(|e| e.2 * e.2).sum::<f64>().sqrt() / c)
            };
            let n: usize = es.iter().map(|e| e.5).sum();
            rows.push(vec![name.clone(), fmt_f64(value), fmt_f64(se), fmt_f64(es[0].3), fmt_f64(es[0].4), n.to_string()]);
            s.x.push(k as f64);
            s.y.push(value);
            s.err.as_mut().expect("set").push(se);
            println!("{name}: {value:.4} +- {se:.4} ({} runs)", es.len());
        }
        run.write_records("summary", &EXPONENT_HEADERS, &rows)?;
        let names: Vec<&str> = pooled.keys().map(String::as_str).collect();
        run.write_plot("summary.svg", &Plot::linear(&format!("pooled estimates: {}", names.join(", ")), "estimate index", "value").with_series(s))?;
    }

    let mut acceptance = Vec::new();
    for (d, m) in dirs.iter().zip(&manifests) {
        if let Some(o) = m.outputs.iter().find(|o| o.path == "acceptance.csv") {
            let text = std::fs::read_to_string(d.join(&o.path))?;
            let mut rd = csv::Reader::from_reader(text.as_bytes());
            for rec in rd.records() {
                acceptance.push(rec?.iter().map(String::from).collect::<Vec<String>>());
            }
        }
    }
    if !acceptance.is_empty() {
        run.write_records("acceptance_summary", &["criterion", "status", "measured", "bound", "detail"], &acceptance)?;
        for r in &acceptance {
            println!("{}", r.join(" | "));
        }
    }
    Ok(serde_json::json!({ "inputs": dirs.iter().map(|d| d.display().to_string()).collect::<Vec<_>>(), "command": first.command }))
}

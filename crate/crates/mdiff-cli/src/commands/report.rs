//! Renders whatever artifacts exist under the output root into one
//! human-readable Markdown summary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mdiff_core::{Error, Result};

use crate::artifacts::{read_json, read_loss_csv};
use crate::config::ExperimentConfig;

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    let root = cfg.out_root();
    let mut sections = Vec::new();
    if let Some(s) = training_section(&root)? {
        sections.push(s);
    }
    if let Some(s) = eval_section(&root)? {
        sections.push(s);
    }
    if let Some(s) = ablation_section(&root)? {
        sections.push(s);
    }
    if sections.is_empty() {
        return Err(Error::Config(format!(
            "nothing to report: no training, evaluation, or ablation artifacts under {}",
            root.display()
        )));
    }
    let mut doc = String::new();
    let _ = writeln!(doc, "# Experiment report\n");
    let build = read_json(&root.join("train").join("manifest.json"))
        .ok()
        .and_then(|m| m["run"]["build"].as_str().map(String::from))
        .unwrap_or_else(|| crate::config::BUILD_ID.to_string());
    let _ = writeln!(doc, "- root: `{}`", root.display());
    let _ = writeln!(doc, "- build: `{build}`\n");
    for s in sections {
        doc.push_str(&s);
        doc.push('\n');
    }
    let path = root.join("report.md");
    fs::write(&path, doc)?;
    println!("report: {}", path.display());
    Ok(())
}

fn training_section(root: &Path) -> Result<Option<String>> {
    let dir = root.join("train");
    if !dir.join("manifest.json").exists() {
        return Ok(None);
    }
    let manifest = read_json(&dir.join("manifest.json"))?;
    let mut s = String::new();
    let _ = writeln!(s, "## Training\n");
    let _ = writeln!(
        s,
        "- context steps: {}, denoiser steps: {} of {} ({})",
        manifest["context_steps"],
        manifest["noise_steps"],
        manifest["noise_steps_target"],
        if manifest["complete"] == serde_json::Value::Bool(true) { "complete" } else { "incomplete" }
    );
    for (name, file) in [("context loss", "context_loss.csv"), ("denoiser loss", "noise_loss.csv")] {
        let path = dir.join(file);
        if !path.exists() {
            continue;
        }
        let rows = read_loss_csv(&path)?;
        if rows.is_empty() {
            continue;
        }
        let window = rows.len().min(100);
        let head: f64 = rows[..window].iter().map(|r| r.1).sum::<f64>() / window as f64;
        let tail: f64 = rows[rows.len() - window..].iter().map(|r| r.1).sum::<f64>() / window as f64;
        let _ = writeln!(
            s,
            "- {name}: {} steps, mean of first {window} = {head:.5}, mean of last {window} = {tail:.5}",
            rows.len()
        );
    }
    Ok(Some(s))
}

fn eval_section(root: &Path) -> Result<Option<String>> {
    let path = root.join("eval").join("report.json");
    if !path.exists() {
        return Ok(None);
    }
    let report = read_json(&path)?;
    let mut s = String::new();
    let _ = writeln!(s, "## Evaluation\n");
    let _ = writeln!(
        s,
        "- {} held-out tasks, {} episodes/task, seeds {}",
        report["tasks"].as_array().map_or(0, |t| t.len()),
        report["episodes_per_task"],
        report["seeds"]
    );
    let _ = writeln!(
        s,
        "- scripted-expert oracle mean return: {:.4}\n",
        report["oracle"]["mean_return"].as_f64().unwrap_or(f64::NAN)
    );
    let _ = writeln!(s, "| warm-start | mean return | std over seeds | dynamics gap | vs oracle |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    for block in report["results"].as_array().into_iter().flatten() {
        let gap = block["gap_vs_oracle"]
            .as_f64()
            .map_or(String::from("n/a"), |g| format!("{:+.1}%", g * 100.0));
        let _ = writeln!(
            s,
            "| {} | {:.4} | {:.4} | {:.4} | {} |",
            block["quality"].as_str().unwrap_or("?"),
            block["mean_return"].as_f64().unwrap_or(f64::NAN),
            block["std_return"].as_f64().unwrap_or(f64::NAN),
            block["mean_dyn_gap"].as_f64().unwrap_or(f64::NAN),
            gap
        );
    }
    Ok(Some(s))
}

fn ablation_section(root: &Path) -> Result<Option<String>> {
    let path = root.join("ablate").join("table.csv");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    let mut s = String::new();
    let _ = writeln!(s, "## Ablation\n");
    let _ = writeln!(s, "| cell | overrides | status | mean return | vs oracle |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("cell,") || line.trim().is_empty() {
            continue;
        }
        let fields = split_csv(line);
        if fields.len() < 8 {
            continue;
        }
        let gap = fields[7]
            .parse::<f64>()
            .map_or(String::from("n/a"), |g| format!("{:+.1}%", g * 100.0));
        let ret = fields[4]
            .parse::<f64>()
            .map_or(String::from(""), |v| format!("{v:.4}"));
        let _ = writeln!(
            s,
            "| {} | `{}` | {} | {} | {} |",
            fields[0], fields[1], fields[2], ret, gap
        );
    }
    Ok(Some(s))
}

/// Splits one CSV line honoring double-quoted fields with doubled quotes.
fn split_csv(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if quoted && chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            '"' => quoted = !quoted,
            ',' if !quoted => fields.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_splitter_honors_quotes() {
        let line = r#"3,"{""guide.omega"":1.2}",ok,,-2.5,0.1,0.02,0.15"#;
        let fields = split_csv(line);
        assert_eq!(fields[0], "3");
        assert_eq!(fields[1], r#"{"guide.omega":1.2}"#);
        assert_eq!(fields[2], "ok");
        assert_eq!(fields[7], "0.15");
    }
}

use std::path::Path;

use ortho_hydra_core::harness::{entropy_summary, train, TrainConfig, TrainLog, VariantKind};

use crate::container::Container;
use crate::csvlog;
use crate::error::{exit, CliError, Result};
use crate::manifest::{unix_now, RunManifest};
use crate::verify::{self, Group};

pub const LOG_FILE: &str = "log.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ADAPTER_FILE: &str = "adapter.ohad";
pub const ENTROPY_FILE: &str = "entropy.csv";

fn create_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn describe_onset(onset: Option<usize>) -> String {
    onset.map_or_else(|| "never".to_string(), |s| s.to_string())
}

/// Trains one configuration and writes `log.csv`, `adapter.ohad` and
/// `manifest.json` into `out`. Nothing is written unless the config parses
/// and training completes.
pub fn cmd_run(config_path: &Path, out: &Path, overrides: &[String]) -> Result<()> {
    let base = crate::config::load(config_path)?;
    let cfg = crate::config::apply_overrides(&base, overrides)?;
    let mut manifest = RunManifest::new("run", cfg.clone(), overrides.to_vec());
    let outcome = train(&cfg)?;

    create_dir(out)?;
    csvlog::write_log(&out.join(LOG_FILE), &outcome.log)?;
    Container::from_stack(&outcome.stack.layers).write(&out.join(ADAPTER_FILE))?;
    manifest.outputs.insert("log".into(), LOG_FILE.into());
    manifest.outputs.insert("adapter".into(), ADAPTER_FILE.into());
    manifest.warnings = outcome.log.warnings.clone();
    manifest.finished_unix = unix_now();
    manifest.write(&out.join(MANIFEST_FILE))?;

    for w in &outcome.log.warnings {
        eprintln!("warning: {w}");
    }
    let s = entropy_summary(&outcome.log, cfg.onset_threshold);
    println!(
        "{}: final H = {:.4}, onset {}, alive {}/{}, eval task loss {:.5}",
        cfg.variant.name(),
        s.final_entropy,
        describe_onset(s.onset),
        s.alive,
        cfg.experts,
        outcome.log.eval.task_loss
    );
    println!("wrote {}", out.display());
    Ok(())
}

/// Runs naive, jittered and ortho on one preset and one data stream.
pub fn cmd_coldstart(out: &Path, preset: &str, seed: u64, overrides: &[String]) -> Result<()> {
    let mut configs = Vec::new();
    for v in VariantKind::ALL {
        let mut cfg = TrainConfig::preset(preset, v)
            .ok_or_else(|| CliError::ConfigParse(format!("unknown preset `{preset}`")))?;
        cfg.seed = seed;
        configs.push(crate::config::apply_overrides(&cfg, overrides)?);
    }

    let mut logs: Vec<(VariantKind, TrainLog)> = Vec::new();
    let started = unix_now();
    for cfg in &configs {
        logs.push((cfg.variant, train(cfg)?.log));
    }

    create_dir(out)?;
    let mut manifest = RunManifest::new("coldstart", configs[0].clone(), overrides.to_vec());
    manifest.started_unix = started;
    println!("{:<9} {:>8} {:>8} {:>6} {:>10}", "variant", "final_H", "onset", "alive", "eval_loss");
    for ((v, log), cfg) in logs.iter().zip(&configs) {
        let file = format!("{}.csv", v.name());
        csvlog::write_log(&out.join(&file), log)?;
        manifest.outputs.insert(v.name().to_string(), file);
        manifest.warnings.extend(log.warnings.iter().cloned());
        let s = entropy_summary(log, cfg.onset_threshold);
        println!(
            "{:<9} {:>8.4} {:>8} {:>6} {:>10.5}",
            v.name(),
            s.final_entropy,
            describe_onset(s.onset),
            format!("{}/{}", s.alive, cfg.experts),
            log.eval.task_loss
        );
    }
    let named: Vec<(&str, &TrainLog)> = logs.iter().map(|(v, l)| (v.name(), l)).collect();
    csvlog::write_entropy_comparison(&out.join(ENTROPY_FILE), &named)?;
    manifest.outputs.insert("entropy".into(), ENTROPY_FILE.into());
    manifest.finished_unix = unix_now();
    manifest.write(&out.join(MANIFEST_FILE))?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Prints one line per group; fails if any group fails.
pub fn cmd_verify(group: Option<Group>, seed: u64, trials: usize) -> Result<i32> {
    let groups: Vec<Group> = group.map_or_else(|| Group::ALL.to_vec(), |g| vec![g]);
    let mut failed = Vec::new();
    for g in groups {
        let r = verify::run(g, seed, trials);
        println!(
            "{} {:<9} worst {:.3e} (tol {:.0e}, {} checks)",
            if r.passed { "PASS" } else { "FAIL" },
            g.name(),
            r.worst,
            r.tolerance,
            r.checks
        );
        if !r.passed {
            failed.push(g.name());
        }
    }
    if failed.is_empty() {
        Ok(exit::OK)
    } else {
        Err(CliError::VerifyFailed(failed.join(", ")))
    }
}


//! Command implementations behind the binary: train, eval, gradcheck, synth.
//! All artifacts are CSV/TOML/JSON with headers; seeded runs are
//! byte-reproducible.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::op_checks;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{synth_degradation, SynthConfig, CMAPSS_SENSORS};
use crate::error::{Error, Result};
use crate::train::{
    action_trace_csv, evaluate, prepare, train, weight_history_csv, TrainOutcome,
};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Worker-thread cap from RGPD_THREADS (data loading is currently
/// single-threaded, so any cap ≥ 1 is honored trivially).
pub fn worker_threads() -> Result<usize> {
    match std::env::var("RGPD_THREADS") {
        Ok(v) => {
            let n: usize = v
                .parse()
                .map_err(|_| Error::invalid(format!("RGPD_THREADS = {v:?} is not a number")))?;
            if n == 0 {
                return Err(Error::invalid("RGPD_THREADS must be at least 1"));
            }
            Ok(n)
        }
        Err(_) => Ok(1),
    }
}

/// Held lock on an output directory; released (file removed) on drop.
pub struct OutDirLock {
    path: PathBuf,
}

impl OutDirLock {
    pub fn acquire(out_dir: &Path) -> Result<OutDirLock> {
        fs::create_dir_all(out_dir).map_err(|source| Error::Io {
            path: out_dir.display().to_string(),
            source,
        })?;
        let path = out_dir.join(".rgpd.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutDirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::invalid(
                format!(
                    "output directory {} is locked by another command (remove {} if stale)",
                    out_dir.display(),
                    path.display()
                ),
            )),
            Err(source) => Err(Error::Io {
                path: path.display().to_string(),
                source,
            }),
        }
    }
}

impl Drop for OutDirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn load_config(path: Option<&Path>, seed: Option<u64>, ablate: Option<&str>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| Error::Io {
                path: p.display().to_string(),
                source,
            })?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(list) = ablate {
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "rl" => cfg.train.use_rl = false,
                "mixup" => cfg.train.use_mixup = false,
                "tau" => cfg.train.use_tau = false,
                other => {
                    return Err(Error::invalid(format!(
                        "unknown ablation {other:?}; expected rl, mixup, or tau"
                    )))
                }
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_artifact(dir: &Path, name: &str, content: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, content).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_train_artifacts(dir: &Path, cfg: &RunConfig, out: &TrainOutcome) -> Result<()> {
    write_artifact(dir, "config_used.toml", &cfg.to_toml())?;
    out.checkpoint.save(&dir.join("checkpoint.json"))?;
    write_artifact(dir, "metrics.txt", &out.report.summary())?;
    write_artifact(dir, "predictions.csv", &out.report.to_csv())?;
    write_artifact(dir, "weight_history.csv", &weight_history_csv(&out.weight_history))?;
    write_artifact(dir, "action_trace.csv", &action_trace_csv(&out.action_trace))?;
    let mut losses = String::from("epoch,train_loss\n");
    for (i, l) in out.epoch_losses.iter().enumerate() {
        let _ = writeln!(losses, "{},{}", i + 1, l);
    }
    write_artifact(dir, "epoch_losses.csv", &losses)
}

pub fn cmd_train(
    config: Option<&Path>,
    out_dir: &Path,
    seed: Option<u64>,
    ablate: Option<&str>,
) -> Result<()> {
    let _threads = worker_threads()?;
    let cfg = load_config(config, seed, ablate)?;
    let _lock = OutDirLock::acquire(out_dir)?;
    let prepared = prepare(&cfg)?;
    let outcome = train(&cfg, &prepared, Some(out_dir))?;
    write_train_artifacts(out_dir, &cfg, &outcome)?;
    print!("{}", outcome.report.summary());
    println!("best valid RMSE = {:.6}", outcome.best_valid_rmse);
    println!("artifacts written to {}", out_dir.display());
    Ok(())
}

pub fn cmd_eval(
    config: Option<&Path>,
    checkpoint_path: &Path,
    out_dir: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = load_config(config, seed, None)?;
    let ckpt = Checkpoint::load(checkpoint_path)?;
    let model = ckpt.restore_model()?;
    let policy = ckpt.restore_policy()?;
    let channel_graph = ckpt.restore_channel_graph()?;
    let prepared = prepare(&cfg)?;
    if prepared.normalizer != ckpt.normalizer {
        eprintln!(
            "warning: normalizer refitted from the configured dataset differs from the \
             checkpoint's; using the checkpoint statistics"
        );
    }
    let test: Vec<_> = prepared
        .test
        .iter()
        .map(|w| {
            // undo the prepare-time normalization, then apply the checkpoint's
            let mut raw = w.clone();
            for row in &mut raw.data {
                *row = prepared.normalizer.denormalize(row);
            }
            ckpt.normalizer.apply(&raw)
        })
        .collect();
    let report = evaluate(
        &model,
        policy.as_ref(),
        &test,
        channel_graph.as_ref(),
        ckpt.score_convention,
        ckpt.soh_mode,
    )?;
    print!("{}", report.summary());
    if let Some(dir) = out_dir {
        let _lock = OutDirLock::acquire(dir)?;
        write_artifact(dir, "eval_report.csv", &report.to_csv())?;
        write_artifact(dir, "eval_metrics.txt", &report.summary())?;
        println!("report written to {}", dir.display());
    }
    Ok(())
}

/// Per-op finite-difference table over `n_seeds` seeds; Ok only if every op
/// stays under the tolerance.
pub fn cmd_gradcheck(seed: u64, n_seeds: usize) -> Result<()> {
    println!("{:<34} {:>14}", "op", "max rel err");
    let mut offenders = Vec::new();
    for check in op_checks() {
        let mut worst: f64 = 0.0;
        for k in 0..n_seeds as u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k));
            worst = worst.max(check.run(&mut rng)?);
        }
        let flag = if worst < GRADCHECK_TOLERANCE { "" } else { "  FAIL" };
        println!("{:<34} {:>14.3e}{flag}", check.name, worst);
        if worst >= GRADCHECK_TOLERANCE {
            offenders.push(check.name);
        }
    }
    if offenders.is_empty() {
        println!("all ops under {GRADCHECK_TOLERANCE:.0e}");
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "gradient check failed for: {}",
            offenders.join(", ")
        )))
    }
}

/// Render the synthetic generator's output in the 26-column CMAPSS text
/// convention (settings zeroed, unused sensor columns zero-padded).
pub fn synth_to_cmapss_text(cfg: &SynthConfig, seed: u64) -> Result<String> {
    if cfg.n_channels > CMAPSS_SENSORS {
        return Err(Error::invalid(format!(
            "synthetic channels {} exceed the {CMAPSS_SENSORS}-sensor format",
            cfg.n_channels
        )));
    }
    let units = synth_degradation(cfg, seed);
    let mut out = String::new();
    for u in &units {
        for (row, &cycle) in u.channels.iter().zip(&u.cycles) {
            let _ = write!(out, "{} {} 0 0 0", u.unit_id, cycle);
            for v in row {
                let _ = write!(out, " {v}");
            }
            for _ in row.len()..CMAPSS_SENSORS {
                out.push_str(" 0");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn cmd_synth(config: Option<&Path>, out_path: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config, seed, None)?;
    let synth = SynthConfig {
        n_units: cfg.data.synth_units,
        min_len: cfg.data.synth_min_len,
        max_len: cfg.data.synth_max_len,
        n_channels: cfg.data.synth_channels,
        noise_sigma: cfg.data.synth_noise,
    };
    let text = synth_to_cmapss_text(&synth, cfg.seed)?;
    fs::write(out_path, &text).map_err(|source| Error::Io {
        path: out_path.display().to_string(),
        source,
    })?;
    println!(
        "wrote {} units to {}",
        cfg.data.synth_units,
        out_path.display()
    );
    Ok(())
}

/// 0 success, 1 user error, 2 numerical failure.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::NonFinite(_) | Error::Diverged(_) => 2,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_cmapss;

    #[test]
    fn synth_round_trips_through_the_loader() {
        let cfg = SynthConfig {
            n_units: 3,
            min_len: 10,
            max_len: 15,
            n_channels: 4,
            noise_sigma: 0.05,
        };
        let text = synth_to_cmapss_text(&cfg, 7).unwrap();
        let again = synth_to_cmapss_text(&cfg, 7).unwrap();
        assert_eq!(text, again, "seeded synth must be byte-identical");
        let units = parse_cmapss(&text, &[]).unwrap();
        assert_eq!(units.len(), 3);
        let direct = synth_degradation(&cfg, 7);
        for (a, b) in units.iter().zip(&direct) {
            assert_eq!(a.len(), b.len());
            for (ra, rb) in a.channels.iter().zip(&b.channels) {
                assert_eq!(&ra[..4], &rb[..]); // float text round-trip is lossless
                assert!(ra[4..].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn lock_excludes_second_holder() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutDirLock::acquire(dir.path()).unwrap();
        assert!(OutDirLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(OutDirLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn ablate_list_parses() {
        let cfg = load_config(None, Some(3), Some("rl,tau")).unwrap();
        assert!(!cfg.train.use_rl && cfg.train.use_tau == false && cfg.train.use_mixup);
        assert_eq!(cfg.seed, 3);
        assert!(load_config(None, None, Some("dropout")).is_err());
    }

    #[test]
    fn exit_codes_partition_errors() {
        assert_eq!(exit_code_for(&Error::invalid("bad flag")), 1);
        assert_eq!(exit_code_for(&Error::Diverged("nan".into())), 2);
        assert_eq!(exit_code_for(&Error::NonFinite("grad".into())), 2);
    }
}

//! The four commands: train, price, compare and emit-reference.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tdgf_core::evaluation::{dgm_surface, moneyness_grid, tdgf_surface, timing_taus};
use tdgf_core::network::{load_checkpoint_expecting, save_checkpoint};
use tdgf_core::oracle::{binomial_price_1d, lsm_price, simulate_paths};
use tdgf_core::solvers::{dgm_train_with, tdgf_train_with, TelemetryRow};
use tdgf_core::{content_hash, CheckpointMeta, Model, NetParams, Problem, SurfaceRow};

use crate::config::{Method, RunConfig};
use crate::error::CliError;
use crate::output::{fmt_f, read_csv, write_csv, Manifest};

const TAU_NOTE: &str = "pricing maturities default to 0.25, 0.5, 0.75 and 1.0 when not configured";

pub fn checkpoint_dir(out: &Path, method: Method) -> PathBuf {
    out.join("checkpoints").join(method.as_str())
}

pub fn tdgf_checkpoint_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("step_{k:04}.ckpt"))
}

pub fn dgm_checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("net.ckpt")
}

fn parse_f(s: &str, what: &str) -> Result<f64, CliError> {
    s.parse::<f64>()
        .map_err(|_| CliError::Validation(format!("{what}: `{s}` is not a number")))
}

fn telemetry_rows(rows: &[TelemetryRow], deterministic: bool) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.stage.to_string(),
                r.step.to_string(),
                r.loss.map(fmt_f).unwrap_or_default(),
                r.active.to_string(),
                fmt_f(if deterministic { 0.0 } else { r.elapsed }),
            ]
        })
        .collect()
}

const TELEMETRY_HEADER: [&str; 5] = ["stage", "k", "loss", "active", "wall_clock"];

/// Train the configured method, writing checkpoints as they are produced,
/// then the telemetry CSV and a manifest.
pub fn cmd_train(cfg: &RunConfig, deterministic: bool) -> Result<Manifest, CliError> {
    cfg.validate()?;
    let problem = cfg.problem()?;
    let train = cfg.train_config();
    let hash = cfg.hash();
    let model_hash = content_hash(&problem);
    let dir = checkpoint_dir(&cfg.out, cfg.method);
    std::fs::create_dir_all(&dir)?;
    let start = Instant::now();
    let mut manifest = Manifest::new("train", Some(cfg.method.as_str()), &hash, cfg.seed, deterministic);
    let meta = |step: usize| CheckpointMeta {
        step,
        seed: cfg.seed,
        model_hash: model_hash.clone(),
        state_dim: problem.model.state_dim(),
        method: cfg.method.as_str().into(),
    };
    let telemetry = match cfg.method {
        Method::Tdgf => {
            let mut files = Vec::new();
            let sol = tdgf_train_with(&problem, &cfg.time_grid, &train, |k, net| {
                let path = tdgf_checkpoint_path(&dir, k);
                save_checkpoint(net, &meta(k), &path)?;
                files.push(path);
                Ok(())
            })?;
            manifest.files.extend(files);
            manifest.step_seconds = sol.step_seconds.clone();
            manifest.training_seconds = Some(sol.step_seconds.iter().sum());
            manifest
                .assumptions
                .push(format!("payoff fit RMSE on the moneyness grid: {:.3e}", sol.initial_rmse));
            if sol.skipped > 0 {
                manifest.assumptions.push(format!("{} stages skipped for empty masks", sol.skipped));
            }
            sol.telemetry
        }
        Method::Dgm => {
            let sol = dgm_train_with(&problem, cfg.time_grid.maturity, &train, |_, _| Ok(()))?;
            let path = dgm_checkpoint_path(&dir);
            save_checkpoint(&sol.params, &meta(0), &path)?;
            manifest.files.push(path);
            manifest.training_seconds = Some(sol.seconds);
            sol.telemetry
        }
    };
    let tpath = cfg.out.join(format!("telemetry_{}.csv", cfg.method.as_str()));
    write_csv(
        &tpath,
        &hash,
        cfg.seed,
        &[],
        &TELEMETRY_HEADER,
        telemetry_rows(&telemetry, deterministic),
    )?;
    manifest.files.push(tpath);
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    if deterministic {
        manifest.assumptions.push("deterministic mode: wall-clock columns in CSV output are zeroed".into());
    }
    manifest.write(&cfg.out)?;
    Ok(manifest)
}

/// Trained networks for one method, ready to evaluate.
pub enum Trained {
    Tdgf(Vec<NetParams>),
    Dgm(NetParams),
}

pub fn load_trained(cfg: &RunConfig, method: Method, dir: &Path) -> Result<Trained, CliError> {
    let n = cfg.model.state_dim();
    let problem = cfg.problem()?;
    let expect_hash = content_hash(&problem);
    let check = |meta: &CheckpointMeta, path: &Path| -> Result<(), CliError> {
        if meta.model_hash != expect_hash {
            return Err(CliError::Validation(format!(
                "checkpoint {} was trained on a different model or payoff",
                path.display()
            )));
        }
        Ok(())
    };
    match method {
        Method::Tdgf => {
            let mut nets = Vec::with_capacity(cfg.time_grid.steps + 1);
            for k in 0..=cfg.time_grid.steps {
                let path = tdgf_checkpoint_path(dir, k);
                if !path.exists() {
                    return Err(CliError::Validation(format!(
                        "missing checkpoint {} (time grid expects {} steps)",
                        path.display(),
                        cfg.time_grid.steps
                    )));
                }
                let (net, meta) = load_checkpoint_expecting(&path, n)?;
                check(&meta, &path)?;
                nets.push(net);
            }
            Ok(Trained::Tdgf(nets))
        }
        Method::Dgm => {
            let path = dgm_checkpoint_path(dir);
            let (net, meta) = load_checkpoint_expecting(&path, n + 1)?;
            check(&meta, &path)?;
            Ok(Trained::Dgm(net))
        }
    }
}

pub fn surface(cfg: &RunConfig, trained: &Trained, problem: &Problem, taus: &[f64]) -> Result<Vec<SurfaceRow>, CliError> {
    let v = cfg.pricing.variance_level;
    Ok(match trained {
        Trained::Tdgf(nets) => tdgf_surface(nets, &cfg.time_grid, problem, taus, v)?,
        Trained::Dgm(net) => dgm_surface(net, cfg.train.dgm_output, cfg.time_grid.maturity, problem, taus, v)?,
    })
}

pub fn surface_path(out: &Path, method: Method) -> PathBuf {
    out.join(format!("surface_{}.csv", method.as_str()))
}

/// Evaluate a trained method on the moneyness grid at every configured τ.
pub fn cmd_price(cfg: &RunConfig, method: Method, checkpoints: &Path, deterministic: bool) -> Result<Vec<SurfaceRow>, CliError> {
    cfg.validate()?;
    let problem = cfg.problem()?;
    let start = Instant::now();
    let trained = load_trained(cfg, method, checkpoints)?;
    let rows = surface(cfg, &trained, &problem, &cfg.pricing.taus)?;

    let timing = timing_taus(cfg.time_grid.maturity);
    let t = Instant::now();
    for &tau in &timing {
        surface(cfg, &trained, &problem, &[tau])?;
    }
    let eval_seconds = t.elapsed().as_secs_f64() / timing.len() as f64;

    std::fs::create_dir_all(&cfg.out)?;
    let hash = cfg.hash();
    let path = surface_path(&cfg.out, method);
    write_csv(
        &path,
        &hash,
        cfg.seed,
        &[TAU_NOTE.into()],
        &["tau", "moneyness", "price", "continuation", "method"],
        rows.iter().map(|r| {
            vec![
                fmt_f(r.tau),
                fmt_f(r.moneyness),
                fmt_f(r.price),
                fmt_f(r.continuation),
                r.method.clone(),
            ]
        }),
    )?;
    let mut m = Manifest::new("price", Some(method.as_str()), &hash, cfg.seed, deterministic);
    m.eval_seconds = Some(eval_seconds);
    m.assumptions.push(TAU_NOTE.into());
    m.assumptions
        .push(format!("evaluation time averaged over {} maturities", timing.len()));
    m.files.push(path);
    m.wall_clock_seconds = start.elapsed().as_secs_f64();
    m.write(&cfg.out)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub tau: f64,
    pub moneyness: f64,
    pub lsm_price: f64,
    pub lsm_std_error: f64,
    pub binomial_price: Option<f64>,
}

pub fn reference_path(out: &Path) -> PathBuf {
    out.join("reference.csv")
}

/// Seed of the Monte Carlo run at maturity index `ti`, grid point `pi`.
pub fn point_seed(seed: u64, ti: usize, pi: usize) -> u64 {
    seed ^ (((ti as u64) << 32) | pi as u64)
}

/// LSM (and, for one Black–Scholes asset, binomial) prices on the grid.
pub fn cmd_emit_reference(cfg: &RunConfig, deterministic: bool) -> Result<Vec<ReferenceRow>, CliError> {
    cfg.validate()?;
    let problem = cfg.problem()?;
    let start = Instant::now();
    let (levels, states) = moneyness_grid(&problem.model, &problem.domain, cfg.pricing.variance_level);
    let tree = match &problem.model {
        Model::BlackScholes(b) if b.sigma.len() == 1 => Some((b.rate, b.sigma[0])),
        _ => None,
    };
    let mut rows = Vec::new();
    let mut lsm_seconds = 0.0;
    let mut lsm_runs = 0;
    for (ti, &tau) in cfg.pricing.taus.iter().enumerate() {
        for (pi, &m) in levels.iter().enumerate() {
            let s0 = states.row(pi).to_vec();
            let (price, se) = if tau == 0.0 {
                (problem.payoff.value(&s0), 0.0)
            } else {
                let t = Instant::now();
                let paths = simulate_paths(
                    &problem.model,
                    &s0,
                    tau,
                    cfg.reference.paths,
                    cfg.reference.steps,
                    point_seed(cfg.seed, ti, pi),
                )?;
                let est = lsm_price(&paths, &problem.payoff, problem.model.rate(), cfg.reference.basis)?;
                lsm_seconds += t.elapsed().as_secs_f64();
                lsm_runs += 1;
                (est.price, est.std_error)
            };
            let binomial = match tree {
                Some((r, sigma)) => Some(binomial_price_1d(
                    r,
                    sigma,
                    tau,
                    cfg.strike,
                    m,
                    cfg.reference.binomial_steps,
                )?),
                None => None,
            };
            rows.push(ReferenceRow {
                tau,
                moneyness: m,
                lsm_price: price,
                lsm_std_error: se,
                binomial_price: binomial,
            });
        }
    }
    std::fs::create_dir_all(&cfg.out)?;
    let hash = cfg.hash();
    let path = reference_path(&cfg.out);
    write_csv(
        &path,
        &hash,
        cfg.seed,
        &[
            format!("lsm paths={} steps={} basis={:?}", cfg.reference.paths, cfg.reference.steps, cfg.reference.basis),
            TAU_NOTE.into(),
        ],
        &["tau", "moneyness", "lsm_price", "lsm_std_error", "binomial_price"],
        rows.iter().map(|r| {
            vec![
                fmt_f(r.tau),
                fmt_f(r.moneyness),
                fmt_f(r.lsm_price),
                fmt_f(r.lsm_std_error),
                r.binomial_price.map(fmt_f).unwrap_or_default(),
            ]
        }),
    )?;
    let mut m = Manifest::new("emit-reference", None, &hash, cfg.seed, deterministic);
    if lsm_runs > 0 {
        m.eval_seconds = Some(lsm_seconds / lsm_runs as f64);
    }
    m.assumptions.push(TAU_NOTE.into());
    m.files.push(path);
    m.wall_clock_seconds = start.elapsed().as_secs_f64();
    m.write(&cfg.out)?;
    Ok(rows)
}

type Key = (u64, u64);

fn key(tau: f64, m: f64) -> Key {
    (tau.to_bits(), m.to_bits())
}

/// Prices keyed by grid point from a surface or reference CSV.
pub fn read_prices(path: &Path) -> Result<BTreeMap<Key, (f64, f64, Option<f64>, Option<f64>)>, CliError> {
    let (header, rows) = read_csv(path)?;
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(ti), Some(mi)) = (col("tau"), col("moneyness")) else {
        return Err(CliError::Validation(format!("{}: missing tau/moneyness columns", path.display())));
    };
    let pi = col("price").or(col("lsm_price")).ok_or_else(|| {
        CliError::Validation(format!("{}: no price column", path.display()))
    })?;
    let se = col("lsm_std_error");
    let bin = col("binomial_price");
    let mut out = BTreeMap::new();
    for r in rows {
        let tau = parse_f(&r[ti], "tau")?;
        let m = parse_f(&r[mi], "moneyness")?;
        let p = parse_f(&r[pi], "price")?;
        let s = se.map(|i| parse_f(&r[i], "lsm_std_error")).transpose()?;
        let b = match bin {
            Some(i) if !r[i].is_empty() => Some(parse_f(&r[i], "binomial_price")?),
            _ => None,
        };
        out.insert(key(tau, m), (tau, p, s, b));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStat {
    pub a: String,
    pub b: String,
    pub max_abs: f64,
    pub mean_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub training_seconds: Option<f64>,
    pub eval_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub points: usize,
    pub pairs: Vec<PairStat>,
    pub timing: Vec<TimingRow>,
}

impl CompareReport {
    pub fn pair(&self, a: &str, b: &str) -> Option<&PairStat> {
        self.pairs
            .iter()
            .find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
    }
}

fn manifest_near(csv: &Path, command: &str, method: Option<&str>) -> Option<Manifest> {
    let dir = csv.parent()?;
    Manifest::read(&dir.join(Manifest::file_name(command, method))).ok()
}

/// Join the TDGF, DGM and Monte Carlo prices on the grid and report
/// pairwise deviations and timings.
pub fn cmd_compare(
    cfg: &RunConfig,
    tdgf: &Path,
    dgm: &Path,
    reference: &Path,
    deterministic: bool,
) -> Result<CompareReport, CliError> {
    let start = Instant::now();
    let sources = [("tdgf", tdgf), ("dgm", dgm), ("lsm", reference)];
    let tables = sources
        .iter()
        .map(|(_, p)| read_prices(p))
        .collect::<Result<Vec<_>, _>>()?;
    let keys: Vec<Key> = tables[0].keys().copied().collect();
    for (t, (name, p)) in tables.iter().zip(&sources) {
        if t.len() != keys.len() || !keys.iter().all(|k| t.contains_key(k)) {
            return Err(CliError::Validation(format!(
                "grid mismatch: {} ({name}) does not cover the same (tau, moneyness) points",
                p.display()
            )));
        }
    }
    let price = |i: usize, k: &Key| tables[i][k].1;
    let has_binomial = keys.iter().all(|k| tables[2][k].3.is_some());
    let mut names: Vec<&str> = vec!["tdgf", "dgm", "lsm"];
    if has_binomial {
        names.push("binomial");
    }
    let value = |name: &str, k: &Key| match name {
        "tdgf" => price(0, k),
        "dgm" => price(1, k),
        "lsm" => price(2, k),
        _ => tables[2][k].3.expect("checked"),
    };
    let mut pairs = Vec::new();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let d: Vec<f64> = keys.iter().map(|k| (value(names[i], k) - value(names[j], k)).abs()).collect();
            pairs.push(PairStat {
                a: names[i].into(),
                b: names[j].into(),
                max_abs: d.iter().cloned().fold(0.0, f64::max),
                mean_abs: d.iter().sum::<f64>() / d.len().max(1) as f64,
            });
        }
    }
    let mut timing = Vec::new();
    for (name, p) in &sources[..2] {
        timing.push(TimingRow {
            method: name.to_string(),
            training_seconds: manifest_near(p, "train", Some(name)).and_then(|m| m.training_seconds),
            eval_seconds: manifest_near(p, "price", Some(name)).and_then(|m| m.eval_seconds),
        });
    }
    timing.push(TimingRow {
        method: "lsm".into(),
        training_seconds: None,
        eval_seconds: manifest_near(reference, "emit-reference", None).and_then(|m| m.eval_seconds),
    });
    let report = CompareReport {
        points: keys.len(),
        pairs,
        timing,
    };

    std::fs::create_dir_all(&cfg.out)?;
    let hash = cfg.hash();
    let cpath = cfg.out.join("comparison.csv");
    let mut header = vec!["tau", "moneyness", "tdgf", "dgm", "lsm", "lsm_std_error"];
    if has_binomial {
        header.push("binomial");
    }
    let moneyness = |k: &Key| f64::from_bits(k.1);
    write_csv(
        &cpath,
        &hash,
        cfg.seed,
        &[],
        &header,
        keys.iter().map(|k| {
            let mut r = vec![
                fmt_f(tables[0][k].0),
                fmt_f(moneyness(k)),
                fmt_f(price(0, k)),
                fmt_f(price(1, k)),
                fmt_f(price(2, k)),
                tables[2][k].2.map(fmt_f).unwrap_or_default(),
            ];
            if has_binomial {
                r.push(fmt_f(value("binomial", k)));
            }
            r
        }),
    )?;
    let rpath = cfg.out.join("comparison_report.json");
    let mut shown = report.clone();
    if deterministic {
        for t in shown.timing.iter_mut() {
            t.training_seconds = None;
            t.eval_seconds = None;
        }
    }
    std::fs::write(&rpath, serde_json::to_string_pretty(&shown)?)?;
    let mut m = Manifest::new("compare", None, &hash, cfg.seed, deterministic);
    m.files.extend([cpath, rpath]);
    m.wall_clock_seconds = start.elapsed().as_secs_f64();
    m.write(&cfg.out)?;
    Ok(report)
}

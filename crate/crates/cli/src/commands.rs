use std::fs;
use std::path::{Path, PathBuf};

use netcoupler::baseline::fit_baseline;
use netcoupler::coupling::{
    fit_parameters, marginal_coupling_posterior, read_summary_csv, write_summary_csv,
    CouplingMixture, FitConfig, FitLog, HyperPosterior,
};
use netcoupler::eval::{
    coverage_log_density, edge_labels, gen_sparse_networks, off_diagonal, sign_test_p, tscore_auc,
    BenchmarkSuite,
};
use netcoupler::favi::{train_favi, HpEstimator};
use netcoupler::model::io::{read_signal, write_signal, SignalSidecar, TruthManifest};
use netcoupler::model::{sample_dataset, CouplingSet, Matrix, MdsModel};
use netcoupler::neuro::simulate_neuro_dataset;
use netcoupler::rng::{derive_seed, substream};
use netcoupler::{ModelConfig, ObservedSignal};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::failure::Failure;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

type Res<T> = Result<T, Failure>;

/// Writes `resolved_config.json`: tool version, command, inputs and the
/// resolved config.
pub fn write_echo(out: &Path, command: &str, cfg: &RunConfig, inputs: Value) -> Res<()> {
    fs::create_dir_all(out)?;
    let echo = json!({
        "tool": "netcoupler",
        "version": VERSION,
        "command": command,
        "inputs": inputs,
        "config": cfg,
    });
    fs::write(
        out.join("resolved_config.json"),
        serde_json::to_string_pretty(&echo)?,
    )?;
    Ok(())
}

fn path_json(p: &Path) -> Value {
    json!(p.display().to_string())
}

/// Model dimensions follow the data; priors and `K` follow the config.
fn model_for(cfg: &RunConfig, signal: &ObservedSignal) -> Res<MdsModel> {
    let config = ModelConfig {
        m: signal.nodes(),
        t: signal.len(),
        c: signal.track.conditions(),
        dt: signal.dt,
        ..cfg.model.clone()
    };
    Ok(MdsModel::new(config, cfg.kernel.clone())?)
}

pub fn load_dataset(path: &Path) -> Res<ObservedSignal> {
    let sidecar = path.with_extension("json");
    let (signal, _) = read_signal(path, &sidecar)?;
    Ok(signal)
}

pub fn load_estimator(path: &Path) -> Res<HpEstimator> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Failure::input(format!("bad checkpoint path {}", path.display())))?;
    Ok(HpEstimator::load(dir, stem)?)
}

fn write_log(path: &Path, log: &FitLog) -> Res<()> {
    Ok(log.write_csv(path)?)
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Res<()> {
    write_echo(out, "simulate", cfg, json!({}))?;
    let mut rng = substream(cfg.seed, &[10]);
    match &cfg.neuro {
        Some(neuro) => {
            let (signal, traj) = simulate_neuro_dataset(neuro, &mut rng)?;
            let mut side = SignalSidecar::for_signal(&signal, cfg.model.k, cfg.seed);
            side.generator = Some("neuro".into());
            side.generator_config = Some(serde_json::to_value(neuro)?);
            write_signal(out, "signal", &signal, &side)?;
            let mut w = csv::Writer::from_path(out.join("events.csv"))?;
            w.write_record(["time", "region"])?;
            for (step, region) in &traj.events {
                w.write_record([
                    format!("{:?}", *step as f64 * traj.dt_ode),
                    region.to_string(),
                ])?;
            }
            w.flush()?;
        }
        None => {
            let model = MdsModel::new(cfg.model.clone(), cfg.kernel.clone())?;
            let ds = sample_dataset(&model, &mut rng)?;
            let mut side = SignalSidecar::for_signal(&ds.signal, cfg.model.k, cfg.seed);
            side.generator = Some("mds".into());
            write_signal(out, "signal", &ds.signal, &side)?;
            let truth = TruthManifest::new(&ds.prior.coupling, &ds.hyper(), Some(&ds.latent.x));
            fs::write(
                out.join("truth.json"),
                serde_json::to_string_pretty(&truth)?,
            )?;
        }
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &Path) -> Res<HpEstimator> {
    write_echo(out, "train-favi", cfg, json!({}))?;
    let (est, log) = train_favi(&cfg.favi, &cfg.model)?;
    est.save(out, "favi")?;
    log.write_csv(&out.join("favi_log.csv"))?;
    Ok(est)
}

/// h-VB fit followed by the marginal coupling mixture.
fn fit_hvb(
    model: &MdsModel,
    signal: &ObservedSignal,
    hp: &dyn HyperPosterior,
    fit: &FitConfig,
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
) -> Res<(
    netcoupler::coupling::FittedCoupling,
    FitLog,
    CouplingMixture,
)> {
    let (fitted, log) = fit_parameters(model, signal, hp, fit, checkpoint)?;
    let mix = marginal_coupling_posterior(
        &fitted,
        hp,
        signal,
        cfg.summary.mixture_draws,
        &mut substream(fit.seed, &[7]),
    )?;
    Ok((fitted, log, mix))
}

pub fn infer(cfg: &RunConfig, dataset: &Path, hp_path: &Path, out: &Path) -> Res<()> {
    write_echo(
        out,
        "infer",
        cfg,
        json!({"dataset": path_json(dataset), "hp_checkpoint": path_json(hp_path)}),
    )?;
    let signal = load_dataset(dataset)?;
    let model = model_for(cfg, &signal)?;
    let hp = load_estimator(hp_path)?;
    let (fitted, log, mix) = fit_hvb(&model, &signal, &hp, &cfg.fit, cfg, Some(out))?;
    fitted.save(out, "posterior")?;
    write_log(&out.join("fit_log.csv"), &log)?;
    write_summary_csv(
        &out.join("summary.csv"),
        &mix.summary(cfg.summary.threshold, cfg.seed),
    )?;
    Ok(())
}

pub fn infer_baseline(cfg: &RunConfig, dataset: &Path, out: &Path) -> Res<()> {
    write_echo(
        out,
        "infer-baseline",
        cfg,
        json!({"dataset": path_json(dataset)}),
    )?;
    let signal = load_dataset(dataset)?;
    let model = model_for(cfg, &signal)?;
    let (post, log) = fit_baseline(&model, &signal, &cfg.baseline, Some(out))?;
    post.save(out, "baseline", &model.config, &cfg.baseline)?;
    write_log(&out.join("fit_log.csv"), &log)?;
    write_summary_csv(
        &out.join("summary.csv"),
        &post
            .coupling_mixture()
            .summary(cfg.summary.threshold, cfg.seed),
    )?;
    Ok(())
}

/// Per-subject result of a benchmark fit.
struct SubjectFit {
    hvb: CouplingMixture,
    baseline: CouplingMixture,
}

fn subject_fits(
    cfg: &RunConfig,
    model: &MdsModel,
    hp: &HpEstimator,
    jobs: &[(usize, usize, &ObservedSignal)],
) -> Res<Vec<SubjectFit>> {
    jobs.par_iter()
        .map(|&(n, s, signal)| {
            let seed = derive_seed(cfg.seed, &[12, n as u64, s as u64]);
            let fit = FitConfig {
                seed,
                ..cfg.fit.clone()
            };
            let (_, _, hvb) = fit_hvb(model, signal, hp, &fit, cfg, None)?;
            let base_cfg = FitConfig {
                seed,
                ..cfg.baseline.clone()
            };
            let (post, _) = fit_baseline(model, signal, &base_cfg, None)?;
            Ok(SubjectFit {
                hvb,
                baseline: post.coupling_mixture(),
            })
        })
        .collect()
}

fn edge_means(mix: &CouplingMixture) -> Vec<f64> {
    mix.mean_set()
        .matrices
        .iter()
        .flat_map(off_diagonal)
        .collect()
}

struct AucWriter {
    dir: PathBuf,
    auc: csv::Writer<fs::File>,
    roc: csv::Writer<fs::File>,
    reports: Vec<Value>,
}

impl AucWriter {
    fn new(out: &Path) -> Res<Self> {
        let mut auc = csv::Writer::from_path(out.join("auc.csv"))?;
        auc.write_record(["network", "method", "auc"])?;
        let mut roc = csv::Writer::from_path(out.join("roc.csv"))?;
        roc.write_record(["network", "method", "fpr", "tpr"])?;
        Ok(Self {
            dir: out.to_path_buf(),
            auc,
            roc,
            reports: Vec::new(),
        })
    }

    /// Scores one network; networks without both present and absent edges
    /// get `NaN`.
    fn network(
        &mut self,
        network: usize,
        method: &str,
        fits: &[&CouplingMixture],
        truth: &CouplingSet,
    ) -> Res<Option<f64>> {
        let labels: Vec<bool> = truth.matrices.iter().flat_map(edge_labels).collect();
        let means: Vec<Vec<f64>> = fits.iter().map(|m| edge_means(m)).collect();
        let both = labels.iter().any(|l| *l) && labels.iter().any(|l| !*l);
        if !both || means.len() < 2 {
            self.auc
                .write_record([network.to_string(), method.into(), "NaN".into()])?;
            return Ok(None);
        }
        let report = tscore_auc(&means, &labels)?;
        self.reports.push(json!({
            "network": network,
            "method": method,
            "auc": report.auc,
            "scores": report.scores,
            "labels": report.labels,
        }));
        self.auc.write_record([
            network.to_string(),
            method.into(),
            format!("{:?}", report.auc),
        ])?;
        for (fpr, tpr) in &report.roc {
            self.roc.write_record([
                network.to_string(),
                method.into(),
                format!("{fpr:?}"),
                format!("{tpr:?}"),
            ])?;
        }
        Ok(Some(report.auc))
    }

    fn finish(mut self) -> Res<()> {
        fs::write(
            self.dir.join("detection.json"),
            serde_json::to_string_pretty(&self.reports)?,
        )?;
        self.auc.flush()?;
        self.roc.flush()?;
        Ok(())
    }
}

fn estimator_for(
    cfg: &RunConfig,
    hp_path: Option<&Path>,
    model: &ModelConfig,
    out: &Path,
) -> Res<HpEstimator> {
    match hp_path {
        Some(p) => load_estimator(p),
        None => {
            let (est, log) = train_favi(&cfg.favi, model)?;
            est.save(out, "favi")?;
            log.write_csv(&out.join("favi_log.csv"))?;
            Ok(est)
        }
    }
}

pub fn bench(cfg: &RunConfig, hp_path: Option<&Path>, out: &Path) -> Res<()> {
    let inputs = match hp_path {
        Some(p) => json!({"hp_checkpoint": path_json(p)}),
        None => json!({}),
    };
    write_echo(out, "bench", cfg, inputs)?;
    match &cfg.neuro {
        Some(_) => bench_neuro(cfg, hp_path, out),
        None => bench_synthetic(cfg, hp_path, out),
    }
}

fn bench_synthetic(cfg: &RunConfig, hp_path: Option<&Path>, out: &Path) -> Res<()> {
    let model = MdsModel::new(cfg.model.clone(), cfg.kernel.clone())?;
    let suite = gen_sparse_networks(&model, &cfg.bench, derive_seed(cfg.seed, &[11]))?;
    write_suite(&suite, cfg, &out.join("suite"))?;
    let hp = estimator_for(cfg, hp_path, &cfg.model, out)?;
    let jobs: Vec<(usize, usize, &ObservedSignal)> = suite
        .networks
        .iter()
        .flat_map(|net| {
            net.subjects
                .iter()
                .enumerate()
                .map(move |(s, ds)| (net.id, s, &ds.signal))
        })
        .collect();
    let fits = subject_fits(cfg, &model, &hp, &jobs)?;

    let mut cov = csv::Writer::from_path(out.join("coverage.csv"))?;
    cov.write_record(["network", "subject", "hvb", "baseline"])?;
    let mut aucs = AucWriter::new(out)?;
    let (mut wins, mut sum_h, mut sum_b) = (0, 0.0, 0.0);
    let mut k = 0;
    for net in &suite.networks {
        let range = k..k + net.subjects.len();
        k = range.end;
        for (s, f) in fits[range.clone()].iter().enumerate() {
            let h = coverage_log_density(&f.hvb, &net.coupling.matrices)?;
            let b = coverage_log_density(&f.baseline, &net.coupling.matrices)?;
            cov.write_record([
                net.id.to_string(),
                s.to_string(),
                format!("{h:?}"),
                format!("{b:?}"),
            ])?;
            wins += usize::from(h > b);
            sum_h += h;
            sum_b += b;
        }
        let hvb: Vec<&CouplingMixture> = fits[range.clone()].iter().map(|f| &f.hvb).collect();
        let base: Vec<&CouplingMixture> = fits[range].iter().map(|f| &f.baseline).collect();
        aucs.network(net.id, "hvb", &hvb, &net.coupling)?;
        aucs.network(net.id, "baseline", &base, &net.coupling)?;
    }
    cov.flush()?;
    aucs.finish()?;
    let n = fits.len();
    let report = json!({
        "fits": n,
        "mean_coverage_hvb": sum_h / n as f64,
        "mean_coverage_baseline": sum_b / n as f64,
        "hvb_wins": wins,
        "sign_test_p": sign_test_p(wins, n),
    });
    fs::write(
        out.join("coverage_summary.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(())
}

/// Per-subject signal CSVs plus a `suite.json` index with each network's
/// coupling.
fn write_suite(suite: &BenchmarkSuite, cfg: &RunConfig, dir: &Path) -> Res<()> {
    fs::create_dir_all(dir)?;
    let mut networks = Vec::with_capacity(suite.networks.len());
    for net in &suite.networks {
        let mut files = Vec::with_capacity(net.subjects.len());
        for (s, ds) in net.subjects.iter().enumerate() {
            let stem = format!("net{}_subject{s}", net.id);
            let mut side = SignalSidecar::for_signal(&ds.signal, cfg.model.k, suite.seed);
            side.generator = Some("mds".into());
            write_signal(dir, &stem, &ds.signal, &side)?;
            files.push(format!("{stem}.csv"));
        }
        networks.push(json!({
            "id": net.id,
            "coupling": net.coupling.to_flat(),
            "subjects": files,
        }));
    }
    let index = json!({
        "seed": suite.seed,
        "nodes": cfg.model.m,
        "coupling_order": "per condition, row-major [target][source]",
        "config": suite.config,
        "networks": networks,
    });
    fs::write(
        dir.join("suite.json"),
        serde_json::to_string_pretty(&index)?,
    )?;
    Ok(())
}

fn bench_neuro(cfg: &RunConfig, hp_path: Option<&Path>, out: &Path) -> Res<()> {
    let neuro = cfg.neuro.as_ref().expect("neuro section present");
    let signals: Vec<ObservedSignal> = (0..cfg.bench.subjects)
        .into_par_iter()
        .map(|s| Ok(simulate_neuro_dataset(neuro, &mut substream(cfg.seed, &[13, s as u64]))?.0))
        .collect::<Res<_>>()?;
    let model = model_for(cfg, &signals[0])?;
    let hp = estimator_for(cfg, hp_path, &model.config, out)?;
    let jobs: Vec<(usize, usize, &ObservedSignal)> =
        signals.iter().enumerate().map(|(s, y)| (0, s, y)).collect();
    let fits = subject_fits(cfg, &model, &hp, &jobs)?;
    let truth = CouplingSet {
        matrices: vec![neuro.a_matrix()?; model.config.c],
    };
    let mut aucs = AucWriter::new(out)?;
    let hvb: Vec<&CouplingMixture> = fits.iter().map(|f| &f.hvb).collect();
    let base: Vec<&CouplingMixture> = fits.iter().map(|f| &f.baseline).collect();
    aucs.network(0, "hvb", &hvb, &truth)?;
    aucs.network(0, "baseline", &base, &truth)?;
    aucs.finish()
}

/// Posterior-mean coupling matrices rebuilt from a summary CSV.
fn summary_means(path: &Path) -> Res<Vec<Matrix>> {
    let rows = read_summary_csv(path)?;
    let m = rows
        .iter()
        .map(|r| r.target.max(r.source) + 1)
        .max()
        .unwrap_or(0);
    let c = rows.iter().map(|r| r.condition + 1).max().unwrap_or(0);
    if m == 0 || rows.len() != c * m * m {
        return Err(Failure::input(format!(
            "summary {} is not a complete C x M x M table",
            path.display()
        )));
    }
    let mut mats = vec![Matrix::zeros(m, m); c];
    for r in rows {
        mats[r.condition][(r.target, r.source)] = r.mean;
    }
    Ok(mats)
}

pub fn outflow(summary: &Path, out: &Path) -> Res<()> {
    let mats = summary_means(summary)?;
    let m = mats[0].nrows();
    let mut w = csv::Writer::from_path(out)?;
    let mut header = vec!["condition".to_string()];
    header.extend((0..m).map(|i| format!("node_{i}")));
    w.write_record(&header)?;
    for (c, a) in mats.iter().enumerate() {
        let flow = netcoupler::eval::directed_outflow(a)?;
        let mut row = vec![(c + 1).to_string()];
        row.extend(flow.iter().map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn resolve_path(flag: Option<PathBuf>, config: &Option<PathBuf>, what: &str) -> Res<PathBuf> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| Failure::config(format!("no {what} given (flag or io section)")))
}

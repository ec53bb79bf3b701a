use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::Serialize;

use gpdflow::dependence::{
    empirical_chi_omega, empirical_chi_omega_with_bands, pairwise_chi, BootstrapConfig, GeneratorSamples,
};
use gpdflow::model::{self, ArchSpec, ExceedanceDataset, TrainConfig};
use gpdflow::risk::{covar_empirical, covar_model, replicate_seeds, var, write_covar_csv, CoVaRRow, McConfig};
use gpdflow::simulate::{
    negative_log_returns, sample_gumbel_copula, sample_parametric_mgpd, GumbelCopulaModel, GumbelGen,
    ReverseExponentialGen,
};
use gpdflow::threshold::{make_exceedance_dataset, select_threshold, threshold_at, ThresholdSummary};
use gpdflow::{CoVaRQuery, Error, GPDFlowModel, MarginalParams, PlateauConfig, RiskEstimate};

use crate::data::{default_headers, read_prices, read_table, sink, write_table};
use crate::{
    ChiArgs, Cli, Command, CovarArgs, DensityArgs, FitArgs, GeneratorKind, GridArgs, ReturnsArgs, SampleArgs,
    SelectArgs, SimulateArgs,
};
use crate::CliError;

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Returns(a) => returns(cli, a),
        Command::SelectThreshold(a) => select(cli, a),
        Command::Fit(a) => fit(cli, a),
        Command::Sample(a) => sample(cli, a),
        Command::Density(a) => density(cli, a),
        Command::Chi(a) => chi(cli, a),
        Command::Covar(a) => covar(cli, a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    CliError::Usage(msg.into()).into()
}

fn write_json<T: Serialize>(path: Option<&std::path::PathBuf>, v: &T) -> Result<()> {
    let mut w = sink(path)?;
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    w.write_all(s.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn load_model(path: &Path) -> Result<GPDFlowModel> {
    model::load(path).with_context(|| format!("loading model {}", path.display()))
}

const SCENARIO_SIGMA: [f64; 5] = [0.5, 1.2, 1.0, 1.5, 0.8];
const SCENARIO_GAMMA: [f64; 5] = [-0.1, 0.2, 0.0, 0.15, -0.05];

fn margins_or(d: usize, sigma: &Option<Vec<f64>>, gamma: &Option<Vec<f64>>, dflt: (&[f64], &[f64])) -> Result<MarginalParams> {
    let pick = |v: &Option<Vec<f64>>, fallback: &[f64], name: &str| -> Result<Vec<f64>> {
        match v {
            Some(v) => Ok(v.clone()),
            None if fallback.len() >= d => Ok(fallback[..d].to_vec()),
            None => Err(usage(format!("--{name} is required for d = {d}"))),
        }
    };
    let s = pick(sigma, dflt.0, "sigma")?;
    let g = pick(gamma, dflt.1, "gamma")?;
    if s.len() != d || g.len() != d {
        return Err(usage(format!("--sigma and --gamma need {d} values each")));
    }
    Ok(MarginalParams::new(s, g)?)
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let (data, headers, d) = match a.generator {
        GeneratorKind::GumbelCopula => {
            let base = GumbelCopulaModel::scenario();
            let m = GumbelCopulaModel::new(a.theta, base.margins)?;
            let n = a.n.unwrap_or(1200);
            (sample_gumbel_copula(&m, n, cli.seed)?, default_headers("y", 2), 2)
        }
        GeneratorKind::Revexp => {
            let d = a.d;
            if d == 0 {
                return Err(usage("--d must be at least 1"));
            }
            let gen = match (&a.a, &a.beta) {
                (Some(av), Some(bv)) => ReverseExponentialGen::new(av.clone(), bv.clone())?,
                (None, None) => ReverseExponentialGen::scenario(d)?,
                _ => return Err(usage("--a and --beta must be given together")),
            };
            if gen.a().len() != d {
                return Err(usage(format!("generator has {} components, --d is {d}", gen.a().len())));
            }
            let m = margins_or(d, &a.sigma, &a.gamma, (&SCENARIO_SIGMA, &SCENARIO_GAMMA))?;
            let n = a.n.unwrap_or(100);
            (sample_parametric_mgpd(&gen, &m, n, cli.seed)?, default_headers("x", d), d)
        }
        GeneratorKind::Gumbel => {
            let d = a.d;
            if d == 0 {
                return Err(usage("--d must be at least 1"));
            }
            let alpha = a.alpha.clone().unwrap_or_else(|| vec![1.0; d]);
            if alpha.len() != d {
                return Err(usage(format!("--alpha needs {d} values")));
            }
            let gen = GumbelGen::new(alpha)?;
            let ones = vec![1.0; d];
            let zeros = vec![0.0; d];
            let m = margins_or(d, &a.sigma, &a.gamma, (&ones, &zeros))?;
            let n = a.n.unwrap_or(100);
            (sample_parametric_mgpd(&gen, &m, n, cli.seed)?, default_headers("x", d), d)
        }
    };
    write_table(sink(cli.output.as_ref())?, &headers, &data)?;
    eprintln!(
        "simulated n={} d={d} generator={:?} seed={}",
        data.rows(),
        a.generator,
        cli.seed
    );
    Ok(())
}

fn returns(cli: &Cli, a: &ReturnsArgs) -> Result<()> {
    let tables = a
        .input
        .iter()
        .map(|p| read_prices(p))
        .collect::<Result<Vec<_>>>()?;
    let mut lookups = Vec::with_capacity(tables.len());
    for (t, path) in tables.iter().zip(&a.input) {
        let mut map = HashMap::with_capacity(t.dates.len());
        for (i, d) in t.dates.iter().enumerate() {
            if map.insert(d.as_str(), i).is_some() {
                bail!(CliError::Data(format!("{}: duplicate date `{d}`", path.display())));
            }
        }
        lookups.push(map);
    }
    let common: Vec<&str> = tables[0]
        .dates
        .iter()
        .map(String::as_str)
        .filter(|d| lookups.iter().all(|m| m.contains_key(d)))
        .collect();
    if common.len() < 2 {
        bail!(CliError::Data(format!("only {} common dates across inputs", common.len())));
    }
    let mut headers = vec!["date".to_string()];
    let mut columns = Vec::new();
    for (t, m) in tables.iter().zip(&lookups) {
        for (k, asset) in t.assets.iter().enumerate() {
            let series: Vec<f64> = common.iter().map(|d| t.prices[m[d]][k]).collect();
            let r = negative_log_returns(&series)
                .map_err(|e| CliError::Data(format!("asset `{asset}`: {e}")))?;
            headers.push(asset.clone());
            columns.push(r);
        }
    }
    let mut w = sink(cli.output.as_ref())?;
    writeln!(w, "{}", headers.join(","))?;
    for (t, date) in common.iter().enumerate().skip(1) {
        let cells: Vec<String> = columns.iter().map(|c| c[t - 1].to_string()).collect();
        writeln!(w, "{date},{}", cells.join(","))?;
    }
    w.flush()?;
    eprintln!("{} return rows for {} assets", common.len() - 1, columns.len());
    Ok(())
}

fn grid(g: &GridArgs) -> Result<Vec<f64>> {
    if !(g.q_step > 0.0) || !(g.q_min < g.q_max) {
        return Err(usage("q grid needs q-min < q-max and a positive step"));
    }
    let mut out = Vec::new();
    let mut k = 0u32;
    loop {
        let q = ((g.q_min + f64::from(k) * g.q_step) * 1e9).round() / 1e9;
        if q > g.q_max + 1e-12 {
            break;
        }
        out.push(q);
        k += 1;
    }
    gpdflow::dependence::validate_q_grid(&out)?;
    Ok(out)
}

fn select(cli: &Cli, a: &SelectArgs) -> Result<()> {
    let table = read_table(&a.input)?;
    let q = grid(&a.grid)?;
    let mut res = match a.q_override {
        Some(qs) => threshold_at(&table.data, &q, qs)?,
        None => {
            let cfg = PlateauConfig {
                window: a.window,
                rel_tol: a.rel_tol,
                min_tail: a.min_tail,
                min_expected_exceedances: a.min_expected,
            };
            select_threshold(&table.data, &q, &cfg)?
        }
    };
    if a.bootstrap > 0 {
        let b = BootstrapConfig {
            replicates: a.bootstrap,
            level: a.level,
            seed: cli.seed,
        };
        res.report = empirical_chi_omega_with_bands(&table.data, &q, &b)?;
    }
    if let Some(p) = &a.report {
        res.report.write_csv(sink(Some(p))?)?;
    }
    let ds = make_exceedance_dataset(&table.data, &res.threshold)?;
    if let Some(p) = &a.exceedances {
        write_table(sink(Some(p))?, &table.headers, ds.observations())?;
    }
    write_json(cli.output.as_ref(), &res.summary())?;
    eprintln!(
        "q_chi={} q_omega={} q_star={} exceedances={}{}",
        res.q_chi,
        res.q_omega,
        res.q_star,
        ds.len(),
        if res.flags.is_empty() {
            String::new()
        } else {
            format!(" flags={}", res.flags.join(","))
        }
    );
    Ok(())
}

fn read_threshold_summary(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let s: ThresholdSummary = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if s.format_version != 1 {
        bail!(Error::UnsupportedVersion {
            found: s.format_version,
            expected: 1
        });
    }
    Ok(s.threshold)
}

fn fit(cli: &Cli, a: &FitArgs) -> Result<()> {
    let table = read_table(&a.input)?;
    let tau = match (&a.threshold, &a.threshold_from) {
        (Some(t), _) => Some(t.clone()),
        (None, Some(p)) => Some(read_threshold_summary(p)?),
        (None, None) => None,
    };
    let ds = match tau {
        Some(t) => {
            if t.len() != table.data.cols() {
                return Err(usage(format!(
                    "threshold has {} values, data has {} columns",
                    t.len(),
                    table.data.cols()
                )));
            }
            make_exceedance_dataset(&table.data, &t)?
        }
        None => ExceedanceDataset::from_exceedances(table.data)?,
    };
    let mut cfg = TrainConfig {
        epochs: a.epochs,
        lambda: a.lambda,
        seed: cli.seed,
        init_gamma: a.init_gamma,
        ..TrainConfig::default()
    };
    cfg.adam.lr = a.lr;
    cfg.lr_final_factor = a.lr_final_factor;
    cfg.spike_tolerance = a.spike_tolerance;
    cfg.quad.nodes = a.nodes;
    let arch = ArchSpec {
        layers: a.layers,
        hidden: a.hidden.clone(),
    };
    info!("fitting on {} exceedances in {} dimensions", ds.len(), ds.dim());
    let (m, log) = model::fit(&ds, &arch, &cfg)?;
    let mut w = sink(cli.output.as_ref())?;
    w.write_all(model::to_json_string(&m)?.as_bytes())?;
    w.flush()?;
    if let Some(p) = &a.log {
        let mut w = sink(Some(p))?;
        writeln!(w, "epoch,loss")?;
        for (e, l) in log.losses.iter().enumerate() {
            writeln!(w, "{e},{l}")?;
        }
        writeln!(w, "{},{}", log.losses.len(), log.final_loss)?;
        w.flush()?;
    }
    eprintln!(
        "rows={} final_loss={} sigma={:?} gamma={:?}",
        ds.len(),
        log.final_loss,
        m.margins().sigma(),
        m.margins().gamma()
    );
    Ok(())
}

fn model_threshold(m: &GPDFlowModel) -> Result<Vec<f64>> {
    m.threshold()
        .map(<[f64]>::to_vec)
        .ok_or_else(|| usage("model file carries no threshold"))
}

fn sample(cli: &Cli, a: &SampleArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let mut x = m.sample(a.n, cli.seed)?;
    if a.original {
        let tau = model_threshold(&m)?;
        for r in 0..x.rows() {
            for (v, t) in x.row_mut(r).iter_mut().zip(&tau) {
                *v += t;
            }
        }
    }
    write_table(sink(cli.output.as_ref())?, &default_headers("x", m.dim()), &x)
}

fn flag_for(e: &Error) -> &'static str {
    match e {
        Error::Support(_) => "off_support",
        Error::Domain(_) => "domain",
        Error::Underflow { .. } => "underflow",
        _ => "error",
    }
}

fn density(cli: &Cli, a: &DensityArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let mut t = read_table(&a.input)?;
    if t.data.cols() != m.dim() {
        return Err(usage(format!(
            "input has {} columns, model dimension is {}",
            t.data.cols(),
            m.dim()
        )));
    }
    if a.original {
        let tau = model_threshold(&m)?;
        for r in 0..t.data.rows() {
            for (v, tv) in t.data.row_mut(r).iter_mut().zip(&tau) {
                *v -= tv;
            }
        }
    }
    let res = m.log_density_batch(&t.data)?;
    let mut w = sink(cli.output.as_ref())?;
    writeln!(w, "row,log_density,flag")?;
    let mut bad = 0;
    for (i, r) in res.iter().enumerate() {
        match r {
            Ok(v) => writeln!(w, "{i},{v},ok")?,
            Err(e) => {
                bad += 1;
                writeln!(w, "{i},NaN,{}", flag_for(e))?
            }
        }
    }
    w.flush()?;
    if bad > 0 {
        warn!("{bad} row(s) could not be evaluated");
    }
    Ok(())
}

#[derive(Serialize)]
struct PairChi {
    i: usize,
    j: usize,
    chi: f64,
    std_error: f64,
}

#[derive(Serialize)]
struct ChiSummary {
    format_version: u32,
    d: usize,
    n_mc: usize,
    chi: gpdflow::Estimate,
    omega: gpdflow::Estimate,
    pairwise: Vec<PairChi>,
}

fn chi(cli: &Cli, a: &ChiArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let q = grid(&a.grid)?;
    let seeds = replicate_seeds(cli.seed, 2);
    let g = GeneratorSamples::from_t(m.sample_generator(a.n_mc, seeds[0])?)?;
    let pairs = pairwise_chi(&g)?;
    let summary = ChiSummary {
        format_version: 1,
        d: m.dim(),
        n_mc: a.n_mc,
        chi: g.chi(),
        omega: g.omega(),
        pairwise: pairs
            .iter()
            .map(|&(i, j, e)| PairChi {
                i,
                j,
                chi: e.value,
                std_error: e.std_error,
            })
            .collect(),
    };
    let x = m.sample(a.n_samples, seeds[1])?;
    let report = empirical_chi_omega(&x, &q)?;
    report.write_csv(sink(cli.output.as_ref())?)?;
    match &a.summary {
        Some(p) => write_json(Some(p), &summary)?,
        None => {
            let mut s = serde_json::to_string_pretty(&summary)?;
            s.push('\n');
            eprint!("{s}");
        }
    }
    Ok(())
}

fn parse_pairs(spec: &Option<Vec<String>>, d: usize) -> Result<Vec<(usize, usize)>> {
    match spec {
        None => Ok((0..d)
            .flat_map(|t| (0..d).filter(move |&c| c != t).map(move |c| (t, c)))
            .collect()),
        Some(items) => items
            .iter()
            .map(|s| {
                let (t, c) = s
                    .split_once(':')
                    .ok_or_else(|| usage(format!("pair `{s}` is not of the form target:conditioner")))?;
                let t: usize = t.trim().parse().map_err(|_| usage(format!("bad target in `{s}`")))?;
                let c: usize = c.trim().parse().map_err(|_| usage(format!("bad conditioner in `{s}`")))?;
                Ok((t, c))
            })
            .collect(),
    }
}

fn covar(cli: &Cli, a: &CovarArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let raw = read_table(&a.data)?.data;
    if raw.cols() != m.dim() {
        return Err(usage(format!(
            "data has {} columns, model dimension is {}",
            raw.cols(),
            m.dim()
        )));
    }
    let tau = model_threshold(&m)?;
    let var_beta = (0..raw.cols())
        .map(|j| var(&raw.column(j), a.beta))
        .collect::<gpdflow::Result<Vec<f64>>>()?;
    let n_mc = match a.n_mc {
        Some(n) => n,
        None => raw
            .iter_rows()
            .filter(|r| r.iter().zip(&tau).any(|(y, t)| y > t))
            .count()
            .max(1),
    };
    let pairs = parse_pairs(&a.pairs, m.dim())?;
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    let mut emp_rows = Vec::new();
    for &(t, c) in &pairs {
        if !seen.insert((t, c)) {
            continue;
        }
        for &alpha in &a.alpha {
            let query = CoVaRQuery {
                target: t,
                conditioner: c,
                alpha,
                beta: a.beta,
            };
            let mc = McConfig {
                n_mc,
                replicates: a.replicates,
                level: a.level,
                seed: cli.seed,
                jobs: cli.jobs,
            };
            rows.push(CoVaRRow {
                query,
                estimate: covar_model(&m, &var_beta, &query, &mc)?,
            });
            if a.empirical.is_some() {
                let estimate = match covar_empirical(&raw, &query) {
                    Ok(e) => e,
                    Err(e) => {
                        warn!("empirical CoVaR for {t}|{c} at alpha {alpha}: {e}");
                        RiskEstimate {
                            point: f64::NAN,
                            level: 0.0,
                            lo: f64::NAN,
                            hi: f64::NAN,
                            replicates: 0,
                        }
                    }
                };
                emp_rows.push(CoVaRRow { query, estimate });
            }
        }
    }
    write_covar_csv(&rows, sink(cli.output.as_ref())?)?;
    if let Some(p) = &a.empirical {
        write_covar_csv(&emp_rows, sink(Some(p))?)?;
    }
    Ok(())
}

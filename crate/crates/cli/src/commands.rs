use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rainrun_core::diagnostics::{diagnose, quantile_plot_data, write_qq_csv};
use rainrun_core::error::{Error, Result};
use rainrun_core::extremal::write_ei_csv;
use rainrun_core::fit::{fit_mle, write_coefficients_csv, write_std_errors_csv, FitOptions, FitResult};
use rainrun_core::format::NumberFormat;
use rainrun_core::functionals::BlockMaximaTable;
use rainrun_core::ingest::{parse_soi_csv, parse_station_csv, yearly_soi, Covariates};
use rainrun_core::pipeline::{
    build_table, chosen_fit, extremal_rows, load_dataset, parse_k_list, read_config_file, read_scenario_csv,
    run_pipeline, scenario_rows, selection_rows, summarize, ConfigMap, Dataset, ModelChoice, RunConfig,
};
use rainrun_core::returns::{return_level, simulate_soi, write_return_levels_csv, ReturnLevelRow};
use rainrun_core::rng::derive_seed;
use rainrun_core::select::{build_ladder, select, write_selection_csv, SelectionReport};
use rainrun_core::synthetic::{synthetic_dataset, write_dataset, Preset, SyntheticConfig};

use crate::{Command, Common, Rl, Scenario, Synth, TableInput};

/// Config file settings overlaid with the flags that were given.
fn settings(c: &Common) -> Result<ConfigMap> {
    let mut map = match &c.config {
        Some(path) => read_config_file(path)?,
        None => ConfigMap::new(),
    };
    let mut set = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            map.insert(key.to_string(), v);
        }
    };
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    set("daily_dir", path(&c.daily_dir));
    set("stations", path(&c.stations));
    set("soi", path(&c.soi));
    set("k", c.k.clone());
    set("quantile", c.quantile.map(|q| q.to_string()));
    set("model", c.model.clone());
    set("seed", c.seed.map(|s| s.to_string()));
    set("out", path(&c.out));
    set("horizon", c.horizon.map(|h| h.to_string()));
    set("p", c.p.clone());
    set("estimator", c.estimator.clone());
    if c.shape_tie {
        set("shape_tie", Some("true".into()));
    }
    if c.full_precision {
        set("full_precision", Some("true".into()));
    }
    Ok(map)
}

/// Run configuration for commands that only need part of it: output
/// defaults to the current directory and scenario keys are ignored.
fn partial_config(c: &Common) -> Result<RunConfig> {
    let mut map = settings(c)?;
    map.entry("out".into()).or_insert_with(|| ".".into());
    for key in ["p", "horizon", "scenario_file"] {
        map.remove(key);
    }
    RunConfig::from_map(&map)
}

fn number_format(map: &ConfigMap) -> NumberFormat {
    match map.get("full_precision").map(|s| s.as_str()) {
        Some("true") | Some("1") | Some("yes") | Some("") => NumberFormat::Shortest,
        _ => NumberFormat::DEFAULT_ARTIFACT,
    }
}

fn required(map: &ConfigMap, key: &str) -> Result<PathBuf> {
    map.get(key)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Argument(format!("--{} is required", key.replace('_', "-"))))
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    load_dataset(&cfg.daily_dir, &cfg.stations, &cfg.soi)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    body(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

/// Writes to the `--out` file, or stdout when absent.
fn write_output(out: Option<&PathBuf>, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(path) => write_file(path, |w| body(w)),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock)?;
            lock.flush().map_err(|e| Error::io("<stdout>", e))
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(&a.common, a.json),
        Command::Functional(a) => functional(&a.common),
        Command::Ei(a) => ei(&a.common),
        Command::Fit(a) => fit(&a),
        Command::Select(a) => select_cmd(&a),
        Command::Diagnose(a) => diagnose_cmd(&a),
        Command::Rl(a) => rl(&a),
        Command::Scenario(a) => scenario(&a),
        Command::Synth(a) => synth(&a),
        Command::Pipeline(a) => pipeline(&a.common),
    }
}

fn ingest(c: &Common, json: bool) -> Result<()> {
    let map = settings(c)?;
    let data = load_dataset(&required(&map, "daily_dir")?, &required(&map, "stations")?, &required(&map, "soi")?)?;
    let summary = summarize(&data);
    if json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
        return Ok(());
    }
    println!("{} stations, {} complete SOI years", summary.stations.len(), summary.soi_complete_years);
    println!("station_id,first_date,last_date,n_days,missing_days,admissible_years");
    for s in &summary.stations {
        println!(
            "{},{},{},{},{},{}",
            s.station_id, s.first_date, s.last_date, s.n_days, s.missing_days, s.admissible_years
        );
    }
    Ok(())
}

fn warn(cfg: &RunConfig) {
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
}

fn functional(c: &Common) -> Result<()> {
    let cfg = partial_config(c)?;
    warn(&cfg);
    let data = dataset(&cfg)?;
    for &k in &cfg.ks {
        let (table, dropped) = build_table(&data, k)?;
        if dropped > 0 {
            eprintln!("k={k}: {dropped} station-years without a complete SOI year left out");
        }
        write_file(&cfg.out_dir.join(format!("block_maxima_k{k}.csv")), |w| {
            table.write_csv(w, cfg.number_format())
        })?;
    }
    Ok(())
}

fn ei(c: &Common) -> Result<()> {
    let cfg = partial_config(c)?;
    warn(&cfg);
    let data = dataset(&cfg)?;
    for &k in &cfg.ks {
        let (rows, notes) = extremal_rows(&data, k, cfg.quantile, cfg.estimator)?;
        for n in notes {
            eprintln!("note: {n}");
        }
        write_file(&cfg.out_dir.join(format!("extremal_index_k{k}.csv")), |w| {
            write_ei_csv(&rows, w, cfg.number_format())
        })?;
    }
    Ok(())
}

/// Block-maxima tables per `k`, from `--table` or the raw dataset.
fn tables(a: &TableInput, map: &ConfigMap) -> Result<Vec<(usize, BlockMaximaTable)>> {
    let ks = parse_k_list(map.get("k").map(|s| s.as_str()).unwrap_or("1"))?;
    match &a.table {
        Some(path) => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let all = BlockMaximaTable::read_csv(file, path)?;
            Ok(ks
                .into_iter()
                .map(|k| (k, all.for_k(k)))
                .filter(|(_, t)| !t.is_empty())
                .collect())
        }
        None => {
            let cfg = partial_config(&a.common)?;
            warn(&cfg);
            let data = dataset(&cfg)?;
            ks.into_iter().map(|k| Ok((k, build_table(&data, k)?.0))).collect()
        }
    }
}

fn out_dir(map: &ConfigMap) -> PathBuf {
    map.get("out").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

fn seed(map: &ConfigMap) -> Result<u64> {
    map.get("seed")
        .map(|s| s.parse().map_err(|_| Error::Argument(format!("seed: cannot parse '{s}'"))))
        .transpose()
        .map(|s| s.unwrap_or(1))
}

fn ladder_report(table: &BlockMaximaTable, k: usize, map: &ConfigMap) -> Result<SelectionReport> {
    if table.is_empty() {
        return Err(Error::Data(format!("no block maxima for k = {k}")));
    }
    let options = FitOptions::with_seed(derive_seed(seed(map)?, 100 + k as u64));
    let mut report = select(table, &build_ladder(), &options);
    for m in &mut report.models {
        if let Some(f) = &mut m.fit {
            f.k = Some(k);
        }
    }
    Ok(report)
}

/// Fit of the requested model: a direct fit for a fixed id, the ladder
/// choice for `auto`.
fn requested_fit(table: &BlockMaximaTable, k: usize, map: &ConfigMap) -> Result<FitResult> {
    match ModelChoice::parse(map.get("model").map(|s| s.as_str()).unwrap_or("auto"))? {
        ModelChoice::Auto => Ok(chosen_fit(&ladder_report(table, k, map)?, ModelChoice::Auto)?.clone()),
        ModelChoice::Id(id) => {
            let mask = build_ladder().get(id).expect("validated id").mask;
            let options = FitOptions::with_seed(derive_seed(seed(map)?, 100 + k as u64));
            let mut fit = fit_mle(table, mask, None, &options)?;
            if !fit.converged {
                return Err(Error::Numerical(format!("model {id} did not converge for k = {k}")));
            }
            fit.k = Some(k);
            fit.model_id = Some(id);
            Ok(fit)
        }
    }
}

fn fit(a: &TableInput) -> Result<()> {
    let map = settings(&a.common)?;
    let fmt = number_format(&map);
    let dir = out_dir(&map);
    for (k, table) in tables(a, &map)? {
        let fit = requested_fit(&table, k, &map)?;
        write_file(&dir.join(format!("coefficients_k{k}.csv")), |w| write_coefficients_csv(&[&fit], w, fmt))?;
        write_file(&dir.join(format!("std_errors_k{k}.csv")), |w| write_std_errors_csv(&[&fit], w, fmt))?;
        write_file(&dir.join(format!("fit_k{k}.txt")), |w| {
            w.write_all(fit.to_record().as_bytes()).map_err(|e| Error::io("fit record", e))
        })?;
    }
    Ok(())
}

fn select_cmd(a: &TableInput) -> Result<()> {
    let map = settings(&a.common)?;
    let fmt = number_format(&map);
    let dir = out_dir(&map);
    for (k, table) in tables(a, &map)? {
        let report = ladder_report(&table, k, &map)?;
        for m in report.models.iter().filter(|m| !m.converged) {
            eprintln!("k={k} model {}: {}", m.id, m.failure.as_deref().unwrap_or("not converged"));
        }
        for lr in &report.likelihood_ratios {
            match &lr.result {
                Ok(t) => eprintln!(
                    "k={k} LR {} vs {}: D = {:.4}, df = {}, p = {:.4e}",
                    lr.nested, lr.full, t.deviance, t.df, t.p_value
                ),
                Err(e) => eprintln!("k={k} LR {} vs {}: {e}", lr.nested, lr.full),
            }
        }
        match report.chosen {
            Some(id) => eprintln!("k={k}: model {id} minimises AIC"),
            None => eprintln!("k={k}: no model converged"),
        }
        write_file(&dir.join(format!("selection_k{k}.csv")), |w| {
            write_selection_csv(&selection_rows(&table, &report, k), w, fmt)
        })?;
        if report.chosen.is_none() {
            return Err(Error::Numerical(format!("no ladder model converged for k = {k}")));
        }
    }
    Ok(())
}

fn diagnose_cmd(a: &TableInput) -> Result<()> {
    let map = settings(&a.common)?;
    let fmt = number_format(&map);
    let dir = out_dir(&map);
    for (k, table) in tables(a, &map)? {
        let fit = requested_fit(&table, k, &map)?;
        let (summary, sample) = diagnose(&table, &fit)?;
        write_file(&dir.join(format!("diagnostics_k{k}.json")), |w| {
            serde_json::to_writer_pretty(&mut *w, &summary)?;
            writeln!(w).map_err(|e| Error::io("diagnostics", e))
        })?;
        let qq = quantile_plot_data(&sample.values)?;
        write_file(&dir.join(format!("qq_k{k}.csv")), |w| write_qq_csv(&qq, w, fmt))?;
    }
    Ok(())
}

fn read_fit(path: &Path) -> Result<FitResult> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    FitResult::from_record(&text)
}

fn p_list(map: &ConfigMap) -> Result<Vec<f64>> {
    let text = map.get("p").ok_or_else(|| Error::Argument("--p is required".into()))?;
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|p| *p > 0.0 && *p < 1.0)
                .ok_or_else(|| Error::Argument(format!("p '{s}' must be a probability in (0, 1)")))
        })
        .collect()
}

fn rl(a: &Rl) -> Result<()> {
    let map = settings(&a.common)?;
    let fit = read_fit(&a.fit)?;
    let stations = parse_station_csv(&required(&map, "stations")?)?;
    let k = fit.k.unwrap_or(1);
    let mut rows = Vec::new();
    for p in p_list(&map)? {
        for s in &stations {
            let params = fit
                .model
                .params_at(&Covariates::for_station(s, a.soi_value))
                .map_err(|e| Error::Scenario(format!("station {}: {e}", s.station_id)))?;
            rows.push(ReturnLevelRow {
                station_id: s.station_id.clone(),
                k,
                horizon_years: 1,
                p,
                return_level_mm: return_level(p, &params)?,
            });
        }
    }
    write_output(map.get("out").map(PathBuf::from).as_ref(), |w| {
        write_return_levels_csv(&rows, w, number_format(&map))
    })
}

fn scenario(a: &Scenario) -> Result<()> {
    let map = settings(&a.common)?;
    let fit = read_fit(&a.fit)?;
    let stations = parse_station_csv(&required(&map, "stations")?)?;
    let years = match &a.scenario_file {
        Some(path) => read_scenario_csv(path)?,
        None => {
            let horizon: usize = map
                .get("horizon")
                .ok_or_else(|| Error::Argument("give --scenario-file or --horizon".into()))?
                .parse()
                .map_err(|_| Error::Argument("horizon must be a positive integer".into()))?;
            let soi = parse_soi_csv(&required(&map, "soi")?)?;
            let history: Vec<f64> = soi
                .complete_years()
                .into_iter()
                .map(|y| yearly_soi(&soi, y))
                .collect::<Result<_>>()?;
            let sim = simulate_soi(&history, horizon, seed(&map)?)?;
            sim.values
                .into_iter()
                .enumerate()
                .map(|(i, v)| (a.start_year + i as i32, v))
                .collect()
        }
    };
    let k = fit.k.unwrap_or(1);
    let mut rows = Vec::new();
    for p in p_list(&map)? {
        rows.extend(scenario_rows(&fit, &stations, &years, p, k)?);
    }
    write_output(map.get("out").map(PathBuf::from).as_ref(), |w| {
        write_return_levels_csv(&rows, w, number_format(&map))
    })
}

fn synth(a: &Synth) -> Result<()> {
    let map = settings(&a.common)?;
    let preset = Preset::parse(map.get("model").map(|s| s.as_str()).unwrap_or("soi"))?;
    let cfg = SyntheticConfig {
        n_stations: a.n_stations,
        start_year: a.start_year,
        n_years: a.years,
        r: a.r,
        model: preset.model(),
        missing_rate: a.missing_rate,
        seed: seed(&map)?,
    };
    let data = synthetic_dataset(&cfg)?;
    let dir = required(&map, "out")?;
    write_dataset(&data, &dir)?;
    eprintln!("wrote {} stations to {}", data.series.len(), dir.display());
    let dataset = Dataset {
        series: data.series,
        stations: data.stations,
        soi: data.soi,
    };
    for k in parse_k_list(map.get("k").map(|s| s.as_str()).unwrap_or("1"))? {
        let (table, _) = build_table(&dataset, k)?;
        write_file(&dir.join(format!("block_maxima_k{k}.csv")), |w| {
            table.write_csv(w, number_format(&map))
        })?;
    }
    Ok(())
}

fn pipeline(c: &Common) -> Result<()> {
    let map = settings(c)?;
    let cfg = RunConfig::from_map(&map)?;
    warn(&cfg);
    let result = run_pipeline(&cfg);
    match &result {
        Ok(m) => eprintln!("wrote {} artifacts to {}", m.files.len(), cfg.out_dir.display()),
        Err(_) => eprintln!(
            "pipeline incomplete; see {}",
            cfg.out_dir.join("manifest.json").display()
        ),
    }
    result.map(|_| ())
}

use std::path::Path;

use rainrun_core::pipeline::{parse_config_text, run_pipeline, RunConfig};
use rainrun_core::synthetic::{synthetic_dataset, write_dataset, Preset, SyntheticConfig};

fn fixture(dir: &Path, preset: Preset) {
    let cfg = SyntheticConfig {
        model: preset.model(),
        seed: 2024,
        ..SyntheticConfig::default()
    };
    write_dataset(&synthetic_dataset(&cfg).unwrap(), dir).unwrap();
}

fn config(data: &Path, out: &Path, extra: &str) -> RunConfig {
    let text = format!(
        "daily_dir = {}\nstations = {}\nsoi = {}\nout = {}\nk = 1,2,3\nseed = 7\n{extra}",
        data.join("daily").display(),
        data.join("stations.csv").display(),
        data.join("soi.csv").display(),
        out.display()
    );
    RunConfig::from_map(&parse_config_text(&text, Path::new("test")).unwrap()).unwrap()
}

#[test]
fn soi_fixture_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fixture(&data, Preset::Soi);
    let out = tmp.path().join("out");
    let started = std::time::Instant::now();
    let manifest = run_pipeline(&config(&data, &out, "p = 0.01\nhorizon = 20\n")).unwrap();
    eprintln!("pipeline run: {:?}", started.elapsed());
    assert!(manifest.complete);

    for k in 1..=3 {
        for stem in [
            "block_maxima",
            "extremal_index",
            "selection",
            "coefficients",
            "std_errors",
            "qq",
            "return_levels",
        ] {
            let path = out.join(format!("{stem}_k{k}.csv"));
            let text = std::fs::read_to_string(&path).unwrap();
            assert!(text.lines().count() > 1, "{}", path.display());
        }
        assert!(out.join(format!("diagnostics_k{k}.json")).exists());
        assert!(out.join(format!("fit_k{k}.txt")).exists());
    }
    assert!(out.join("shape_drift.csv").exists());

    // argmin-AIC row of the k = 1 selection is the generating model
    let sel = std::fs::read_to_string(out.join("selection_k1.csv")).unwrap();
    let best = sel
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>())
        .min_by(|a, b| a[3].parse::<f64>().unwrap().total_cmp(&b[3].parse::<f64>().unwrap()))
        .unwrap();
    assert_eq!(best[0], "1", "{sel}");

    let rl = std::fs::read_to_string(out.join("return_levels_k1.csv")).unwrap();
    assert!(rl.starts_with("station_id,k,horizon_years,p,return_level_mm\n"));
    assert_eq!(rl.lines().count(), 21);
}

#[test]
fn failure_leaves_incomplete_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fixture(&data, Preset::Soi);
    let out = tmp.path().join("out");
    let scenario = tmp.path().join("scenario.csv");
    // SOI far outside history drives the fitted scale negative
    std::fs::write(&scenario, "year,soi\n2030,0\n2031,-400\n").unwrap();
    let cfg = config(&data, &out, &format!("p = 0.01\nscenario_file = {}\n", scenario.display()));
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["complete"], false);
    assert!(manifest["failure"].as_str().unwrap().contains("2031"));
    assert!(out.join("block_maxima_k1.csv").exists());
}

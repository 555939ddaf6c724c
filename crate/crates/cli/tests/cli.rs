use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rainrun"))
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/three")
}

fn dataset_args(dir: &Path) -> Vec<String> {
    vec![
        "--daily-dir".into(),
        dir.join("daily").display().to_string(),
        "--stations".into(),
        dir.join("stations.csv").display().to_string(),
        "--soi".into(),
        dir.join("soi.csv").display().to_string(),
    ]
}

fn run(args: &[&str], extra: &[String]) -> Output {
    bin().args(args).args(extra).output().expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

#[test]
fn ingest_lists_three_stations() {
    let out = run(&["ingest"], &dataset_args(&fixture()));
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.starts_with("3 stations"), "{stdout}");
    for id in ["S001", "S002", "S003"] {
        assert!(stdout.contains(id));
    }
    let json = run(&["ingest", "--json"], &dataset_args(&fixture()));
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["stations"].as_array().unwrap().len(), 3);
}

#[test]
fn missing_soi_file_exits_2_with_path() {
    let mut args = dataset_args(&fixture());
    args[5] = "/definitely/not/here/soi.csv".into();
    let out = run(&["ingest"], &args);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("/definitely/not/here/soi.csv"));
}

#[test]
fn bad_row_exits_2_naming_file_and_row() {
    let tmp = tempfile::tempdir().unwrap();
    copy_dir(&fixture(), tmp.path());
    let path = tmp.path().join("daily/S002.csv");
    let mut lines: Vec<String> = std::fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
    lines[10] = "2000-01-10,abc".into();
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let out = run(&["ingest"], &dataset_args(tmp.path()));
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("S002.csv") && err.contains("row 11"), "{err}");
}

#[test]
fn out_of_range_k_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = dataset_args(&fixture());
    args.extend(["--k".into(), "9".into(), "--out".into(), tmp.path().display().to_string()]);
    let out = run(&["functional"], &args);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("window length 9"));
}

#[test]
fn functional_and_ei_write_documented_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = dataset_args(&fixture());
    args.extend(["--k".into(), "1,2".into(), "--out".into(), tmp.path().display().to_string()]);
    assert!(run(&["functional"], &args).status.success());
    assert!(run(&["ei"], &args).status.success());
    let bm = std::fs::read_to_string(tmp.path().join("block_maxima_k2.csv")).unwrap();
    assert!(bm.starts_with("station_id,year,k,block_max_mm,soi,log_cdist,lat,lon\n"));
    assert_eq!(bm.lines().count(), 1 + 3 * 3);
    let ei = std::fs::read_to_string(tmp.path().join("extremal_index_k1.csv")).unwrap();
    assert!(ei.starts_with("station_id,k,quantile,theta,cluster_size,n_exceedances,estimator_form\n"));
}

/// Synthetic dataset written by the `synth` subcommand.
fn synth(dir: &Path, model: &str, seed: &str) {
    let out = run(
        &["synth", "--out", &dir.display().to_string(), "--model", model, "--seed", seed, "--k", "1,2"],
        &[],
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
}

#[test]
fn table_commands_and_return_levels() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "soi", "5");
    let table = data.join("block_maxima_k1.csv").display().to_string();
    let out_dir = tmp.path().join("o").display().to_string();

    let sel = run(&["select", "--table", &table, "--out", &out_dir], &[]);
    assert!(sel.status.success(), "{}", text(&sel.stderr));
    assert!(text(&sel.stderr).contains("model 1 minimises AIC"), "{}", text(&sel.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("o/selection_k1.csv")).unwrap();
    assert!(csv.starts_with("model,k,nll,aic,bic,mk_stat,mk_p,ad_stat,ad_p\n"));
    assert_eq!(csv.lines().count(), 6);

    let fit = run(&["fit", "--table", &table, "--model", "1", "--out", &out_dir], &[]);
    assert!(fit.status.success(), "{}", text(&fit.stderr));
    let se = std::fs::read_to_string(tmp.path().join("o/std_errors_k1.csv")).unwrap();
    let row: Vec<&str> = se.lines().nth(1).unwrap().split(',').collect();
    assert!(row[2].parse::<f64>().unwrap() > 0.0);
    assert_eq!(row[3], "", "inactive slot left empty");

    let diag = run(&["diagnose", "--table", &table, "--model", "1", "--out", &out_dir], &[]);
    assert!(diag.status.success(), "{}", text(&diag.stderr));
    let qq = std::fs::read_to_string(tmp.path().join("o/qq_k1.csv")).unwrap();
    assert!(qq.starts_with("theoretical,empirical\n"));

    let record = tmp.path().join("o/fit_k1.txt").display().to_string();
    let stations = data.join("stations.csv").display().to_string();
    let rl = run(&["rl", "--fit", &record, "--stations", &stations, "--p", "0.01,0.1"], &[]);
    assert!(rl.status.success(), "{}", text(&rl.stderr));
    let body = text(&rl.stdout);
    assert!(body.starts_with("station_id,k,horizon_years,p,return_level_mm\n"));
    assert_eq!(body.lines().count(), 1 + 2 * 20);

    let soi = data.join("soi.csv").display().to_string();
    let scen = |seed: &str| {
        run(
            &["scenario", "--fit", &record, "--stations", &stations, "--soi", &soi, "--p", "0.05", "--horizon", "20", "--seed", seed],
            &[],
        )
    };
    let a = scen("9");
    assert!(a.status.success(), "{}", text(&a.stderr));
    assert_eq!(a.stdout, scen("9").stdout);
    assert!(text(&a.stdout).lines().nth(1).unwrap().contains(",1,20,0.05,"));

    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "year,soi\n2030,-400\n").unwrap();
    let out = run(
        &["scenario", "--fit", &record, "--stations", &stations, "--p", "0.05", "--scenario-file", &bad.display().to_string()],
        &[],
    );
    assert_eq!(out.status.code(), Some(4));
    assert!(text(&out.stderr).contains("2030"));
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "soi", "8");
    let config = tmp.path().join("run.cfg");
    std::fs::write(
        &config,
        format!(
            "# synthetic fixture\ndaily_dir = {}\nstations = {}\nsoi = {}\nk = 1,2,3\nseed = 3\np = 0.02\nhorizon = 10\n",
            data.join("daily").display(),
            data.join("stations.csv").display(),
            data.join("soi.csv").display()
        ),
    )
    .unwrap();
    let mut dirs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let r = run(&["pipeline", "--config", &config.display().to_string(), "--out", &out.display().to_string()], &[]);
        assert!(r.status.success(), "{}", text(&r.stderr));
        dirs.push(out);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dirs[0].join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["complete"], true);
    let files: Vec<String> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f.as_str().unwrap().to_string())
        .chain(std::iter::once("manifest.json".to_string()))
        .collect();
    // nine artifacts per k, the shape-drift table and the manifest
    assert_eq!(files.len(), 3 * 9 + 2);
    for f in &files {
        let a = std::fs::read(dirs[0].join(f)).unwrap();
        let b = std::fs::read(dirs[1].join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }

    // flags override the config file
    let out = tmp.path().join("c");
    let r = run(
        &["pipeline", "--config", &config.display().to_string(), "--out", &out.display().to_string(), "--k", "1", "--full-precision"],
        &[],
    );
    assert!(r.status.success(), "{}", text(&r.stderr));
    assert!(out.join("selection_k1.csv").exists() && !out.join("selection_k2.csv").exists());
}

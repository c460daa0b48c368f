use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("examples/data")
        .join(name)
}

fn specfilter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specfilter"))
        .args(args)
        .env("SPECFILTER_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn run(sub: &str, config: &str, out: &Path, extra: &[&str]) -> Output {
    let config = data(config);
    let mut args = vec![
        sub,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    specfilter(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn estimate_writes_csv_json_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run("estimate", "r1.json", &out, &["--replications", "500"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let csv = read(&out, "risks.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("id,mean,stderr,replications"));
    assert!(lines.all(|l| l.ends_with(",500")));

    let report: serde_json::Value = serde_json::from_str(&read(&out, "report.json")).unwrap();
    assert_eq!(report["parameters"]["replications"], 500);
    assert_eq!(report["parameters"]["seed"], 1);

    let manifest: serde_json::Value = serde_json::from_str(&read(&out, "manifest.json")).unwrap();
    let names: Vec<&str> = manifest["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["path"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["report.json", "risks.csv"]);
    assert!(!std::fs::read_dir(dir.path()).unwrap().any(|e| e
        .unwrap()
        .file_name()
        .to_string_lossy()
        .starts_with(".staging")));
}

#[test]
fn reruns_are_byte_identical_across_thread_caps() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "4", "8"] {
        let out = dir.path().join(threads);
        let config = data("r1_noisy.json");
        let o = Command::new(env!("CARGO_BIN_EXE_specfilter"))
            .args([
                "estimate",
                "--config",
                config.to_str().unwrap(),
                "--replications",
                "2000",
                "--emit-plot-data",
            ])
            .arg("--out")
            .arg(&out)
            .env("SPECFILTER_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        outputs.push(read(&out, "manifest.json"));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        "estimate",
        "does-not-exist.json",
        &dir.path().join("x"),
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("does-not-exist.json"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(
        &config,
        r#"{"schema":"specfilter/config/1","instance":{"b":[1.0],"x":[1.0],"sigma":0.1},"replicates":10}"#,
    )
    .unwrap();
    let o = specfilter(&["estimate", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("replicates"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_and_help() {
    assert_eq!(specfilter(&["estimate", "--bogus"]).status.code(), Some(1));
    assert_eq!(specfilter(&["--help"]).status.code(), Some(0));
    assert_eq!(specfilter(&["--version"]).status.code(), Some(0));
}

#[test]
fn strict_certificate_violation_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tails");
    let o = run(
        "certify-tails",
        "laplace_tails.json",
        &out,
        &["--samples", "20000", "--strict"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let tails: serde_json::Value = serde_json::from_str(&read(&out, "tails.json")).unwrap();
    assert!(tails.to_string().contains("laplace"));

    let relaxed = run(
        "certify-tails",
        "laplace_tails.json",
        &dir.path().join("relaxed"),
        &["--samples", "20000"],
    );
    assert_eq!(relaxed.status.code(), Some(0));
}

#[test]
fn every_subcommand_runs() {
    let dir = tempfile::tempdir().unwrap();
    let short: &[&str] = &["--replications", "500"];
    for (sub, file, extra) in [
        ("oracle-report", "oracle_report.json", short),
        ("check-bounds", "report.json", short),
        ("noisy-op", "noisy_op.json", short),
        ("certify-tails", "tails.json", &["--samples", "10000"]),
    ] {
        let out = dir.path().join(sub);
        let o = run(sub, "r1_noisy.json", &out, extra);
        assert_eq!(o.status.code(), Some(0), "{sub}: {}", stderr(&o));
        let v: serde_json::Value = serde_json::from_str(&read(&out, file)).unwrap();
        assert!(v.is_object());
    }
}

#[test]
fn gen_instance_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |name: &str| {
        let out = dir.path().join(name);
        let o = specfilter(&[
            "gen-instance",
            "--n",
            "16",
            "--p",
            "1.5",
            "--coefficients",
            "sparse-spikes",
            "--amplitude",
            "20",
            "--spike-count",
            "2",
            "--background",
            "1",
            "--sigma",
            "0.1",
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        read(&out, "instance.json")
    };
    let first = gen("a");
    assert_eq!(first, gen("b"));

    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"schema":"specfilter/config/1","instance":{"path":"a/instance.json"},"estimators":["threshold(3)"],"replications":200}"#,
    )
    .unwrap();
    let o = specfilter(&[
        "estimate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn operator_csv_configs_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("op");
    let o = run(
        "estimate",
        "operator.json",
        &out,
        &["--replications", "300"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&read(&out, "report.json")).unwrap();
    assert_eq!(report["instance"]["explicit_bases"], true);
}

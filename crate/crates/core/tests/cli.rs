use std::path::Path;
use std::process::{Command, Output};

fn convlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_estimate_diagnose_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.txt");
    write(&spec, "xstar = gaussian(0,1)\nu = laplace(0.5)\n");
    let sim = dir.path().join("sim");
    let o = convlab(&[
        "simulate",
        "--model",
        "1",
        "--spec",
        s(&spec),
        "--n",
        "2000",
        "--seed",
        "3",
        "--out",
        s(&sim),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["sample.csv", "truth.csv", "spec.txt"] {
        assert!(sim.join(f).exists(), "{f}");
    }
    let est = dir.path().join("est");
    let o = convlab(&[
        "estimate",
        "--model",
        "1",
        "--in",
        s(&sim),
        "--grid",
        "256:10",
        "--cutoff",
        "lemma2:2",
        "--out",
        s(&est),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(est.join("report.txt")).unwrap();
    assert!(report.contains("cf_ise"));
    assert!(est.join("phi_xstar.csv").exists() && est.join("mask.csv").exists());

    let o = convlab(&["diagnose", "--in", s(&est)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("smoothness_kind: ordinary_smooth"), "{out}");
    assert!(out.contains("function,m,value,member"));
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.txt");
    write(
        &spec,
        "xstar = gaussian(0,1)\nu = gaussian(0,0.5)\nux = laplace(0.3)\n",
    );
    let mut samples = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = convlab(&[
            "simulate",
            "--model",
            "3",
            "--spec",
            s(&spec),
            "--n",
            "500",
            "--seed",
            "11",
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0);
        samples.push(std::fs::read(out.join("sample.csv")).unwrap());
    }
    assert_eq!(samples[0], samples[1]);
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.txt");
    write(&spec, "xstar = gaussian(0,1)\nwobble = 3\nu = laplace(1)\n");
    let o = convlab(&[
        "simulate",
        "--model",
        "1",
        "--spec",
        s(&spec),
        "--n",
        "10",
        "--seed",
        "1",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn missing_input_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let o = convlab(&[
        "estimate",
        "--model",
        "1",
        "--in",
        s(&missing),
        "--grid",
        "64:5",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 4);
}

#[test]
fn degenerate_sample_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    std::fs::create_dir(&input).unwrap();
    // a constant regressor leaves nothing to estimate g from
    write(&input.join("sample.csv"), "z1,x1,y\n0,0,1\n0,0,1\n0,0,1\n");
    let o = convlab(&[
        "estimate",
        "--model",
        "6",
        "--in",
        s(&input),
        "--grid",
        "64:5",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sweep_writes_identical_tables_for_any_job_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut tables = Vec::new();
    for jobs in ["1", "4"] {
        let out = dir.path().join(format!("out{jobs}"));
        let cfg = dir.path().join(format!("sweep{jobs}.txt"));
        write(
            &cfg,
            &format!(
                "model = 4\nxstar = gaussian(0,1)\nu = gaussian(0,1)\nux = laplace(0.4)\n\
                 n = 500,1000\nreplications = 3\nseed = 5\ngrid = 256:10\nout = {}\n",
                out.display()
            ),
        );
        let o = convlab(&["sweep", "--config", s(&cfg), "--jobs", jobs]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        tables.push((
            std::fs::read(out.join("metrics.csv")).unwrap(),
            std::fs::read(out.join("summary.csv")).unwrap(),
        ));
    }
    assert_eq!(tables[0], tables[1]);
}

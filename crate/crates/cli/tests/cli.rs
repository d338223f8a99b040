use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use maxaffine_attn_cli::report::CSV_HEADER;
use maxaffine_attn_cli::verify::strip_runtime;
use maxaffine_attn_cli::CliError;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maxaffine-attn")).args(args).output().expect("binary runs")
}

fn run_to(args: &[&str], out: &Path) -> String {
    let mut full: Vec<&str> = args.to_vec();
    full.extend(["--out", out.to_str().unwrap()]);
    let o = bin(&full);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    fs::read_to_string(out).unwrap()
}

fn column(text: &str, name: &str) -> Vec<String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_owned()).collect()
}

fn floats(text: &str, name: &str) -> Vec<f64> {
    column(text, name).iter().map(|v| v.parse().unwrap()).collect()
}

#[test]
fn exit_codes() {
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
    assert_eq!(bin(&["approximate", "--bogus"]).status.code(), Some(1));
    assert_eq!(bin(&["approximate", "--function", "nope", "--temperature", "1"]).status.code(), Some(1));
    assert_eq!(bin(&["approximate", "--function", "sinprod", "--n", "2", "--epsilon", "1.5"]).status.code(), Some(1));
    assert_eq!(
        bin(&["approximate", "--function", "sinprod", "--n", "2", "--temperature", "1", "--epsilon", "0.1"]).status.code(),
        Some(1)
    );
    // G = 64^4 is above the center cap.
    let capped = bin(&["approximate", "--function", "linear", "--d", "2", "--n", "2", "--P", "64", "--temperature", "1"]);
    assert_eq!(capped.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&capped.stderr).contains("exceeds the cap"));
    assert_eq!(CliError::VerifyFailed { failed: 1, total: 30 }.exit_code(), 2);
}

#[test]
fn constant_run_layout_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("const.csv");
    let text = run_to(&["approximate", "--function", "const:0.7", "--P", "4", "--temperature", "50", "--samples", "300"], &out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], CSV_HEADER.join(","));
    assert_eq!(lines[1].split(',').count(), CSV_HEADER.len());
    assert_eq!(column(&text, "command"), ["approximate"]);
    assert_eq!(column(&text, "G"), ["4"]);
    assert_eq!(column(&text, "epsilon_target"), [""]);
    assert!(floats(&text, "sup_err")[0] <= 1e-12);

    let curve = fs::read_to_string(dir.path().join("const.csv.curve.csv")).unwrap();
    assert!(curve.starts_with("x,f,approx"));
    assert!(curve.lines().count() > 100);
    let script = fs::read_to_string(dir.path().join("const.csv.plot.py")).unwrap();
    assert!(script.contains("matplotlib"));
}

#[test]
fn params_count_prints_the_count() {
    let o = bin(&["params-count", "--d", "2", "--n", "3", "--centers", "5"]);
    assert!(o.status.success());
    // 4·2·3·5 + 2·2·5 + 3
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "143");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "function = \"const:0.2\"\nn = 2\nP = 3\ntemperature = 10\nsamples = 200\nseed = 1\n").unwrap();
    let text = run_to(&["approximate", "--config", cfg.to_str().unwrap(), "--seed", "4"], &dir.path().join("r.csv"));
    assert_eq!(column(&text, "function"), ["const:0.2"]);
    assert_eq!(column(&text, "seed"), ["4"]);
    assert_eq!(column(&text, "P_or_Nx"), ["3"]);
    assert_eq!(column(&text, "n"), ["2"]);

    fs::write(&cfg, "function = \"const:0.2\"\nwidth = 3\n").unwrap();
    assert_eq!(bin(&["approximate", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn sweep_grid_and_trend() {
    let dir = tempfile::tempdir().unwrap();
    let text = run_to(
        &["sweep", "--function", "sinprod", "--n", "2", "--P", "2,4", "--temperature", "5,20", "--samples", "200"],
        &dir.path().join("grid.csv"),
    );
    assert_eq!(text.lines().count(), 5);
    assert!(column(&text, "command").iter().all(|c| c == "sweep"));
    assert!(dir.path().join("grid.csv.plot.py").exists());

    let text = run_to(
        &["sweep", "--function", "sinprod", "--n", "2", "--P", "4,8,16,32", "--epsilon", "0.1", "--samples", "2000"],
        &dir.path().join("trend.csv"),
    );
    let sup = floats(&text, "sup_err");
    assert_eq!(sup.len(), 4);
    let band = 2.0 * sup[3];
    for w in sup.windows(2) {
        assert!(w[1] <= w[0] + band, "{sup:?}");
    }
}

#[test]
fn epsilon_alone_picks_a_grid_that_meets_it() {
    let dir = tempfile::tempdir().unwrap();
    let text = run_to(
        &["approximate", "--function", "sinprod", "--n", "2", "--epsilon", "0.1", "--samples", "2000"],
        &dir.path().join("eps.csv"),
    );
    assert_eq!(column(&text, "P_or_Nx"), ["512"]);
    assert!(floats(&text, "sup_err")[0] <= 0.1);
}

#[test]
fn cross_cover_and_indicator_rows() {
    let dir = tempfile::tempdir().unwrap();
    let text = run_to(
        &["cross", "--function", "addpair", "--P", "4", "--temperature", "20", "--samples", "500"],
        &dir.path().join("cross.csv"),
    );
    assert_eq!(column(&text, "command"), ["cross"]);
    assert_eq!(column(&text, "G"), ["4"]);

    let cover_file = dir.path().join("cover.txt");
    fs::write(&cover_file, "radius 0.3\n# two centers\n0 0\n0.5 0.5\n").unwrap();
    let text = run_to(
        &["cover", "--function", "const:0.4", "--n", "2", "--cover", cover_file.to_str().unwrap(), "--temperature", "8", "--samples", "1000"],
        &dir.path().join("cover.csv"),
    );
    assert_eq!(column(&text, "P_or_Nx"), ["2"]);
    assert!(floats(&text, "sup_err")[0] <= 1e-12);
    let outside: usize = column(&text, "out_of_cover")[0].parse().unwrap();
    assert!(outside > 0 && outside < 1000);

    let text = run_to(&["indicator-demo", "--function", "step1d", "--samples", "1000"], &dir.path().join("ind.csv"));
    assert!(floats(&text, "sup_err")[0] <= 1e-3);
    assert!(dir.path().join("ind.csv.curve.csv").exists());
}

#[test]
fn json_output() {
    let dir = tempfile::tempdir().unwrap();
    let text = run_to(
        &["approximate", "--function", "const:1", "--P", "2", "--temperature", "3", "--samples", "50", "--format", "json"],
        &dir.path().join("r.json"),
    );
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v[0]["function"], "const:1");
    assert_eq!(v[0]["P_or_Nx"], 2);
    assert!(v[0]["runtime_ms"].is_number());
}

#[test]
fn seeded_runs_repeat_and_seeds_matter() {
    let dir = tempfile::tempdir().unwrap();
    let args = |seed: &'static str| {
        vec!["approximate", "--function", "randlip", "--n", "2", "--P", "3", "--temperature", "9", "--samples", "400", "--seed", seed]
    };
    let a = strip_runtime(&run_to(&args("8"), &dir.path().join("a.csv")));
    let b = strip_runtime(&run_to(&args("8"), &dir.path().join("b.csv")));
    let c = strip_runtime(&run_to(&args("9"), &dir.path().join("c.csv")));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

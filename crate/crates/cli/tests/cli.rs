use std::fs;
use std::process::{Command, Output};

fn vponsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vponsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_fig2_prints_one_summary() {
    let o = vponsim(&[
        "run",
        "fig2",
        "--slice-size",
        "4",
        "--erlang",
        "12.5",
        "--duration",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "scope,count,mean_us,p50_us,p99_us,max_us");
    assert!(lines[1].starts_with("all,"));
    assert!(lines[2].starts_with("olt1,"));
    assert_eq!(lines.len(), 3);
}

#[test]
fn bundle_written_and_reusable() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    let out_s = out.to_str().unwrap();
    let o = vponsim(&[
        "run",
        "fig2-ew",
        "--slice-size",
        "2",
        "--duration",
        "1",
        "--seed",
        "9",
        "--out",
        out_s,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "config.toml",
        "samples.csv",
        "windows.csv",
        "events.csv",
        "summary.csv",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 9"));
    assert!(manifest.contains("\"slice_size\": 2"));
    let cfg = out.join("config.toml");
    let again = vponsim(&["run", cfg.to_str().unwrap()]);
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(stdout(&again), stdout(&o));
}

#[test]
fn errors_exit_nonzero() {
    let o = vponsim(&["run", "fig3", "--slice-size", "4"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("slice-size"), "{}", stderr(&o));

    let o = vponsim(&["run", "no-such-file.toml"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no-such-file.toml"));

    let o = vponsim(&["run", "fig2", "--policy", "greedy"]);
    assert!(!o.status.success());

    let tmp = tempfile::tempdir().unwrap();
    let base = tmp.path().join("base");
    assert!(vponsim(&[
        "run",
        "fig2",
        "--duration",
        "0.1",
        "--out",
        base.to_str().unwrap()
    ])
    .status
    .success());
    let text = fs::read_to_string(base.join("config.toml")).unwrap();
    let typo = text.replace("threshold_us", "thresold_us");
    let path = tmp.path().join("typo.toml");
    fs::write(&path, typo).unwrap();
    let o = vponsim(&["run", path.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("thresold_us") && err.contains("line"), "{err}");
}

#[test]
fn sweep_combined_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let o = vponsim(&[
        "sweep",
        "fig2",
        "--param",
        "slice-size",
        "--values",
        "1..3,2",
        "--seeds",
        "1,2",
        "--duration",
        "0.3",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "parameter,seed,mean_us,p99_us");
    assert_eq!(lines.len(), 1 + 6);
    assert!(lines[1].starts_with("1,1,") && lines[6].starts_with("3,2,"));
    assert!(stderr(&o).contains("duplicate"));
    assert_eq!(
        fs::read_to_string(tmp.path().join("sweep.csv")).unwrap(),
        text
    );
    let run_dir = tmp.path().join("slice-size=2/seed=1");
    assert!(run_dir.join("summary.csv").exists());
    assert!(!run_dir.join("samples.csv").exists());

    let o = vponsim(&["sweep", "fig2", "--param", "colour", "--values", "1"]);
    assert!(!o.status.success());
    let o = vponsim(&["sweep", "fig2", "--param", "erlang", "--values", ","]);
    assert!(!o.status.success());
}

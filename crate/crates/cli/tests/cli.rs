use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn codedcache(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codedcache"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn small_run_writes_a_csv_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("hops.csv");
    let o = codedcache(
        &[
            "hops",
            "--n",
            "200",
            "--M",
            "10",
            "--M",
            "20",
            "--trials",
            "20",
            "--Q",
            "64",
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("experiment,series,scheme,direction,n,m,M,l,metric,mean,se,trials,formula_id,theory,theory_upper")
    );
    let rows: Vec<&str> = lines.collect();
    assert!(rows
        .iter()
        .any(|r| r.contains(",10,") && r.starts_with("hops,")));
    assert!(rows.iter().any(|r| r.contains(",20,")));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("PASS retrievals_succeed"), "{stdout}");
    assert!(dir.path().join("hops.csv.meta").exists());
}

#[test]
fn configuration_errors_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = codedcache(
        &["hops", "--scheme", "uncoded", "--M", "150", "--trials", "5"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("M=150"));
    assert_eq!(code(&codedcache(&["hops", "--bogus"], dir.path())), 2);
    let missing = dir.path().join("absent.cfg");
    assert_eq!(
        code(&codedcache(
            &["hit", "--config", missing.to_str().unwrap()],
            dir.path()
        )),
        2
    );
    assert_eq!(
        code(&codedcache(&["update", "--trials", "many"], dir.path())),
        2
    );
    // Nothing is written when configuration fails.
    assert!(!dir.path().join("results").exists());
}

#[test]
fn failed_checks_exit_with_status_three_only_under_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cap.csv");
    // Contents this few leave nodes almost self-sufficient, so the
    // linear trend in m cannot appear.
    let args = [
        "capacity-trend",
        "--m-sweep",
        "4,8",
        "--M",
        "4",
        "--trials",
        "50",
        "--out",
        out.to_str().unwrap(),
    ];
    let o = codedcache(&args, dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL coded_slope_one"));
    let mut checked = args.to_vec();
    checked.push("--check");
    assert_eq!(code(&codedcache(&checked, dir.path())), 3);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("hit.csv");
    fs::write(
        &cfg,
        format!(
            "# small hit run\nscheme=coded\nM=2\nl=96,100,104\ntrials=30\nseed=5\nout={}\n",
            out.display()
        ),
    )
    .unwrap();
    let o = codedcache(
        &["hit", "--config", cfg.to_str().unwrap(), "--l", "120"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1, "{csv}");
    let fields: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(fields[2], "coded");
    assert_eq!(fields[6], "2");
    assert_eq!(fields[7], "120");
    assert_eq!(fields[11], "30");
}

#[test]
fn same_seed_reproduces_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = codedcache(
            &[
                "update",
                "--n",
                "150",
                "--m",
                "20",
                "--M",
                "4",
                "--trials",
                "10",
                "--seed",
                seed,
                "--out",
                out.to_str().unwrap(),
            ],
            dir.path(),
        );
        assert_eq!(code(&o), 0);
        fs::read_to_string(out).unwrap()
    };
    assert_eq!(run("a.csv", "9"), run("b.csv", "9"));
    assert_ne!(run("a.csv", "9"), run("c.csv", "10"));
}

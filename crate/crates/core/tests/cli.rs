use private_od::io::{self, MatrixSidecar, ReleaseSidecar};
use private_od::od::ODMatrix;
use private_od::AdminLevel;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_private-od"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Tree of file name → contents under `root`.
fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// synth → ingest → build over 7 days, returning the matrix CSV path.
fn small_pipeline(root: &Path) -> PathBuf {
    let r = |x: &str| s(&root.join(x));
    ok(&[
        "synth",
        "--k",
        "5",
        "--days",
        "7",
        "--subscribers",
        "400",
        "--mobility",
        "0.3",
        "--seed",
        "3",
        "--out-dir",
        &r("raw"),
    ]);
    ok(&[
        "ingest",
        "--cdr",
        &r("raw/cdr.csv"),
        "--towers",
        &r("raw/towers.csv"),
        "--out-dir",
        &r("ing"),
    ]);
    ok(&[
        "build",
        "--trips",
        &r("ing/trips.csv"),
        "--level",
        "2",
        "--out-dir",
        &r("od"),
    ]);
    root.join("od/od_admin2.csv")
}

#[test]
fn help_exits_zero_for_every_command() {
    for cmd in [
        "synth",
        "ingest",
        "build",
        "privatize",
        "tune",
        "simulate-sir",
        "target",
        "mia",
        "report",
    ] {
        let out = bin(&[cmd, "--help"]);
        assert_eq!(code(&out), 0, "{cmd}");
        let text = String::from_utf8_lossy(&out.stdout);
        let lines: Vec<&str> = text.lines().map(str::trim).collect();
        for (i, line) in lines.iter().enumerate().filter(|(_, l)| l.starts_with('-')) {
            // clap puts a long description on the following line
            let inline = line.split_once("  ").is_some_and(|(_, rest)| !rest.trim().is_empty());
            let wrapped = lines.get(i + 1).is_some_and(|n| !n.is_empty() && !n.starts_with('-'));
            assert!(inline || wrapped, "{cmd}: undocumented flag {line:?}");
        }
    }
    assert_eq!(code(&bin(&["--help"])), 0);
    assert_eq!(code(&bin(&["--version"])), 0);
    assert_eq!(code(&bin(&["no-such-command"])), 2);
}

#[test]
fn privatize_cardinality_defaults_and_idempotence() {
    let dir = tempfile::tempdir().unwrap();
    let matrices = small_pipeline(dir.path());
    let out = dir.path().join("priv");
    let args = [
        "privatize",
        "--matrices",
        &s(&matrices),
        "--epsilon",
        "0.1,0.5,1",
        "--seed",
        "9",
        "--out-dir",
        &s(&out),
    ];
    ok(&args);

    let csvs: Vec<_> = snapshot(&out)
        .into_iter()
        .filter(|(p, _)| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    assert_eq!(csvs.len(), 21);
    let ledger = fs::read_to_string(out.join("ledger.jsonl")).unwrap();
    assert_eq!(ledger.lines().count(), 21);
    let side: ReleaseSidecar = io::read_json(&out.join("eps_0.5/day_003.json")).unwrap();
    assert_eq!((side.tau, side.cap, side.day), (15, 1, 3));

    let before = snapshot(&out);
    ok(&args);
    assert_eq!(snapshot(&out), before, "rerun must leave files and ledger untouched");

    let other = dir.path().join("priv_jobs");
    let mut jobs = args.to_vec();
    let other_s = s(&other);
    *jobs.last_mut().unwrap() = &other_s;
    jobs.extend(["--jobs", "3"]);
    ok(&jobs);
    assert_eq!(snapshot(&other), before);

    // a different seed under the same release ids is a ledger conflict
    let mut clash = args.to_vec();
    clash[7] = "10";
    assert_eq!(code(&bin(&clash)), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    small_pipeline(a.path());
    small_pipeline(b.path());
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere/towers.csv");
    fs::write(
        dir.path().join("cdr.csv"),
        "timestamp,caller_id,callee_id,duration_s,tower_id\n",
    )
    .unwrap();
    let out = bin(&[
        "ingest",
        "--cdr",
        &s(&dir.path().join("cdr.csv")),
        "--towers",
        &s(&missing),
        "--out-dir",
        &s(dir.path()),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains(&s(&missing)));

    fs::write(
        dir.path().join("towers.csv"),
        "tower_id,admin2_id,admin3_id\nt1,0,0\nt2,1,1\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("cdr.csv"),
        "timestamp,caller_id,callee_id,duration_s,tower_id\nyesterday,a,b,10,t1\n",
    )
    .unwrap();
    let out = bin(&[
        "ingest",
        "--cdr",
        &s(&dir.path().join("cdr.csv")),
        "--towers",
        &s(&dir.path().join("towers.csv")),
        "--out-dir",
        &s(&dir.path().join("ing")),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));

    let matrices = small_pipeline(dir.path());
    for eps in ["0", "-1", "nan"] {
        let out = bin(&[
            "privatize",
            "--matrices",
            &s(&matrices),
            "--epsilon",
            eps,
            "--seed",
            "1",
            "--out-dir",
            &s(&dir.path().join("p")),
        ]);
        assert_eq!(code(&out), 2, "epsilon {eps}");
    }
    let out = bin(&[
        "report",
        "--matrices",
        &s(&matrices),
        "--private-dir",
        &s(&dir.path().join("absent")),
        "--out-dir",
        &s(&dir.path().join("rep")),
    ]);
    assert_eq!(code(&out), 4);
}

#[test]
fn tune_prints_worked_example() {
    let out = bin(&["tune", "--alpha", "10", "--beta", "0.05", "--cap", "1"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    let row = text.lines().nth(1).unwrap();
    let eps: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    assert_eq!(format!("{eps:.3}"), "0.285");
}

/// Writes `m` as a non-private matrix and, under `private/eps_1`, as its own
/// release, then runs `report`.
fn report_on_identical(root: &Path, m: &ODMatrix) -> (String, String) {
    let csv = root.join("od.csv");
    io::atomic_write(&csv, |w| io::write_matrices(&[m], w)).unwrap();
    let side = MatrixSidecar {
        k: m.k(),
        level: m.level,
        first_day: m.day,
        last_day: m.day,
        cap: Some(1),
    };
    io::write_json(&io::sidecar_path(&csv), &side).unwrap();
    let rel = root.join("private/eps_1/day_000.csv");
    fs::create_dir_all(rel.parent().unwrap()).unwrap();
    io::atomic_write(&rel, |w| io::write_matrices(&[m], w)).unwrap();
    let side = ReleaseSidecar {
        epsilon: 1.0,
        cap: 1,
        tau: 15,
        seed: 0,
        level: m.level,
        day: m.day,
        k: m.k(),
    };
    io::write_json(&io::sidecar_path(&rel), &side).unwrap();
    ok(&[
        "report",
        "--matrices",
        &s(&csv),
        "--private-dir",
        &s(&root.join("private")),
        "--out-dir",
        &s(&root.join("rep")),
    ]);
    (
        fs::read_to_string(root.join("rep/error_stats.csv")).unwrap(),
        fs::read_to_string(root.join("rep/suppression.csv")).unwrap(),
    )
}

#[test]
fn report_on_identical_and_zero_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let m = ODMatrix::from_counts(0, AdminLevel::Admin2, 3, vec![0, 20, 31, 16, 0, 40, 18, 25, 0]).unwrap();
    let (errors, _) = report_on_identical(dir.path(), &m);
    assert_eq!(errors.lines().nth(1).unwrap(), "1,0,0,0");

    let dir = tempfile::tempdir().unwrap();
    let (_, suppression) = report_on_identical(dir.path(), &ODMatrix::zeros(0, AdminLevel::Admin2, 3));
    for row in suppression.lines().skip(1) {
        assert!(row.ends_with(",1"), "{row}");
    }
}

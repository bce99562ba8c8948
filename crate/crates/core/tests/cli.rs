use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use binpose::metrics::{read_records, EvalRecord};

fn binpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_binpose"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = binpose(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn records(path: &Path) -> Vec<EvalRecord> {
    read_records(fs::read(path).unwrap().as_slice()).unwrap()
}

fn generate(dir: &Path, count: &str, seed: &str) {
    ok(&[
        "generate",
        "--count",
        count,
        "--seed",
        seed,
        "--out",
        p(dir),
    ]);
}

#[test]
fn zero_count_gives_an_empty_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, "0", "1");
    let manifest = fs::read_to_string(data.join("manifest.csv")).unwrap();
    assert_eq!(manifest.trim(), "scan_id,tag,scan,pose,scene");
    ok(&[
        "fit",
        "--input",
        p(&data),
        "--out",
        p(&tmp.path().join("fit")),
    ]);
    assert_eq!(records(&tmp.path().join("fit/fit.csv")).len(), 0);
}

#[test]
fn generation_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    generate(&a, "2", "5");
    generate(&b, "2", "5");
    generate(&c, "2", "6");
    let scan = "scans/scene_0001.scan";
    assert_eq!(
        fs::read(a.join(scan)).unwrap(),
        fs::read(b.join(scan)).unwrap()
    );
    assert_ne!(
        fs::read(a.join(scan)).unwrap(),
        fs::read(c.join(scan)).unwrap()
    );
}

#[test]
fn exit_codes_separate_usage_from_io() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(binpose(&["--help"]).status.code(), Some(0));
    assert_eq!(binpose(&["nonsense"]).status.code(), Some(1));
    assert_eq!(
        binpose(&["generate", "--count", "1"]).status.code(),
        Some(1),
        "missing --out"
    );
    let out = p(tmp.path());
    assert_eq!(
        binpose(&["generate", "--jobs", "0", "--out", out])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        binpose(&["generate", "--set", "bogus.key=1", "--out", out])
            .status
            .code(),
        Some(1)
    );
    let missing = tmp.path().join("none.cfg");
    assert_eq!(
        binpose(&["generate", "--config", p(&missing), "--out", out])
            .status
            .code(),
        Some(2)
    );
    let no_data = tmp.path().join("no_data");
    assert_eq!(
        binpose(&["fit", "--input", p(&no_data), "--out", out])
            .status
            .code(),
        Some(2)
    );
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

fn loss_value(stdout: &[u8], key: &str) -> String {
    let text = String::from_utf8_lossy(stdout);
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(str::to_string))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
}

#[test]
fn loss_command_reports_terms_and_gradient_check() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, pose) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("p"),
    );
    write(&a, "0 0 1  0 1 0  10 20 30");
    write(&b, "1 0 0  0 1 0  10 20 31");
    write(&pose, "1 0 0 10\n0 1 0 20\n0 0 1 30\n0 0 0 1\n");

    let same = ok(&["loss", "--pred", p(&a), "--gt", p(&pose)]);
    let total: f64 = loss_value(&same.stdout, "L").parse().unwrap();
    assert!(total < 1e-3, "{total}");
    assert!(loss_value(&same.stdout, "gradient_check_max_rel_error").starts_with("undefined"));

    let out = tmp.path().join("out");
    let orth = ok(&["loss", "--pred", p(&b), "--gt", p(&a), "--out", p(&out)]);
    let lz: f64 = loss_value(&orth.stdout, "L_r^z").parse().unwrap();
    let l1: f64 = loss_value(&orth.stdout, "L1").parse().unwrap();
    assert!((lz - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
    assert_eq!(l1, 1.0);
    assert!(fs::read_to_string(out.join("loss.txt"))
        .unwrap()
        .contains("L_r^y"));

    write(&b, "0 0 0  0 1 0  0 0 0");
    assert_eq!(
        binpose(&["loss", "--pred", p(&b), "--gt", p(&a)])
            .status
            .code(),
        Some(1)
    );
    write(&b, "1 2 3");
    assert_eq!(
        binpose(&["loss", "--pred", p(&b), "--gt", p(&a)])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn all_failed_records_give_zero_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let rec = tmp.path().join("r.csv");
    write(
        &rec,
        "scan_id,method,e_te_mm,e_re_rad,failed,icp_confident,runtime_ms\n\
         a,analytic,inf,inf,true,,0\n\
         b,analytic,inf,inf,true,,0\n",
    );
    let out = tmp.path().join("eval");
    ok(&["eval", p(&rec), "--out", p(&out)]);
    let curve = fs::read_to_string(out.join("curves/analytic_te.csv")).unwrap();
    let fractions: Vec<f64> = curve
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(!fractions.is_empty() && fractions.iter().all(|f| *f == 0.0));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("analytic,2,2,1,"));
}

#[test]
fn refine_from_ground_truth_stays_close() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, "3", "9");
    let out = tmp.path().join("ref");
    ok(&[
        "refine",
        "--input",
        p(&data),
        "--initial",
        p(&data.join("poses")),
        "--out",
        p(&out),
    ]);
    let recs = records(&out.join("refine.csv"));
    assert_eq!(recs.len(), 9);
    for r in &recs {
        assert!(!r.failed());
        match r.method.as_str() {
            "initial" => assert_eq!((r.e_te(), r.e_re()), (0.0, 0.0)),
            _ => assert!(r.e_te() < 3.0 && r.e_re() < 0.01, "{r:?}"),
        }
    }
}

#[test]
fn missing_initial_pose_fails_every_row() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, "2", "4");
    let init = tmp.path().join("init");
    fs::create_dir(&init).unwrap();
    fs::copy(
        data.join("poses/scene_0000.pose"),
        init.join("scene_0000.pose"),
    )
    .unwrap();
    let out = tmp.path().join("ref");
    ok(&[
        "refine",
        "--input",
        p(&data),
        "--initial",
        p(&init),
        "--out",
        p(&out),
    ]);
    let recs = records(&out.join("refine.csv"));
    let failed: Vec<_> = recs
        .iter()
        .filter(|r| r.failed())
        .map(|r| r.scan_id.as_str())
        .collect();
    assert_eq!(failed, ["scene_0001"; 3]);
}

#[test]
fn set_overrides_config_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    write(&cfg, "suite.count = 4\n");
    let a = tmp.path().join("a");
    ok(&["generate", "--config", p(&cfg), "--out", p(&a)]);
    let b = tmp.path().join("b");
    ok(&[
        "generate",
        "--config",
        p(&cfg),
        "--set",
        "suite.count=2",
        "--out",
        p(&b),
    ]);
    let rows = |d: &Path| {
        fs::read_to_string(d.join("manifest.csv"))
            .unwrap()
            .lines()
            .count()
            - 1
    };
    assert_eq!((rows(&a), rows(&b)), (4, 2));
}

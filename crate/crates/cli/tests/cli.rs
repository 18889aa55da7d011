use assert_cmd::Command;
use serde_json::Value;

fn predmkt() -> Command {
    Command::cargo_bin("predmkt").unwrap()
}

fn stdout_of(args: &[&str]) -> String {
    let out = predmkt().args(args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json_of(args: &[&str]) -> Value {
    serde_json::from_str(&stdout_of(args)).unwrap()
}

#[test]
fn sweep_rows_match_closed_form() {
    let text = stdout_of(&["sweep", "--grid", "0.4,0.5,1.5"]);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# predmkt "));
    assert!(lines.next().unwrap().starts_with("# config {"));
    assert_eq!(
        lines.next().unwrap(),
        "V,n_entrants,price,consumer_surplus,producer_surplus,total_surplus,violations"
    );
    assert_eq!(lines.next().unwrap(), "0.4,1,3.6,0,3.35,3.35,");
    assert_eq!(lines.next().unwrap(), "0.5,2,0.25,3.25,0,3.25,");
    assert!(lines.next().unwrap().starts_with("1.5,3,"));
    assert!(lines.next().is_none());
}

#[test]
fn default_sweep_covers_the_grid() {
    let text = stdout_of(&["sweep"]);
    let rows: Vec<_> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 320);
    assert!(rows[319].starts_with("3.2,4,"));
}

#[test]
fn prices_two_unbiased_models() {
    let doc = json_of(&["prices"]);
    assert_eq!(doc["header"]["command"], "prices");
    let result = &doc["result"];
    let p = result["marginal_prices"].as_array().unwrap();
    assert!((p[0].as_f64().unwrap() - 2.25).abs() < 1e-12);
    assert!((p[1].as_f64().unwrap() - 0.25).abs() < 1e-12);
    assert_eq!(result["dmr"]["holds"], true);
    assert!(result["residual"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn prices_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(
        &path,
        "[prices]\nsigma2 = 1.0\noutside_option = -5.0\n\n[[prices.models]]\nbias = [0.0]\nvariance = 1.0\n\n[[prices.models]]\nbias = [0.0]\nvariance = 1.0\n",
    )
    .unwrap();
    let doc = json_of(&["--config", path.to_str().unwrap(), "prices"]);
    let p = doc["result"]["marginal_prices"].as_array().unwrap();
    assert!(p.iter().all(|x| (x.as_f64().unwrap() - 0.5).abs() < 1e-12));
}

#[test]
fn diff_tradeoff_candidate() {
    let text = stdout_of(&["diff", "--family", "tradeoff"]);
    let rows: Vec<_> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(
        rows[0],
        "t0,foc_residual,soc_term_curvature,soc_term_split,soc_term_angle,soc_lhs,classification"
    );
    assert_eq!(rows.len(), 2);
    let fields: Vec<_> = rows[1].split(',').collect();
    assert!((fields[0].parse::<f64>().unwrap() - 0.25).abs() < 1e-9);
    assert!((fields[5].parse::<f64>().unwrap() + 5.0 / 12.0).abs() < 1e-6);
    assert_eq!(fields[6], "candidate");
}

#[test]
fn olsgame_reports_differentiation() {
    let doc = json_of(&["olsgame", "--k", "4"]);
    let r = &doc["result"];
    assert!(r["n_differentiated"].as_u64().unwrap() >= 1);
    assert_eq!(r["n_symmetric_excluding_covariate"], 0);
    assert_eq!(r["surplus_inequality_holds"], true);
}

#[test]
fn deter_scan_has_regions() {
    let text = stdout_of(&["deter", "--family", "ridge"]);
    let mut rows = text.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(
        rows.next().unwrap(),
        "c_f,outside_option,incumbent_alpha,incumbent_cost,entered,biased_deterrence,overinvestment_deterrence"
    );
    let cells: Vec<_> = rows.collect();
    assert_eq!(cells.len(), 2500);
    assert!(cells.iter().any(|r| r.split(',').nth(5) == Some("true")));
}

#[test]
fn out_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    predmkt()
        .args(["--out", path.to_str().unwrap(), "sweep", "--grid", "0.5"])
        .assert()
        .success()
        .stdout("");
    assert_eq!(std::fs::read_to_string(&path).unwrap(), stdout_of(&["sweep", "--grid", "0.5"]));
}

#[test]
fn verify_reruns_are_identical() {
    let args = ["--seed", "5", "verify", "--trials", "4000"];
    let a = predmkt().args(args).output().unwrap();
    let b = predmkt().args(args).output().unwrap();
    assert_eq!(a.stdout, b.stdout);
    let doc: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(doc["header"]["config"]["seed"], 5);
}

#[test]
fn failing_checks_exit_one() {
    predmkt().args(["verify", "--trials", "1000"]).assert().code(1);
}

#[test]
fn usage_errors_exit_two() {
    predmkt().args(["sweep", "--grid", "0.5,abc"]).assert().code(2);
    predmkt().args(["sweep", "--grid", "-1"]).assert().code(2);
    predmkt().args(["verify", "--trials", "1"]).assert().code(2);
    predmkt().args(["--threads", "0", "sweep"]).assert().code(2);
    predmkt().arg("nonsense").assert().code(2);
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[sweep]\nbogus = 1\n").unwrap();
    predmkt()
        .args(["--config", path.to_str().unwrap(), "sweep"])
        .assert()
        .code(2);
}

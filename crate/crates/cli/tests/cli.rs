use std::process::{Command, Output};

use serde_json::Value;

fn splitmove(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitmove"))
        .args(args)
        .env_remove("SPLITMOVE_SERVER")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

#[test]
fn prob_writes_json_and_honours_kernel_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("kernel.toml");
    std::fs::write(&cfg, "[kernel]\nkind = \"metropolis_hastings\"\nsigma = 0.5\nburn_in = 5\n").unwrap();
    let out_path = dir.path().join("prob.json");
    let out = splitmove(&[
        "prob", "--benchmark", "waarts", "-n", "20", "--workers", "2", "--seed", "4",
        "--config", cfg.to_str().unwrap(), "--out", out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let file: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(v, file);
    assert_eq!(v["K"], 2);
    assert_eq!(v["N"], 20);
    // T = 5: N initial calls plus at most 5 per attempt
    let per_worker = v["per_worker_calls"][0].as_u64().unwrap();
    let m = v["M"].as_u64().unwrap();
    assert!(per_worker >= 20 && per_worker <= 20 + 5 * 10 * m, "{per_worker}");
}

#[test]
fn quantile_shortfall_without_topup_exits_2() {
    // a one-move first pass cannot reach the target
    let out = splitmove(&[
        "quantile", "--benchmark", "toy-exp", "--sampler", "ideal", "--p", "1e-2", "-n", "20",
        "--workers", "4", "--m0", "1", "--no-topup",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["shortfall"], true);
    assert!(v["q_hat"].is_null());
    assert!(v["events_obtained"].as_u64().unwrap() < v["m"].as_u64().unwrap());

    let out = splitmove(&[
        "quantile", "--benchmark", "toy-exp", "--sampler", "ideal", "--p", "1e-2", "-n", "20",
        "--workers", "4", "--m0", "1",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["shortfall"], true);
    assert!(v["q_hat"].is_number());
}

#[test]
fn quantile_sequential_mode() {
    let out = splitmove(&[
        "quantile", "--benchmark", "toy-exp", "--sampler", "ideal", "--p", "1e-3", "-n", "20",
        "--workers", "5", "--mode", "seq", "--seed", "1",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!(v["m0"].is_null());
    assert!((v["q_hat"].as_f64().unwrap() - 1e3f64.ln()).abs() < 1.5);
}

#[test]
fn doe_writes_design_and_hyperparameters() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("doe.csv");
    let gp = dir.path().join("gp.json");
    let out = splitmove(&[
        "doe", "--benchmark", "parabolic", "--seed", "3", "--design", design.to_str().unwrap(),
        "--gp", gp.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&design).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "x1,x2,g,is_failure,chain_id,move_index");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len() as u64, json(&out)["result"]["n_calls"].as_u64().unwrap());
    assert!(rows.iter().filter(|r| r.contains(",true,")).count() >= 10);
    let hyper: Value = serde_json::from_str(&std::fs::read_to_string(&gp).unwrap()).unwrap();
    assert_eq!(hyper["length_scales"].as_array().unwrap().len(), 2);
}

#[test]
fn doe_cap_breach_is_an_error_with_partial_design() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("partial.csv");
    let out = splitmove(&[
        "doe", "--benchmark", "watermark", "--move-cap", "1", "--design", design.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("partial design"));
    assert!(std::fs::read_to_string(&design).unwrap().lines().count() > 21);
}

#[test]
fn plan_reports_cost_models() {
    let out = splitmove(&["plan", "--p", "1e-3", "--delta", "0.1"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!((v["par_over_mc"].as_f64().unwrap() - 0.954).abs() < 0.01);
}

#[test]
fn replicate_writes_one_csv_per_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    let out_csv = dir.path().join("runs.csv");
    std::fs::write(
        &cfg,
        format!(
            "benchmark = \"toy-uniform\"\nmode = \"prob\"\nsampler = \"ideal\"\nreps = 4\nseed = 2\n\
             configurations = [\"2x10\", \"4x5\"]\noutput = \"{}\"\n",
            out_csv.display()
        ),
    )
    .unwrap();
    let out = splitmove(&["replicate", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out).as_array().unwrap().len(), 2);
    for layout in ["2x10", "4x5"] {
        let text = std::fs::read_to_string(dir.path().join(format!("runs_{layout}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 5);
    }
}

#[test]
fn errors_exit_1() {
    let out = splitmove(&["prob", "--benchmark", "waarts", "--sampler", "ideal"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exact sampling"));
    let out = splitmove(&["prob", "--benchmark", "waarts", "--server", "http://127.0.0.1:1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn talks_to_an_external_server() {
    let server = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = server.local_addr().unwrap();
    drop(server);
    let mut child = Command::new(env!("CARGO_BIN_EXE_splitmove"))
        .args(["serve", "--addr", &addr.to_string()])
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let url = format!("http://{addr}");
    let mut out = None;
    for _ in 0..100 {
        let o = splitmove(&["plan", "--p", "1e-6", "--delta", "0.2", "--server", &url]);
        if o.status.success() {
            out = Some(o);
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let out = out.expect("server answered");
    assert!(json(&out)["t_par"].as_f64().unwrap() > 0.0);
}

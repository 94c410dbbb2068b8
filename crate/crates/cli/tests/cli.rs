use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn mpsim(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpsim"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn establish_register_quote_verify() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    assert!(stdout(&mpsim(w, &["establish"])).starts_with("establish: ok"));
    assert!(w.join("flash/pkg0.blob").is_file());
    assert!(stdout(&mpsim(w, &["register"])).starts_with("register: ok"));
    let out = stdout(&mpsim(
        w,
        &["quote", "--tcb-level", "2", "--user-data", "hi"],
    ));
    assert!(out.contains("quote: ok"), "{out}");
    let quote = w.join("quotes/latest.quote");
    assert!(quote.is_file(), "{out}");
    let out = stdout(&mpsim(w, &["verify", quote.to_str().unwrap()]));
    assert!(out.starts_with("verify: accepted"), "{out}");

    let mut bytes = std::fs::read(&quote).unwrap();
    bytes[40] ^= 1;
    let bad = w.join("bad.quote");
    std::fs::write(&bad, bytes).unwrap();
    let out = stdout(&mpsim(w, &["verify", bad.to_str().unwrap()]));
    assert!(out.starts_with("verify: rejected"), "{out}");
}

#[test]
fn reboot_survives_processes_and_falls_back_on_tamper() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    stdout(&mpsim(w, &["establish"]));
    assert!(stdout(&mpsim(w, &["reboot"])).starts_with("reboot: ok"));
    let out = stdout(&mpsim(w, &["reboot", "--tamper-blob", "1"]));
    assert!(out.starts_with("reboot: fallback"), "{out}");
    assert!(stdout(&mpsim(w, &["reboot"])).starts_with("reboot: ok"));
}

#[test]
fn add_package_accepts_only_valid_certificates() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    stdout(&mpsim(w, &["establish"]));
    stdout(&mpsim(w, &["register"]));
    for cert in ["wrong-platform", "wrong-package", "wrong-issuer"] {
        let out = stdout(&mpsim(w, &["add-package", "--cert", cert]));
        assert!(out.contains("add-package: rejected"), "{cert}: {out}");
    }
    let out = stdout(&mpsim(w, &["add-package"]));
    assert!(out.contains("add-package: ok"), "{out}");
    assert!(w.join("flash/pkg2.blob").is_file());
}

#[test]
fn run_writes_a_deterministic_report() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let (a, b) = (w.join("a.json"), w.join("b.json"));
    for report in [&a, &b] {
        stdout(&mpsim(w, &["--report", report.to_str().unwrap(), "run"]));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["scenario"], "two_socket_establish");
    assert!(json["steps"]
        .as_array()
        .unwrap()
        .iter()
        .all(|s| s["as_expected"] == true));
}

#[test]
fn attack_toggle_changes_only_reset_and_reclaim() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let matrix = |m: &str| -> serde_json::Value {
        serde_json::from_str(&stdout(&mpsim(w, &["--mitigations", m, "attack"]))).unwrap()
    };
    let (on, off) = (matrix("on"), matrix("off"));
    let rows = |v: &serde_json::Value| v["rows"].as_array().unwrap().clone();
    let changed: Vec<String> = rows(&on)
        .iter()
        .zip(rows(&off).iter())
        .filter(|(a, b)| a["outcome"] != b["outcome"])
        .map(|(a, _)| a["threat"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(changed, ["Reset", "EPC Reclaim"]);
}

#[test]
fn bad_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\npackage_count = 0\n").unwrap();
    let out = mpsim(dir.path(), &["--config", cfg.to_str().unwrap(), "run"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("package_count"));
}

#[test]
fn reboot_without_establish_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mpsim(dir.path(), &["reboot"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("establish"));
}

#[test]
fn serve_listens_until_stdin_closes() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_mpsim"))
        .arg("--workdir")
        .arg(dir.path())
        .args(["serve", "--listen", "127.0.0.1:0"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let first = lines.next().unwrap().unwrap();
    let addr = first.strip_prefix("listening on ").expect(&first);
    let mut stream = std::net::TcpStream::connect(addr).unwrap();
    // PublicKey request: magic then tag 5.
    let req = [b'M', b'P', b'R', b'Q', 5];
    stream.write_all(&(req.len() as u32).to_le_bytes()).unwrap();
    stream.write_all(&req).unwrap();
    let mut reply = Vec::new();
    std::io::Read::read_to_end(&mut stream, &mut reply).unwrap();
    assert_eq!(&reply[4..8], b"MPRS");
    drop(child.stdin.take());
    assert_eq!(lines.next().unwrap().unwrap(), "stopped");
    assert!(child.wait().unwrap().success());
}

use std::path::PathBuf;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_mbr-probe");
const MOCK: &str = env!("CARGO_BIN_EXE_mbr-mock-scorer");

const CORPUS: &str = r#"{"id":"s1","source":{"text":"1970 war gut.","spans":[{"start":0,"end":4,"kind":"number"}]},"reference":{"text":"1970 was good.","spans":[{"start":0,"end":4,"kind":"number"}]},"samples":["1970 was good.","1980 was good.","1970 was fine."]}
{"id":"s2","source":{"text":"Mahmoud kam.","spans":[{"start":0,"end":7,"kind":"named_entity"}]},"reference":{"text":"Mahmoud came.","spans":[{"start":0,"end":7,"kind":"named_entity"}]},"alternative_reference":{"text":"Mahmoud arrived.","spans":[{"start":0,"end":7,"kind":"named_entity"}]},"samples":["Mahmoud came.","Mahmud came.","Mahmoud arrived."]}
{"id":"s3","source":{"text":"Das Haus ist rot.","spans":[]},"reference":{"text":"The house is red.","spans":[{"start":4,"end":9,"kind":"noun"}]},"samples":["The house is red.","The home is red."]}
"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("corpus.jsonl"), CORPUS).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn corpus(&self) -> String {
        self.path("corpus.jsonl").display().to_string()
    }

    fn write(&self, name: &str, text: &str) -> String {
        std::fs::write(self.path(name), text).unwrap();
        self.path(name).display().to_string()
    }
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn decode_writes_one_row_per_segment() {
    let f = Fixture::new();
    let o = run(&["decode", "--corpus", &f.corpus(), "--utility", "chrf++"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("# config {"));
    assert!(out.contains("\"seed\":0"));
    let lines = data_lines(&out);
    assert_eq!(lines[0], "id\tchosen_text\tmbr_score\tpool_size");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("s1\t1970 was good.\t"));
    assert!(lines[3].ends_with("\t2"));
}

#[test]
fn remote_decode_has_same_schema() {
    let f = Fixture::new();
    let o = run(&["decode", "--corpus", &f.corpus(), "--utility", &format!("remote:{MOCK}"), "--jobs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines = data_lines(&out);
    assert_eq!(lines[0], "id\tchosen_text\tmbr_score\tpool_size");
    assert_eq!(lines.len(), 4);
}

#[test]
fn output_file_and_json_format() {
    let f = Fixture::new();
    let out = f.path("out.json");
    let o = run(&[
        "decode",
        "--corpus",
        &f.corpus(),
        "--format",
        "json",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["config"]["command"], "decode");
    assert_eq!(doc["report"].as_array().unwrap().len(), 3);
    assert!(doc["config"].get("output").is_none());
}

#[test]
fn config_errors_exit_1() {
    let f = Fixture::new();
    assert_eq!(run(&["decode", "--corpus", "/nonexistent.jsonl"]).status.code(), Some(1));
    assert_eq!(run(&["decode", "--corpus", &f.corpus(), "--utility", "meteor"]).status.code(), Some(1));
    assert_eq!(run(&["decode", "--corpus", &f.corpus(), "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(&["decode", "--corpus", &f.corpus(), "--utility", "remote:/nonexistent/scorer"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    let bad = f.write("bad.json", r#"{"command":"decode","corpus":"x","unknown":1}"#);
    assert_eq!(run(&["--config", &bad]).status.code(), Some(1));
}

#[test]
fn partial_failure_exits_2_and_lists_segments() {
    let f = Fixture::new();
    let o = run(&[
        "decode",
        "--corpus",
        &f.corpus(),
        "--utility",
        &format!("remote:{MOCK} --die-on-request 3"),
        "--jobs",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("\"s3\""), "{err}");
    assert!(!err.contains("\"s1\""), "{err}");
    assert_eq!(data_lines(&stdout(&o)).len(), 3);
}

#[test]
fn help_lists_every_flag() {
    let o = run(&["sensitivity", "--help"]);
    assert!(o.status.success());
    let help = stdout(&o);
    for flag in ["--corpus", "--utility", "--base", "--support", "--kinds", "--exclude-diagonal", "--seed", "--output", "--format", "--jobs"] {
        assert!(help.contains(flag), "{flag} missing");
    }
}

#[test]
fn sensitivity_rows_per_applicable_kind() {
    let f = Fixture::new();
    let o = run(&["sensitivity", "--corpus", &f.corpus(), "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines = data_lines(&out);
    assert_eq!(lines[0], "kind\tmean_abs_diff\tn_segments\tskipped");
    let kinds: Vec<&str> = lines[1..].iter().map(|l| l.split('\t').next().unwrap()).collect();
    for k in ["num_add", "ne_sub", "noun_del", "altern", "copy", "hallucin"] {
        assert!(kinds.contains(&k), "{k} missing from {kinds:?}");
    }
    let means: Vec<f64> = lines[1..].iter().map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert!(means.windows(2).all(|w| w[0] <= w[1]));
    for l in &lines[1..] {
        let cols: Vec<usize> = l.split('\t').skip(2).map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols[0] + cols[1], 3);
    }
}

#[test]
fn config_file_equals_flags() {
    let f = Fixture::new();
    let cfg = f.write(
        "run.json",
        &format!(r#"{{"command":"sensitivity","corpus":"{}","seed":5}}"#, f.corpus()),
    );
    let a = run(&["--config", &cfg]);
    let b = run(&["sensitivity", "--corpus", &f.corpus(), "--seed", "5"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn audit_reference_against_itself_is_zero() {
    let f = Fixture::new();
    let o = run(&["audit", "--corpus", &f.corpus()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines = data_lines(&out);
    assert!(lines[1].starts_with("reference\t0.000000\t+0.000000\t"));
    assert!(lines[1].contains("\t0.000000\t+0.000000\t"));
}

#[test]
fn audit_of_decoded_outputs() {
    let f = Fixture::new();
    let decoded = f.path("decoded.tsv");
    let o = run(&["decode", "--corpus", &f.corpus(), "--output", decoded.to_str().unwrap()]);
    assert!(o.status.success());
    let sys = f.write(
        "sys.jsonl",
        "{\"id\":\"s1\",\"text\":\"1980 was good.\",\"spans\":[]}\n{\"id\":\"s2\",\"text\":\"Mahmud came.\",\"spans\":[{\"start\":0,\"end\":6,\"kind\":\"named_entity\"}]}\n",
    );
    let o = run(&[
        "audit",
        "--corpus",
        &f.corpus(),
        "--system",
        &format!("mbr={}", decoded.display()),
        "--system",
        &format!("bad={sys}"),
        "--format",
        "json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let rows = doc["report"]["rows"].as_array().unwrap();
    let bad = rows.iter().find(|r| r["system"] == "bad").unwrap();
    assert_eq!(bad["number_error_rate"], 100.0);
    assert_eq!(bad["ne_error_rate"], 100.0);
    let mbr = rows.iter().find(|r| r["system"] == "mbr").unwrap();
    assert_eq!(mbr["number_error_rate"], 0.0);
    assert!(mbr["ne_error_rate"].is_null());
    assert_eq!(run(&["audit", "--corpus", &f.corpus(), "--baseline", "nobody"]).status.code(), Some(1));
}

fn training_tsv(n: usize) -> String {
    let mut s = String::from("src\tmt\tref\tscore\n");
    for i in 0..n {
        s.push_str(&format!("Quelle {i}\tIt cost {} dollars.\tIt cost {} dollars.\t0.5\n", 10 + i, 10 + i));
    }
    s
}

#[test]
fn synth_half_ratio_on_ten_examples() {
    let f = Fixture::new();
    let input = f.write("train.tsv", &training_tsv(10));
    let o = run(&["synth", "--input", &input, "--ratio", "0.5", "--synthetic-only"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows = data_lines(&out).len() - 1;
    assert!((4..=6).contains(&rows), "{rows} synthetic rows");
    let mut r = mbr_probe::tsv::reader(out.as_bytes(), true);
    for rec in r.records() {
        let rec = rec.unwrap();
        assert_eq!(&rec[3], "0.3");
        assert_eq!(&rec[4], "synthetic");
        let edit: mbr_probe::perturb::EditRecord = serde_json::from_str(&rec[5]).unwrap();
        assert!(edit.kind.as_str().starts_with("num_"));
    }
}

#[test]
fn synth_mix_conserves_rows() {
    let f = Fixture::new();
    let input = f.write("train.tsv", &training_tsv(40));
    let o = run(&["synth", "--input", &input, "--ratio", "0.25", "--seed", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines = data_lines(&out);
    let synthetic = lines.iter().filter(|l| l.contains("\tsynthetic\t")).count();
    let original = lines.iter().filter(|l| l.ends_with("\toriginal")).count();
    assert_eq!(original, 40);
    assert_eq!(lines.len(), 1 + original + synthetic);
    let err = stderr(&o);
    assert!(err.contains(&format!("{synthetic} synthetic")), "{err}");
}

#[test]
fn conformance_suite_against_mock() {
    let o = run(&["conformance", "--scorer", MOCK]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("5 of 5 checks passed"));
    let o = run(&["conformance", "--scorer", &format!("{MOCK} --bad-shape")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAIL shape"));
    let o = run(&["conformance", "--scorer", &format!("{MOCK} --exit-immediately"), "--timeout", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAIL handshake"));
}


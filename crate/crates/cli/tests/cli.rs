use std::path::{Path, PathBuf};
use std::process::Command;

fn program(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../programs").join(name)
}

fn chkc(args: &[&str]) -> (String, i32) {
    let out = Command::new(env!("CARGO_BIN_EXE_chkc")).args(args).output().unwrap();
    (String::from_utf8(out.stdout).unwrap(), out.status.code().unwrap())
}

fn with_file(name: &str, text: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("chkc-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn typecheck_prints_the_type_of_main() {
    assert_eq!(chkc(&["typecheck", path(&program("strcat.chkc"))]), ("int\n".into(), 0));
}

#[test]
fn typecheck_names_the_failing_rule() {
    let f = with_file("bad.chkc", "(deref (cast (ptr u int) (lit 3 int)))");
    let (out, status) = chkc(&["typecheck", path(&f)]);
    assert_eq!(status, 1);
    assert!(out.starts_with("error: type: T-Def"), "{out}");
}

#[test]
fn eval_prints_results() {
    assert_eq!(chkc(&["eval", path(&program("null_deref.chkc"))]), ("null\n".into(), 0));
    assert_eq!(chkc(&["eval", path(&program("dependent_fn.chkc"))]), ("value 9\n".into(), 0));
    let (out, status) = chkc(&["eval", "--fuel", "2", path(&program("strcat.chkc"))]);
    assert_eq!((out.as_str(), status), ("fuel\n", 1));
}

#[test]
fn eval_trace_lists_steps() {
    let (out, status) = chkc(&["eval", "--trace", path(&program("null_deref.chkc"))]);
    assert_eq!(status, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].starts_with("STEP 0 MODE c REDEX"), "{out}");
    assert_eq!(*lines.last().unwrap(), "null");
}

#[test]
fn compile_output_runs_to_the_same_result() {
    let (target, status) = chkc(&["compile", path(&program("strlen_widen.chkc"))]);
    assert_eq!(status, 0);
    let (again, _) = chkc(&["compile", path(&program("strlen_widen.chkc"))]);
    assert_eq!(target, again);
    let f = with_file("widen.corec", &target);
    assert_eq!(chkc(&["run-corec", path(&f)]), ("value 105\n".into(), 0));
}

#[test]
fn parse_round_trips() {
    let (text, status) = chkc(&["parse", path(&program("strcat.chkc"))]);
    assert_eq!(status, 0);
    let f = with_file("strcat_printed.chkc", &text);
    assert_eq!(chkc(&["parse", path(&f)]).0, text);
}

#[test]
fn parse_errors_exit_with_one() {
    let f = with_file("broken.chkc", "(let x");
    let (out, status) = chkc(&["parse", path(&f)]);
    assert_eq!(status, 1);
    assert!(out.starts_with("error: parse"), "{out}");
}

#[test]
fn missing_files_exit_with_one() {
    let (out, status) = chkc(&["eval", "/nonexistent/x.chkc"]);
    assert_eq!(status, 1);
    assert!(out.starts_with("error:"));
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [&[][..], &["frobnicate"], &["eval"], &["fuzz", "--count", "many"], &["typecheck", "a", "b"]] {
        let out = Command::new(env!("CARGO_BIN_EXE_chkc")).args(args).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn fuzz_is_deterministic() {
    let args = ["fuzz", "--count", "300", "--depth", "8", "--seed", "42"];
    let (a, status) = chkc(&args);
    assert_eq!(status, 0, "{a}");
    assert_eq!(chkc(&args).0, a);
    assert!(a.starts_with("TERMS 300\n"));
    assert!(a.contains("PROP simulation PASS 300 FAIL 0 INCONCLUSIVE 0\n"));
}

#[test]
fn fuzz_fails_on_a_broken_compiler() {
    let (out, status) = chkc(&["fuzz", "--count", "200", "--depth", "8", "--disable", "check-null"]);
    assert_eq!(status, 1);
    assert!(out.contains("\nCEX seed="), "{out}");
}

#[test]
fn fuzz_reads_weights() {
    let w = with_file("weights.txt", "G-ASTR 0\nT-If 0\n");
    let (out, status) = chkc(&["fuzz", "--count", "50", "--depth", "6", "--weights", path(&w)]);
    assert_eq!(status, 0);
    assert!(out.contains("RULE G-ASTR 0\n") && out.contains("RULE T-If 0\n"), "{out}");
    let bad = with_file("bad_weights.txt", "T-Nope 1\n");
    let (out, status) = chkc(&["fuzz", "--count", "5", "--weights", path(&bad)]);
    assert_eq!(status, 1);
    assert!(out.contains("unknown rule"));
}

#[test]
fn fuzz_relaxations_are_rejected() {
    let (out, status) = chkc(&["fuzz", "--count", "200", "--depth", "7", "--relax", "mode"]);
    assert_eq!(status, 0);
    assert!(out.contains("PROP rejection PASS 200 FAIL 0 INCONCLUSIVE 0"), "{out}");
}

#[test]
fn emit_checkedc_dependent_function() {
    let (c, status) = chkc(&["emit-checkedc", path(&program("dependent_fn.chkc"))]);
    assert_eq!(status, 0);
    let expected = "int deref_array(int n, nt_array_ptr<int> p : count(n)) {
  if (*p) {
    return *(p + 1);
  } else {
    return 0;
  }
}
";
    assert!(c.contains(expected), "{c}");
}

#[test]
fn emit_checkedc_rejects_ill_typed_programs() {
    let f = with_file("bad_emit.chkc", "(deref (cast (ptr u int) (lit 3 int)))");
    let (out, status) = chkc(&["emit-checkedc", path(&f)]);
    assert_eq!(status, 1);
    assert!(out.starts_with("error: emit-checkedc"), "{out}");
}

//! Driver behavior: exit codes, warnings on stderr, emitted files, and
//! byte-stable explain output.

use std::path::Path;
use std::process::Command;

fn recurc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_recurc"))
}

fn write(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, content).unwrap();
    p
}

const CHOLESKY_CSR: &str = "\
rec: L(i,j) = (A(i,j) - Sum{k}(L(i,k)*L(j,k))) / L(j,j) : [k<j, j<i]
rec: L(i,j) = sqrt(A(i,j) - Sum{k}(L(i,k)*L(j,k))) : [k<j, j=i]
order: i j k
extent: N = 4
storage: A = Dense(0) Compressed(1)
storage: L = Dense(0) Compressed(1)
";

#[test]
fn compile_writes_c_and_exits_zero() {
    let dir = std::env::temp_dir().join("recurc_cli_compile");
    std::fs::create_dir_all(&dir).unwrap();
    let program = write(&dir, "chol.rec", CHOLESKY_CSR);
    let out = dir.join("out.c");
    let status = recurc()
        .args(["compile", "--program"])
        .arg(&program)
        .arg("--emit-c")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let c = std::fs::read_to_string(&out).unwrap();
    assert!(c.contains("void chol("));
}

#[test]
fn ji_trisolve_csr_prints_warning() {
    let dir = std::env::temp_dir().join("recurc_cli_warn");
    std::fs::create_dir_all(&dir).unwrap();
    let program = write(
        &dir,
        "tri.rec",
        "rec: X(i) = (B(i) - Sum{j}(L(i,j)*X(j))) / L(i,i) : [j<i, i<N]\norder: j i\nextent: N = 8\nstorage: L = Dense(0) Compressed(1)\n",
    );
    let out = recurc()
        .args(["compile", "--program"])
        .arg(&program)
        .arg("--emit-c")
        .arg(dir.join("tri.c"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("warning"), "{stderr}");
    assert!(stderr.contains("binary search"), "{stderr}");
}

#[test]
fn impossible_ordering_exits_one() {
    let dir = std::env::temp_dir().join("recurc_cli_impossible");
    std::fs::create_dir_all(&dir).unwrap();
    let program = write(
        &dir,
        "bad.rec",
        "rec: S(i) = S(i+1) + A(i) : [i<N]\norder: i\nextent: N = 8\n",
    );
    let out = recurc()
        .args(["compile", "--program"])
        .arg(&program)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("ordering impossible"), "{stderr}");
}

#[test]
fn run_fibonacci_writes_output_file() {
    let dir = std::env::temp_dir().join("recurc_cli_fib");
    std::fs::create_dir_all(&dir).unwrap();
    let program = write(
        &dir,
        "fib.rec",
        "rec: F(i) = F(i-1) + F(i-2) : [2<=i, i<N]\norder: i\nextent: N = 11\ninit: F(0) = 0\ninit: F(1) = 1\n",
    );
    let out = recurc()
        .args(["run", "--program"])
        .arg(&program)
        .arg("--output-dir")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let f = std::fs::read_to_string(dir.join("F.coo")).unwrap();
    let last = f.lines().find(|l| l.starts_with("10 ")).unwrap();
    assert_eq!(last.trim(), "10 55");
}

#[test]
fn check_passes_and_fails_by_exit_code() {
    let dir = std::env::temp_dir().join("recurc_cli_check");
    std::fs::create_dir_all(&dir).unwrap();
    let program = write(
        &dir,
        "sum.rec",
        "rec: S(i) = S(i-1) + A(i) : [1<=i, i<N]\norder: i\nextent: N = 6\ninit: S(0) = 7\n",
    );
    let input = write(&dir, "A.coo", "1 6\n0 1\n1 2\n2 3\n3 4\n4 5\n5 6\n");
    let out = recurc()
        .args(["check", "--program"])
        .arg(&program)
        .arg("--input")
        .arg(format!("A={}", input.display()))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Cholesky on an indefinite matrix: runtime error, exit 2.
    let program = write(
        &dir,
        "chol.rec",
        "rec: L(i,j) = (A(i,j) - Sum{k}(L(i,k)*L(j,k))) / L(j,j) : [k<j, j<i]\nrec: L(i,j) = sqrt(A(i,j) - Sum{k}(L(i,k)*L(j,k))) : [k<j, j=i]\norder: i j k\nextent: N = 2\n",
    );
    let bad = write(&dir, "Abad.coo", "2 2 2\n0 0 1\n0 1 3\n1 0 3\n1 1 1\n");
    let out = recurc()
        .args(["check", "--program"])
        .arg(&program)
        .arg("--input")
        .arg(format!("A={}", bad.display()))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn explain_rin_is_byte_stable() {
    let dir = std::env::temp_dir().join("recurc_cli_explain");
    std::fs::create_dir_all(&dir).unwrap();
    let program = write(&dir, "chol.rec", CHOLESKY_CSR);
    let run = || {
        recurc()
            .args(["explain", "--program"])
            .arg(&program)
            .args(["--explain", "rin"])
            .output()
            .unwrap()
    };
    let a = run();
    let b = run();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.contains("//L(:i,:) ready"), "{text}");
    assert!(text.starts_with("for i<N:"), "{text}");
}

#[test]
fn explain_dag_and_fragments() {
    let dir = std::env::temp_dir().join("recurc_cli_explain2");
    std::fs::create_dir_all(&dir).unwrap();
    let program = write(&dir, "chol.rec", CHOLESKY_CSR);
    let dag = recurc()
        .args(["explain", "--program"])
        .arg(&program)
        .args(["--explain", "dag"])
        .output()
        .unwrap();
    let text = String::from_utf8(dag.stdout).unwrap();
    assert!(text.starts_with("digraph"), "{text}");
    assert!(text.contains("->"));

    let frags = recurc()
        .args(["explain", "--program"])
        .arg(&program)
        .args(["--explain", "fragments"])
        .output()
        .unwrap();
    let text = String::from_utf8(frags.stdout).unwrap();
    assert!(text.contains("L1(i,j) += L(i,k)*L(j,k)"), "{text}");
}

//! Compiles and runs a C program against the generated header and the
//! static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "fedviz.h"

int main(void) {
    const double x[] = {0.0, 1.0, 2.0, 0.0, 0.5, -1.0};
    FvMatrix *m = NULL;
    if (fv_matrix_new(2, 3, x, &m) != FV_STATUS_OK) return 10;
    double v = -1.0;
    if (fv_mmd(m, m, 1.0, &v) != FV_STATUS_OK) return 11;
    if (fv_mmd(m, m, -1.0, &v) != FV_STATUS_CONFIG) return 12;
    if (strlen(fv_last_error()) == 0) return 13;
    if (fv_mmd(NULL, m, 1.0, &v) != FV_STATUS_NULL_POINTER) return 14;
    FvMatrix *k = NULL;
    if (fv_nystrom_complete(m, m, FV_MATRIX_KIND_DISTANCE, 1.0, &k) != FV_STATUS_OK) return 15;
    if (fv_matrix_rows(k) != 3 || fv_matrix_cols(k) != 3) return 16;
    double buf[9];
    if (fv_matrix_copy(k, buf, 9) != FV_STATUS_OK) return 17;
    printf("%s %.6f\n", fv_version(), buf[1]);
    fv_matrix_free(k);
    fv_matrix_free(m);
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap();
    let mut build = Command::new(env!("CARGO"));
    build.args(["build", "-p", "fedviz-ffi", "--lib"]);
    if profile_dir.ends_with("release") {
        build.arg("--release");
    }
    assert!(build.status().expect("cargo").success(), "building the static library failed");
    let lib = profile_dir.join("libfedviz_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());

    let work = tempfile::tempdir().unwrap();
    let src = work.path().join("main.c");
    let bin = work.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler");
    assert!(status.success(), "{cc} failed");

    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    // distance between points (0,0) and (1,0.5), completed exactly
    assert_eq!(text.trim(), format!("{} 1.250000", env!("CARGO_PKG_VERSION")));
}

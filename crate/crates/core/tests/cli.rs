use std::path::Path;
use std::process::{Command, Output};

const BLOBS: &str = "[dataset]\nsource = \"blobs\"\nblobs = 3\nper_blob = 40\ndim = 4\nstd = 1.0\nseparation = 10.0\n\
[partition]\nclients = 3\nmode = \"non_iid_one_class\"\n[fed]\nrounds = 10\nn_landmarks = 20\n[tsne]\niterations = 300\n";

fn fedviz(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedviz"))
        .current_dir(dir)
        .env_remove("FEDVIZ_DATA_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn run_rerun_eval_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("blobs.toml"), BLOBS).unwrap();
    let run = fedviz(dir.path(), &["tsne", "--config", "blobs.toml", "--seed", "8", "--out-dir", "a"]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    for f in ["embedding.csv", "embedding.fdlm", "landmarks.fdlm", "metrics.csv", "scatter.svg", "manifest.toml"] {
        assert!(dir.path().join("a").join(f).exists(), "{f} missing");
    }
    let manifest = std::fs::read_to_string(dir.path().join("a/manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 8"));

    let rerun = fedviz(dir.path(), &["manifest", "rerun", "a/manifest.toml", "--out-dir", "b", "--threads", "1"]);
    assert_eq!(code(&rerun), 0, "{}", String::from_utf8_lossy(&rerun.stderr));
    assert_eq!(
        std::fs::read(dir.path().join("a/embedding.csv")).unwrap(),
        std::fs::read(dir.path().join("b/embedding.csv")).unwrap()
    );
    let wrong_seed = fedviz(dir.path(), &["manifest", "rerun", "a/manifest.toml", "--seed", "9", "--out-dir", "c"]);
    assert_eq!(code(&wrong_seed), 2);

    let eval = fedviz(dir.path(), &["eval", "--embedding", "a/embedding.csv", "--out-dir", "ev"]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    assert!(String::from_utf8_lossy(&eval.stdout).contains("NMI 1.0000"));
    let plot = fedviz(dir.path(), &["plot", "--embedding", "a/embedding.csv", "--out-dir", "pl"]);
    assert_eq!(code(&plot), 0);
    assert!(std::fs::read_to_string(dir.path().join("pl/scatter.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn speclust_and_feddl_fit_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("blobs.toml"), BLOBS).unwrap();
    let sc = fedviz(dir.path(), &["speclust", "--config", "blobs.toml", "--set", "speclust.clusters=3", "--out-dir", "s"]);
    assert_eq!(code(&sc), 0, "{}", String::from_utf8_lossy(&sc.stderr));
    assert!(std::fs::read_to_string(dir.path().join("s/assignment.csv")).unwrap().starts_with("point_id,cluster,label"));
    let fit = fedviz(dir.path(), &["feddl", "fit", "--config", "blobs.toml", "--set", "fed.rounds=3", "--out-dir", "f"]);
    assert_eq!(code(&fit), 0, "{}", String::from_utf8_lossy(&fit.stderr));
    let m = std::fs::read_to_string(dir.path().join("f/manifest.toml")).unwrap();
    assert!(m.contains("rounds = 3"));
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("blobs.toml"), BLOBS).unwrap();
    assert_eq!(code(&fedviz(dir.path(), &["tsne", "--config", "missing.toml"])), 2);
    assert_eq!(code(&fedviz(dir.path(), &["tsne", "--config", "blobs.toml", "--set", "fed.bogus=1"])), 2);
    assert_eq!(code(&fedviz(dir.path(), &["umap", "--out-dir", "x"])), 3);
    std::fs::write(dir.path().join("bad.csv"), "point_id,z1,label\n0,zero,1\n").unwrap();
    assert_eq!(code(&fedviz(dir.path(), &["eval", "--embedding", "bad.csv"])), 3);
    let diverge = fedviz(
        dir.path(),
        &["feddl", "fit", "--config", "blobs.toml", "--set", "fed.step_size=1e308", "--out-dir", "d"],
    );
    assert_eq!(code(&diverge), 4, "{}", String::from_utf8_lossy(&diverge.stderr));
    assert!(String::from_utf8_lossy(&diverge.stderr).contains("client"));
}

#[test]
fn data_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fedviz"))
        .current_dir(dir.path())
        .env("FEDVIZ_DATA_DIR", dir.path().join("nowhere"))
        .args(["tsne"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
}

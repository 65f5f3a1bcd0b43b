use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "train_scenes = 3\nval_scenes = 2\ntest_scenes = 2\nheight = 12\nwidth = 12\n\
base_height = 20\nbase_width = 20\ntrials = 3\ntrain_masks = 2\nbackbone_width = 4\nbackbone_blocks = 1\n\
gst_channels = 2\ngst_proj_channels = 2\nepochs_init = 1\nepochs_trn = 1\nepochs_val = 1\nrounds = 2\nbatch_size = 2\n";

fn cassi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cassi")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cassi(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn full_run(dir: &Path, out: &str) {
    let o = format!("--out-dir={out}");
    ok(dir, &["gen-data", "--config", "tiny.cfg", &o]);
    ok(dir, &["gen-masks", "--config", "tiny.cfg", "--bins", "8", &o]);
    ok(dir, &["train", "--config", "tiny.cfg", &o]);
    let ckpt = format!("{out}/checkpoint.ckp");
    ok(dir, &["eval", "--checkpoint", &ckpt, &format!("--out-dir={out}/eval")]);
    ok(dir, &["uncertainty", "--checkpoint", &ckpt, &format!("--out-dir={out}/maps")]);
}

#[test]
fn full_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    full_run(dir.path(), "a");
    full_run(dir.path(), "b");
    let (a, b) = (tree(&dir.path().join("a")), tree(&dir.path().join("b")));
    assert!(a.contains_key("eval/metrics.csv") && a.contains_key("maps/maps.csv"));
    assert!(a["eval/metrics.csv"].starts_with(b"scene,trial,psnr_db,ssim\n"));
    assert_eq!(a, b);
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.cfg"), TINY).unwrap();
    ok(d, &["train", "--config", "tiny.cfg", "--out-dir", "full"]);
    ok(d, &["train", "--config", "tiny.cfg", "--set", "rounds=1", "--out-dir", "half"]);
    ok(d, &["train", "--resume", "half/checkpoint.ckp", "--set", "rounds=2", "--out-dir", "resumed"]);
    assert_eq!(
        std::fs::read(d.join("full/checkpoint.ckp")).unwrap(),
        std::fs::read(d.join("resumed/checkpoint.ckp")).unwrap()
    );
}

#[test]
fn errors_exit_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for args in [
        vec!["ablate", "--kind", "bogus"],
        vec!["train", "--set", "no_such_key=1"],
        vec!["eval", "--checkpoint", "missing.ckp"],
        vec!["train", "--set", "scenario=one-to-one", "--set", "test_masks=4"],
    ] {
        let out = cassi(d, &args);
        assert!(!out.status.success(), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "), "{args:?}");
    }
    std::fs::write(d.join("bad.ckp"), b"XXXX").unwrap();
    let out = cassi(d, &["eval", "--checkpoint", "bad.ckp"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn gradcheck_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck"]);
    assert!(out.lines().all(|l| l.starts_with("ok ")), "{out}");
    let cfg = ok(dir.path(), &["config", "--seed", "5"]);
    assert!(cfg.contains("\nseed = 5\n"));
}

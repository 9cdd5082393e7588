use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ssr_core::scenegen::formats::{read_ppm, read_ssvx, write_ppm};
use ssr_core::scenegen::RgbImage;
use ssr_core::trainer::{predict_pairs, Model};

fn ssr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssr"))
        .args(args)
        .env_remove("SSR_THREADS")
        .output()
        .expect("spawn ssr")
}

fn ok(args: &[&str]) -> Output {
    let out = ssr(args);
    assert!(
        out.status.success(),
        "ssr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    ssr(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `root`, keyed by relative path.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn gen(dir: &Path, count: usize, extra: &[&str]) {
    let count = count.to_string();
    let mut args = vec![
        "gen", "--out", s(dir), "--count", &count, "--seed", "4", "--width", "64", "--height", "64",
        "--voxel-res", "16", "--n-gt", "512",
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

fn train(data: &Path, out: &Path, task: &str, extra: &[&str]) {
    let mut args = vec![
        "train", "--task", task, "--data", s(data), "--out", s(out), "--epochs", "2", "--batch", "2", "--seed", "1",
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn gen_is_deterministic_across_thread_counts() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    gen(&a, 3, &[]);
    gen(&b, 3, &["--threads", "2"]);
    let ta = tree(&a);
    assert!(ta.len() > 3 * 5);
    assert_eq!(ta, tree(&b));
}

#[test]
fn gen_zero_count_gives_empty_manifest() {
    let t = tempfile::tempdir().unwrap();
    gen(t.path(), 0, &[]);
    let files = tree(t.path());
    assert_eq!(files.len(), 1);
    let manifest = files.values().next().unwrap();
    assert!(String::from_utf8_lossy(manifest).trim().is_empty());
}

#[test]
fn train_and_eval_are_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    gen(&data, 2, &[]);
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    train(&data, &a, "point", &[]);
    train(&data, &b, "point", &[]);
    assert_eq!(tree(&a), tree(&b));

    let curve = fs::read_to_string(a.join("loss_curve.tsv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("step\tstage\tloss\tlr"));
    let first = lines.next().unwrap();
    assert!(first.starts_with("1\trec-train\t"), "{curve}");
    assert!(first.ends_with("\t0.0001"), "{curve}");

    let ck = a.join("checkpoint.ssck");
    let (ra, rb) = (t.path().join("ra.tsv"), t.path().join("rb.tsv"));
    ok(&["eval", "--model", s(&ck), "--data", s(&data), "--out", s(&ra)]);
    ok(&["eval", "--model", s(&ck), "--data", s(&data), "--out", s(&rb)]);
    let report = fs::read_to_string(&ra).unwrap();
    assert_eq!(report, fs::read_to_string(&rb).unwrap());
    assert!(report.starts_with("sample_id\tmetric\tvalue\n"));
    assert!(report.lines().any(|l| l.starts_with("mean\tcd\t")));
    assert!(report.lines().any(|l| l.starts_with("mean\tepe\t")));

    assert_eq!(code(&["eval", "--model", s(&ck), "--data", s(&data), "--metrics", "bogus"]), 1);
    assert_eq!(code(&["eval", "--model", s(&ck), "--data", s(&data), "--metrics", "iou"]), 1);
    assert_eq!(code(&["eval", "--model", s(&t.path().join("none")), "--data", s(&data)]), 2);
}

#[test]
fn infer_exports_reload_to_thresholded_grid() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    gen(&data, 2, &[]);
    let m = t.path().join("m");
    train(&data, &m, "volume", &["--lr", "1e-3"]);
    let ck = m.join("checkpoint.ssck");
    let (left, right) = (data.join("sample_000001/left.ppm"), data.join("sample_000001/right.ppm"));
    let out = t.path().join("inf");
    ok(&["infer", "--model", s(&ck), "--left", s(&left), "--right", s(&right), "--out", s(&out)]);

    let model = Model::load(&ck).unwrap();
    let (l, r) = (read_ppm(&left).unwrap(), read_ppm(&right).unwrap());
    let pred = predict_pairs(&model, &[(&l, &r)], None).unwrap().remove(0);
    let want: Vec<bool> = pred.volume.unwrap().iter().map(|&p| p as f64 > 0.4).collect();
    let grid = read_ssvx(&out.join("volume.ssvx")).unwrap();
    assert_eq!(grid.res, 16);
    assert_eq!(grid.cells, want);
    let montage = read_ppm(&out.join("montage.ppm")).unwrap();
    assert_eq!((montage.width, montage.height), (128, 64));
    assert!(out.join("disp_l.ssdm").exists());

    let small = t.path().join("small.ppm");
    write_ppm(&small, &RgbImage::new(32, 64)).unwrap();
    assert_eq!(
        code(&["infer", "--model", s(&ck), "--left", s(&left), "--right", s(&small), "--out", s(&out)]),
        2
    );
}

#[test]
fn harness_reports_are_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    gen(&data, 2, &[]);
    let budget = ["--disp-epochs", "1", "--rec-epochs", "1", "--batch", "2", "--seed", "2"];
    let run = |cmd: &str, name: &str, extra: &[&str]| {
        let path = t.path().join(name);
        let mut args = vec![cmd, "--data", s(&data), "--out", s(&path)];
        args.extend_from_slice(&budget);
        args.extend_from_slice(extra);
        ok(&args);
        fs::read_to_string(path).unwrap()
    };
    let a = run("ablate", "a1.tsv", &[]);
    assert_eq!(a, run("ablate", "a2.tsv", &[]));
    assert_eq!(a.lines().count(), 5);
    let sources = ["--sources", "sgbm,groundtruth"];
    let w = run("swap", "s1.tsv", &sources);
    assert_eq!(w, run("swap", "s2.tsv", &sources));
    assert_eq!(w.lines().count(), 3);
    assert!(w.lines().any(|l| l.starts_with("groundtruth\t")));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["gen", "--out", "x", "--unknown-flag"]), 1);
    assert_eq!(code(&["train", "--task", "banana", "--data", "d", "--out", "o"]), 1);
    assert_eq!(code(&["train", "--task", "volume", "--data", "d", "--out", "o", "--scale", "huge"]), 1);
    assert_eq!(code(&["--threads", "0", "selftest"]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn missing_dataset_is_a_data_error() {
    let t = tempfile::tempdir().unwrap();
    let missing = t.path().join("missing");
    assert_eq!(
        code(&["train", "--task", "volume", "--data", s(&missing), "--out", s(&t.path().join("o"))]),
        2
    );
}

#[test]
fn selftest_passes_and_injected_nan_fails() {
    let out = ok(&["selftest"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(!text.contains("FAIL"), "{text}");
    assert!(text.contains("grad/conv3d"));
    let bad = ssr(&["selftest", "--inject-nan"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8(bad.stdout).unwrap().contains("FAIL\tinject/nan"));
}

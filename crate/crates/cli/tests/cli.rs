use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rocnet_core::datagen::load_dataset;
use rocnet_core::geometry::io::write_cloud;
use rocnet_core::training::load_checkpoint;

const TINY: [&str; 10] = [
    "--set", "width=8", "--set", "layers=1", "--set", "heads=2", "--set", "edge_widths=4,4", "--set", "k_graph=4",
];

fn rocnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rocnet")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, preset: &str, pairs: usize, points: usize) -> PathBuf {
    let o = rocnet(&["gen", "--out", p(dir), "--preset", preset, "--pairs", &pairs.to_string(), "--points", &points.to_string(), "--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains(&format!("GEN pairs={pairs}")));
    dir.join("manifest.txt")
}

fn train(manifest: &Path, ckpt: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--manifest", p(manifest), "--checkpoint", p(ckpt), "--seed", "3"];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(extra);
    rocnet(&args)
}

fn metric(out: &str, name: &str) -> f64 {
    let key = format!("METRIC name={name} value=");
    let line = out.lines().find(|l| l.starts_with(&key)).unwrap_or_else(|| panic!("{name} missing in\n{out}"));
    line[key.len()..].split(' ').next().unwrap().parse().unwrap()
}

#[test]
fn gen_presets_follow_the_protocol() {
    let tmp = tempfile::tempdir().unwrap();
    let clean = load_dataset(&gen(&tmp.path().join("c"), "clean", 3, 40)).unwrap();
    let partial = load_dataset(&gen(&tmp.path().join("p"), "partial", 3, 40)).unwrap();
    let noisy = load_dataset(&gen(&tmp.path().join("n"), "partial-noisy", 3, 40)).unwrap();
    for pair in &clean {
        assert_eq!((pair.source.len(), pair.target.len(), pair.matches.matched_count()), (40, 40, 40));
        for (i, j) in pair.matches.pairs() {
            let moved = pair.transform.apply_point(&pair.source.points()[i]);
            assert!((moved - pair.target.points()[j]).norm() < 1e-9);
        }
    }
    for pair in partial.iter().chain(&noisy) {
        assert_eq!((pair.source.len(), pair.target.len()), (30, 30));
    }
    let worst = noisy
        .iter()
        .flat_map(|pair| {
            pair.matches.pairs().into_iter().map(move |(i, j)| {
                (pair.transform.apply_point(&pair.source.points()[i]) - pair.target.points()[j]).norm()
            })
        })
        .fold(0.0, f64::max);
    assert!(worst > 1e-3 && worst <= 2.0 * 0.05 * 3f64.sqrt() + 1e-9, "{worst}");
}

#[test]
fn train_smoke_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = gen(&tmp.path().join("d"), "clean", 5, 24);
    let (a, b) = (tmp.path().join("a.ckpt"), tmp.path().join("b.ckpt"));
    for (ckpt, threads) in [(&a, "1"), (&b, "3")] {
        let o = train(&manifest, ckpt, &["--epochs", "1", "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("TRAIN epochs=1"));
    }
    load_checkpoint(&a).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let log_a = std::fs::read_to_string(a.with_extension("log")).unwrap();
    assert_eq!(log_a, std::fs::read_to_string(b.with_extension("log")).unwrap());
    assert_eq!(log_a.lines().count(), 2);
    assert!(log_a.starts_with("epoch=0 train_loss="));
}

#[test]
fn command_line_beats_file_beats_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = gen(&tmp.path().join("d"), "clean", 3, 16);
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "# overrides the preset's 80 epochs\nepochs = 2\n").unwrap();
    let ckpt = tmp.path().join("m.ckpt");
    let o = train(&manifest, &ckpt, &["--preset", "partial-noisy", "--config", p(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(ckpt.with_extension("log")).unwrap().lines().count(), 3);
    let o = train(&manifest, &ckpt, &["--preset", "partial-noisy", "--config", p(&cfg), "--epochs", "1"]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(ckpt.with_extension("log")).unwrap().lines().count(), 2);
}

#[test]
fn register_reports_every_estimator() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = gen(&tmp.path().join("d"), "clean", 2, 32);
    let ckpt = tmp.path().join("m.ckpt");
    assert!(train(&manifest, &ckpt, &["--epochs", "1"]).status.success());
    let pairs = load_dataset(&manifest).unwrap();
    let x = tmp.path().join("x.xyz");
    write_cloud(&x, &pairs[0].source).unwrap();

    let o = rocnet(&["register", "--checkpoint", p(&ckpt), p(&x), p(&x), "--estimator", "icp"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let line = out.lines().find(|l| l.starts_with("REGISTER ")).unwrap();
    let field = |k: &str| -> Vec<f64> {
        let v = line.split(' ').find_map(|f| f.strip_prefix(k)).unwrap();
        v.split(',').map(|s| s.parse().unwrap()).collect()
    };
    let r = field("R=");
    let t = field("t_m=");
    for (k, v) in r.iter().enumerate() {
        let want = if k % 4 == 0 { 1.0 } else { 0.0 };
        assert!((v - want).abs() < 1e-6, "{line}");
    }
    assert!(t.iter().all(|v| v.abs() < 1e-6), "{line}");

    let y = tmp.path().join("y.xyz");
    write_cloud(&y, &pairs[0].target).unwrap();
    for est in ["ransac", "svd"] {
        let o = rocnet(&["register", "--checkpoint", p(&ckpt), p(&x), p(&y), "--estimator", est]);
        let code = o.status.code().unwrap();
        // An untrained network may produce fewer than three mutual matches.
        assert!(code == 0 || code == 4, "{est}: {}", String::from_utf8_lossy(&o.stderr));
        if code == 0 {
            let out = stdout(&o);
            for key in ["rotation", "translation", "matches", "inliers", "REGISTER estimator="] {
                assert!(out.contains(key), "{est}: {out}");
            }
        }
    }
}

#[test]
fn eval_oracle_table_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = gen(&tmp.path().join("d"), "clean", 4, 32);
    let ckpt = tmp.path().join("m.ckpt");
    assert!(train(&manifest, &ckpt, &["--epochs", "1"]).status.success());
    let o = rocnet(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&manifest), "--oracle-matches"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(metric(&out, "RMSE(R)") < 1e-6 && metric(&out, "MAE(R)") < 1e-6);
    assert!(metric(&out, "RMSE(t)") < 1e-8 && metric(&out, "MAE(t)") < 1e-8);
    assert!(metric(&out, "RMSE(geo)") < 1e-6 && metric(&out, "MAE(geo)") < 1e-6);
    assert_eq!(metric(&out, "F1"), 100.0);
    let order: Vec<usize> = ["RMSE(R)", "MAE(R)", "RMSE(t)", "MAE(t)"]
        .iter()
        .map(|m| out.find(&format!("\n{m} ")).unwrap())
        .collect();
    assert!(order.windows(2).all(|w| w[0] < w[1]), "{out}");

    let empty = tmp.path().join("empty.txt");
    std::fs::write(&empty, "rocnet-manifest v1\n").unwrap();
    let o = rocnet(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&empty)]);
    assert_eq!(o.status.code(), Some(2));
    let o = rocnet(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&tmp.path().join("missing.txt"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.txt"));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = p(tmp.path());
    assert_eq!(rocnet(&["gen", "--out", out, "--preset", "noisy"]).status.code(), Some(2));
    assert_eq!(rocnet(&["gen", "--out", out, "--set", "heads=5"]).status.code(), Some(2));
    assert_eq!(rocnet(&["gen", "--out", out, "--points", "10", "--set", "crop_keep=20"]).status.code(), Some(2));
    assert_eq!(rocnet(&["eval", "--checkpoint", "x", "--manifest", "y", "--ablate", "everything"]).status.code(), Some(2));
    assert_eq!(rocnet(&["train", "--manifest", p(&tmp.path().join("nope.txt")), "--checkpoint", "c"]).status.code(), Some(3));
}

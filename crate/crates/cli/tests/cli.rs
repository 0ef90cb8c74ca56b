use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn levelgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levelgen")).args(args).output().expect("spawn levelgen")
}

fn ok(args: &[&str]) -> String {
    let out = levelgen(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn encode_decode_encode_is_stable() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth-dataset", "--count", "5", "--seed", "3", "--out", p(&data)]);
    for i in 0..5 {
        let level = data.join(format!("level-{i:04}.xml"));
        let m1 = tmp.path().join("m1.txt");
        let l2 = tmp.path().join("l2.xml");
        let m2 = tmp.path().join("m2.txt");
        let l3 = tmp.path().join("l3.xml");
        let m3 = tmp.path().join("m3.txt");
        ok(&["encode", "--in", p(&level), "--out", p(&m1)]);
        ok(&["decode", "--in", p(&m1), "--out", p(&l2)]);
        ok(&["encode", "--in", p(&l2), "--out", p(&m2)]);
        ok(&["decode", "--in", p(&m2), "--out", p(&l3)]);
        ok(&["encode", "--in", p(&l3), "--out", p(&m3)]);
        assert_eq!(fs::read_to_string(&m2).unwrap(), fs::read_to_string(&m3).unwrap());
    }
}

#[test]
fn pipeline_generate_then_stability() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let vocab = tmp.path().join("vocab.txt");
    let emb = tmp.path().join("emb.bin");
    let model = tmp.path().join("model.bin");
    let log = tmp.path().join("log.csv");
    let gen = tmp.path().join("gen");
    let report = tmp.path().join("stability.csv");
    ok(&["synth-dataset", "--count", "12", "--seed", "1", "--out", p(&data)]);
    ok(&["build-vocab", "--dataset", p(&data), "--out", p(&vocab)]);
    ok(&[
        "train-embed", "--vocab", p(&vocab), "--dataset", p(&data), "--dim", "8", "--epochs", "2", "--seed", "1",
        "--out", p(&emb),
    ]);
    ok(&[
        "train-vae", "--dataset", p(&data), "--vocab", p(&vocab), "--emb", p(&emb), "--hidden", "16", "--dim-z", "4",
        "--epochs", "2", "--kl-free-epochs", "1", "--kl-ramp-epochs", "1", "--seed", "1", "--out", p(&model),
        "--log", p(&log),
    ]);
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 3);
    ok(&["generate", "--model", p(&model), "--count", "100", "--seed", "2", "--out", p(&gen)]);
    assert_eq!(fs::read_dir(&gen).unwrap().count(), 101);
    let stdout = ok(&["metrics", "stability", "--in", p(&gen), "--out", p(&report)]);
    let rate: f64 = stdout.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&rate));
    assert!(fs::read_to_string(&report).unwrap().starts_with("source,levels,stable,rate\n"));

    // same seed, same levels
    let again = tmp.path().join("again");
    ok(&["generate", "--model", p(&model), "--count", "100", "--seed", "2", "--out", p(&again)]);
    for i in [0, 50, 99] {
        let name = format!("level-{i:04}.xml");
        assert_eq!(fs::read(gen.join(&name)).unwrap(), fs::read(again.join(&name)).unwrap());
    }

    let evo = tmp.path().join("evo");
    ok(&[
        "evolve", "--model", p(&model), "--objective", "pigs", "--generations", "2", "--lambda", "6", "--samples",
        "3", "--seed", "1", "--out", p(&evo),
    ]);
    assert_eq!(fs::read_to_string(evo.join("history.csv")).unwrap().lines().count(), 3);
    assert!(evo.join("best.bin").is_file());
    assert!(evo.join("levels").join("manifest.txt").is_file());

    let div = tmp.path().join("div.csv");
    ok(&["metrics", "diversity", "--in", p(&data), p(&gen), "--out", p(&div)]);
    assert_eq!(fs::read_to_string(&div).unwrap().lines().count(), 3);
}

#[test]
fn render_empty_level_draws_ground_only() {
    let tmp = TempDir::new().unwrap();
    let level = tmp.path().join("empty.xml");
    let svg = tmp.path().join("empty.svg");
    let empty = tmp.path().join("empty.txt");
    fs::write(&empty, format!("{}\n", ["0"; 94].join(",")).repeat(30)).unwrap();
    ok(&["decode", "--in", p(&empty), "--out", p(&level)]);
    ok(&["render", "--in", p(&level), "--out", p(&svg)]);
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg"));
    assert_eq!(text.matches("class=\"ground\"").count(), 1);
    assert_eq!(text.matches("<circle").count() + text.matches("<rect x=").count(), 0);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(levelgen(&["--help"]).status.code(), Some(0));
    assert_eq!(levelgen(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(levelgen(&["encode", "--in", "x.xml"]).status.code(), Some(1));

    let missing = tmp.path().join("missing.xml");
    let out = tmp.path().join("out.txt");
    let r = levelgen(&["encode", "--in", p(&missing), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).starts_with("error:"));

    let garbage = tmp.path().join("garbage.xml");
    fs::write(&garbage, r#"<Level><Birds/><GameObjects><Block type="RectFat" material="wood" x="NaN" y="0" rotation="0"/></GameObjects></Level>"#).unwrap();
    let r = levelgen(&["encode", "--in", p(&garbage), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));

    fs::write(&garbage, "<<<").unwrap();
    assert_eq!(levelgen(&["encode", "--in", p(&garbage), "--out", p(&out)]).status.code(), Some(2));

    let data = tmp.path().join("data");
    ok(&["synth-dataset", "--count", "2", "--out", p(&data)]);
    let vocab = tmp.path().join("vocab.txt");
    ok(&["build-vocab", "--dataset", p(&data), "--out", p(&vocab)]);
    let model = tmp.path().join("m.bin");
    let r = levelgen(&["train-vae", "--dataset", p(&data), "--vocab", p(&vocab), "--out", p(&model)]);
    assert_eq!(r.status.code(), Some(1));
}

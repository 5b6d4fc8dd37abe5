//! End-to-end tests of the `bbc` binary: sample → compress → decompress
//! roundtrips, exit codes, and report formats.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bbc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bbc"))
        .args(args)
        .output()
        .expect("spawn bbc")
}

fn write_spec(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn roundtrip_every_model_family() {
    let dir = tempfile::tempdir().unwrap();
    let specs = [
        (
            "cat.json",
            r#"{"type":"categorical","weights":[1,2,3,2],"r":3,"r_q":12,"precisions":[64,32,16]}"#,
        ),
        (
            "mix.json",
            r#"{"type":"mixture","components":4,"obs_dims":6,"latent_dims":3,"seed":3,"r_q":12,"precisions":[64,32,16]}"#,
        ),
        (
            "lg.json",
            r#"{"type":"lingauss","latent_dim":3,"obs_dims":8,"sigma":8.0,"seed":5,"r_q":12,"precisions":[64,32,16]}"#,
        ),
        (
            "mk.json",
            r#"{"type":"markov","layers":3,"states":5,"obs_card":7,"seed":9,"r_q":12,"precisions":[64,32,16]}"#,
        ),
        (
            "hier.json",
            r#"{"type":"hier","latent_dims":[4,2],"obs_dims":6,"obs_sigma":12.0,"seed":13,"r_q":12,"precisions":[64,32,16]}"#,
        ),
    ];
    for (name, json) in specs {
        let spec = write_spec(dir.path(), name, json);
        let data = dir.path().join(format!("{name}.bbd"));
        let packed = dir.path().join(format!("{name}.bbx"));
        let restored = dir.path().join(format!("{name}.out.bbd"));

        let out = bbc(&[
            "sample",
            "--model",
            path_str(&spec),
            "--output",
            path_str(&data),
            "--count",
            "60",
            "--seed",
            "1",
        ]);
        assert!(out.status.success(), "{name} sample: {out:?}");

        let out = bbc(&[
            "compress",
            "--model",
            path_str(&spec),
            "--input",
            path_str(&data),
            "--output",
            path_str(&packed),
            "--init",
            "random:4096:42",
        ]);
        assert!(out.status.success(), "{name} compress: {out:?}");

        let out = bbc(&[
            "decompress",
            "--model",
            path_str(&spec),
            "--input",
            path_str(&packed),
            "--output",
            path_str(&restored),
        ]);
        assert!(out.status.success(), "{name} decompress: {out:?}");
        assert_eq!(
            std::fs::read(&data).unwrap(),
            std::fs::read(&restored).unwrap(),
            "{name} roundtrip"
        );
    }
}

#[test]
fn fallback_init_and_interleave_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "mk.json",
        r#"{"type":"markov","layers":4,"states":6,"obs_card":8,"seed":21,"r_q":12,"precisions":[64,32,16]}"#,
    );
    let data = dir.path().join("d.bbd");
    let packed = dir.path().join("d.bbx");
    let restored = dir.path().join("d.out.bbd");
    bbc(&[
        "sample",
        "--model",
        path_str(&spec),
        "--output",
        path_str(&data),
        "--count",
        "80",
        "--seed",
        "2",
    ]);
    for interleave in [false, true] {
        let mut args = vec![
            "compress",
            "--model",
            path_str(&spec),
            "--input",
            path_str(&data),
            "--output",
            path_str(&packed),
            "--init",
            "fallback:uniform",
            "--report",
            "json",
        ];
        let mut dargs = vec![
            "decompress",
            "--model",
            path_str(&spec),
            "--input",
            path_str(&packed),
            "--output",
            path_str(&restored),
        ];
        if interleave {
            args.push("--interleave");
            dargs.push("--interleave");
        }
        let out = bbc(&args);
        assert!(out.status.success(), "compress: {out:?}");
        let report: serde_json::Value =
            serde_json::from_slice(&out.stdout[..out.stdout.len() - find_trailer(&out.stdout)])
                .unwrap();
        assert_eq!(report["count"], 80);
        assert!(report["fallback_count"].as_u64().unwrap() >= 1);
        let out = bbc(&dargs);
        assert!(out.status.success(), "decompress: {out:?}");
        assert_eq!(
            std::fs::read(&data).unwrap(),
            std::fs::read(&restored).unwrap()
        );
    }
}

// compress appends a "container bytes: N" line after the JSON report
fn find_trailer(stdout: &[u8]) -> usize {
    let text = std::str::from_utf8(stdout).unwrap();
    text.lines().last().unwrap().len() + 1
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cat = write_spec(
        dir.path(),
        "cat.json",
        r#"{"type":"categorical","weights":[1,2,3,2],"r":3,"r_q":12,"precisions":[64,32,16]}"#,
    );
    let other = write_spec(
        dir.path(),
        "other.json",
        r#"{"type":"categorical","weights":[1,1,1,1],"r":2,"r_q":12,"precisions":[64,32,16]}"#,
    );
    let data = dir.path().join("d.bbd");
    let packed = dir.path().join("d.bbx");
    bbc(&[
        "sample",
        "--model",
        path_str(&cat),
        "--output",
        path_str(&data),
        "--count",
        "50",
        "--seed",
        "3",
    ]);
    bbc(&[
        "compress",
        "--model",
        path_str(&cat),
        "--input",
        path_str(&data),
        "--output",
        path_str(&packed),
    ]);

    // exit 2: corrupt container
    let mut bytes = std::fs::read(&packed).unwrap();
    bytes.truncate(20);
    let bad = dir.path().join("bad.bbx");
    std::fs::write(&bad, &bytes).unwrap();
    let out = bbc(&[
        "decompress",
        "--model",
        path_str(&cat),
        "--input",
        path_str(&bad),
        "--output",
        path_str(&dir.path().join("x.bbd")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");

    // exit 3: decoding under a different model spec
    let out = bbc(&[
        "decompress",
        "--model",
        path_str(&other),
        "--input",
        path_str(&packed),
        "--output",
        path_str(&dir.path().join("y.bbd")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{out:?}");

    // exit 4: chain with too little extra information for the first pop
    let mix = write_spec(
        dir.path(),
        "mix.json",
        r#"{"type":"mixture","components":8,"obs_dims":6,"latent_dims":4,"seed":3,"r_q":12,"precisions":[64,32,16]}"#,
    );
    let mdata = dir.path().join("m.bbd");
    bbc(&[
        "sample",
        "--model",
        path_str(&mix),
        "--output",
        path_str(&mdata),
        "--count",
        "50",
        "--seed",
        "4",
    ]);
    let out = bbc(&[
        "compress",
        "--model",
        path_str(&mix),
        "--input",
        path_str(&mdata),
        "--output",
        path_str(&dir.path().join("m.bbx")),
        "--init",
        "random:0:0",
    ]);
    assert_eq!(out.status.code(), Some(4), "{out:?}");
}

#[test]
fn precision_override_changes_container() {
    let dir = tempfile::tempdir().unwrap();
    let cat = write_spec(
        dir.path(),
        "cat.json",
        r#"{"type":"categorical","weights":[3,1],"r":2,"r_q":12,"precisions":[64,32,16]}"#,
    );
    let data = dir.path().join("d.bbd");
    bbc(&[
        "sample",
        "--model",
        path_str(&cat),
        "--output",
        path_str(&data),
        "--count",
        "400",
        "--seed",
        "7",
    ]);
    let mut sizes = Vec::new();
    for (name, prec) in [("a.bbx", "64,32,16"), ("b.bbx", "32,16,8")] {
        let packed = dir.path().join(name);
        let out = bbc(&[
            "compress",
            "--model",
            path_str(&cat),
            "--input",
            path_str(&data),
            "--output",
            path_str(&packed),
            "--precisions",
            prec,
            "--init",
            "random:64:1",
        ]);
        assert!(out.status.success(), "{out:?}");
        let restored = dir.path().join(format!("{name}.out"));
        let out = bbc(&[
            "decompress",
            "--model",
            path_str(&cat),
            "--input",
            path_str(&packed),
            "--output",
            path_str(&restored),
            "--precisions",
            prec,
        ]);
        assert!(out.status.success(), "{out:?}");
        assert_eq!(
            std::fs::read(&data).unwrap(),
            std::fs::read(&restored).unwrap()
        );
        sizes.push(std::fs::read(&packed).unwrap().len());
    }
    // narrower words waste less on the fixed head
    assert!(sizes[1] <= sizes[0]);
}

#[test]
fn stats_and_bench_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cat = write_spec(
        dir.path(),
        "cat.json",
        r#"{"type":"categorical","weights":[1,2,3,2],"r":3,"r_q":12,"precisions":[64,32,16]}"#,
    );
    let data = dir.path().join("d.bbd");
    bbc(&[
        "sample",
        "--model",
        path_str(&cat),
        "--output",
        path_str(&data),
        "--count",
        "1000",
        "--seed",
        "8",
    ]);
    let out = bbc(&["stats", "--model", path_str(&cat), "--input", path_str(&data)]);
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("entropy H:       1.9056"), "{text}");
    assert!(text.contains("bound slack:"), "{text}");
    let slack: f64 = text
        .lines()
        .find(|l| l.starts_with("bound slack:"))
        .unwrap()
        .split_whitespace()
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!(slack >= 0.0 && slack < 1.0, "slack {slack}");

    let out = bbc(&["bench", "--symbols", "4096", "--lanes", "1,16,256"]);
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "k,symbols,seconds,symbols_per_sec,bits_per_symbol"
    );
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 4);
}

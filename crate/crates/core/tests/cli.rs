use std::path::Path;
use std::process::{Command, Output};

fn docgraph(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docgraph"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = docgraph(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_pipeline_through_the_command_line() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "context", "--out", "ctx", "--seed", "3"]);
    std::fs::write(
        d.join("model.toml"),
        "layers = 1\nheads = 2\nhidden = 8\nffn = 16\ndropout = 0.0\ngraph_layers = 1\n",
    )
    .unwrap();

    let log = ok(
        d,
        &[
            "train",
            "--stage",
            "1",
            "--config",
            "model.toml",
            "--data",
            "ctx/train",
            "--out",
            "s1.ckpt",
            "--steps",
            "5",
            "--warmup",
            "2",
        ],
    );
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "step,loss,lr");
    assert_eq!(lines.len(), 6);

    ok(
        d,
        &[
            "train",
            "--stage",
            "2",
            "--data",
            "ctx/train",
            "--init",
            "s1.ckpt",
            "--out",
            "s2.ckpt",
            "--steps",
            "3",
            "--log",
            "s2.csv",
        ],
    );
    assert_eq!(std::fs::read_to_string(d.join("s2.csv")).unwrap().lines().count(), 4);

    for mode in ["tgt", "tgt-prev", "no-tgt"] {
        ok(
            d,
            &[
                "translate",
                "--ckpt",
                "s2.ckpt",
                "--input",
                "ctx/heldout/src.txt",
                "--mode",
                mode,
                "--beam",
                "2",
                "--out",
                "hyp.txt",
            ],
        );
        let report = ok(d, &["evaluate", "--hyp", "hyp.txt", "--ref", "ctx/heldout/tgt.txt", "--smooth"]);
        assert!(report.starts_with("BLEU = "), "{report}");
    }
    let perfect = ok(
        d,
        &[
            "evaluate",
            "--hyp",
            "ctx/heldout/tgt.txt",
            "--ref",
            "ctx/heldout/tgt.txt",
            "--mode",
            "document",
        ],
    );
    assert!(perfect.starts_with("BLEU = 100.00"), "{perfect}");

    ok(d, &["synth", "repeat", "--out", "rep.txt"]);
    ok(d, &["build-graph", "--corpus", "rep.txt", "--out", "rep.jsonl"]);
    let dot = ok(
        d,
        &["build-graph", "--corpus", "rep.txt", "--format", "dot", "--relations", "adjacency"],
    );
    assert!(dot.starts_with("digraph"));
    let csv = ok(d, &["stats", "--graphs", "rep.jsonl"]);
    assert!(csv.starts_with("bucket_start,bucket_end,sentences,mean_text_distance,mean_graph_size\n"));

    std::fs::write(
        d.join("grid.toml"),
        "architectures = [\"hybrid\"]\nsides = [\"src\", \"src+tgt-prev\"]\nsmooth_bleu = true\n[train]\nmax_steps = 2\n[decode]\nbeam = 2\nalpha = 0.6\n",
    )
    .unwrap();
    let table = ok(d, &["ablate", "--grid", "grid.toml", "--init", "s1.ckpt", "--data", "ctx/heldout"]);
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn errors_are_one_line_with_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for args in [
        vec!["evaluate", "--hyp", "missing.txt", "--ref", "missing.txt"],
        vec!["translate", "--ckpt", "missing.ckpt", "--input", "x.txt"],
        vec!["train", "--stage", "2", "--data", ".", "--out", "x.ckpt"],
    ] {
        let out = docgraph(d, &args);
        assert!(!out.status.success());
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        assert!(err.starts_with("error: "));
    }
    std::fs::write(d.join("bad.ckpt"), b"not a checkpoint").unwrap();
    std::fs::write(d.join("x.txt"), "a b\n").unwrap();
    let out = docgraph(d, &["translate", "--ckpt", "bad.ckpt", "--input", "x.txt"]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("magic"));
}

use std::fs;
use std::path::Path;

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("pathattr").chain(args.iter().copied());
    let code = pathattr_cli::run_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn blobs(dir: &Path) -> (String, String) {
    let (code, _, err) = cli(&["train-toy", "--samples", "200", "--test-samples", "3", "--seed", "3", "--out", &s(dir)]);
    assert_eq!(code, 0, "{err}");
    let first = fs::read_dir(dir.join("test")).unwrap().map(|e| e.unwrap().path()).min().unwrap();
    (s(&dir.join("model.toml")), s(&first))
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(cli(&["--help"]).0, 0);
    assert_eq!(cli(&["attribute", "--help"]).0, 0);
    assert_eq!(cli(&["--version"]).0, 0);
    assert_eq!(cli(&["no-such-command"]).0, 1);
    assert_eq!(cli(&["attribute", "--steps", "x", "--out", "o"]).0, 1);
    let (code, _, err) = cli(&["attribute", "--out", "o"]);
    assert_eq!(code, 1);
    assert!(err.contains("--model"), "{err}");
    assert_eq!(cli(&["axioms", "--demo", "nope"]).0, 1);
    assert_eq!(cli(&["oracle", "--input", "1,1", "--baseline", "0,0"]).0, 1);
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = s(&dir.path().join("missing.toml"));
    assert_eq!(cli(&["baseline", "--model", &missing, "--input", &missing]).0, 2);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "kind = \"model\"\ninput_shape = [2]\nnum_classes = 2\nlayers = [{ type = \"dense\", in = 3, out = 2 }]\n").unwrap();
    let input = dir.path().join("x.txt");
    fs::write(&input, "# shape 2\n0.5\n0.5\n").unwrap();
    let (code, _, err) = cli(&["attribute", "--model", &s(&bad), "--input", &s(&input), "--out", &s(&dir.path().join("o"))]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn attribute_single_file_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let (model, input) = blobs(&dir.path().join("m"));
    let out = dir.path().join("a");
    let (code, stdout, err) = cli(&["attribute", "--method", "eg", "--model", &model, "--input", &input, "--seed", "4", "--out", &s(&out)]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains(&s(&out)));
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["run"]["method"], "eg");
    assert_eq!(meta["run"]["baseline_kind"], "gaussian_noise");
    assert_eq!(meta["map"]["num_baselines"], 3);

    let again = dir.path().join("b");
    assert_eq!(cli(&["attribute", "--replay", &s(&out.join("meta.json")), "--out", &s(&again)]).0, 0);
    assert_eq!(fs::read(out.join("scores.txt")).unwrap(), fs::read(again.join("scores.txt")).unwrap());

    // a changed model file is refused on replay
    let text = fs::read_to_string(&model).unwrap();
    fs::write(&model, format!("{text}\n")).unwrap();
    let (code, _, err) = cli(&["attribute", "--replay", &s(&out.join("meta.json")), "--out", &s(&again)]);
    assert_eq!(code, 2);
    assert!(err.contains("changed"), "{err}");
}

#[test]
fn conflicting_baseline_kind_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (model, input) = blobs(dir.path());
    let (code, _, err) = cli(&[
        "attribute", "--method", "proposed", "--baseline-kind", "black", "--model", &model, "--input", &input,
        "--out", &s(&dir.path().join("o")),
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("optimized"), "{err}");
}

#[test]
fn baseline_command_reports_and_writes() {
    let dir = tempfile::tempdir().unwrap();
    let (model, input) = blobs(&dir.path().join("m"));
    let out = dir.path().join("base");
    let (code, stdout, err) = cli(&["baseline", "--model", &model, "--input", &input, "--out", &s(&out)]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("achieved_eps="));
    let diag: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["kind"], "optimized");
    assert!(diag["result"]["achieved_delta"].as_f64().unwrap() >= 0.05);
    assert!(out.join("baseline.txt").exists());
}

#[test]
fn evaluations_on_image_directory() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("bars");
    assert_eq!(
        cli(&["train-toy", "--dataset", "bars16", "--samples", "60", "--epochs", "5", "--test-samples", "2", "--out", &s(&m)]).0,
        0
    );
    let (model, input) = (s(&m.join("model.toml")), s(&m.join("test")));
    let ev = dir.path().join("ins");
    let (code, stdout, err) = cli(&["eval-insdel", "--method", "ig", "--model", &model, "--input", &input, "--group-size", "8", "--out", &s(&ev)]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("mean over 2 images"));
    let curves: Vec<_> = fs::read_dir(ev.join("curves")).unwrap().collect();
    assert_eq!(curves.len(), 4);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["images"].as_array().unwrap().len(), 2);

    let sn = dir.path().join("sn");
    let (code, stdout, err) = cli(&[
        "eval-sensn", "--model", &model, "--input", &input, "--fractions", "0.1,0.5", "--samples", "8", "--out", &s(&sn),
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(stdout.lines().count(), 2);
    assert_eq!(cli(&["eval-sensn", "--model", &model, "--input", &input, "--fractions", "0.95"]).0, 1);

    let att = dir.path().join("att");
    assert_eq!(cli(&["attribute", "--model", &model, "--input", &input, "--out", &s(&att)]).0, 0);
    let subdirs: Vec<_> = fs::read_dir(&att).unwrap().collect();
    assert_eq!(subdirs.len(), 2);
    for d in subdirs {
        let d = d.unwrap().path();
        assert!(d.join("render.pgm").exists() && d.join("scores.txt").exists());
    }
}

#[test]
fn oracle_from_model_file() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/testdata/example1.toml");
    let (code, stdout, err) = cli(&["oracle", "--model", &s(&path), "--input", "4,4", "--baseline", "3,3"]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("attribution: [4.0, 1.0]"), "{stdout}");
    assert!(!stdout.contains("note:"));
    let (_, stdout, _) = cli(&["oracle", "--builtin", "example1", "--input", "-1,-1", "--baseline", "0,0"]);
    assert!(stdout.contains("attribution:"));
}

#[test]
fn axioms_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = cli(&["axioms", "--out", &s(dir.path())]);
    assert_eq!(code, 0);
    assert!(stdout.contains("== weak-dependence"));
    let all: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("axioms.json")).unwrap()).unwrap();
    assert!(all.as_array().unwrap().len() >= 7);
}

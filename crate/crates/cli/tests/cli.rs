use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use wyimvc::eval::ExperimentConfig;
use wyimvc::JointPmf;

fn wyimvc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wyimvc"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.missing_rates = vec![0.3];
    cfg.experiment.seeds = vec![0];
    cfg.experiment.output = dir.join("out.csv");
    cfg.synthetic.samples = 90;
    cfg.synthetic.clusters = 3;
    cfg.synthetic.dim = 3;
    cfg.model.latent_dim = 3;
    cfg.model.hidden = vec![6];
    cfg.model.epochs = 2;
    cfg
}

#[test]
fn unknown_flag_exits_with_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = wyimvc(&["synth", "--bogus"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--bogus"));
}

#[test]
fn run_without_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(wyimvc(&["run"], tmp.path()).status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let o = wyimvc(&["--help"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("solve-discrete"));
}

#[test]
fn runtime_failures_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = wyimvc(&["solve-discrete", "--pmf", "missing.txt"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"));

    let o = wyimvc(&["synth", "--out", "d", "--samples", "40"], tmp.path());
    assert!(o.status.success());
    let o = wyimvc(&["mask", "--data", "d", "--rate", "1.5"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solve_discrete_with_zero_kappa_forgets_the_input() {
    let tmp = tempfile::tempdir().unwrap();
    let joint = JointPmf::from_weights(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    fs::write(tmp.path().join("p.txt"), joint.to_text()).unwrap();
    let o = wyimvc(
        &["solve-discrete", "--pmf", "p.txt", "--kappa", "0", "--z-card", "3"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let row = text.lines().find(|l| l.starts_with("1\t")).expect("iteration 1 row");
    let mi: f64 = row.split('\t').nth(1).unwrap().parse().unwrap();
    assert!(mi.abs() <= 1e-12, "I(Z;X) = {mi}");
    assert!(text.contains("# converged=true"));
}

#[test]
fn solve_discrete_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let joint = JointPmf::from_weights(vec![3, 3], (1..=9).map(f64::from).collect()).unwrap();
    fs::write(tmp.path().join("p.txt"), joint.to_text()).unwrap();
    let args = ["solve-discrete", "--pmf", "p.txt", "--seed", "4"];
    let a = stdout(&wyimvc(&args, tmp.path()));
    let b = stdout(&wyimvc(&args, tmp.path()));
    assert_eq!(a, b);
    let c = stdout(&wyimvc(&["solve-discrete", "--pmf", "p.txt", "--seed", "5"], tmp.path()));
    assert_ne!(a, c);
}

#[test]
fn mask_is_byte_identical_for_equal_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert!(wyimvc(&["synth", "--out", "d", "--samples", "300", "--views", "4"], dir).status.success());
    for out in ["a", "b"] {
        let o = wyimvc(&["mask", "--data", "d", "--rate", "0.5", "--seed", "11", "--out", out], dir);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read(dir.join("a/mask.csv")).unwrap();
    let b = fs::read(dir.join("b/mask.csv")).unwrap();
    assert_eq!(a, b);
    let masked_rows = String::from_utf8(a).unwrap().lines().filter(|l| l.contains('0')).count();
    assert_eq!(masked_rows, 150);

    // re-masking an already masked directory starts over from its values
    let o = wyimvc(&["mask", "--data", "a", "--rate", "0.1", "--seed", "1", "--out", "c"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn train_then_evaluate_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = tiny_config(dir);
    fs::write(dir.join("c.toml"), cfg.to_toml().unwrap()).unwrap();
    assert!(wyimvc(&["synth", "--out", "d", "--samples", "80", "--clusters", "3", "--dim", "3"], dir).status.success());
    assert!(wyimvc(&["mask", "--data", "d", "--rate", "0.4"], dir).status.success());
    let o = wyimvc(&["train", "--config", "c.toml", "--data", "d", "--out", "m.txt", "--epochs", "2"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = wyimvc(
        &[
            "evaluate", "--data", "d", "--checkpoint", "m.txt", "--predictions", "p.csv",
            "--imputations", "i.csv",
        ],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let acc: f64 = stdout(&o).trim().strip_prefix("accuracy\t").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let preds = fs::read_to_string(dir.join("p.csv")).unwrap();
    assert_eq!(preds.lines().count(), 81);
    assert!(preds.starts_with("sample,label,p_0,p_1,p_2"));
    let imputed = fs::read_to_string(dir.join("i.csv")).unwrap();
    let masked_views: usize = fs::read_to_string(dir.join("d/mask.csv"))
        .unwrap()
        .lines()
        .map(|l| l.split(',').filter(|c| c.trim() == "0").count())
        .sum();
    assert_eq!(imputed.lines().count(), masked_views);
}

#[test]
fn run_writes_csv_and_honours_seed_override() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("c.toml"), tiny_config(dir).to_toml().unwrap()).unwrap();
    let o = wyimvc(&["run", "--config", "c.toml", "--seed", "9"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.join("out.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("dataset,missing_rate,seed,accuracy,epochs,wall_time_s"));
    assert!(lines.next().unwrap().starts_with("synthetic,0.3,9,"));
    assert_eq!(stdout(&o), csv);
}

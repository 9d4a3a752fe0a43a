use std::path::Path;
use std::process::{Command, Output};

use nidsgraph::bench::parse_csv;

const CONFIG: &str = r#"
models = ["mlp", "gcn"]

[[datasets]]
name = "blobs"
[datasets.synthetic]
samples = 150
classes = 3
features = 6
separation = 5.0
imbalance = 0.7

[pipeline]
rare_class_min_count = 5
mi_keep_fraction = 0.5

[train]
epochs = 8
lr = 0.01
"#;

fn run(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nidsgraph"));
    cmd.args(args).env_remove("NIDSGRAPH_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("bench.toml");
    std::fs::write(&p, format!("{CONFIG}{extra}")).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn validate_config_prints_ok() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = run(&["validate-config", &cfg], &[]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "OK");
}

#[test]
fn malformed_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "\n[train]\nepochs = 3\n");
    let out = run(&["validate-config", &cfg], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_config_flag_prints_usage_and_exits_one() {
    let out = run(&["bench"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = run(&["bench", "--config", "x.toml", "--frobnicate"], &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_prints_markdown_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = run(&["bench", "--config", &cfg], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("## blobs"));
    assert!(text.contains("| Accuracy | AUC | Precision | Recall | F1 | Time (s) | Memory (MB) |"));
    assert_eq!(
        text.lines()
            .filter(|l| l.starts_with("| mlp |") || l.starts_with("| gcn |"))
            .count(),
        2
    );
}

#[test]
fn seed_flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "\n[output]\nformat = \"csv\"\n");
    let seeds_of = |out: Output| -> Vec<u64> {
        assert_eq!(out.status.code(), Some(0));
        parse_csv(&String::from_utf8(out.stdout).unwrap())
            .unwrap()
            .iter()
            .map(|r| r.seed)
            .collect()
    };
    assert_eq!(
        seeds_of(run(&["bench", "--config", &cfg], &[("NIDSGRAPH_SEED", "4")])),
        [4, 4]
    );
    assert_eq!(
        seeds_of(run(
            &["bench", "--config", &cfg, "--seed", "9"],
            &[("NIDSGRAPH_SEED", "4")]
        )),
        [9, 9]
    );
    assert_eq!(seeds_of(run(&["bench", "--config", &cfg], &[])), [0, 0]);
}

#[test]
fn synth_then_construct_graph() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let graph = dir.path().join("s.graph");
    let out = run(
        &[
            "synth",
            "--samples",
            "80",
            "--classes",
            "3",
            "--out",
            csv.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0));
    let out = run(
        &[
            "construct-graph",
            "--input",
            csv.to_str().unwrap(),
            "--tau",
            "0.5",
            "--k",
            "5",
            "--dump-graph",
            graph.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0));
    let g = nidsgraph::graphkit::read_graph(std::io::BufReader::new(std::fs::File::open(graph).unwrap())).unwrap();
    assert_eq!((g.num_nodes(), g.num_classes), (80, 3));
    assert!(g.num_edges() >= 80 * 5);
}

#[test]
fn bundled_config_is_valid() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/synthetic.toml");
    let out = run(&["validate-config", path], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

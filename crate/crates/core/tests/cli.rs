use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use multiroc::export::RunManifest;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_multiroc"));
    c.env("SOURCE_DATE_EPOCH", "1700000000").env_remove("MULTIROC_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// First `D = x` value on stdout.
fn parse_d(text: &str) -> f64 {
    let rest = text.split("D = ").nth(1).expect("a D line");
    rest.split([' ', '\n']).next().unwrap().parse().unwrap()
}

fn parse_ci(text: &str) -> (f64, f64) {
    let inner = text.split('[').nth(1).unwrap().split(']').next().unwrap();
    let mut parts = inner.split(", ").map(|x| x.parse::<f64>().unwrap());
    (parts.next().unwrap(), parts.next().unwrap())
}

fn labels(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect()
}

fn write_csv(path: &Path, rows: &[Vec<f64>], labels: Option<&[usize]>) {
    let k = rows[0].len();
    let mut s: Vec<String> = (0..k).map(|c| format!("p{c}")).collect();
    if labels.is_some() {
        s.push("label".into());
    }
    let mut out = s.join(",") + "\n";
    for (i, r) in rows.iter().enumerate() {
        let mut cells: Vec<String> = r.iter().map(|x| format!("{x:?}")).collect();
        if let Some(l) = labels {
            cells.push(l[i].to_string());
        }
        out += &(cells.join(",") + "\n");
    }
    fs::write(path, out).unwrap();
}

fn perfect_rows(labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let off = 0.2 / (k - 1) as f64;
    labels
        .iter()
        .map(|&l| (0..k).map(|c| if c == l { 0.8 } else { off }).collect())
        .collect()
}

fn random_rows(n: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn perfect(&self, n: usize, k: usize) -> String {
        let l = labels(n, k, 1);
        write_csv(&self.path("perfect.csv"), &perfect_rows(&l, k), Some(&l));
        self.s("perfect.csv")
    }

    fn random(&self, n: usize, k: usize) -> String {
        let l = labels(n, k, 1);
        write_csv(&self.path("random.csv"), &random_rows(n, k, 2), Some(&l));
        self.s("random.csv")
    }
}

#[test]
fn evaluate_perfect_classifier() {
    let f = Fixture::new();
    let input = f.perfect(3000, 3);
    let out = f.s("ev");
    let o = run(&["evaluate", &input, "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let d = parse_d(&stdout(&o));
    assert!((d - 1.0).abs() <= 0.005, "{d}");
    assert!(stdout(&o).starts_with("D = "));
    for file in ["curve.csv", "curve.svg", "manifest.json"] {
        assert!(f.path("ev").join(file).exists(), "{file}");
    }
    let m = RunManifest::load(&f.path("ev").join("manifest.json")).unwrap();
    assert_eq!(m.command, "evaluate");
    assert_eq!(m.options["thresholds"], 50);
    assert_eq!(m.options["weights"], "weighted");
    let curve = fs::read_to_string(f.path("ev").join("curve.csv")).unwrap();
    assert!(curve.starts_with("x,y\n0.0,0.0\n"));
    assert!(curve.trim_end().ends_with("1.0,1.0"));
}

#[test]
fn evaluate_random_classifier() {
    let f = Fixture::new();
    let input = f.random(3000, 4);
    let o = run(&["evaluate", &input]);
    assert!(o.status.success(), "{}", stderr(&o));
    let d = parse_d(&stdout(&o));
    assert!((d - 0.5).abs() <= 0.02, "{d}");
}

#[test]
fn separate_label_sources_agree() {
    let f = Fixture::new();
    let l = labels(60, 3, 4);
    let rows = random_rows(60, 3, 5);
    write_csv(&f.path("joined.csv"), &rows, Some(&l));
    write_csv(&f.path("probs.csv"), &rows, None);
    let list: Vec<String> = l.iter().map(usize::to_string).collect();
    fs::write(f.path("labels.txt"), list.join("\n") + "\n").unwrap();
    let a = stdout(&run(&["evaluate", &f.s("joined.csv"), "--thresholds", "10"]));
    let b = stdout(&run(&["evaluate", &f.s("probs.csv"), "--labels", &f.s("labels.txt"), "--thresholds", "10"]));
    let c = stdout(&run(&["evaluate", &f.s("probs.csv"), "--labels", &list.join(","), "--thresholds", "10"]));
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn cost_file_moves_majority_classifier_up() {
    let f = Fixture::new();
    let sim = f.s("sim");
    let o = run(&["simulate", "weights", "--n", "3000", "--c", "2", "--out", &sim]);
    assert!(o.status.success(), "{}", stderr(&o));
    let q = f.path("sim").join("weights_c2.csv");
    let majority = f.path("sim").join("majority.csv");
    let spec = format!("file={}", q.display());
    let plain = parse_d(&stdout(&run(&["evaluate", majority.to_str().unwrap()])));
    let o = run(&["evaluate", majority.to_str().unwrap(), "--weights", &spec]);
    assert!(o.status.success(), "{}", stderr(&o));
    let d = parse_d(&stdout(&o));
    assert!((plain - 0.5).abs() < 0.01, "{plain}");
    assert!(d > 0.5, "{d}");
}

#[test]
fn validation_errors_exit_1_and_name_the_row() {
    let f = Fixture::new();
    fs::write(f.path("bad.csv"), "p0,p1,label\n0.5,0.5,0\n0.9,0.3,1\n").unwrap();
    let o = run(&["evaluate", &f.s("bad.csv")]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("row 1"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");

    fs::write(f.path("bad2.csv"), "p0,p1,label\n0.5,0.5,0\n1.5,-0.5,1\n").unwrap();
    let err = stderr(&run(&["evaluate", &f.s("bad2.csv")]));
    assert!(err.contains("row 1, column 0"), "{err}");

    let o = run(&["evaluate", &f.s("missing.csv")]);
    assert_eq!(o.status.code(), Some(1));

    let o = run(&["evaluate"]);
    assert_eq!(o.status.code(), Some(1));

    let input = f.random(30, 3);
    let o = bin().env("MULTIROC_THREADS", "zero").args(["evaluate", &input]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn no_convergence_exits_2() {
    let f = Fixture::new();
    let input = f.random(300, 3);
    let o = run(&["evaluate", &input, "--max-iter", "1", "--tol", "1e-300"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("did not converge"));
}

#[test]
fn bootstrap_prints_interval_and_writes_band() {
    let f = Fixture::new();
    let input = f.random(400, 3);
    let out = f.s("bo");
    let o = run(&["bootstrap", &input, "--B", "100", "--out", &out, "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let d = parse_d(&text);
    let (lo, hi) = parse_ci(&text);
    assert!(hi > lo, "{text}");
    assert!(text.trim_end().starts_with(&format!("D = {d:.4} [")));
    let band = fs::read_to_string(f.path("bo").join("band.csv")).unwrap();
    assert!(band.starts_with("x,lower,median,upper\n"));
    assert_eq!(band.lines().count(), 102);
    let svg = fs::read_to_string(f.path("bo").join("curve.svg")).unwrap();
    assert!(svg.contains("<polygon"));
    let m = RunManifest::load(&f.path("bo").join("manifest.json")).unwrap();
    assert_eq!(m.options["B"], 100);
    assert_eq!(m.options["seed"], 7);
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn bootstrap_is_reproducible() {
    let f = Fixture::new();
    let input = f.random(300, 3);
    let a = run(&["bootstrap", &input, "--B", "30", "--seed", "5", "--out", &f.s("a")]);
    let b = bin()
        .env("MULTIROC_THREADS", "1")
        .args(["bootstrap", &input, "--B", "30", "--seed", "5", "--out", &f.s("b")])
        .output()
        .unwrap();
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(read_dir_sorted(&f.path("a")), read_dir_sorted(&f.path("b")));
    let c = run(&["bootstrap", &input, "--B", "30", "--seed", "6"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn bootstrap_with_two_replicates_warns() {
    let f = Fixture::new();
    let input = f.random(300, 3);
    let o = run(&["bootstrap", &input, "--B", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).to_lowercase().contains("unreliable"), "{}", stderr(&o));
    parse_ci(&stdout(&o));
}

#[test]
fn compare_identical_models_ranks_by_input_order() {
    let f = Fixture::new();
    let input = f.random(300, 3);
    let o = run(&[
        "compare", &input, &input, &input, "--names", "a,b,c", "--B", "20", "--out", &f.s("cmp"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("P(a > b > c) = 1.00"), "{}", stdout(&o));
    let table = fs::read_to_string(f.path("cmp").join("ranking.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "dataset,a>b>c,a>c>b,b>a>c,b>c>a,c>a>b,c>b>a");
    assert_eq!(lines.next().unwrap(), "dataset,1.00,-,-,-,-,-");
}

#[test]
fn compare_perfect_beats_random() {
    let f = Fixture::new();
    let perfect = f.perfect(900, 3);
    let random = f.random(900, 3);
    let o = run(&["compare", &random, &perfect, "--B", "50", "--out", &f.s("cmp"), "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("P(perfect > random) = 1.00"), "{text}");
    assert!(text.contains("M = 1.0000"), "{text}");
    let ranking: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(f.path("cmp").join("ranking.json")).unwrap()).unwrap();
    assert_eq!(ranking["rows"][0]["probability"], 1.0);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(f.path("cmp").join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 2);
    let samples: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(f.path("cmp").join("samples.json")).unwrap()).unwrap();
    assert_eq!(samples.as_array().unwrap().len(), 100);
}

#[test]
fn compare_rejects_mismatched_inputs() {
    let f = Fixture::new();
    let a = f.random(300, 3);
    let l = labels(200, 3, 1);
    write_csv(&f.path("short.csv"), &random_rows(200, 3, 3), Some(&l));
    let o = run(&["compare", &a, &f.s("short.csv"), "--B", "5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dimension mismatch"), "{}", stderr(&o));
}

#[test]
fn simulate_unknown_experiment() {
    let f = Fixture::new();
    let o = run(&["simulate", "volume", "--out", &f.s("x")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown experiment"), "{}", stderr(&o));
}

fn summary_column(path: &Path) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn simulate_discriminative_sweep() {
    let f = Fixture::new();
    let out = f.s("disc");
    let o = run(&["simulate", "discriminative", "--d", "1..10", "--run", "--out", &out, "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = f.path("disc");
    let curves = fs::read_dir(&dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("curve_"))
        .count();
    assert_eq!(curves, 11);
    let d = summary_column(&dir.join("summary.csv"));
    assert_eq!(d.len(), 11);
    assert!((d[0] - 0.5).abs() < 0.03, "noise D = {}", d[0]);
    assert!(d[1..].windows(2).all(|w| w[0] <= w[1]), "{d:?}");
    let m = RunManifest::load(&dir.join("manifest.json")).unwrap();
    assert_eq!(m.command, "simulate discriminative");
    assert_eq!(m.results["class_counts"].as_array().unwrap().len(), 5);
}

#[test]
fn simulate_weights_sweep() {
    let f = Fixture::new();
    let out = f.s("w");
    let o = run(&["simulate", "weights", "--c", "0.1..10", "--run", "--n", "3000", "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let d = summary_column(&f.path("w").join("summary.csv"));
    assert_eq!(d.len(), 19);
    assert!(d.windows(2).all(|w| w[0] < w[1]), "{d:?}");
    assert!(d[0] < 0.1 && d[18] > 0.9 && (d[9] - 0.5).abs() < 0.05, "{d:?}");
}

#[test]
fn simulate_skewness_sweep() {
    let f = Fixture::new();
    let out = f.s("sk");
    let o = run(&[
        "simulate", "skewness", "--alpha", "2", "--replicates", "30", "--run", "--out", &out, "--seed", "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(f.path("sk").join("replicates.csv")).unwrap();
    let mut by_d: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        by_d.entry(cells[0].to_string()).or_default().push(cells[5].parse().unwrap());
    }
    assert_eq!(by_d.len(), 3);
    for (d, values) in by_d {
        assert_eq!(values.len(), 30);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo < 0.05, "d={d}: spread {}", hi - lo);
    }
}

#[test]
fn simulate_writes_datasets_without_run() {
    let f = Fixture::new();
    let out = f.s("s");
    let o = run(&["simulate", "skewness", "--n", "2000", "--d", "2", "--alpha", "2,5", "--replicates", "4", "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = f.path("s");
    assert!(dir.join("truth.csv").exists());
    assert!(dir.join("base_d2.csv").exists());
    let rows = fs::read_to_string(dir.join("replicates.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 4);
    assert!(multiroc::ScoredDataset::from_path(&dir.join("base_d2.csv")).is_ok());
}

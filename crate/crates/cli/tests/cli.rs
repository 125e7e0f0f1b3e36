use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vrident(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vrident"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("VRIDENT_CONFIG")
        .env_remove("VRIDENT_JOBS")
        .env_remove("VRIDENT_SEED")
        .env_remove("VRIDENT_PRECISION")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) {
    fs::write(dir.join("run.toml"), body).unwrap();
}

const SMALL: &str = r#"
out_dir = "runs"
[data]
dir = "data"
[synth]
n_users = 3
minutes_per_session = 8.0
[grid]
models = ["S4D"]
encodings = ["BRA"]
minutes = [0.3333333333, 1.0, 2.0]
[train]
batch_size = 16
max_epochs = 2
lr = 0.003
"#;

#[test]
fn help_shows_configuration_keys() {
    let dir = tempfile::tempdir().unwrap();
    let o = vrident(dir.path(), &["--help"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    for key in ["minutes_per_session", "time_scale", "[ingest.columns]", "patience", "VRIDENT_SEED", "preset"] {
        assert!(out.contains(key), "{key} not in --help");
    }
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "[grid]\nminutes = []\n");
    let o = vrident(dir.path(), &["--config", "run.toml", "train"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("grid.minutes"));

    write_config(dir.path(), "[synth]\nn_users = 1\n");
    let o = vrident(dir.path(), &["--config", "run.toml", "synth"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!dir.path().join("data").exists());

    write_config(dir.path(), "colour = \"red\"\n");
    assert_eq!(code(&vrident(dir.path(), &["--config", "run.toml", "synth"])), 2);

    assert_eq!(code(&vrident(dir.path(), &["--precision", "16", "synth"])), 2);
}

#[test]
fn missing_inputs_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    let o = vrident(dir.path(), &["--config", "run.toml", "train"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("manifest.csv"));

    let o = vrident(dir.path(), &["--config", "run.toml", "benchmark"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("S4D with BRA"), "{}", stderr(&o));
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    assert_eq!(code(&vrident(dir.path(), &["--config", "run.toml", "synth"])), 0);
    let first = fs::read(dir.path().join("data/user002_s2.csv")).unwrap();
    assert_eq!(code(&vrident(dir.path(), &["--config", "run.toml", "synth"])), 0);
    assert_eq!(fs::read(dir.path().join("data/user002_s2.csv")).unwrap(), first);
    let manifest = fs::read_to_string(dir.path().join("data/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 3 * 2);

    assert_eq!(code(&vrident(dir.path(), &["--config", "run.toml", "--seed", "7", "synth"])), 0);
    assert_ne!(fs::read(dir.path().join("data/user002_s2.csv")).unwrap(), first);
}

#[test]
fn ingest_maps_columns_and_scales_time() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    assert_eq!(code(&vrident(dir.path(), &["--config", "run.toml", "synth"])), 0);

    // a foreign export: time in milliseconds under another column name
    let raw = dir.path().join("raw");
    fs::create_dir(&raw).unwrap();
    let mut index = String::from("user_id,session_id,rate_hz,path\n");
    for line in fs::read_to_string(dir.path().join("data/manifest.csv")).unwrap().lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let text = fs::read_to_string(dir.path().join("data").join(f[3])).unwrap();
        let mut out = String::new();
        for (i, row) in text.lines().enumerate() {
            let (t, rest) = row.split_once(',').unwrap();
            let t = if i == 0 { "time".to_string() } else { (t.parse::<f64>().unwrap() * 1000.0).to_string() };
            out.push_str(&format!("{t},{rest}\n"));
        }
        fs::write(raw.join(f[3]), out).unwrap();
        index.push_str(&format!("{},{},{},{}\n", f[0], f[1], f[2], f[3]));
    }
    fs::write(raw.join("index.csv"), index).unwrap();

    let cfg = format!("{SMALL}\n[ingest]\nindex = \"raw/index.csv\"\ntime_scale = 0.001\n[ingest.columns]\nt = \"time\"\n");
    write_config(dir.path(), &cfg.replace("dir = \"data\"", "dir = \"ingested\""));
    let o = vrident(dir.path(), &["--config", "run.toml", "ingest"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(dir.path().join("ingested/manifest.csv")).unwrap(),
        fs::read(dir.path().join("data/manifest.csv")).unwrap()
    );
    for name in ["user000_s1.csv", "user002_s2.csv"] {
        let a = fs::read_to_string(dir.path().join("ingested").join(name)).unwrap();
        let b = fs::read_to_string(dir.path().join("data").join(name)).unwrap();
        assert_eq!(a.lines().count(), b.lines().count());
        for (ra, rb) in a.lines().zip(b.lines()).skip(1) {
            for (x, y) in ra.split(',').zip(rb.split(',')) {
                let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
                assert!((x - y).abs() <= 1e-6 * (1.0 + y.abs()), "{name}: {x} vs {y}");
            }
        }
    }

    // without the mapping the time column cannot be found
    write_config(dir.path(), &format!("{SMALL}\n[ingest]\nindex = \"raw/index.csv\"\n").replace("dir = \"data\"", "dir = \"other\""));
    let o = vrident(dir.path(), &["--config", "run.toml", "ingest"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("missing column"), "{}", stderr(&o));
}

#[test]
fn train_benchmark_report_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, SMALL);
    assert_eq!(code(&vrident(d, &["--config", "run.toml", "synth"])), 0);

    let o = vrident(d, &["--config", "run.toml", "train"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpts: Vec<_> = fs::read_dir(d.join("runs/checkpoints")).unwrap().collect();
    assert_eq!(ckpts.len(), 1);
    assert!(d.join("runs/checkpoints/S4D_BRA.ckpt").exists());
    let log = fs::read_to_string(d.join("runs/logs/S4D_BRA.csv")).unwrap();
    assert!(log.lines().count() >= 2);

    // two models, one encoding, three test lengths
    write_config(d, &SMALL.replace("models = [\"S4D\"]", "models = [\"S4D\", \"CNN\"]"));
    let o = vrident(d, &["--config", "run.toml", "--jobs", "2", "train"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = vrident(d, &["--config", "run.toml", "benchmark"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = fs::read_to_string(d.join("runs/metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().skip(1).collect();
    assert_eq!(rows.len(), 6, "{metrics}");
    assert!(rows.iter().any(|r| r.starts_with("CNN,BRA,")));
    let table = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(table.contains("S4D") && table.contains("CNN"));

    let names = ["mrr_BRA.svg", "bubble_BRA.svg", "table.txt"];
    let before: Vec<Vec<u8>> = names.iter().map(|n| fs::read(d.join("runs").join(n)).unwrap()).collect();
    for n in names {
        fs::remove_file(d.join("runs").join(n)).unwrap();
    }
    let o = vrident(d, &["--config", "run.toml", "report"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for (n, b) in names.iter().zip(&before) {
        assert_eq!(&fs::read(d.join("runs").join(n)).unwrap(), b, "{n} changed");
    }
}

#[test]
fn training_is_reproducible_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = SMALL.replace("models = [\"S4D\"]", "models = [\"MLP\", \"GRU\"]");
    write_config(d, &cfg);
    assert_eq!(code(&vrident(d, &["--config", "run.toml", "synth"])), 0);
    assert_eq!(code(&vrident(d, &["--config", "run.toml", "--jobs", "1", "train"])), 0);
    let a = fs::read(d.join("runs/checkpoints/GRU_BRA.ckpt")).unwrap();
    write_config(d, &cfg.replace("out_dir = \"runs\"", "out_dir = \"again\""));
    assert_eq!(code(&vrident(d, &["--config", "run.toml", "--jobs", "2", "train"])), 0);
    assert_eq!(fs::read(d.join("again/checkpoints/GRU_BRA.ckpt")).unwrap(), a);
}

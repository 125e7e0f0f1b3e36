use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use vrident::dataset::{build_splits, load_manifest, read_manifest, synth_users, write_dataset, SessionRecording, Splits};
use vrident::evaluation::{evaluate_scores, flops, metrics_csv, parse_metrics_csv, SweepPoint};
use vrident::models::Model;
use vrident::numerics::Real;
use vrident::preprocess::{Encoding, MotionFrame, Pose, Quat};
use vrident::training::fit;
use vrident::{Error, Result};

use crate::config::{Cell, RunConfig};
use crate::plot;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let sc = cfg.synth_config()?;
    let recs = synth_users(&sc)?;
    let manifest = write_dataset(&cfg.data.dir, &recs)?;
    info!("wrote {} sessions and {}", recs.len(), manifest.display());
    Ok(())
}

/// Converts recordings listed in `ingest.index` to the session schema.
pub fn ingest(cfg: &RunConfig) -> Result<()> {
    let entries = read_manifest(&cfg.ingest.index)?;
    let wanted = vrident::dataset::header();
    for key in cfg.ingest.columns.keys() {
        if !wanted.contains(key) {
            return Err(Error::Config(format!("ingest.columns: {key:?} is not a schema column")));
        }
    }
    if !(cfg.ingest.time_scale > 0.0) {
        return Err(Error::Config("ingest.time_scale must be positive".into()));
    }
    let mut recs = Vec::with_capacity(entries.len());
    for e in &entries {
        let frames = read_foreign(&e.path, cfg)?;
        info!("{}: {} frames", e.path.display(), frames.len());
        recs.push(SessionRecording {
            user_id: e.user_id,
            session_id: e.session_id,
            rate_hz: e.rate_hz,
            frames,
        });
    }
    let manifest = write_dataset(&cfg.data.dir, &recs)?;
    // read back through the strict loader so problems surface now
    load_manifest(&manifest)?;
    info!("wrote {} sessions and {}", recs.len(), manifest.display());
    Ok(())
}

fn read_foreign(path: &Path, cfg: &RunConfig) -> Result<Vec<MotionFrame>> {
    let perr = |row: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| perr(0, e.to_string()))?;
    let hdr = rdr.headers().map_err(|e| perr(0, e.to_string()))?.clone();
    let mut cols = Vec::new();
    for name in vrident::dataset::header() {
        let source = cfg.ingest.columns.get(&name).cloned().unwrap_or_else(|| name.clone());
        let j = hdr
            .iter()
            .position(|h| h == source)
            .ok_or_else(|| perr(0, format!("missing column {source:?} (schema column {name})")))?;
        cols.push((name, j));
    }
    let mut frames: Vec<MotionFrame> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| perr(row, e.to_string()))?;
        let mut v = Vec::with_capacity(cols.len());
        for (name, j) in &cols {
            let field = rec.get(*j).unwrap_or("");
            let x: f64 = field
                .parse()
                .map_err(|_| perr(row, format!("column {name} is not a number: {field:?}")))?;
            if !x.is_finite() {
                return Err(perr(row, format!("column {name} is not finite")));
            }
            v.push(x);
        }
        let pose = |o: usize| {
            Pose::new([v[o], v[o + 1], v[o + 2]], Quat::new(v[o + 3], v[o + 4], v[o + 5], v[o + 6]))
                .map_err(|e| perr(row, e.to_string()))
        };
        let frame = MotionFrame {
            t: v[0] * cfg.ingest.time_scale,
            hmd: pose(1)?,
            left: pose(8)?,
            right: pose(15)?,
        };
        if frames.last().is_some_and(|p| frame.t <= p.t) {
            return Err(perr(row, format!("timestamp {} does not increase", frame.t)));
        }
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(perr(0, "no data rows".into()));
    }
    Ok(frames)
}

/// Loads the dataset and builds the splits of every encoding in the grid.
fn prepare(cfg: &RunConfig) -> Result<BTreeMap<Encoding, Splits>> {
    let manifest = cfg.manifest();
    if !manifest.exists() {
        return Err(Error::Dataset(format!(
            "no dataset at {} (run `vrident synth` or `vrident ingest` first)",
            manifest.display()
        )));
    }
    let recs = load_manifest(&manifest)?;
    let mut out = BTreeMap::new();
    for enc in cfg.encodings()? {
        let s = build_splits(&recs, enc)?;
        info!("{enc}: {} users, {} train / {} validation / {} test windows", s.n_classes(), s.train.len(), s.val.len(), s.test.len());
        out.insert(enc, s);
    }
    Ok(out)
}

/// Runs `work` over the cells on `jobs` threads; results keep cell order.
fn run_cells<R: Send>(cells: &[Cell], jobs: usize, work: impl Fn(&Cell) -> Result<R> + Sync) -> Result<Vec<R>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(cells.len()).max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let r = work(&cells[i]);
                let failed = r.is_err();
                results.lock().expect("results lock")[i] = Some(r);
                if failed {
                    // stop handing out further cells
                    next.store(cells.len(), Ordering::SeqCst);
                }
            });
        }
    });
    let mut out = Vec::with_capacity(cells.len());
    for r in results.into_inner().expect("results lock") {
        match r {
            Some(r) => out.push(r?),
            None => {}
        }
    }
    Ok(out)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    match cfg.precision {
        64 => train_as::<f64>(cfg),
        _ => train_as::<f32>(cfg),
    }
}

fn train_as<T: Real>(cfg: &RunConfig) -> Result<()> {
    let cells = cfg.cells()?;
    for c in &cells {
        cfg.model_config(c.model)?.validate()?;
    }
    let splits = prepare(cfg)?;
    create_dir(&cfg.out_dir.join("checkpoints"))?;
    create_dir(&cfg.out_dir.join("logs"))?;
    run_cells(&cells, cfg.jobs, |cell| {
        let s = &splits[&cell.encoding];
        let seed = cfg.cell_seed(cell);
        let mut model = Model::<T>::new(cfg.model_config(cell.model)?, s.n_classes(), seed)?;
        info!("{}: training {} parameters, seed {seed}", cell.name(), model.param_count());
        let log = fit(&mut model, &s.train, &s.val, &cfg.train_config(seed))?;
        model.save(&cfg.checkpoint_path(cell))?;
        vrident::dataset::write_atomic(&cfg.log_path(cell), log.to_csv().as_bytes())?;
        info!(
            "{}: {} epochs, best validation accuracy {:.3} at epoch {}",
            cell.name(),
            log.epochs.len(),
            log.best_val_acc().unwrap_or(0.0),
            log.best_epoch
        );
        Ok(())
    })?;
    Ok(())
}

pub fn benchmark(cfg: &RunConfig) -> Result<()> {
    let cells = cfg.cells()?;
    let missing: Vec<String> = cells
        .iter()
        .filter(|c| !cfg.checkpoint_path(c).exists())
        .map(|c| format!("{} with {} ({})", c.model, c.encoding, cfg.checkpoint_path(c).display()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Checkpoint(format!("missing checkpoint for {}", missing.join(", "))));
    }
    let splits = prepare(cfg)?;
    let points = match cfg.precision {
        64 => evaluate_as::<f64>(cfg, &cells, &splits)?,
        _ => evaluate_as::<f32>(cfg, &cells, &splits)?,
    };
    create_dir(&cfg.out_dir)?;
    vrident::dataset::write_atomic(&cfg.metrics_path(), metrics_csv(&points).as_bytes())?;
    info!("wrote {}", cfg.metrics_path().display());
    report(cfg, &cfg.metrics_path())
}

fn evaluate_as<T: Real>(cfg: &RunConfig, cells: &[Cell], splits: &BTreeMap<Encoding, Splits>) -> Result<Vec<SweepPoint>> {
    let per_cell = run_cells(cells, cfg.jobs, |cell| {
        let s = &splits[&cell.encoding];
        let model = Model::<T>::load(&cfg.checkpoint_path(cell))
            .map_err(|e| Error::Checkpoint(format!("{} with {}: {e}", cell.model, cell.encoding)))?;
        if model.n_classes() != s.n_classes() || model.config().kind != cell.model {
            return Err(Error::Checkpoint(format!(
                "{} with {}: checkpoint holds a {}-class {} model, the dataset has {} users",
                cell.model,
                cell.encoding,
                model.n_classes(),
                model.config().kind,
                s.n_classes()
            )));
        }
        let scores = model.predict_windows(&s.test, 64)?;
        let cost = flops(model.config(), s.n_classes())?;
        let pts = evaluate_scores(cell.model, cell.encoding, &scores, &s.test, &cfg.grid.minutes, &cost)?;
        for p in pts.iter().filter(|p| p.truncated) {
            warn!("{}: {} min point used fewer windows for some users", cell.name(), p.test_minutes);
        }
        Ok(pts)
    })?;
    Ok(per_cell.into_iter().flatten().collect())
}

/// Figures and table from a metrics CSV.
pub fn report(cfg: &RunConfig, metrics: &Path) -> Result<()> {
    let text = fs::read_to_string(metrics).map_err(|e| Error::io(format!("reading {}", metrics.display()), e))?;
    let points = parse_metrics_csv(&text)?;
    if points.is_empty() {
        return Err(Error::Dataset(format!("{} has no rows", metrics.display())));
    }
    create_dir(&cfg.out_dir)?;
    for enc in plot::encodings_of(&points) {
        let mrr = cfg.out_dir.join(format!("mrr_{enc}.svg"));
        vrident::dataset::write_atomic(&mrr, plot::mrr_plot(&points, enc).as_bytes())?;
        let bubble = cfg.out_dir.join(format!("bubble_{enc}.svg"));
        vrident::dataset::write_atomic(&bubble, plot::bubble_plot(&points, enc).as_bytes())?;
    }
    let table = plot::table(&points);
    vrident::dataset::write_atomic(&cfg.out_dir.join("table.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

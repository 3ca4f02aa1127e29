use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use tempfile::TempDir;
use trifusion_core::dataio::{load_dataset, Dataset, ModalitySet, RunConfig};
use trifusion_core::simulator::{generate_dataset, LocationGrid, SceneConfig};
use trifusion_core::Direction;
use trifusion_harness::eval::{evaluate, evaluation_from_record, read_record, write_record, Record, RecordRow};
use trifusion_harness::suite::{run_one, run_suite, split_for, table, SuiteEntry, TableScope};
use trifusion_harness::train::{train, Logger};
use trifusion_harness::HarnessError;

struct Fixture {
    _dir: TempDir,
    root: PathBuf,
}

/// Six cases (two depths, one close and one far) with 8 frames each.
fn fixture() -> &'static Path {
    static F: OnceLock<Fixture> = OnceLock::new();
    &F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("data");
        let mut scene = SceneConfig::toy();
        scene.grid = LocationGrid {
            xs: vec![100.0],
            ys: vec![70.0, 190.0],
        };
        generate_dataset(&scene, 8, &root, 11).unwrap();
        Fixture { _dir: dir, root }
    })
    .root
}

fn dataset() -> Dataset {
    load_dataset(fixture()).unwrap()
}

fn config(name: &str) -> RunConfig {
    let mut c = RunConfig::toy(fixture());
    c.name = name.into();
    c.train_per_case = 5;
    c.test_per_case = 3;
    c.optimizer.epochs = 2;
    c.optimizer.batch_size = 16;
    c
}

#[test]
fn logged_learning_rates_follow_the_step_schedule() {
    let ds = dataset();
    let mut c = config("schedule");
    c.optimizer.epochs = 3;
    c.optimizer.lr_step = 1;
    let out = tempfile::tempdir().unwrap();
    let o = train(&c, &ds, &split_for(&c, &ds).unwrap().train, out.path(), &mut Logger::silent()).unwrap();
    let lrs: Vec<f64> = o.epochs.iter().map(|e| e.lr).collect();
    for (e, lr) in lrs.iter().enumerate() {
        assert_eq!(*lr, 0.1 * 0.1f64.powi(e as i32));
    }

    let paper = RunConfig::paper("unused").optimizer;
    for e in 0..200 {
        let expected = 0.1 * 0.1f64.powi((e / 30) as i32);
        assert_eq!(paper.lr_at(e), expected, "epoch {e}");
    }
    assert_eq!(paper.lr_at(29), 0.1);
    assert_eq!(paper.lr_at(30), 0.1 * 0.1);
    assert_eq!(paper.lr_at(60), 0.1 * 0.1 * 0.1);
}

#[test]
fn ten_frames_with_batch_128_make_one_partial_batch() {
    let ds = dataset();
    let mut c = config("single-batch");
    c.optimizer.batch_size = 128;
    c.optimizer.epochs = 1;
    c.optimizer.val_fraction = 0.0;
    let refs: Vec<_> = split_for(&c, &ds).unwrap().train.into_iter().take(10).collect();
    let out = tempfile::tempdir().unwrap();
    let o = train(&c, &ds, &refs, out.path(), &mut Logger::silent()).unwrap();
    assert_eq!(o.train_frames, 10);
    assert_eq!(o.epochs[0].batches, 1);
}

#[test]
fn same_seed_gives_identical_losses() {
    let ds = dataset();
    let c = config("repeat");
    let refs = split_for(&c, &ds).unwrap().train;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = train(&c, &ds, &refs, a.path(), &mut Logger::silent()).unwrap();
    let rb = train(&c, &ds, &refs, b.path(), &mut Logger::silent()).unwrap();
    assert_eq!(ra.epochs, rb.epochs);
    assert_eq!(
        std::fs::read(a.path().join("best.safetensors")).unwrap(),
        std::fs::read(b.path().join("best.safetensors")).unwrap()
    );
}

#[test]
fn divergence_is_reported() {
    let ds = dataset();
    let mut c = config("diverge");
    c.optimizer.learning_rate = 1e30;
    c.optimizer.epochs = 3;
    let out = tempfile::tempdir().unwrap();
    let err = train(&c, &ds, &split_for(&c, &ds).unwrap().train, out.path(), &mut Logger::silent()).unwrap_err();
    assert!(matches!(err, HarnessError::Divergence { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
}

fn row(p_x: f64, p_y: f64, d: Direction, truth: [f64; 3], pred: [f64; 3]) -> RecordRow {
    RecordRow {
        case_id: format!("x{p_x}_y{p_y}_{d:?}"),
        index: 0,
        p_x,
        p_y,
        d,
        truth,
        pred,
    }
}

#[test]
fn oracle_predictions_have_zero_error() {
    let rows = vec![
        row(80.0, 70.0, Direction::L, [0.4, 0.175, 0.0], [0.4, 0.175, 0.0]),
        row(100.0, 190.0, Direction::S, [0.5, 0.475, 0.5], [0.5, 0.475, 0.5]),
        row(120.0, 290.0, Direction::R, [0.6, 0.725, 1.0], [0.6, 0.725, 1.0]),
    ];
    let e = evaluation_from_record(&Record {
        run: "oracle".into(),
        modalities: "O+A+P".into(),
        rows,
    })
    .unwrap();
    assert_eq!(e.overall.rmse, [0.0; 3]);
    assert_eq!(e.close.unwrap().rmse, [0.0; 3]);
    assert_eq!(e.far.unwrap().rmse, [0.0; 3]);
}

#[test]
fn evaluation_partitions_cover_the_test_set_and_replay_from_the_record() {
    let ds = dataset();
    let c = config("evaluate");
    let sp = split_for(&c, &ds).unwrap();
    let out = tempfile::tempdir().unwrap();
    let o = train(&c, &ds, &sp.train, out.path(), &mut Logger::silent()).unwrap();
    let (e, rec) = evaluate(&o.checkpoint, &c, &ds, &sp.test).unwrap();

    assert_eq!(e.overall.count, sp.test.len());
    let close = e.close.as_ref().unwrap().count;
    let far = e.far.as_ref().unwrap().count;
    assert_eq!(close + far, e.overall.count);
    assert_eq!(rec.rows.iter().filter(|r| r.close()).count(), close);
    let mut seen: Vec<_> = rec.rows.iter().map(|r| (r.case_id.clone(), r.index)).collect();
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), rec.rows.len());

    let path = out.path().join("record.json");
    write_record(&rec, &path).unwrap();
    let replay = evaluation_from_record(&read_record(&path).unwrap()).unwrap();
    assert_eq!(replay, e);

    let mut other = c.clone();
    other.modalities = ModalitySet::OPTICAL;
    assert!(evaluate(&o.checkpoint, &other, &ds, &sp.test).is_err());
}

#[test]
fn suite_table_and_cache() {
    let ds = dataset();
    let root = tempfile::tempdir().unwrap();
    let entries = vec![
        SuiteEntry {
            name: "tri".into(),
            config: config("tri"),
        },
        SuiteEntry {
            name: "pressure".into(),
            config: RunConfig {
                modalities: ModalitySet::PRESSURE,
                pressure_cases_only: true,
                ..config("pressure")
            },
        },
    ];
    let rows = run_suite(&entries, &ds, root.path(), &mut Logger::silent()).unwrap();
    let text = table(&rows, TableScope::Overall);
    let body: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(body.len(), 2);
    for line in &body {
        let numbers = line.split_whitespace().filter(|t| t.contains('.') && t.parse::<f64>().is_ok()).count();
        assert_eq!(numbers, 6, "{line}");
    }
    let header = text.lines().nth(1).unwrap();
    assert_eq!(header.matches("RMSE").count() + header.matches("SD").count(), 6);

    // The pressure-only entry never sees far cases.
    let p = rows[1].result.as_ref().unwrap();
    assert!(p.evaluation.far.is_none());
    assert!(rows.iter().all(|r| r.result.as_ref().unwrap().trained));

    let (again, _) = run_one(&entries[0].config, &ds, &root.path().join("tri"), &mut Logger::silent()).unwrap();
    assert!(!again.trained);
    assert_eq!(again.evaluation, rows[0].result.as_ref().unwrap().evaluation);
}

#[test]
fn suite_continues_past_a_failing_entry() {
    let ds = dataset();
    let root = tempfile::tempdir().unwrap();
    let mut bad = config("bad");
    bad.network.image_size = 96;
    let entries = vec![
        SuiteEntry {
            name: "bad".into(),
            config: bad,
        },
        SuiteEntry {
            name: "good".into(),
            config: config("good"),
        },
    ];
    let rows = run_suite(&entries, &ds, root.path(), &mut Logger::silent()).unwrap();
    assert!(rows[0].result.is_err());
    assert!(rows[1].result.is_ok());
    assert!(table(&rows, TableScope::Close).contains("failed"));
}

#[test]
fn duplicate_suite_names_are_rejected() {
    let ds = dataset();
    let e = SuiteEntry {
        name: "x".into(),
        config: config("x"),
    };
    let root = tempfile::tempdir().unwrap();
    assert!(run_suite(&[e.clone(), e], &ds, root.path(), &mut Logger::silent()).is_err());
}

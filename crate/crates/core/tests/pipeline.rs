mod common;

use fallsel::detector::FallAlarm;
use fallsel::harness::{build_world, prepare, split_80_20, Benchmark, ExperimentConfig};
use fallsel::io::{read_records, write_records, Format, WindowRecord};
use fallsel::selector::window_gradient;
use fallsel::simfeed::{generate_stream, simulate_deployment, StreamSpec};
use fallsel::window::{segment_stream, window_starts, AccelSample, WINDOW_LEN, WINDOW_OVERLAP};
use fallsel::{AccelWindow, FeedbackSample, Label, Provenance, Source, Verdict, WindowMeta};

fn meta(label: Label) -> WindowMeta {
    WindowMeta { subject_id: "u1".into(), label, activity: Some("walking".into()), source: Source::BaseDataset }
}

fn stream(n: usize) -> Vec<AccelSample> {
    (0..n)
        .map(|i| AccelSample { t: i as i64 * 32, x: i as f64, y: -(i as f64), z: 0.5 })
        .collect()
}

#[test]
fn segmentation_examples() {
    assert_eq!(window_starts(266, WINDOW_LEN, WINDOW_OVERLAP).unwrap(), vec![0, 118]);
    assert_eq!(window_starts(128, WINDOW_LEN, WINDOW_OVERLAP).unwrap(), vec![0]);
    assert!(window_starts(127, WINDOW_LEN, WINDOW_OVERLAP).unwrap().is_empty());
    assert!(window_starts(300, 10, 10).is_err());

    let ws = segment_stream(&stream(266), WINDOW_LEN, WINDOW_OVERLAP, &meta(Label::Adl)).unwrap();
    assert_eq!(ws.len(), 2);
    assert_eq!(ws[1].t0_ms, 118 * 32);
    assert_eq!(ws[1].x()[0], 118.0);
    // Consecutive windows share exactly the overlap.
    assert_eq!(&ws[0].x()[118..], &ws[1].x()[..10]);
}

#[test]
fn segmentation_rejects_unordered_time() {
    let mut s = stream(200);
    s[50].t = s[49].t;
    assert!(segment_stream(&s, WINDOW_LEN, WINDOW_OVERLAP, &meta(Label::Adl)).is_err());
}

#[test]
fn window_gradient_example() {
    let w = AccelWindow::new(meta(Label::Adl), 0, vec![1.0, 3.0, 2.0, 4.0], vec![2.0; 4], vec![-1.0; 4]).unwrap();
    assert!((window_gradient(&w).unwrap() - 5.0 / 9.0).abs() < 1e-12);
}

#[test]
fn records_round_trip_in_both_formats() {
    let rounds = generate_stream(&StreamSpec { rounds: 2, windows_per_round: 15, ..Default::default() }).unwrap();
    let mut records: Vec<WindowRecord> = Vec::new();
    for (r, ws) in rounds.iter().enumerate() {
        for w in ws {
            let fb = FeedbackSample::from_oracle(w.clone(), r as u32 + 1).unwrap();
            records.push(WindowRecord {
                window: fb.window,
                provenance: Some(Provenance::Selected),
                round: Some(fb.round),
                verdict: Some(fb.verdict),
            });
        }
    }
    for format in [Format::Csv, Format::Jsonl] {
        let mut buf = Vec::new();
        write_records(&mut buf, &records, format).unwrap();
        let back = read_records(buf.as_slice(), format, WINDOW_LEN).unwrap();
        assert_eq!(back, records, "{format:?}");
    }
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let rounds = generate_stream(&StreamSpec { rounds: 3, windows_per_round: 10, ..Default::default() }).unwrap();
    for name in ["rounds.csv", "rounds.jsonl"] {
        let path = dir.path().join(name);
        fallsel::io::save_rounds(&rounds, &path, Format::from_path(&path)).unwrap();
        assert_eq!(fallsel::io::load_rounds(&path, Format::from_path(&path)).unwrap(), rounds);
    }
}

#[test]
fn malformed_rows_are_rejected() {
    let text = "subject_id,t0_ms,label\nu1,0,fall\n";
    assert!(read_records(text.as_bytes(), Format::Csv, WINDOW_LEN).is_err());
    assert!(read_records("{not json".as_bytes(), Format::Jsonl, WINDOW_LEN).is_err());
}

#[test]
fn default_stream_is_reproducible() {
    let spec = StreamSpec::default();
    let a = generate_stream(&spec).unwrap();
    assert_eq!(a.len(), 6);
    assert!(a.iter().all(|r| r.len() == 200));
    assert_eq!(a, generate_stream(&spec).unwrap());
    let falls = a.iter().flatten().filter(|w| w.label == Label::Fall).count();
    assert_eq!(falls, DEFAULT_STREAM_FALLS);
}

const DEFAULT_STREAM_FALLS: usize = 24;

#[test]
fn worlds_are_reproducible_and_disjoint() {
    let bench = Benchmark::default();
    let a = build_world(&bench, 1).unwrap();
    let b = build_world(&bench, 1).unwrap();
    assert_eq!(a.base_train, b.base_train);
    assert_eq!(a.deployment, b.deployment);
    assert_eq!(a.evaluation, b.evaluation);
    let mut keys: Vec<_> = a.test_set().iter().chain(a.base_train.windows()).map(AccelWindow::key).collect();
    keys.extend(a.deployment.iter().flatten().map(AccelWindow::key));
    let n = keys.len();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), n);
    assert!(a.base_train.has_both_classes() && a.base_test.has_both_classes());
}

#[test]
fn base_model_alerts_are_mostly_false_alarms() {
    let config = ExperimentConfig::default();
    for &seed in &config.seeds {
        let ctx = prepare(&config, seed).unwrap();
        let feedback = simulate_deployment(&ctx.base, &ctx.world.deployment).unwrap();
        let all: Vec<_> = feedback.iter().flatten().collect();
        let tp = all.iter().filter(|f| f.verdict == Verdict::Tp).count();
        let fp = all.len() - tp;
        assert!(fp > tp, "seed {seed}: {fp} false alarms vs {tp} true alerts");
        assert!(tp > 0, "seed {seed}: no fall was detected");
        let alerts = ctx.base.alerts(&ctx.world.deployment[0]).unwrap();
        assert_eq!(alerts.iter().filter(|&&a| a).count(), feedback[0].len());
    }
}

#[test]
fn feedback_split_is_seeded_and_stratified() {
    let rounds = generate_stream(&StreamSpec { rounds: 1, windows_per_round: 100, fall_probability: 0.3, ..Default::default() }).unwrap();
    let pool: Vec<FeedbackSample> = rounds[0].iter().map(|w| FeedbackSample::from_oracle(w.clone(), 1).unwrap()).collect();
    let (train, test) = split_80_20(&pool, 0.8, 9).unwrap();
    assert_eq!(train.len() + test.len(), pool.len());
    assert_eq!(split_80_20(&pool, 0.8, 9).unwrap(), (train.clone(), test.clone()));
    let tp = |s: &[FeedbackSample]| s.iter().filter(|f| f.verdict == Verdict::Tp).count();
    assert!(tp(&train) > 0 && tp(&test) > 0);
}

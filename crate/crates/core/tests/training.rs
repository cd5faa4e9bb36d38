//! Checkpoints, resumption and the training loop.

mod common;

use cch::train::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
use cch::train::{dataset_for, rig_for, train, vocab_for, Trainer, METRICS_HEADER};
use cch::Error;

fn trainer(config: &cch::config::TrainConfig) -> Trainer {
    let rig = rig_for(config).unwrap();
    let records = dataset_for(config, &rig).unwrap();
    Trainer::new(config.clone(), rig, vocab_for(config).unwrap(), records).unwrap()
}

fn resume(ckpt: &Checkpoint) -> Trainer {
    let rig = rig_for(&ckpt.config).unwrap();
    let records = dataset_for(&ckpt.config, &rig).unwrap();
    Trainer::from_checkpoint(ckpt, rig, vocab_for(&ckpt.config).unwrap(), records).unwrap()
}

#[test]
fn checkpoint_bytes_round_trip() {
    let mut t = trainer(&common::tiny_config());
    t.step().unwrap();
    let bytes = t.checkpoint().to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(back.step, 1);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    save_checkpoint(&back, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(load_checkpoint(&path).unwrap().to_bytes().unwrap(), bytes);
}

#[test]
fn malformed_checkpoints_rejected() {
    let t = trainer(&common::tiny_config());
    let bytes = t.checkpoint().to_bytes().unwrap();
    for cut in [0, 7, 12, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Format(_))),
            "truncated at {cut}"
        );
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(matches!(Checkpoint::from_bytes(&longer), Err(Error::Format(_))));

    let mut bumped = bytes.clone();
    bumped[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    match Checkpoint::from_bytes(&bumped) {
        Err(Error::Version { expected, found }) => {
            assert_eq!((expected, found), (CHECKPOINT_VERSION, CHECKPOINT_VERSION + 1));
        }
        other => panic!("expected a version error, got {:?}", other.map(|c| c.step)),
    }

    let mut magic = bytes;
    magic[0] ^= 0xff;
    assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::Format(_))));
}

#[test]
fn runs_are_deterministic() {
    let config = common::tiny_config();
    let run = || {
        let mut t = trainer(&config);
        let rows: Vec<String> = (0..3).map(|_| t.step().unwrap().csv_row()).collect();
        (rows, t.checkpoint().to_bytes().unwrap())
    };
    assert_eq!(run(), run());

    let mut other = config.clone();
    other.seed += 1;
    let mut t = trainer(&other);
    let rows: Vec<String> = (0..3).map(|_| t.step().unwrap().csv_row()).collect();
    assert_ne!(rows, run().0);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let config = common::tiny_config();
    let mut straight = trainer(&config);
    let rows: Vec<String> = (0..4).map(|_| straight.step().unwrap().csv_row()).collect();

    let mut first = trainer(&config);
    first.step().unwrap();
    first.step().unwrap();
    let bytes = first.checkpoint().to_bytes().unwrap();
    let mut second = resume(&Checkpoint::from_bytes(&bytes).unwrap());
    assert_eq!(second.step, 2);
    let tail: Vec<String> = (0..2).map(|_| second.step().unwrap().csv_row()).collect();
    assert_eq!(tail, rows[2..]);
    assert_eq!(second.checkpoint().to_bytes().unwrap(), straight.checkpoint().to_bytes().unwrap());
}

#[test]
fn train_writes_metrics_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = common::tiny_config();
    config.steps = 4;
    config.checkpoint_every = 2;
    config.output_dir = dir.path().join("run");
    let ckpt = train(&config, None).unwrap();
    assert_eq!(ckpt.step, 4);
    let out = &config.output_dir;
    for f in ["metrics.csv", "step_000002.bin", "step_000004.bin", "final.bin"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("4,"));

    // Resuming from step 2 appends rows 3 and 4 again and ends at the same state.
    let mut more = config.clone();
    more.output_dir = dir.path().join("resumed");
    let mut again = train(&more, Some(&out.join("step_000002.bin"))).unwrap();
    let resumed = std::fs::read_to_string(more.output_dir.join("metrics.csv")).unwrap();
    assert_eq!(resumed.lines().skip(1).collect::<Vec<_>>(), lines[3..]);
    assert_eq!(again.config.output_dir, more.output_dir);
    again.config.output_dir = config.output_dir.clone();
    assert_eq!(again.to_bytes().unwrap(), ckpt.to_bytes().unwrap());
}

#[test]
fn divergence_is_reported() {
    let mut config = common::tiny_config();
    config.lr_g = 1e300;
    config.lr_d = 1e300;
    let mut t = trainer(&config);
    let err = (0..5).find_map(|_| t.step().err()).expect("training should diverge");
    assert!(
        matches!(err, Error::Diverged { .. } | Error::NonFinitePixel { .. }),
        "unexpected error {err}"
    );
}

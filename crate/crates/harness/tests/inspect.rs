mod common;

use common::{small_config, small_dataset};
use loga_core::{Clip, FrameFlag};
use loga_datagen::{generate, DatasetManifest, NoiseSpec, Split};
use loga_harness::eval::model_from_checkpoint;
use loga_harness::inspect::{format_scores, inspect_clips, noise_separation, parse_scores};
use loga_harness::train::strategy;
use loga_harness::{extract_descriptor, train, HarnessError};

#[test]
fn dump_parses_back_to_one_record_per_frame() {
    let d = small_dataset();
    let ckpt = train(small_config(), &d).unwrap().checkpoint;
    let mut model = model_from_checkpoint(&ckpt).unwrap();
    let s = strategy("associative").unwrap();
    let all: Vec<&Clip> = d.clips().iter().collect();
    let ids = [3, 0, 17];
    let scores = inspect_clips(&mut model, s.as_ref(), &all, &ids).unwrap();
    let text = format_scores(&scores, 1.0);
    let records = parse_scores(&text).unwrap();
    assert_eq!(records.len(), 3 * 10);
    for (chunk, c) in records.chunks(10).zip(&scores) {
        assert_eq!(chunk, &c.records[..]);
        let clip = d.clip(c.clip).unwrap();
        assert!(chunk.iter().zip(&clip.flags).all(|(r, f)| r.flag == *f));
        let local: f64 = chunk.iter().map(|r| r.w_local.unwrap()).sum();
        assert!((local - 1.0).abs() < 1e-5);
    }

    let scaled = parse_scores(&format_scores(&scores, 1000.0)).unwrap();
    for (a, b) in scaled.iter().zip(&records) {
        assert!((a.w_global.unwrap() - 1000.0 * b.w_global.unwrap()).abs() < 1e-9);
    }
}

#[test]
fn clean_clip_has_no_flags_and_reports_the_local_ratio() {
    let m = DatasetManifest {
        num_identities: 8,
        train_identities: 4,
        tracklets_per_identity: 4,
        frames_per_tracklet: 10,
        noise: NoiseSpec::clean(),
        ..DatasetManifest::default()
    };
    let d = generate(&m).unwrap();
    let ckpt = train(small_config(), &d).unwrap().checkpoint;
    let mut model = model_from_checkpoint(&ckpt).unwrap();
    let s = strategy("associative").unwrap();
    let all: Vec<&Clip> = d.clips().iter().collect();
    let scores = inspect_clips(&mut model, s.as_ref(), &all, &[5]).unwrap();
    let text = format_scores(&scores, 1.0);
    assert!(text.contains("w_local max/min"));
    assert!(scores[0].local_ratio().unwrap() >= 1.0);
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        assert!(line.ends_with('\t'), "flag column should be empty: {line:?}");
    }
}

#[test]
fn switched_frame_flags_pass_through() {
    let d = small_dataset();
    let clip = d
        .clips()
        .iter()
        .find(|c| c.flags.contains(&FrameFlag::IdSwitch))
        .expect("small dataset has an identity switch");
    let ckpt = train(small_config(), &d).unwrap().checkpoint;
    let mut model = model_from_checkpoint(&ckpt).unwrap();
    let s = strategy("associative").unwrap();
    let all: Vec<&Clip> = d.clips().iter().collect();
    let text = format_scores(&inspect_clips(&mut model, s.as_ref(), &all, &[clip.id]).unwrap(), 1.0);
    assert!(text.lines().any(|l| l.ends_with("\tid_switch")));
}

#[test]
fn unknown_clip_is_a_lookup_error() {
    let d = small_dataset();
    let ckpt = train(small_config(), &d).unwrap().checkpoint;
    let mut model = model_from_checkpoint(&ckpt).unwrap();
    let s = strategy("associative").unwrap();
    let all: Vec<&Clip> = d.clips().iter().collect();
    let err = inspect_clips(&mut model, s.as_ref(), &all, &[1_000_000]).unwrap_err();
    assert!(matches!(err, HarnessError::UnknownClip(1_000_000)));
}

#[test]
fn strategies_without_scores_write_placeholders() {
    let d = small_dataset();
    let ckpt = train(small_config(), &d).unwrap().checkpoint;
    let mut model = model_from_checkpoint(&ckpt).unwrap();
    let s = strategy("mean_pool").unwrap();
    let all: Vec<&Clip> = d.clips().iter().collect();
    let records = parse_scores(&format_scores(&inspect_clips(&mut model, s.as_ref(), &all, &[0]).unwrap(), 1.0)).unwrap();
    assert!(records.iter().all(|r| r.w_local.is_none() && r.w_global.is_none()));
    let sep = noise_separation(&mut model, s.as_ref(), &d.split(Split::Gallery)).unwrap();
    assert_eq!((sep.local, sep.global), (0, 0));
}

#[test]
fn tracklet_descriptor_is_the_mean_of_clip_descriptors() {
    let d = small_dataset();
    let ckpt = train(small_config(), &d).unwrap().checkpoint;
    let mut model = model_from_checkpoint(&ckpt).unwrap();
    let s = strategy("associative").unwrap();
    let clips: Vec<&Clip> = d.clips()[..3].iter().collect();
    let per_clip = model.describe(s.as_ref(), &clips).unwrap();

    let single = extract_descriptor(&mut model, s.as_ref(), 0, &clips[..1]).unwrap();
    let as_f64: Vec<f64> = per_clip[0].descriptor.iter().map(|&v| f64::from(v)).collect();
    assert_eq!(single, as_f64);

    let doubled = extract_descriptor(&mut model, s.as_ref(), 0, &[clips[0], clips[0]]).unwrap();
    assert_eq!(doubled, single);

    let three = extract_descriptor(&mut model, s.as_ref(), 0, &clips).unwrap();
    for (i, v) in three.iter().enumerate() {
        let manual = per_clip.iter().map(|o| f64::from(o.descriptor[i])).sum::<f64>() / 3.0;
        assert!((v - manual).abs() < 1e-7);
    }

    assert!(matches!(
        extract_descriptor(&mut model, s.as_ref(), 42, &[]),
        Err(HarnessError::EmptyTracklet(42))
    ));
}

//! Generator contracts checked against independent pixel oracles.

use loga_core::{Frame, FrameFlag};
use loga_datagen::generate::render_tracklet;
use loga_datagen::render::{shift, FrameSite};
use loga_datagen::{generate, DatasetManifest, NoiseSpec, Renderer, Split};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(noise: NoiseSpec) -> DatasetManifest {
    DatasetManifest {
        num_identities: 6,
        train_identities: 3,
        tracklets_per_identity: 4,
        frames_per_tracklet: 12,
        clip_len: 5,
        noise,
        ..DatasetManifest::default()
    }
}

fn only(p_occlude: f64, p_misalign: f64, p_idswitch: f64) -> NoiseSpec {
    NoiseSpec {
        p_occlude,
        p_misalign,
        p_idswitch,
        ..NoiseSpec::default()
    }
}

/// Frames of every tracklet together with their clean renders.
fn frames_with_clean(m: &DatasetManifest) -> Vec<(FrameSite, Frame, Frame, FrameFlag)> {
    let renderer = Renderer::new(m);
    let mut out = Vec::new();
    for t in 0..m.num_tracklets() {
        let tr = render_tracklet(&renderer, m, t);
        for (f, (frame, flag)) in tr.frames.into_iter().zip(tr.flags).enumerate() {
            let site = FrameSite {
                tracklet: t,
                identity: tr.identity,
                camera: tr.camera,
                frame: f,
            };
            out.push((site, frame, renderer.clean(site), flag));
        }
    }
    out
}

#[test]
fn noise_free_spec_flags_everything_clean() {
    let d = generate(&small(NoiseSpec::clean())).unwrap();
    assert!(d.clips().iter().all(|c| c.is_clean()));
    assert!(d.manifest().clips.iter().all(|r| r.flags.chars().all(|c| c == 'c')));
}

#[test]
fn clean_frames_equal_their_clean_render() {
    let m = small(NoiseSpec::default());
    let mut seen = 0;
    for (_, frame, clean, flag) in frames_with_clean(&m) {
        if flag == FrameFlag::Clean {
            assert_eq!(frame, clean);
            seen += 1;
        } else {
            assert_ne!(frame, clean, "{flag} frame identical to clean render");
        }
    }
    assert!(seen > 0);
}

#[test]
fn occluded_frames_differ_only_inside_one_flat_rectangle() {
    let m = small(only(1.0, 0.0, 0.0));
    let noise = m.noise.clone();
    for (_, frame, clean, flag) in frames_with_clean(&m) {
        assert_eq!(flag, FrameFlag::Occluded);
        let (h, w) = (m.height, m.width);
        let diff: Vec<(usize, usize)> = (0..h * w)
            .filter(|&i| frame.pixels[i] != clean.pixels[i])
            .map(|i| (i / w, i % w))
            .collect();
        assert!(!diff.is_empty());
        let top = diff.iter().map(|p| p.0).min().unwrap();
        let bottom = diff.iter().map(|p| p.0).max().unwrap();
        let left = diff.iter().map(|p| p.1).min().unwrap();
        let right = diff.iter().map(|p| p.1).max().unwrap();
        // the changed pixels lie in a box no larger than the largest occluder
        assert!(bottom - top < noise.occluder_max.min(h));
        assert!(right - left < noise.occluder_max.min(w));
        // and that box holds a single gray level
        let gray = frame.pixels[top * w + left];
        for r in top..=bottom {
            for c in left..=right {
                assert_eq!(frame.pixels[r * w + c], gray);
            }
        }
    }
}

#[test]
fn misaligned_frames_are_shifted_clean_renders() {
    let m = small(only(0.0, 1.0, 0.0));
    let s = m.noise.max_shift as isize;
    for (_, frame, clean, flag) in frames_with_clean(&m) {
        assert_eq!(flag, FrameFlag::Misaligned);
        let found = (-s..=s)
            .flat_map(|dy| (-s..=s).map(move |dx| (dy, dx)))
            .filter(|&o| o != (0, 0))
            .any(|(dy, dx)| shift(&clean, dy, dx) == frame);
        assert!(found);
    }
}

#[test]
fn identity_switches_show_another_identity_through_the_same_camera() {
    // without jitter and pixel noise every clean render of an identity
    // under one camera is the same image
    let noise = NoiseSpec {
        p_idswitch: 1.0,
        ..NoiseSpec::clean()
    };
    let m = small(noise);
    let reference = |identity: usize, camera: usize| {
        let clean_m = DatasetManifest {
            noise: NoiseSpec::clean(),
            ..m.clone()
        };
        Renderer::new(&clean_m).clean(FrameSite {
            tracklet: 0,
            identity,
            camera,
            frame: 0,
        })
    };
    for (site, frame, _, flag) in frames_with_clean(&m) {
        assert_eq!(flag, FrameFlag::IdSwitch);
        assert_ne!(frame, reference(site.identity, site.camera));
        let others = (0..m.num_identities).filter(|&j| j != site.identity);
        assert_eq!(others.filter(|&j| frame == reference(j, site.camera)).count(), 1);
    }
}

#[test]
fn corruption_rates_follow_the_spec() {
    let d = generate(&DatasetManifest::default()).unwrap();
    let mut counts = [0usize; 4];
    let mut total = 0;
    for t in d.tracklets(Split::Train).iter().chain(&d.tracklets(Split::Gallery)) {
        for c in &t.clips {
            for f in &c.flags {
                counts[FrameFlag::ALL.iter().position(|x| x == f).unwrap()] += 1;
                total += 1;
            }
        }
    }
    for (flag, &n) in FrameFlag::ALL.iter().zip(&counts).skip(1) {
        let rate = n as f64 / total as f64;
        assert!((0.07..0.13).contains(&rate), "{flag}: {rate}");
    }
}

fn mean_frame(c: &loga_core::Clip) -> Vec<f32> {
    let n = c.frames[0].len();
    (0..n)
        .map(|i| c.frames.iter().map(|f| f.pixels[i]).sum::<f32>() / c.frames.len() as f32)
        .collect()
}

#[test]
fn identities_are_separable_without_noise() {
    let m = DatasetManifest {
        noise: NoiseSpec::clean(),
        ..DatasetManifest::default()
    };
    let d = generate(&m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let sample: Vec<_> = d.clips().choose_multiple(&mut rng, 100).collect();
        let means: Vec<Vec<f32>> = sample.iter().map(|c| mean_frame(c)).collect();
        let (mut intra, mut inter) = ((0.0, 0), (0.0, 0));
        for i in 0..100 {
            for j in i + 1..100 {
                let dist: f64 = means[i].iter().zip(&means[j]).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt();
                let acc = if sample[i].identity == sample[j].identity { &mut intra } else { &mut inter };
                acc.0 += dist;
                acc.1 += 1;
            }
        }
        assert!(intra.1 > 0);
        assert!(intra.0 / intra.1 as f64 <= inter.0 / inter.1 as f64);
    }
}

#[test]
fn default_benchmark_layout() {
    let d = generate(&DatasetManifest::default()).unwrap();
    assert_eq!(d.clips().len(), 1024);
    assert_eq!(d.split(Split::Train).len(), 512);
    assert_eq!(d.tracklets(Split::Query).len(), 32);
    assert_eq!(d.tracklets(Split::Gallery).len(), 96);
    assert_eq!(d.train_classes().len(), 16);
    for q in d.tracklets(Split::Query) {
        assert!(d
            .tracklets(Split::Gallery)
            .iter()
            .any(|g| g.identity == q.identity && g.camera != q.camera));
    }
}

#[test]
fn generation_is_deterministic_per_seed() {
    let m = small(NoiseSpec::default());
    assert_eq!(generate(&m).unwrap(), generate(&m).unwrap());
    let other = DatasetManifest { seed: 1, ..m.clone() };
    assert_ne!(generate(&m).unwrap().clips(), generate(&other).unwrap().clips());
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rccn::data::{generate_dataset, make_targets, render, render_scene, sample_scene, Scene, SceneSample, SyntheticWorldConfig, Transform};
use rccn::discretize::{DiscretizationScheme, Mode};
use rccn::metrics::compute_metrics;
use rccn::{NetworkSpec, Variant};

/// Nearest positive hit of the ray `t·d` (with `d.z = 1`) against the slab
/// `lo..hi`, if any.
fn slab(d: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> Option<f64> {
    let (mut enter, mut exit) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if d[a] == 0.0 {
            if lo[a] > 0.0 || hi[a] < 0.0 {
                return None;
            }
            continue;
        }
        let (t1, t2) = (lo[a] / d[a], hi[a] / d[a]);
        enter = enter.max(t1.min(t2));
        exit = exit.min(t1.max(t2));
    }
    (enter <= exit && enter > 0.0).then_some(enter)
}

/// Depth of the nearest surface along each pixel ray, by brute force over
/// every object in the scene.
fn ray_cast(scene: &Scene) -> Vec<f64> {
    let mut out = Vec::with_capacity(scene.height * scene.width);
    for y in 0..scene.height {
        for x in 0..scene.width {
            let d = scene.ray(x, y);
            let mut best = scene.wall_z;
            if d[1] > 0.0 {
                best = best.min(scene.camera_height / d[1]);
            }
            for b in &scene.blocks {
                if let Some(t) = slab(d, b.min, b.max) {
                    best = best.min(t);
                }
            }
            for bb in &scene.billboards {
                let (px, py) = (d[0] * bb.z, d[1] * bb.z);
                if bb.x[0] <= px && px <= bb.x[1] && bb.y[0] <= py && py <= bb.y[1] {
                    best = best.min(bb.z);
                }
            }
            out.push(best);
        }
    }
    out
}

#[test]
fn rendered_depth_is_the_nearest_ray_hit() {
    let cfg = SyntheticWorldConfig::default();
    for index in 0..3 {
        let scene = sample_scene(&cfg, index).unwrap();
        let sample = render_scene(&scene).unwrap();
        let oracle = ray_cast(&scene);
        let mut mismatches = 0;
        for (i, (&got, &want)) in sample.depth.iter().zip(&oracle).enumerate() {
            if (f64::from(got) - want).abs() > 1e-5 * want {
                mismatches += 1;
                eprintln!("scene {index} pixel {i}: rendered {got}, ray cast {want}");
            }
        }
        assert_eq!(mismatches, 0);
    }
}

#[test]
fn regeneration_is_byte_identical() {
    let cfg = SyntheticWorldConfig { n_samples: 3, ..Default::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = generate_dataset(&cfg, a.path()).unwrap();
    let mb = generate_dataset(&cfg, b.path()).unwrap();
    assert_eq!(ma, mb);
    for entry in std::fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        let bytes_a = std::fs::read(a.path().join(&name)).unwrap();
        let bytes_b = std::fs::read(b.path().join(&name)).unwrap();
        assert!(bytes_a == bytes_b, "{name:?} differs");
    }
}

fn random_transform(rng: &mut ChaCha8Rng, h: usize, w: usize, scale: f64) -> Transform {
    let (h1, w1) = ((h as f64 * scale).round() as usize, (w as f64 * scale).round() as usize);
    let (ch, cw) = (h1.min(h) * 3 / 4, w1.min(w) * 3 / 4);
    Transform {
        scale,
        angle_degrees: rng.gen_range(-10.0..10.0),
        flip: rng.gen_bool(0.5),
        crop_origin: (rng.gen_range(0..=h1 - ch), rng.gen_range(0..=w1 - cw)),
        crop_size: (ch, cw),
    }
}

#[test]
fn depth_follows_its_source_pixel_divided_by_scale() {
    let sample = render(&SyntheticWorldConfig::default(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for scale in [0.75, 0.9, 1.0, 1.1, 1.25] {
        let t = random_transform(&mut rng, sample.height, sample.width, scale);
        let out = t.apply(&sample).unwrap();
        let sources = t.source_indices(sample.height, sample.width).unwrap();
        for (i, src) in sources.iter().enumerate() {
            match src {
                Some(s) => {
                    assert!(out.mask[i]);
                    assert_eq!(out.depth[i], (f64::from(sample.depth[*s]) / scale) as f32);
                }
                None => assert!(!out.mask[i]),
            }
        }
    }
}

#[test]
fn co_transformed_prediction_keeps_relative_errors() {
    let target = render(&SyntheticWorldConfig::default(), 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let pred_depth: Vec<f32> = target.depth.iter().map(|&d| d * rng.gen_range(0.7f32..1.4)).collect();
    let prediction = SceneSample::new(target.height, target.width, target.rgb.clone(), pred_depth, target.mask.clone()).unwrap();
    for scale in [0.8, 1.0, 1.2] {
        let t = random_transform(&mut rng, target.height, target.width, scale);
        let (p, g) = (t.apply(&prediction).unwrap(), t.apply(&target).unwrap());
        assert_eq!(p.mask, g.mask);
        let after = compute_metrics(&p.depth_f64(), &g.depth_f64(), &g.mask, None).unwrap();

        // The same statistics over the source pixels each output reads.
        let picked: Vec<usize> = t.source_indices(target.height, target.width).unwrap().into_iter().flatten().collect();
        let take = |s: &SceneSample| picked.iter().map(|&i| f64::from(s.depth[i])).collect::<Vec<_>>();
        let before = compute_metrics(&take(&prediction), &take(&target), &vec![true; picked.len()], None).unwrap();
        assert_eq!(after.n_valid, before.n_valid);
        assert!((after.abs_rel - before.abs_rel).abs() < 1e-6, "{} vs {}", after.abs_rel, before.abs_rel);
        assert!((after.rmse_log - before.rmse_log).abs() < 1e-6);
    }
}

#[test]
fn targets_match_a_per_block_oracle() {
    let scheme = DiscretizationScheme::new(Mode::SpacingIncreasing, 1.0, 40.0, 32).unwrap();
    let spec = NetworkSpec::desk(64, 64, 32, Variant::Rccn);
    let log_width = (40.0f64).ln() / 32.0;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for index in 0..4 {
        let mut sample = render(&SyntheticWorldConfig::default(), index).unwrap();
        for m in sample.mask.iter_mut() {
            *m = rng.gen_bool(0.9);
        }
        let t = make_targets(&sample, &scheme, &spec).unwrap();
        for (f, logs, mask) in [(8, &t.coarse_log, &t.coarse_mask), (4, &t.fusion_log, &t.fusion_mask)] {
            let bw = 64 / f;
            for b in 0..bw * bw {
                let (by, bx) = (b / bw, b % bw);
                let vals: Vec<f64> = (0..f * f)
                    .map(|k| (by * f + k / f) * 64 + bx * f + k % f)
                    .filter(|&i| sample.mask[i])
                    .map(|i| f64::from(sample.depth[i]).ln())
                    .collect();
                assert_eq!(mask[b], !vals.is_empty());
                if !vals.is_empty() {
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    assert!((logs[b] - mean).abs() < 1e-12);
                }
            }
        }
        for (f, bins) in [(8, &t.fine_bins), (4, &t.refine_bins)] {
            let bw = 64 / f;
            for b in 0..bw * bw {
                let centre = ((b / bw) * f + f / 2) * 64 + (b % bw) * f + f / 2;
                if !sample.mask[centre] {
                    assert_eq!(bins[b], scheme.ignore_index());
                    continue;
                }
                let decoded = scheme.decode(bins[b]).unwrap();
                assert!((decoded.ln() - f64::from(sample.depth[centre]).ln()).abs() <= log_width);
            }
        }
    }
}

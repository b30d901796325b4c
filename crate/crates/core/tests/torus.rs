use raybundle::config::Config;
use raybundle::harness::{bundle_centerline, fit_dwi, track_bundle};
use raybundle::io::{load_tensor_volume, save_volume};
use raybundle::{add_complex_gaussian_noise, compute_frames, generate_phantom, simulate_dwi, PhantomSpec};

fn noise_free() -> (PhantomSpec<f64>, raybundle::Phantom, raybundle::Tensors) {
    let spec = PhantomSpec::default();
    let ph = generate_phantom(&spec).unwrap();
    let dwi = simulate_dwi(&ph.tensors, &spec.acq).unwrap();
    let (fit, clamped) = fit_dwi(&dwi).unwrap();
    assert_eq!(clamped, 0);
    (spec, ph, fit)
}

#[test]
fn noise_free_fit_recovers_tangents() {
    let (_, ph, fit) = noise_free();
    let mut worst = 0.0f64;
    for i in 0..ph.mask.data().len() {
        if !ph.mask.get(i) {
            continue;
        }
        let c = ph.tensors.geometry.voxel_center(i);
        let e1 = fit.get(i).eigensystem().unwrap().principal();
        worst = worst.max(e1.acute_angle_deg(&ph.torus.tangent_at(&c)));
    }
    assert!(worst < 1.0, "worst angle {worst}°");
}

#[test]
fn noisy_inside_fa_stays_near_noise_free() {
    let (spec, ph, fit) = noise_free();
    let inside_fa = |v: &raybundle::Tensors| {
        let fas: Vec<f64> = (0..ph.mask.data().len())
            .filter(|&i| ph.mask.get(i))
            .map(|i| v.get(i).fa().unwrap())
            .collect();
        fas.iter().sum::<f64>() / fas.len() as f64
    };
    let clean = inside_fa(&fit);
    let dwi = simulate_dwi(&ph.tensors, &spec.acq).unwrap();
    let noisy: f64 = (1..=5)
        .map(|seed| {
            let d = add_complex_gaussian_noise(&dwi, 20.0, seed).unwrap();
            inside_fa(&fit_dwi(&d).unwrap().0)
        })
        .sum::<f64>()
        / 5.0;
    assert!((noisy - clean).abs() / clean <= 0.15, "noise-free {clean}, noisy {noisy}");
}

#[test]
fn quarter_circle_frames_keep_v_out_of_plane() {
    let (_, ph, _) = noise_free();
    let c = ph.centerline.resampled(49).unwrap();
    let frames = compute_frames(&c).unwrap();
    let sign = frames[0].v.z.signum();
    for f in &frames {
        assert!((f.v.z - sign).abs() < 1e-9, "{:?}", f.v);
        assert!(f.u.z.abs() < 1e-9);
        assert!(f.tangent.dot(&f.u).abs() < 1e-12);
    }
}

#[test]
fn tracked_centerline_follows_the_arc() {
    let (_, ph, fit) = noise_free();
    // tracking reads the fitted volume as stored on disk
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fit.raw");
    save_volume(&fit.into(), &path).unwrap();
    let fit = load_tensor_volume::<f64>(&path).unwrap();

    let cfg = Config::default();
    let bundle = track_bundle(&fit, &cfg).unwrap();
    assert!(bundle.kept.len() >= 10, "kept {}", bundle.kept.len());
    let g = fit.geometry;
    for f in &bundle.kept {
        assert!(f.points.iter().all(|p| g.contains_world(p)));
    }
    assert_eq!(track_bundle(&fit, &cfg).unwrap().kept, bundle.kept);

    let c = bundle_centerline(&bundle.kept, &cfg).unwrap();
    assert_eq!(c.len(), 49);
    let s = c.arc_lengths();
    assert!(s.windows(2).all(|w| w[1] > w[0]));
    let mean = c.points().iter().map(|p| ph.torus.distance_to_circle(p)).sum::<f64>() / c.len() as f64;
    assert!(mean <= 1.0, "mean distance {mean} mm");
    // oriented from the arc start towards its end
    assert!(c.points()[0].distance(&ph.torus.point_at(0.0)) < c.points()[0].distance(&ph.torus.point_at(90.0)));
}

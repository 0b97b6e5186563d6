//! Tracker properties on seeded synthetic textures whose motion is known by
//! construction.

use lrnet_core::lk::{compute_jacobian, lk_refine, lk_solve_step, pyramidal_lk, track_point, LkConfig};
use lrnet_core::synth::{integer_ssd_search, synth_textured_sequence, SynthMotionSpec, SynthSequence};
use lrnet_core::{Displacement, Frame, Point};

fn pair(seed: u64, shift: Displacement, size: usize, blur: f64) -> SynthSequence {
    let c = size as f64 / 2.0;
    synth_textured_sequence(&SynthMotionSpec {
        width: size,
        height: size,
        texture_seed: seed,
        blur_sigma: blur,
        displacements: vec![shift],
        points: vec![Point::new(c, c)],
        margin: 10.0,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn hessian_of_textured_patch_is_symmetric_psd() {
    let cfg = LkConfig { half_size: 31, sigma: 12.0, ..LkConfig::default() };
    for seed in 0..5 {
        let s = pair(seed, Displacement::ZERO, 96, 1.5);
        let ctx = compute_jacobian(&s.frames[0], Point::new(48.0, 48.0), &cfg).unwrap();
        assert_eq!(ctx.rows(), 63 * 63);
        let (l1, l2) = ctx.hessian().eigenvalues();
        assert!(l1 >= 0.0 && l2 >= 0.0, "{l1} {l2}");
        // JᵀAJ recomputed directly.
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for (j, w) in ctx.jacobian().iter().zip(ctx.weights()) {
            a += w * j[0] * j[0];
            b += w * j[0] * j[1];
            c += w * j[1] * j[1];
        }
        let h = ctx.hessian();
        assert!((h.a - a).abs() < 1e-9 * a && (h.b - b).abs() < 1e-9 * a && (h.c - c).abs() < 1e-9 * c);
    }
}

#[test]
fn affine_images_are_recovered_in_one_step() {
    let cfg = LkConfig::default();
    for (b, c) in [(1.0, 0.0), (0.5, 2.0), (-1.5, 0.25), (0.0, 3.0)] {
        let src = Frame::from_fn(80, 80, 1, |x, y, _| 40.0 + b * x as f64 + c * y as f64).unwrap();
        let shift = Displacement::new(0.75, -1.25);
        let dst = src.translated(shift);
        let p = Point::new(40.0, 40.0);
        let ctx = lrnet_core::lk::LkSolverContext::build(&src, p, cfg.half_size, cfg.sigma);
        let step = lk_solve_step(&ctx, &dst, Displacement::ZERO);
        // The gradient is the same everywhere, so only its direction is observable.
        let g = Point::new(b, c) * (1.0 / (b * b + c * c).sqrt());
        let along = step.x * g.x + step.y * g.y;
        let truth = shift.x * g.x + shift.y * g.y;
        assert!((along - truth).abs() < 1e-9, "b={b} c={c}: {along} vs {truth}");
    }
}

#[test]
fn integer_shift_is_a_fixed_point_confirmed_by_ssd_search() {
    let cfg = LkConfig::default();
    for (seed, shift) in [(1, (2, 1)), (2, (-3, 2)), (3, (1, -1))] {
        let d = Displacement::new(shift.0 as f64, shift.1 as f64);
        let s = pair(seed, d, 96, 2.0);
        assert_eq!(integer_ssd_search(&s.frames[0], &s.frames[1], 4), shift);
        let r = lk_refine(&s.frames[0], &s.frames[1], Point::new(48.0, 48.0), Displacement::ZERO, &cfg).unwrap();
        assert!(r.converged);
        let ctx = compute_jacobian(&s.frames[0], Point::new(48.0, 48.0), &cfg).unwrap();
        assert!(lk_solve_step(&ctx, &s.frames[1], d).norm() < 1e-9);
        assert!((r.displacement - d).norm() < 0.05, "{:?}", r.displacement);
    }
}

#[test]
fn subpixel_shift_single_level() {
    let cfg = LkConfig::default();
    for seed in 0..5 {
        let s = pair(100 + seed, Displacement::new(0.5, 0.0), 96, 2.0);
        let r = lk_refine(&s.frames[0], &s.frames[1], Point::new(48.0, 48.0), Displacement::ZERO, &cfg).unwrap();
        assert!((r.displacement - Displacement::new(0.5, 0.0)).norm() < 0.1, "{:?}", r.displacement);
    }
}

#[test]
fn residual_is_monotone_on_well_conditioned_pairs() {
    let cfg = LkConfig::default();
    for seed in 0..40u64 {
        let shift = Displacement::new(((seed % 7) as f64 - 3.0) * 0.4, ((seed % 5) as f64 - 2.0) * 0.5);
        let s = pair(200 + seed, shift, 96, 2.5);
        let r = lk_refine(&s.frames[0], &s.frames[1], Point::new(48.0, 48.0), Displacement::ZERO, &cfg).unwrap();
        for w in r.residuals.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * r.residuals[0].max(1.0), "seed {seed}: {:?}", r.residuals);
        }
    }
}

#[test]
fn shift_of_four_windows_is_outside_single_level_capture() {
    // Without a pyramid a 4w shift is never captured. Gauss-Newton then either
    // runs out of iterations (flagged) or settles on a spurious fixed point of
    // unrelated texture, whose residual stays far above the one at the true shift.
    let cfg = LkConfig { levels: 0, ..LkConfig::default() };
    let d = Displacement::new(4.0 * cfg.half_size as f64, 0.0);
    let mut flagged = 0;
    for seed in 0..20 {
        let s = pair(300 + seed, d, 160, 1.5);
        let p = Point::new(40.0, 80.0);
        let r = lk_refine(&s.frames[0], &s.frames[1], p, Displacement::ZERO, &cfg).unwrap();
        assert!((r.displacement - d).norm() > 1.0, "seed {seed} captured a 4w shift");
        let at_truth = compute_jacobian(&s.frames[0], p, &cfg).unwrap().weighted_ssd(&s.frames[1], d);
        if r.converged {
            assert!(*r.residuals.last().unwrap() > 100.0 * (at_truth + 1.0), "seed {seed}");
        } else {
            flagged += 1;
            assert_eq!(r.iterations, cfg.max_iters);
        }
    }
    assert!(flagged > 0);
}

#[test]
fn pyramid_recovers_known_translations() {
    let cfg = LkConfig::default();
    for (seed, d, tol) in [(400, (3.0, -2.0), 0.25), (401, (12.0, 0.0), 0.5), (402, (-7.5, 9.25), 0.25)] {
        let d = Displacement::new(d.0, d.1);
        let s = pair(seed, d, 200, 1.5);
        let src = cfg.build_pyramid(&s.frames[0]).unwrap();
        let dst = cfg.build_pyramid(&s.frames[1]).unwrap();
        let f = pyramidal_lk(&src, &dst, Point::new(100.0, 100.0), &cfg).unwrap();
        assert!((f.displacement - d).norm() < tol, "{:?} vs {d:?}", f.displacement);
    }
    let s = pair(403, Displacement::new(3.0, -2.0), 200, 1.5);
    assert_eq!(integer_ssd_search(&s.frames[0], &s.frames[1], 8), (3, -2));
}

#[test]
fn forward_backward_round_trip_on_identical_frames() {
    let cfg = LkConfig::default();
    let s = pair(500, Displacement::ZERO, 200, 1.5);
    let pyr = cfg.build_pyramid(&s.frames[0]).unwrap();
    for p in [Point::new(60.0, 70.0), Point::new(100.3, 99.6), Point::new(140.0, 120.0)] {
        let r = track_point(&pyr, &pyr, p, &cfg);
        assert!(r.valid);
        assert!(r.fb_error < 1e-9);
        assert!((r.predicted - p).norm() < 1e-6);
    }
}

fn upscale(f: &Frame) -> Frame {
    Frame::from_fn(2 * f.width(), 2 * f.height(), 1, |x, y, c| f.sample_channel(x as f64 / 2.0, y as f64 / 2.0, c)).unwrap()
}

#[test]
fn level_consistency_under_upscaling() {
    let cfg = LkConfig::default();
    for (seed, d) in [(600, (2.0, 1.0)), (601, (-3.5, 2.5)), (602, (4.0, -4.0))] {
        let d = Displacement::new(d.0, d.1);
        let s = pair(seed, d, 200, 2.0);
        let p = Point::new(100.0, 100.0);
        let small = pyramidal_lk(&cfg.build_pyramid(&s.frames[0]).unwrap(), &cfg.build_pyramid(&s.frames[1]).unwrap(), p, &cfg)
            .unwrap();
        let (a, b) = (upscale(&s.frames[0]), upscale(&s.frames[1]));
        let big = pyramidal_lk(&cfg.build_pyramid(&a).unwrap(), &cfg.build_pyramid(&b).unwrap(), p * 2.0, &cfg).unwrap();
        assert!((big.displacement - small.displacement * 2.0).norm() < 0.2, "{:?} vs 2×{:?}", big.displacement, small.displacement);
    }
}

//! Randomized invariant checks across the whole crate: classification
//! boundaries, histogram accounting, region tiling, optimality and
//! stationarity of solved thresholds, table interpolation, simulator
//! quantization, and file-format round trips.

use proptest::prelude::*;

use graybin::{
    binarize, build_table, build_temporal, estimate_region_thresholds, fill_invalid_regions,
    generate_stack, interpolate_pixel_map, lookup, misclassification_error, normalize, partition,
    solve_optimal, BimodalMixture, GaussianComponent, GrayImage, Histogram, Occupancy, PixelFlag,
    Rect, SceneModel, SpeedCalibrationPoint, ThresholdMap, DEFAULT_FIT_TOLERANCE,
};

fn arb_gray_image() -> impl Strategy<Value = GrayImage> {
    (1usize..24, 1usize..24).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), w * h)
            .prop_map(move |pixels| GrayImage::new(w, h, pixels).unwrap())
    })
}

/// Two well-separated components with the modes at least three combined
/// standard deviations apart, so a unique interior minimum exists.
fn arb_separated_mixture() -> impl Strategy<Value = BimodalMixture> {
    (
        20.0f64..120.0,
        0.5f64..12.0,
        0.5f64..12.0,
        3.0f64..8.0,
        0.1f64..0.9,
    )
        .prop_map(|(mu1, sigma1, sigma2, gap_factor, prior1)| {
            let mu2 = mu1 + gap_factor * (sigma1 + sigma2);
            BimodalMixture::new(
                GaussianComponent {
                    mu: mu1,
                    sigma: sigma1,
                    prior: prior1,
                },
                GaussianComponent {
                    mu: mu2,
                    sigma: sigma2,
                    prior: 1.0 - prior1,
                },
            )
            .unwrap()
        })
}

/// Strictly decreasing threshold-versus-speed knots, the shape a speed
/// calibration sweep produces.
fn arb_calibration_points() -> impl Strategy<Value = Vec<SpeedCalibrationPoint>> {
    (2usize..9).prop_flat_map(|n| {
        (
            proptest::collection::vec(0.5f64..20.0, n),
            proptest::collection::vec(1.0f64..30.0, n),
            1.0f64..50.0,
        )
            .prop_map(|(speed_steps, threshold_steps, first_speed)| {
                let mut speed = first_speed;
                let mut threshold = 250.0;
                let mut points = Vec::new();
                for (ds, dt) in speed_steps.iter().zip(&threshold_steps) {
                    threshold -= dt;
                    points.push(SpeedCalibrationPoint {
                        speed,
                        threshold,
                        levels: None,
                    });
                    speed += ds;
                }
                points
            })
    })
}

proptest! {
    #[test]
    fn binarize_marks_exactly_the_pixels_above_the_threshold(
        img in arb_gray_image(),
        t in -1.0f64..256.0,
    ) {
        let b = binarize(&img, t);
        for (i, &p) in img.pixels.iter().enumerate() {
            let expected = if (p as f64) > t { 1 } else { 0 };
            prop_assert_eq!(b.pixels[i], expected, "pixel {} = {} at threshold {}", i, p, t);
        }
    }

    #[test]
    fn normalized_histograms_have_unit_mass(img in arb_gray_image()) {
        let mut h = Histogram::new();
        for &p in &img.pixels {
            h.add(p);
        }
        let n = normalize(&h).unwrap();
        let mass: f64 = n.iter().sum();
        prop_assert!((mass - 1.0).abs() < 1e-12, "mass {}", mass);
        for (level, &share) in n.iter().enumerate() {
            prop_assert_eq!(share, h.count(level) as f64 / h.total() as f64);
        }
    }

    #[test]
    fn partition_tiles_every_pixel_exactly_once(
        (w, h, rw, rh) in (8usize..120, 8usize..120)
            .prop_flat_map(|(w, h)| (Just(w), Just(h), 8..=w, 8..=h)),
    ) {
        let img = GrayImage::new(w, h, vec![0; w * h]).unwrap();
        let grid = partition(&img, rw, rh).unwrap();
        prop_assert_eq!(grid.cols, w.div_ceil(rw));
        prop_assert_eq!(grid.rows, h.div_ceil(rh));

        let mut coverage = vec![0u32; w * h];
        for row in 0..grid.rows {
            for col in 0..grid.cols {
                let r: Rect = grid.region(col, row).rect;
                prop_assert_eq!(
                    grid.region(col, row).histogram.total(),
                    (r.width * r.height) as u64
                );
                for y in r.y..r.y + r.height {
                    for x in r.x..r.x + r.width {
                        coverage[y * w + x] += 1;
                    }
                }
            }
        }
        prop_assert!(coverage.iter().all(|&c| c == 1));
    }

    #[test]
    fn solved_thresholds_are_stationary_interior_minima(m in arb_separated_mixture()) {
        let result = solve_optimal(&m).unwrap();
        let t = result.threshold;
        prop_assert!(
            m.background.mu <= t && t <= m.object.mu,
            "threshold {} outside [{}, {}]", t, m.background.mu, m.object.mu
        );

        // At the minimum the two weighted densities cross.
        let a = m.background.weighted_density(t);
        let b = m.object.weighted_density(t);
        prop_assert!(
            (a - b).abs() <= 1e-6 * a.max(b),
            "densities {} and {} do not cross at {}", a, b, t
        );

        // The reported error is the error formula evaluated at the solution,
        // and nearby thresholds never do better.
        let at_solution = misclassification_error(&m, t).total;
        prop_assert!((result.expected_error - at_solution).abs() <= 1e-12);
        for dt in [-0.5, -0.1, 0.1, 0.5] {
            let nearby = misclassification_error(&m, t + dt).total;
            prop_assert!(
                nearby >= at_solution - 1e-12,
                "error {} at offset {} beats {} at the solution", nearby, dt, at_solution
            );
        }
    }

    #[test]
    fn lookup_reproduces_knots_and_never_increases(points in arb_calibration_points()) {
        let table = build_table(&points).unwrap();
        for p in &points {
            let got = lookup(&table, p.speed);
            prop_assert!(
                (got - p.threshold).abs() <= 1e-9,
                "lookup({}) = {} expected {}", p.speed, got, p.threshold
            );
        }

        let (v_min, v_max) = table.speed_range();
        let mut prev = f64::INFINITY;
        for i in 0..=400 {
            let v = v_min - 5.0 + (v_max - v_min + 10.0) * i as f64 / 400.0;
            let t = lookup(&table, v);
            prop_assert!(t <= prev + 1e-12, "lookup not monotone at {}", v);
            prev = t;
        }
        prop_assert_eq!(lookup(&table, v_min - 5.0), points[0].threshold);
        prop_assert_eq!(lookup(&table, v_max + 5.0), points[points.len() - 1].threshold);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn threshold_maps_round_trip_bit_exact(
        (w, h) in (1usize..16, 1usize..16),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.0..=255.0)).collect();
        let map = ThresholdMap::new(w, h, values).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.tmap");
        graybin::write_threshold_map(&path, &map).unwrap();
        let loaded = graybin::read_threshold_map(&path).unwrap();
        prop_assert_eq!(loaded.values, map.values);
        prop_assert_eq!((loaded.width, loaded.height), (w, h));
    }

    #[test]
    fn pgm_files_round_trip_bit_exact(img in arb_gray_image()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        graybin::write_pgm(&path, &img).unwrap();
        let loaded = graybin::read_pgm(&path).unwrap();
        prop_assert_eq!(loaded, img);
    }

    #[test]
    fn flag_maps_round_trip(
        (w, h) in (1usize..16, 1usize..16),
        codes in proptest::collection::vec(0u8..3, 1..256),
    ) {
        let variants = [PixelFlag::Ok, PixelFlag::NotBimodal, PixelFlag::ErrorAboveTolerance];
        let flags: Vec<PixelFlag> =
            (0..w * h).map(|i| variants[codes[i % codes.len()] as usize]).collect();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.flags");
        graybin::write_flags(&path, w, h, &flags).unwrap();
        let (lw, lh, loaded) = graybin::read_flags(&path).unwrap();
        prop_assert_eq!((lw, lh), (w, h));
        prop_assert_eq!(loaded, flags);
    }

    #[test]
    fn noiseless_rendering_is_pure_quantization(
        level in 0.5f64..254.0,
        seed in any::<u64>(),
    ) {
        let mut model = SceneModel::uniform(16, 4, level, level + 0.5, 0.0, seed);
        model.occupancy = Occupancy::Never;
        let (stack, masks) = generate_stack(&model, 2, 30.0).unwrap();
        let expected = (level + 0.5).floor().clamp(0.0, 255.0) as u8;
        for frame in &stack.frames {
            prop_assert!(frame.pixels.iter().all(|&p| p == expected));
        }
        for mask in &masks {
            prop_assert_eq!(mask.count_ones(), 0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn interpolated_maps_stay_inside_the_region_threshold_range(
        seed in any::<u64>(),
        (w, h) in (96usize..160, 96usize..160),
    ) {
        let model = SceneModel::uniform(w, h, 40.0, 180.0, 2.0, seed);
        let (stack, _) = generate_stack(&model, 1, 30.0).unwrap();
        let grid = partition(&stack.frames[0], 32, 32).unwrap();
        let grid = estimate_region_thresholds(grid, DEFAULT_FIT_TOLERANCE);
        let grid = fill_invalid_regions(grid).unwrap();

        let thresholds: Vec<f64> = (0..grid.rows)
            .flat_map(|row| (0..grid.cols).map(move |col| (col, row)))
            .map(|(col, row)| grid.region(col, row).threshold.unwrap())
            .collect();
        let lo = thresholds.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = thresholds.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let map = interpolate_pixel_map(&grid).unwrap();
        for &v in &map.values {
            prop_assert!(
                lo - 1e-9 <= v && v <= hi + 1e-9,
                "interpolated {} outside [{}, {}]", v, lo, hi
            );
        }
    }

    #[test]
    fn temporal_histograms_count_every_frame(
        seed in any::<u64>(),
        frames in 1usize..40,
    ) {
        let model = SceneModel::uniform(4, 3, 40.0, 180.0, 3.0, seed);
        let (stack, _) = generate_stack(&model, frames, 30.0).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                let h = build_temporal(&stack, x, y).unwrap();
                prop_assert_eq!(h.total(), frames as u64);
            }
        }
    }
}

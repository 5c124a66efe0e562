//! Cross-module integration: generator output flowing through the data
//! pipeline, correlation analyses, and the skew-normal machinery.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use fluxwarn_core::alarm::{fit_skew_normal, SkewNormalParams};
use fluxwarn_core::correlation::{daily_correlation, lag_scan, rebin_to_hourly};
use fluxwarn_core::data::{build_matrix, impute, make_windows, parse_records, write_fluxmatrix};
use fluxwarn_core::synthetic::{generate_pollution, generate_traffic, CitySpec};

// Adaptive Simpson quadrature, the independent oracle for pdf normalization.
fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let m = 0.5 * (a + b);
    (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64) -> f64 {
    let m = 0.5 * (a + b);
    let left = simpson(f, a, m);
    let right = simpson(f, m, b);
    if (left + right - whole).abs() <= 15.0 * tol {
        left + right + (left + right - whole) / 15.0
    } else {
        adaptive_simpson(f, a, m, left, tol / 2.0) + adaptive_simpson(f, m, b, right, tol / 2.0)
    }
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let whole = simpson(&f, a, b);
    adaptive_simpson(&f, a, b, whole, 1e-10)
}

#[test]
fn skew_normal_pdf_integrates_to_one() {
    for &alpha in &[-5.0, -1.0, 0.0, 1.0, 5.0] {
        let params = SkewNormalParams::new(2.0, 1.5, alpha).unwrap();
        let (lo, hi) = (2.0 - 12.0 * 1.5, 2.0 + 12.0 * 1.5);
        let integral = integrate(|x| params.pdf(x), lo, hi);
        assert!(
            (integral - 1.0).abs() < 1e-6,
            "alpha {alpha}: integral {integral}"
        );
    }
}

#[test]
fn skew_normal_moments_match_sampled_statistics() {
    // 2e5 draws per shape here; the acceptance suite runs the full 1e6.
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    for &alpha in &[-5.0, -1.0, 0.0, 1.0, 5.0] {
        let params = SkewNormalParams::new(10.0, 4.0, alpha).unwrap();
        let samples = params.sample_n(&mut rng, 200_000);
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let (mu, sigma) = params.moments();
        assert!(
            (mean - mu).abs() < 0.01 * sigma,
            "alpha {alpha}: mean {mean} vs {mu}"
        );
        assert!(
            (var.sqrt() - sigma).abs() / sigma < 0.01,
            "alpha {alpha}: std"
        );
    }
}

#[test]
fn skew_normal_fit_is_self_consistent() {
    // fit, draw from the fit, re-fit: parameters should agree
    let truth = SkewNormalParams::new(50.0, 12.0, 3.0).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let first = fit_skew_normal(&truth.sample_n(&mut rng, 30_000)).unwrap();
    let second = fit_skew_normal(&first.sample_n(&mut rng, 30_000)).unwrap();
    assert!((first.location - second.location).abs() / truth.scale < 0.1);
    assert!((first.scale - second.scale).abs() / first.scale < 0.1);
    assert!((first.shape - second.shape).abs() / first.shape.abs().max(1.0) < 0.35);
}

#[test]
fn weekly_flux_histogram_is_right_skewed_and_fittable() {
    // daytime flux of one generated segment over a week, as in the weekly
    // distribution analysis: the fitted shape should come out positive
    let spec = CitySpec::new(1, 2, 31);
    let matrix = generate_traffic(&spec).unwrap();
    let daytime: Vec<f64> = (0..7 * 144)
        .filter(|t| {
            let hour = (t % 144) / 6;
            (6..22).contains(&hour)
        })
        .map(|t| matrix.value(t, 0))
        .collect();
    let fit = fit_skew_normal(&daytime).unwrap();
    assert!(fit.shape > 0.5, "expected right skew, got {}", fit.shape);
}

#[test]
fn coupled_pollution_peaks_at_zero_lag() {
    let spec = CitySpec::new(3, 4, 15);
    let matrix = generate_traffic(&spec).unwrap();
    let filled = impute(&matrix).unwrap();
    let target = matrix.segments()[1].clone();
    let hourly = rebin_to_hourly(&filled, &target).unwrap();
    let pollution = generate_pollution(&hourly, 30.0, 0.05, 4.0, 99);
    let scan = lag_scan(&hourly, &pollution, 24).unwrap();
    assert_eq!(scan.best_lag, 0);
}

#[test]
fn quiet_weekends_decorrelate_pollution() {
    // weekends with almost no traffic leave only background pollution, so
    // the per-day correlation drops markedly against weekdays
    let mut spec = CitySpec::new(1, 4, 8).with_base_scale(150.0);
    spec.weekend_factor = 0.05;
    let matrix = generate_traffic(&spec).unwrap();
    let hourly = rebin_to_hourly(&matrix, &matrix.segments()[0].clone()).unwrap();
    let pollution = generate_pollution(&hourly, 40.0, 0.05, 5.0, 4);
    let daily = daily_correlation(&hourly, &pollution).unwrap();
    assert_eq!(daily.len(), 28);

    let mut weekday = Vec::new();
    let mut weekend = Vec::new();
    for (i, d) in daily.iter().enumerate() {
        let rho = d.rho.unwrap_or(0.0);
        if i % 7 >= 5 {
            weekend.push(rho); // generator weeks start on Monday
        } else {
            weekday.push(rho);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&weekday) > mean(&weekend) + 0.2,
        "weekday {} vs weekend {}",
        mean(&weekday),
        mean(&weekend)
    );
}

#[test]
fn generated_matrix_survives_the_full_data_pipeline() {
    let spec = CitySpec::new(5, 1, 61);
    let matrix = generate_traffic(&spec).unwrap();

    // fluxmatrix round trip
    let mut buf = Vec::new();
    write_fluxmatrix(&matrix, &mut buf).unwrap();
    let reread = fluxwarn_core::data::read_fluxmatrix(std::io::Cursor::new(&buf)).unwrap();
    assert_eq!(reread, matrix);

    // CSV round trip through parse + build
    let mut csv = String::from("timestamp,segment_id,count\n");
    for t in 0..matrix.n_times() {
        for (s, id) in matrix.segments().iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{}\n",
                fluxwarn_core::timefmt::format_instant(matrix.time_at(t)),
                id,
                matrix.value(t, s) as u64
            ));
        }
    }
    let records = parse_records(std::io::Cursor::new(csv), true).unwrap();
    let rebuilt = build_matrix(&records).unwrap();
    assert_eq!(rebuilt, matrix);

    // windows off the imputed matrix
    let filled = impute(&rebuilt).unwrap();
    let windows = make_windows(&filled, &matrix.segments()[2].clone(), 6, 3).unwrap();
    assert_eq!(windows.len(), matrix.n_times() - 6 - 3 + 1);
}

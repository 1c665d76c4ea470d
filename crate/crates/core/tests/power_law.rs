use gradphi::harness::fit_power_law;
use gradphi::noise::{NoiseSource, Stream};

#[test]
fn noisy_inverse_square_recovers_exponent() {
    let src = NoiseSource::new(2024, 0);
    let xs: Vec<f64> = (0..12).map(|k| 2f64.powf(0.5 * k as f64)).collect();
    let ys: Vec<f64> = xs
        .iter()
        .enumerate()
        .map(|(k, &x)| 3.0 * x.powi(-2) * (1.0 + 0.01 * src.normal(Stream::Auxiliary, k as u64, 0)))
        .collect();
    let fit = fit_power_law(&xs, &ys).unwrap();
    assert!((fit.exponent + 2.0).abs() < 0.1, "{}", fit.exponent);
    assert!((fit.log_prefactor - 3f64.ln()).abs() < 0.05);
    assert!(fit.r2 > 0.999 && fit.r2 <= 1.0);
    assert_eq!(fit.residuals.len(), xs.len());
}

#[test]
fn rejects_nonpositive_and_short_inputs() {
    assert!(fit_power_law(&[1.0, 2.0, 3.0], &[1.0, 0.0, 2.0]).is_err());
    assert!(fit_power_law(&[1.0, -2.0, 3.0], &[1.0, 1.0, 2.0]).is_err());
    assert!(fit_power_law(&[1.0, 2.0], &[1.0, 2.0]).is_err());
}

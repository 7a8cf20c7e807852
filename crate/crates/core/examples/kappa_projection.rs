//! Rank-based label projection and quadratic weighted kappa on a toy
//! forecast.

use deeptransport::metrics::{kappa_weights, qw_kappa};
use deeptransport::training::{fit_projection, project_labels};

fn main() -> deeptransport::Result<()> {
    // Training labels fix the class shares that projected forecasts keep.
    let mut train = vec![1u8; 70];
    train.extend([2u8; 15]);
    train.extend([3u8; 10]);
    train.extend([4u8; 5]);
    let thresholds = fit_projection(train)?;
    println!("cumulative shares {:?}", thresholds.q);

    // A noisy continuous forecast of a known truth.
    let truth: Vec<u8> = (0..40).map(|i| [1, 1, 1, 2, 1, 3, 1, 4, 2, 1][i % 10]).collect();
    let forecast: Vec<f64> = truth
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 + 0.6 * ((i * 37 % 11) as f64 / 11.0 - 0.5))
        .collect();
    let labels = project_labels(&forecast, &thresholds);
    let report = qw_kappa(&truth, &labels)?;
    println!("kappa {:.4}", report.kappa);
    println!("observed agreement matrix:");
    for row in &report.observed {
        println!("  {row:?}");
    }
    println!("weights w(1,4)={} w(2,3)={:.4}", kappa_weights()[0][3], kappa_weights()[1][2]);
    Ok(())
}

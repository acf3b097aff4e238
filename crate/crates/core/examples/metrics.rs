//! Computes the forecasting metrics on a hand-built two-mode forecast over a
//! straight road segment.

use mftp::metrics::{self, Forecast, DEFAULT_MISS_RADIUS};
use mftp::scene::{DrivableArea, Point2};

fn line(from: Point2, step: Point2, n: usize) -> Vec<Point2> {
    (1..=n).map(|t| Point2::new(from.x + step.x * t as f64, from.y + step.y * t as f64)).collect()
}

fn main() -> Result<(), mftp::error::Error> {
    let road = DrivableArea {
        polygons: vec![vec![
            Point2::new(-10.0, -4.0),
            Point2::new(100.0, -4.0),
            Point2::new(100.0, 4.0),
            Point2::new(-10.0, 4.0),
        ]],
    };
    let origin = Point2::new(0.0, 0.0);
    let gt: Vec<Option<Point2>> = line(origin, Point2::new(1.0, 0.0), 30).into_iter().map(Some).collect();
    let forecast = Forecast {
        modes: vec![
            line(origin, Point2::new(1.05, 0.02), 30),
            line(origin, Point2::new(0.9, 0.3), 30),
        ],
        confidences: vec![0.7, 0.3],
    };

    let (best, fde) = metrics::best_endpoint_mode(&forecast, &gt)?;
    println!("best mode {best}, endpoint error {fde:.3} m");
    println!("minADE        {:.3}", metrics::agent_min_ade(&forecast, &gt)?);
    println!("minFDE        {:.3}", metrics::agent_min_fde(&forecast, &gt)?);
    println!("brier-minFDE  {:.3}", metrics::agent_brier_min_fde(&forecast, &gt)?);
    println!("miss          {}", metrics::agent_is_miss(&forecast, &gt, DEFAULT_MISS_RADIUS)?);
    println!(
        "compliant     {} of {} modes",
        metrics::agent_compliant_modes(&forecast, &road)?,
        forecast.modes.len()
    );
    println!("DAC           {:.3}", metrics::dac(&[forecast], &[&road])?);
    Ok(())
}

//! Monte Carlo over a thread pool; results are merged by repetition index so
//! the report does not depend on the thread count.

use del_core::datagen::{self, ExperimentDesign, MonteCarloReport, PowerPoint, RepetitionOutcome};
use rayon::prelude::*;

use crate::error::Result;

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool")
}

pub fn repetitions(design: &ExperimentDesign, threads: usize) -> Result<Vec<RepetitionOutcome>> {
    design.validate()?;
    let out: del_core::Result<Vec<RepetitionOutcome>> = pool(threads).install(|| {
        (0..design.repetitions as u64)
            .into_par_iter()
            .map(|rep| datagen::run_repetition(design, rep))
            .collect()
    });
    Ok(out?)
}

pub fn monte_carlo(design: &ExperimentDesign, threads: usize) -> Result<MonteCarloReport> {
    let outcomes = repetitions(design, threads)?;
    Ok(datagen::tally(design, &outcomes)?)
}

pub fn power_curve(
    design: &ExperimentDesign,
    shifts: &[f64],
    threads: usize,
) -> Result<Vec<PowerPoint>> {
    let mut points = Vec::new();
    for &shift in shifts {
        let d = datagen::power_design(design, shift);
        points.extend(datagen::power_points(shift, &monte_carlo(&d, threads)?));
    }
    Ok(points)
}

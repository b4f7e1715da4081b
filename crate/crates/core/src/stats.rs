//! Chi-squared calibration, test decisions and 2-d confidence-region tracing.

use alloc::vec::Vec;

use crate::special::gamma_pq;
use crate::{Error, Result};

/// `P(X <= x)` for `X ~ chi2(df)`.
pub fn chi2_cdf(x: f64, df: u32) -> Result<f64> {
    Ok(chi2_pq(x, df)?.0)
}

/// Upper tail `P(X > x)`, computed without cancellation.
pub fn chi2_sf(x: f64, df: u32) -> Result<f64> {
    Ok(chi2_pq(x, df)?.1)
}

fn chi2_pq(x: f64, df: u32) -> Result<(f64, f64)> {
    if df < 1 {
        return Err(Error::config(
            "chi-squared degrees of freedom must be at least 1",
        ));
    }
    if !(x >= 0.0) {
        return Err(Error::config(alloc::format!(
            "chi-squared argument must be >= 0, got {x}"
        )));
    }
    gamma_pq(0.5 * df as f64, 0.5 * x)
}

/// `x` with `chi2_cdf(x, df) = p`, by bisection on whichever tail is smaller.
pub fn chi2_quantile(p: f64, df: u32) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::config(alloc::format!(
            "quantile level must be in (0, 1), got {p}"
        )));
    }
    if df < 1 {
        return Err(Error::config(
            "chi-squared degrees of freedom must be at least 1",
        ));
    }
    let upper = p > 0.5;
    let target = if upper { 1.0 - p } else { p };
    // monotone increasing in x for both branches
    let f = |x: f64| -> Result<f64> {
        let (lo, hi) = chi2_pq(x, df)?;
        Ok(if upper { target - hi } else { lo - target })
    };
    let mut lo = 0.0;
    let mut hi = df as f64 + 1.0;
    while f(hi)? < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    El,
    Del,
    DelS,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::El => "EL",
            Method::Del => "DEL",
            Method::DelS => "DEL_S",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElTestReport {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
    pub alpha: f64,
    pub critical_value: f64,
    pub reject: bool,
    pub method: Method,
    pub rounds_run: usize,
    pub selected_count: usize,
}

/// Test decision at level `alpha`: reject when the statistic exceeds the
/// upper-`alpha` quantile of `chi2(df)`.
///
/// A negative statistic (possible only through rounding) is treated as zero.
pub fn decide(statistic: f64, df: u32, alpha: f64) -> Result<(f64, f64, bool)> {
    if !statistic.is_finite() {
        return Err(Error::config("statistic must be finite"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(alloc::format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    let critical = chi2_quantile(1.0 - alpha, df)?;
    let p_value = chi2_sf(statistic.max(0.0), df)?;
    Ok((p_value, critical, statistic > critical))
}

/// Builds a full report for one statistic.
pub fn report(
    statistic: f64,
    df: u32,
    alpha: f64,
    method: Method,
    rounds_run: usize,
    selected_count: usize,
) -> Result<ElTestReport> {
    let (p_value, critical_value, reject) = decide(statistic, df, alpha)?;
    Ok(ElTestReport {
        statistic,
        df,
        p_value,
        alpha,
        critical_value,
        reject,
        method,
        rounds_run,
        selected_count,
    })
}

/// One-sample Kolmogorov–Smirnov statistic `sup |F_n - F|`.
pub fn ks_statistic(samples: &[f64], mut cdf: impl FnMut(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the KS statistic with Stephens' small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = libm::sqrt(n as f64);
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = libm::exp(-2.0 * kf * kf * lambda * lambda);
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPoint {
    pub angle: f64,
    pub mu: [f64; 2],
    pub statistic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionTrace {
    pub center: [f64; 2],
    pub level: f64,
    pub critical: f64,
    /// Ordered by increasing angle in `[0, 2 pi)`.
    pub boundary: Vec<BoundaryPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceOptions {
    pub angles: usize,
    /// Tolerance on `|statistic - critical|` at returned points.
    pub tolerance: f64,
    /// First radius tried along each ray.
    pub initial_radius: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            angles: 64,
            tolerance: 1e-6,
            initial_radius: 1.0,
        }
    }
}

/// Evaluations that mean "past the edge of the data": treated as outside the region.
fn is_outside_error(e: &Error) -> bool {
    matches!(
        e,
        Error::HullViolation { .. } | Error::InfeasibleMultiplier { .. }
    )
}

/// Traces `{mu : stat(mu) <= chi2_quantile(level, 2)}` by bisection along
/// equally spaced rays from `center`.
///
/// A ray that leaves the data hull before crossing is bracketed against the
/// first radius where `statfn` reports a hull violation.
pub fn trace_region<F>(
    mut statfn: F,
    center: [f64; 2],
    level: f64,
    opts: &TraceOptions,
) -> Result<RegionTrace>
where
    F: FnMut([f64; 2]) -> Result<f64>,
{
    if opts.angles == 0 || !(opts.tolerance > 0.0) || !(opts.initial_radius > 0.0) {
        return Err(Error::config(
            "trace needs angles >= 1 and positive tolerance and radius",
        ));
    }
    let critical = chi2_quantile(level, 2)?;
    let at_center = statfn(center)?;
    if !(at_center < critical) {
        return Err(Error::CenterOutsideRegion {
            statistic: at_center,
            critical,
        });
    }

    let mut boundary = Vec::with_capacity(opts.angles);
    for k in 0..opts.angles {
        let angle = 2.0 * core::f64::consts::PI * k as f64 / opts.angles as f64;
        let (s, c) = libm::sincos(angle);
        let point = |r: f64| [center[0] + r * c, center[1] + r * s];

        // None: outside the hull; Some(v): statistic.
        let mut eval = |r: f64| -> Result<Option<f64>> {
            match statfn(point(r)) {
                Ok(v) => Ok(Some(v)),
                Err(e) if is_outside_error(&e) => Ok(None),
                Err(e) => Err(e),
            }
        };

        let mut lo = 0.0;
        let mut hi = opts.initial_radius;
        let mut hi_outside;
        loop {
            match eval(hi)? {
                Some(v) if (v - critical).abs() <= opts.tolerance => {
                    boundary.push(BoundaryPoint {
                        angle,
                        mu: point(hi),
                        statistic: v,
                    });
                    break;
                }
                Some(v) if v < critical => {
                    lo = hi;
                    hi *= 2.0;
                    if !hi.is_finite() {
                        return Err(Error::config("confidence region is unbounded"));
                    }
                    continue;
                }
                Some(_) => hi_outside = false,
                None => hi_outside = true,
            }
            let mut found = None;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                match eval(mid)? {
                    Some(v) if (v - critical).abs() <= opts.tolerance => {
                        found = Some((mid, v));
                        break;
                    }
                    Some(v) if v < critical => lo = mid,
                    Some(_) => {
                        hi = mid;
                        hi_outside = false;
                    }
                    None => {
                        hi = mid;
                        hi_outside = true;
                    }
                }
            }
            match found {
                Some((r, v)) => boundary.push(BoundaryPoint {
                    angle,
                    mu: point(r),
                    statistic: v,
                }),
                None if hi_outside => {
                    return Err(Error::HullViolation {
                        machine: None,
                        norm: f64::INFINITY,
                    })
                }
                None => {
                    return Err(Error::config(alloc::format!(
                        "could not resolve the region boundary at angle {angle:.4}"
                    )))
                }
            }
            break;
        }
    }
    Ok(RegionTrace {
        center,
        level,
        critical,
        boundary,
    })
}

//! One-dimensional minimization: a coarse logarithmic scan to bracket the
//! minimum followed by golden-section refinement.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
    /// The best scan point was the first or last grid point.
    pub at_boundary: bool,
    pub evaluations: usize,
}

/// Minimizes `f` over `[lo, hi]` (both > 0) with `scan_points` log-spaced
/// samples, then golden-section search inside the best bracket.
pub fn scan_log_then_golden<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, scan_points: usize) -> Minimum {
    assert!(lo > 0.0 && hi > lo && scan_points >= 3);
    let (llo, lhi) = (lo.ln(), hi.ln());
    let grid: Vec<f64> = (0..scan_points)
        .map(|i| (llo + (lhi - llo) * i as f64 / (scan_points - 1) as f64).exp())
        .collect();
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let best = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let at_boundary = best == 0 || best == scan_points - 1;
    let a = grid[best.saturating_sub(1)].ln();
    let b = grid[(best + 1).min(scan_points - 1)].ln();
    let (x, value, evals) = golden(|u| f(u.exp()), a, b, 1e-13);
    let (x, value) = if values[best] < value {
        (grid[best].ln(), values[best])
    } else {
        (x, value)
    };
    Minimum {
        x: x.exp(),
        value,
        at_boundary,
        evaluations: scan_points + evals,
    }
}

/// Golden-section search on `[a, b]`; returns `(x, f(x), evaluations)`.
pub fn golden<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, rel_tol: f64) -> (f64, f64, usize) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut evals = 2;
    while (b - a).abs() > rel_tol * (1.0 + a.abs().max(b.abs())) && evals < 400 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        evals += 1;
    }
    if fc < fd {
        (c, fc, evals)
    } else {
        (d, fd, evals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_minimum() {
        let m = scan_log_then_golden(|x| (x.ln() - 2.0f64.ln()).powi(2) + 1.0, 0.01, 100.0, 41);
        assert!((m.x - 2.0).abs() < 1e-6);
        assert!(!m.at_boundary);
    }

    #[test]
    fn flags_boundary_minimum() {
        let m = scan_log_then_golden(|x| x, 0.1, 10.0, 11);
        assert!(m.at_boundary);
        assert!(m.x < 0.13);
    }
}

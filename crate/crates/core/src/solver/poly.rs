//! Real polynomials of low degree and closed interval sets on the line.

/// Finite union of disjoint closed intervals, sorted; endpoints may be ±∞.
pub type IntervalSet = Vec<(f64, f64)>;

/// Coefficients in ascending powers, with negligible leading terms removed.
fn trimmed(c: &[f64]) -> &[f64] {
    let scale = c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut d = c.len();
    while d > 0 && c[d - 1].abs() <= 1e-15 * scale {
        d -= 1;
    }
    &c[..d]
}

pub fn eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * x + v)
}

fn derivative(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(i, v)| v * i as f64).collect()
}

/// Product of two polynomials.
pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Bisection on a bracket with a sign change, to adjacent floats.
fn bisect(c: &[f64], mut lo: f64, mut hi: f64) -> f64 {
    let flo = eval(c, lo);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = eval(c, mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Prefer the endpoint where the polynomial is non-negative.
    if eval(c, lo) >= 0.0 {
        lo
    } else {
        hi
    }
}

/// Distinct real roots, ascending. Critical points where the polynomial
/// touches zero (to round-off) are included.
pub fn real_roots(c: &[f64]) -> Vec<f64> {
    let c = trimmed(c);
    let d = c.len().saturating_sub(1);
    if d == 0 {
        return Vec::new();
    }
    if d == 1 {
        return vec![-c[0] / c[1]];
    }
    let lead = c[d];
    let bound = 1.0 + c[..d].iter().fold(0.0_f64, |m, v| m.max((v / lead).abs()));
    let mut points = vec![-bound];
    for r in real_roots(&derivative(c)) {
        if r > -bound && r < bound {
            points.push(r);
        }
    }
    points.push(bound);
    let mag = |x: f64| c.iter().enumerate().map(|(i, v)| v.abs() * x.abs().powi(i as i32)).sum::<f64>();
    let mut roots: Vec<f64> = Vec::new();
    let push = |r: f64, roots: &mut Vec<f64>| {
        if roots.last().is_none_or(|&l| r > l) {
            roots.push(r);
        }
    };
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (fa, fb) = (eval(c, a), eval(c, b));
        if fa.abs() <= 1e-14 * mag(a) {
            push(a, &mut roots);
            continue;
        }
        if (fa > 0.0) != (fb > 0.0) && fb.abs() > 1e-14 * mag(b) {
            push(bisect(c, a, b), &mut roots);
        }
    }
    let last = *points.last().unwrap();
    if eval(c, last).abs() <= 1e-14 * mag(last) {
        push(last, &mut roots);
    }
    roots
}

/// `{x : p(x) ≥ 0}`.
pub fn nonneg_set(c: &[f64]) -> IntervalSet {
    let t = trimmed(c);
    if t.len() <= 1 {
        let v = t.first().copied().unwrap_or(0.0);
        return if v >= 0.0 {
            vec![(f64::NEG_INFINITY, f64::INFINITY)]
        } else {
            Vec::new()
        };
    }
    let roots = real_roots(t);
    if roots.is_empty() {
        return if eval(t, 0.0) >= 0.0 {
            vec![(f64::NEG_INFINITY, f64::INFINITY)]
        } else {
            Vec::new()
        };
    }
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend(&roots);
    edges.push(f64::INFINITY);
    let mut out: IntervalSet = Vec::new();
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let probe = match (a.is_finite(), b.is_finite()) {
            (false, true) => b - 1.0 - b.abs(),
            (true, false) => a + 1.0 + a.abs(),
            _ => 0.5 * (a + b),
        };
        let (lo, hi) = if eval(t, probe) >= 0.0 { (a, b) } else { continue };
        push_merged(&mut out, lo, hi);
    }
    // Isolated roots (touching points) belong to the set too.
    for r in roots {
        if !out.iter().any(|&(a, b)| a <= r && r <= b) {
            out.push((r, r));
        }
    }
    out.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut merged: IntervalSet = Vec::new();
    for (a, b) in out {
        push_merged(&mut merged, a, b);
    }
    merged
}

fn push_merged(out: &mut IntervalSet, a: f64, b: f64) {
    if let Some(last) = out.last_mut() {
        if a <= last.1 {
            last.1 = last.1.max(b);
            return;
        }
    }
    out.push((a, b));
}

pub fn intersect(x: &IntervalSet, y: &IntervalSet) -> IntervalSet {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < x.len() && j < y.len() {
        let lo = x[i].0.max(y[j].0);
        let hi = x[i].1.min(y[j].1);
        if lo <= hi {
            out.push((lo, hi));
        }
        if x[i].1 < y[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Points covered by at least `p` of the sets.
pub fn at_least(sets: &[IntervalSet], p: usize) -> IntervalSet {
    let mut xs: Vec<f64> = sets
        .iter()
        .flatten()
        .flat_map(|&(a, b)| [a, b])
        .filter(|v| v.is_finite())
        .collect();
    xs.sort_by(|a, b| a.total_cmp(b));
    xs.dedup();
    // Slot 2j+1 is the point xs[j]; slot 2j the open gap before it.
    let slots = 2 * xs.len() + 1;
    let slot_of = |v: f64| -> usize {
        if v == f64::NEG_INFINITY {
            0
        } else if v == f64::INFINITY {
            slots - 1
        } else {
            let j = xs.binary_search_by(|x| x.total_cmp(&v)).expect("endpoint indexed");
            2 * j + 1
        }
    };
    let mut diff = vec![0i64; slots + 1];
    for &(a, b) in sets.iter().flatten() {
        diff[slot_of(a)] += 1;
        diff[slot_of(b) + 1] -= 1;
    }
    let mut out = Vec::new();
    let mut cover = 0i64;
    let mut run_start: Option<usize> = None;
    let value = |s: usize, start: bool| -> f64 {
        if s % 2 == 1 {
            xs[s / 2]
        } else if start {
            if s == 0 {
                f64::NEG_INFINITY
            } else {
                xs[s / 2 - 1]
            }
        } else if s == slots - 1 {
            f64::INFINITY
        } else {
            xs[s / 2]
        }
    };
    for s in 0..slots {
        cover += diff[s];
        let ok = cover >= p as i64;
        match (ok, run_start) {
            (true, None) => run_start = Some(s),
            (false, Some(r)) => {
                out.push((value(r, true), value(s - 1, false)));
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(r) = run_start {
        out.push((value(r, true), value(slots - 1, false)));
    }
    out
}

/// Point of the set closest to `x0`; ties go to the smaller point.
pub fn closest(set: &IntervalSet, x0: f64) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &(a, b) in set {
        let p = x0.clamp(a, b);
        let d = (p - x0).abs();
        if best.is_none_or(|(bd, bp)| d < bd || (d == bd && p < bp)) {
            best = Some((d, p));
        }
    }
    best.map(|b| b.1)
}

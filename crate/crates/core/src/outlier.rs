//! Robust curve fitting helpers: isotonic regression, MAD and rank correlation.

/// Relative tolerance under which two abscissae count as equal.
pub const TIE_TOL: f64 = 1e-9;

fn same_x(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Least-squares fit of `y` that is nonincreasing in `x`.
/// Points with equal `x` share one fitted value.
pub fn isotonic_nonincreasing(x: &[f64], y: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), y.len());
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]).then(i.cmp(&j)));
    // groups of equal x, in ascending x
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in &order {
        match groups.last_mut() {
            Some(g) if same_x(x[g[0]], x[i]) => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    // pool adjacent violators: (sum, count, first group, last group)
    let mut blocks: Vec<(f64, f64, usize, usize)> = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        let s: f64 = g.iter().map(|&i| y[i]).sum();
        blocks.push((s, g.len() as f64, gi, gi));
        while blocks.len() > 1 {
            let n = blocks.len();
            let (prev, cur) = (blocks[n - 2], blocks[n - 1]);
            if prev.0 / prev.1 < cur.0 / cur.1 {
                blocks.truncate(n - 2);
                blocks.push((prev.0 + cur.0, prev.1 + cur.1, prev.2, cur.3));
            } else {
                break;
            }
        }
    }
    let mut fit = vec![0.0; x.len()];
    for (s, c, g0, g1) in blocks {
        for g in &groups[g0..=g1] {
            for &i in g {
                fit[i] = s / c;
            }
        }
    }
    fit
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median absolute deviation from the median (unscaled).
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. NaN when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Piecewise-linear curve through points sorted by ascending x.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub points: Vec<(f64, f64)>,
}

impl Curve {
    /// Collapses equal-x points (which share a fitted value) and sorts by x.
    pub fn from_fit(x: &[f64], fit: &[f64]) -> Self {
        let mut pts: Vec<(f64, f64)> = x.iter().copied().zip(fit.iter().copied()).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut points: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
        for p in pts {
            match points.last() {
                Some(last) if same_x(last.0, p.0) => {}
                _ => points.push(p),
            }
        }
        Curve { points }
    }

    pub fn range(&self) -> Option<(f64, f64)> {
        Some((self.points.first()?.0, self.points.last()?.0))
    }

    /// Linear interpolation, None outside the x range.
    pub fn evaluate(&self, x: f64) -> Option<f64> {
        let (lo, hi) = self.range()?;
        if x < lo || x > hi {
            return None;
        }
        let i = self.points.partition_point(|p| p.0 < x);
        if i < self.points.len() && self.points[i].0 == x {
            return Some(self.points[i].1);
        }
        let (x0, y0) = self.points[i - 1];
        let (x1, y1) = self.points[i];
        Some(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
    }
}

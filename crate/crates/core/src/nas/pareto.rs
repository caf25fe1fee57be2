/// Indices of the non-dominated `(latency, accuracy)` points, ascending.
///
/// A point is dominated when another has latency ≤ and accuracy ≥ with at
/// least one strict. Among exact duplicates only the lowest index survives.
/// Points with a NaN coordinate are never on the frontier.
pub fn pareto_frontier(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len())
        .filter(|&i| !points[i].0.is_nan() && !points[i].1.is_nan())
        .collect();
    // Latency ascending, then accuracy descending, then index.
    order.sort_by(|&a, &b| {
        points[a]
            .0
            .total_cmp(&points[b].0)
            .then(points[b].1.total_cmp(&points[a].1))
            .then(a.cmp(&b))
    });
    let mut best = f64::NEG_INFINITY;
    let mut keep = Vec::new();
    for i in order {
        let acc = points[i].1;
        if acc > best || keep.is_empty() {
            keep.push(i);
            best = acc;
        }
    }
    keep.sort_unstable();
    keep
}

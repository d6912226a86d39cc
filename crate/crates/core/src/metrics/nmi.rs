use std::collections::HashMap;

use crate::error::{Error, Result};

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `2·I(Ω,Υ) / (H(Ω) + H(Υ))`, natural logs.
/// Returns 0 when both partitions are trivial (0/0).
pub fn nmi(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} assignments for {} labels",
            assignments.len(),
            labels.len()
        )));
    }
    if assignments.is_empty() {
        return Ok(0.0);
    }
    let n = assignments.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut by_cluster: HashMap<usize, usize> = HashMap::new();
    let mut by_label: HashMap<usize, usize> = HashMap::new();
    for (&a, &l) in assignments.iter().zip(labels) {
        *joint.entry((a, l)).or_default() += 1;
        *by_cluster.entry(a).or_default() += 1;
        *by_label.entry(l).or_default() += 1;
    }
    // Sum in a fixed order so the value does not depend on hash iteration.
    let mut cells: Vec<_> = joint.into_iter().collect();
    cells.sort_unstable();
    let mutual: f64 = cells
        .into_iter()
        .map(|((a, l), c)| {
            let pj = c as f64 / n;
            let pa = by_cluster[&a] as f64 / n;
            let pl = by_label[&l] as f64 / n;
            pj * (pj / (pa * pl)).ln()
        })
        .sum();
    let mut ca: Vec<usize> = by_cluster.into_values().collect();
    let mut cl: Vec<usize> = by_label.into_values().collect();
    ca.sort_unstable();
    cl.sort_unstable();
    let denom = entropy(ca.into_iter(), n) + entropy(cl.into_iter(), n);
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((2.0 * mutual / denom).clamp(0.0, 1.0))
}

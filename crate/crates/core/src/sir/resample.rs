//! Optimal-threshold downsampling (Fearnhead & Clifford, 2003).
//!
//! Given `N > M` normalized weights, find `c` with `sum_i min(1, w_i / c) = M`.
//! Entries with `w_i >= c` survive with their own weight; the rest are thinned
//! by systematic sampling with stride `c` and each survivor gets weight `c`.
//! Every entry's expected post-resampling weight equals its input weight.

/// Threshold `c` and the number of entries kept whole. `weights` need not be
/// sorted; entries must be nonnegative. Requires more positive entries than `m`.
pub fn optimal_threshold(weights: &[f64], m: usize) -> (f64, usize) {
    let mut sorted: Vec<f64> = weights.iter().copied().filter(|w| *w > 0.0).collect();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    assert!(sorted.len() > m && m >= 1, "threshold needs more than m positive weights");
    // tail[l] = sum of sorted[l..]
    let mut tail = vec![0.0; sorted.len() + 1];
    for i in (0..sorted.len()).rev() {
        tail[i] = tail[i + 1] + sorted[i];
    }
    for kept in 0..m {
        let c = tail[kept] / (m - kept) as f64;
        if sorted[kept] < c {
            return (c, kept);
        }
    }
    // The remainder below the m-th weight vanished in rounding: keep the top
    // m whole and drop the rest.
    (sorted[m - 1], m)
}

/// Downsamples to exactly `m` entries. Returns `(index, weight)` pairs in
/// ascending index order. `u` in `[0, 1)` drives the systematic stage.
///
/// * `m == 1` keeps the heaviest entry (first one on ties).
/// * With at most `m` positive entries all of them are kept; if that is fewer
///   than `m`, the heaviest entries are split into equal-weight copies.
pub fn downsample(weights: &[f64], m: usize, u: f64) -> Vec<(usize, f64)> {
    assert!(m >= 1);
    let positive = weights.iter().filter(|w| **w > 0.0).count();
    assert!(positive >= 1, "no positive weights to resample");
    if m == 1 {
        let mut best = 0;
        for (i, w) in weights.iter().enumerate() {
            if *w > weights[best] {
                best = i;
            }
        }
        return vec![(best, 1.0)];
    }
    if positive <= m {
        let mut out: Vec<(usize, f64)> = weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, w)| (i, *w))
            .collect();
        while out.len() < m {
            let (pos, _) = out
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (p, e)| if e.1 > acc.1 { (p, e.1) } else { acc });
            out[pos].1 *= 0.5;
            let copy = out[pos];
            out.insert(pos + 1, copy);
        }
        return out;
    }

    let (c, kept) = optimal_threshold(weights, m);
    let to_draw = m - kept;
    // Whole entries are picked by rank, not by `w >= c`: ties at the
    // threshold can leave `c` an ulp above weights that were counted as kept.
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut whole = vec![false; weights.len()];
    for &i in &order[..kept] {
        whole[i] = true;
    }
    let mut out = Vec::with_capacity(m);
    // systematic pass over the light entries in index order
    let mut next = u * c;
    let mut drawn = 0;
    let mut acc = 0.0;
    let mut last_light = None;
    for (i, &w) in weights.iter().enumerate() {
        if whole[i] {
            out.push((i, w));
            continue;
        }
        if w <= 0.0 {
            continue;
        }
        last_light = Some(i);
        acc += w;
        if drawn < to_draw && next < acc {
            out.push((i, c));
            drawn += 1;
            next += c;
        }
    }
    // rounding can leave the final stratum unclaimed
    while drawn < to_draw {
        let i = last_light.expect("light entries exist when draws are pending");
        out.push((i, c));
        drawn += 1;
    }
    debug_assert_eq!(out.len(), m);
    out
}

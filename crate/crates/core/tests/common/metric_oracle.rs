//! Brute-force metric definitions, written independently of the library.

use mn_autodiff::Matrix;

pub fn accuracy(t: &[usize], p: &[usize]) -> f64 {
    t.iter().zip(p).filter(|(a, b)| a == b).count() as f64 / t.len() as f64
}

/// Mean over classes of the harmonic mean of precision and recall.
pub fn macro_f1(t: &[usize], p: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let predicted = p.iter().filter(|&&x| x == c).count() as f64;
        let actual = t.iter().filter(|&&x| x == c).count() as f64;
        let hit = t.iter().zip(p).filter(|(a, b)| **a == c && **b == c).count() as f64;
        let prec = if predicted > 0.0 { hit / predicted } else { 0.0 };
        let rec = if actual > 0.0 { hit / actual } else { 0.0 };
        if prec + rec > 0.0 {
            total += 2.0 * prec * rec / (prec + rec);
        }
    }
    total / k as f64
}

/// Probability that a random positive outscores a random negative, ties
/// counted half, averaged over scorable classes.
pub fn auc(t: &[usize], s: &Matrix, k: usize) -> Option<f64> {
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..k {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..t.len() {
            for j in 0..t.len() {
                if t[i] == c && t[j] != c {
                    pairs += 1.0;
                    let (a, b) = (s.get(i, c), s.get(j, c));
                    if a > b {
                        wins += 1.0;
                    } else if a == b {
                        wins += 0.5;
                    }
                }
            }
        }
        if pairs > 0.0 {
            total += wins / pairs;
            used += 1;
        }
    }
    (used > 0).then(|| total / used as f64)
}

pub fn nmi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let frac = |f: &dyn Fn(usize) -> bool| (0..a.len()).filter(|&i| f(i)).count() as f64 / n;
    let mut mi = 0.0;
    let mut ha = 0.0;
    let mut hb = 0.0;
    for x in 0..ka {
        let px = frac(&|i| a[i] == x);
        if px > 0.0 {
            ha -= px * px.ln();
        }
        for y in 0..kb {
            let py = frac(&|i| b[i] == y);
            let pxy = frac(&|i| a[i] == x && b[i] == y);
            if pxy > 0.0 {
                mi += pxy * (pxy / (px * py)).ln();
            }
        }
    }
    for y in 0..kb {
        let py = frac(&|i| b[i] == y);
        if py > 0.0 {
            hb -= py * py.ln();
        }
    }
    if ha == 0.0 || hb == 0.0 {
        0.0
    } else {
        mi / (ha * hb).sqrt()
    }
}

/// Pair-counting form of the adjusted Rand index.
pub fn ari(a: &[usize], b: &[usize]) -> f64 {
    let (mut both, mut only_a, mut only_b, mut neither) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_a += 1.0,
                (false, true) => only_b += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    let denom = (both + only_a) * (only_a + neither) + (both + only_b) * (only_b + neither);
    if denom == 0.0 {
        1.0
    } else {
        2.0 * (both * neither - only_a * only_b) / denom
    }
}

/// Calls `f` with every vector in `[0, k)^n`.
pub fn for_each_vector(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut v = vec![0usize; n];
    loop {
        f(&v);
        let mut i = 0;
        loop {
            if i == n {
                return;
            }
            v[i] += 1;
            if v[i] < k {
                break;
            }
            v[i] = 0;
            i += 1;
        }
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

/// Compares every library metric with its oracle on all label vectors of
/// length `1..=max_len` over `2..=3` classes (and all partition pairs for the
/// clustering scores). Returns the number of comparisons.
pub fn exhaustive_check(max_len: usize) -> Result<u64, String> {
    use mn_core::eval;
    let mut count = 0u64;
    for k in 2..=3 {
        for n in 1..=max_len {
            let mut failure: Option<String> = None;
            for_each_vector(n, k, |t| {
                if failure.is_some() {
                    return;
                }
                // AUC against tie-heavy and tie-free score patterns
                let tied = Matrix::from_vec(n, k, (0..n * k).map(|x| ((x * 7 + t[x / k] * 3) % 4) as f64 / 4.0).collect()).unwrap();
                let smooth = Matrix::from_vec(n, k, (0..n * k).map(|x| ((x as f64 + 0.5) * 0.618_033_988_7).fract()).collect()).unwrap();
                for s in [&tied, &smooth] {
                    let want = auc(t, s, k);
                    let got = eval::auc(t, s, k).ok();
                    count += 1;
                    match (want, got) {
                        (Some(w), Some(g)) if close(w, g) => {}
                        (None, None) => {}
                        _ => failure = Some(format!("auc t={t:?}: {want:?} vs {got:?}")),
                    }
                }
                for_each_vector(n, k, |p| {
                    if failure.is_some() {
                        return;
                    }
                    let checks = [
                        ("micro_f1", accuracy(t, p), eval::micro_f1(t, p, k).unwrap()),
                        ("macro_f1", macro_f1(t, p, k), eval::macro_f1(t, p, k).unwrap()),
                        ("nmi", nmi(t, p), eval::nmi(t, p).unwrap()),
                        ("ari", ari(t, p), eval::ari(t, p).unwrap()),
                    ];
                    count += checks.len() as u64;
                    for (name, want, got) in checks {
                        if !close(want, got) {
                            failure = Some(format!("{name} t={t:?} p={p:?}: oracle {want} library {got}"));
                        }
                    }
                });
            });
            if let Some(f) = failure {
                return Err(f);
            }
        }
    }
    Ok(count)
}

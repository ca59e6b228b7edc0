//! Standardization and simple detectors on wafer-ordered score sequences.

const MIN_STD: f64 = 1e-12;
const MIN_SPIKE_LEN: usize = 5;

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Column-wise z-scores of a row-major matrix (rows are wafers) using the
/// population standard deviation. Constant columns map to zero.
pub fn standardize(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if rows.is_empty() {
        return Vec::new();
    }
    let cols = rows[0].len();
    let mut out = vec![vec![0.0; cols]; rows.len()];
    for j in 0..cols {
        let (mean, std) = mean_std(rows.iter().map(|r| r[j]));
        if std < MIN_STD {
            continue;
        }
        for (i, r) in rows.iter().enumerate() {
            out[i][j] = (r[j] - mean) / std;
        }
    }
    out
}

/// As [`standardize`], but each row is scored against the trailing `window`
/// rows ending at (and including) itself.
pub fn standardize_rolling(rows: &[Vec<f64>], window: usize) -> Vec<Vec<f64>> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(rows.len());
    for i in 0..rows.len() {
        let lo = (i + 1).saturating_sub(window);
        let block = &rows[lo..=i];
        let cols = rows[i].len();
        let mut z = vec![0.0; cols];
        for (j, zj) in z.iter_mut().enumerate() {
            let (mean, std) = mean_std(block.iter().map(|r| r[j]));
            if std >= MIN_STD {
                *zj = (rows[i][j] - mean) / std;
            }
        }
        out.push(z);
    }
    out
}

fn zscores(values: &[f64]) -> Vec<f64> {
    let (mean, std) = mean_std(values.iter().copied());
    if std < MIN_STD {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

/// Indices whose z-score exceeds `z_threshold` while both neighbours stay
/// below half of it. Sequences shorter than five yield nothing.
pub fn detect_spikes(scores: &[f64], z_threshold: f64) -> Vec<usize> {
    if scores.len() < MIN_SPIKE_LEN {
        return Vec::new();
    }
    let z = zscores(scores);
    let half = z_threshold / 2.0;
    (0..z.len())
        .filter(|&i| {
            z[i] > z_threshold
                && (i == 0 || z[i - 1] < half)
                && (i + 1 == z.len() || z[i + 1] < half)
        })
        .collect()
}

fn sample_var(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Index of the first wafer after each detected level shift.
///
/// For every split `i` with `window` points on each side the statistic
/// `|mean(after) - mean(before)| / sqrt((var_b + var_a) / 2)` is computed;
/// splits above `z_threshold` are accepted greedily by decreasing statistic,
/// suppressing any other split within `window` of an accepted one.
pub fn detect_changepoints(scores: &[f64], window: usize, z_threshold: f64) -> Vec<usize> {
    if window < 2 || scores.len() < 2 * window {
        return Vec::new();
    }
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    for i in window..=scores.len() - window {
        let before = &scores[i - window..i];
        let after = &scores[i..i + window];
        let mb = before.iter().sum::<f64>() / window as f64;
        let ma = after.iter().sum::<f64>() / window as f64;
        let pooled = ((sample_var(before) + sample_var(after)) / 2.0).sqrt();
        let stat = if pooled > MIN_STD {
            (ma - mb).abs() / pooled
        } else if (ma - mb).abs() > MIN_STD {
            f64::INFINITY
        } else {
            0.0
        };
        if stat > z_threshold {
            candidates.push((i, stat));
        }
    }
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut accepted: Vec<usize> = Vec::new();
    for (i, _) in candidates {
        if accepted.iter().all(|&a| a.abs_diff(i) >= window) {
            accepted.push(i);
        }
    }
    accepted.sort_unstable();
    accepted
}

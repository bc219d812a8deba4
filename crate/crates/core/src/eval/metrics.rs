use serde::{Deserialize, Serialize};

/// Mean and sample standard deviation over questions. `mean` is `None` for an
/// empty set, `sd` is `None` with fewer than two values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MetricSummary { mean: None, sd: None };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = (n >= 2).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        MetricSummary { mean: Some(mean), sd }
    }
}

/// 1 when the best answer (at 1-based `rank`) is in the top `k`.
pub fn precision_hit(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0
    } else {
        0.0
    }
}

/// `1 / log2(1 + rank)` when the best answer is in the top `k`, else 0.
pub fn dcg_hit(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / ((1 + rank) as f64).log2()
    } else {
        0.0
    }
}

pub fn precision_at_k(ranks: &[usize], k: usize) -> MetricSummary {
    let v: Vec<f64> = ranks.iter().map(|&r| precision_hit(r, k)).collect();
    MetricSummary::of(&v)
}

pub fn dcg_at_k(ranks: &[usize], k: usize) -> MetricSummary {
    let v: Vec<f64> = ranks.iter().map(|&r| dcg_hit(r, k)).collect();
    MetricSummary::of(&v)
}

/// 1-based position of `target` in a ranked id list.
pub fn rank_of(ranked: &[u64], target: u64) -> Option<usize> {
    ranked.iter().position(|&id| id == target).map(|p| p + 1)
}

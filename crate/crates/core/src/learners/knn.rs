//! Brute-force k-nearest-neighbour regression (Euclidean, ties by row order).

use nalgebra::DMatrix;

use super::ModelParams;

pub(super) fn fit(x: &DMatrix<f64>, y: &[f64], k: usize) -> ModelParams {
    let rows = (0..x.nrows())
        .map(|i| x.row(i).iter().copied().collect())
        .collect();
    ModelParams::Knn {
        x: rows,
        y: y.to_vec(),
        k,
    }
}

pub(super) fn predict(train: &[Vec<f64>], y: &[f64], k: usize, x: &DMatrix<f64>) -> Vec<f64> {
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(train.len());
    let mut q = vec![0.0; x.ncols()];
    (0..x.nrows())
        .map(|i| {
            for (j, v) in q.iter_mut().enumerate() {
                *v = x[(i, j)];
            }
            dist.clear();
            dist.extend(train.iter().enumerate().map(|(r, row)| {
                let d: f64 = row.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, r)
            }));
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < dist.len() {
                dist.select_nth_unstable_by(k - 1, cmp);
            }
            dist[..k].iter().map(|&(_, r)| y[r]).sum::<f64>() / k as f64
        })
        .collect()
}

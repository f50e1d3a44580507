//! Brute-force k-nearest-neighbor regression on raster features.
//!
//! Features are stored as `f32` and scanned with a partial-distance early
//! exit: a record is abandoned as soon as its running squared distance
//! exceeds the current k-th best. Dimensions are visited in a fixed,
//! data-independent order (gripper height first, then raster cells from the
//! center outward) so that informative dimensions come first and distances do
//! not depend on which records are in the set.

use crate::collector::DatasetRecord;
use crate::error::{Error, Result};
use crate::geometry::DeltaPose;

use super::{circular_mean, model_target, PredictionModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weighting {
    Uniform,
    InverseDistance,
}

impl Weighting {
    pub fn name(&self) -> &'static str {
        match self {
            Weighting::Uniform => "uniform",
            Weighting::InverseDistance => "inverse-distance",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "uniform" => Some(Weighting::Uniform),
            "inverse-distance" | "distance" => Some(Weighting::InverseDistance),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnnModel {
    k: usize,
    weighting: Weighting,
    dim: usize,
    /// `order[j]` is the original index of stored dimension `j`.
    order: Vec<usize>,
    /// Row-major, permuted by `order`.
    data: Vec<f32>,
    labels: Vec<DeltaPose>,
}

const CHUNK: usize = 64;
const LANES: usize = 8;

/// Scan order for a feature vector of length `dim`. When `dim` has the
/// `2 W^2 + 1` raster layout the gripper height comes first and cells follow
/// by distance from the raster center, alternating views; otherwise identity.
pub(crate) fn scan_order(dim: usize) -> Vec<usize> {
    let w = (((dim.saturating_sub(1)) / 2) as f64).sqrt().round() as usize;
    if dim < 3 || 2 * w * w + 1 != dim {
        return (0..dim).collect();
    }
    let n2 = w * w;
    let c = (w as f64 - 1.0) / 2.0;
    let mut cells: Vec<(u64, usize, usize)> = Vec::with_capacity(2 * n2);
    for cell in 0..n2 {
        let (r, col) = ((cell / w) as f64, (cell % w) as f64);
        // Four times the squared radius is an integer, so the key is exact.
        let key = (4.0 * ((r - c).powi(2) + (col - c).powi(2))) as u64;
        for view in 0..2 {
            cells.push((key, cell, view * n2 + cell));
        }
    }
    cells.sort_unstable();
    let mut order = Vec::with_capacity(dim);
    order.push(2 * n2);
    order.extend(cells.into_iter().map(|(_, _, idx)| idx));
    order
}

impl KnnModel {
    pub fn new(features: &[Vec<f64>], labels: Vec<DeltaPose>, k: usize, weighting: Weighting) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Fit("k-NN needs at least one record".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::Fit(format!("{} feature rows for {} labels", features.len(), labels.len())));
        }
        if k == 0 || k > features.len() {
            return Err(Error::Fit(format!("k = {k} must be in 1..={}", features.len())));
        }
        let dim = features[0].len();
        let mut model = KnnModel { k, weighting, dim, order: scan_order(dim), data: Vec::new(), labels: Vec::new() };
        model.extend(features, labels)?;
        Ok(model)
    }

    /// Adds records. Existing records keep their indices.
    pub fn extend(&mut self, features: &[Vec<f64>], labels: Vec<DeltaPose>) -> Result<()> {
        if features.len() != labels.len() {
            return Err(Error::Fit(format!("{} feature rows for {} labels", features.len(), labels.len())));
        }
        self.data.reserve(features.len() * self.dim);
        for f in features {
            if f.len() != self.dim {
                return Err(Error::FeatureMismatch { expected: self.dim, actual: f.len() });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Fit("non-finite feature".into()));
            }
            self.data.extend(self.order.iter().map(|&j| f[j] as f32));
        }
        self.labels.extend(labels);
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    pub fn feature_len(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[DeltaPose] {
        &self.labels
    }

    /// Stored features of record `i` in the original dimension order.
    pub fn row(&self, i: usize) -> Vec<f32> {
        let stored = &self.data[i * self.dim..(i + 1) * self.dim];
        let mut out = vec![0.0f32; self.dim];
        for (j, &o) in self.order.iter().enumerate() {
            out[o] = stored[j];
        }
        out
    }

    pub(crate) fn from_raw(
        k: usize,
        weighting: Weighting,
        dim: usize,
        rows: Vec<f32>,
        labels: Vec<DeltaPose>,
    ) -> Result<Self> {
        if labels.is_empty() || k == 0 || k > labels.len() || rows.len() != dim * labels.len() {
            return Err(Error::Fit("inconsistent k-NN payload".into()));
        }
        let order = scan_order(dim);
        let mut data = Vec::with_capacity(rows.len());
        for r in rows.chunks_exact(dim) {
            data.extend(order.iter().map(|&j| r[j]));
        }
        Ok(KnnModel { k, weighting, dim, order, data, labels })
    }

    /// Indices and squared distances of the k nearest records, nearest
    /// first; equal distances keep the lower index first.
    pub fn neighbors(&self, f: &[f64]) -> Result<Vec<(usize, f32)>> {
        if f.len() != self.dim {
            return Err(Error::FeatureMismatch { expected: self.dim, actual: f.len() });
        }
        let q: Vec<f32> = self.order.iter().map(|&j| f[j] as f32).collect();
        let mut best: Vec<(usize, f32)> = Vec::with_capacity(self.k + 1);
        for (i, row) in self.data.chunks_exact(self.dim).enumerate() {
            let bound = if best.len() == self.k { best[self.k - 1].1 } else { f32::INFINITY };
            let Some(d) = partial_distance(&q, row, bound) else { continue };
            if best.len() < self.k || d < bound {
                let pos = best.partition_point(|&(_, b)| b <= d);
                best.insert(pos, (i, d));
                best.truncate(self.k);
            }
        }
        Ok(best)
    }

    pub fn predict(&self, f: &[f64]) -> Result<DeltaPose> {
        let nn = self.neighbors(f)?;
        let weighted: Vec<(DeltaPose, f64)> = match self.weighting {
            Weighting::Uniform => nn.iter().map(|&(i, _)| (self.labels[i], 1.0)).collect(),
            Weighting::InverseDistance => {
                if nn.iter().any(|&(_, d)| d == 0.0) {
                    nn.iter().filter(|&&(_, d)| d == 0.0).map(|&(i, _)| (self.labels[i], 1.0)).collect()
                } else {
                    nn.iter().map(|&(i, d)| (self.labels[i], 1.0 / (d as f64).sqrt())).collect()
                }
            }
        };
        let total: f64 = weighted.iter().map(|(_, w)| w).sum();
        let mean = |get: fn(&DeltaPose) -> f64| weighted.iter().map(|(l, w)| w * get(l)).sum::<f64>() / total;
        let dpsi = circular_mean(weighted.iter().map(|(l, w)| (l.dpsi(), *w)));
        Ok(DeltaPose::raw(mean(DeltaPose::dx), mean(DeltaPose::dy), mean(DeltaPose::dz), dpsi))
    }
}

/// Squared distance, or `None` once it provably exceeds `bound`.
fn partial_distance(q: &[f32], row: &[f32], bound: f32) -> Option<f32> {
    let mut acc = 0.0f32;
    let mut qc = q.chunks(CHUNK);
    for rc in row.chunks(CHUNK) {
        let qc = qc.next().expect("equal lengths");
        let mut lanes = [0.0f32; LANES];
        let mut qi = qc.chunks_exact(LANES);
        let mut ri = rc.chunks_exact(LANES);
        for (a, b) in (&mut qi).zip(&mut ri) {
            for l in 0..LANES {
                let d = a[l] - b[l];
                lanes[l] += d * d;
            }
        }
        for (a, b) in qi.remainder().iter().zip(ri.remainder()) {
            let d = a - b;
            lanes[0] += d * d;
        }
        acc += lanes.iter().sum::<f32>();
        if acc > bound {
            return None;
        }
    }
    Some(acc)
}

/// Fits a k-NN regressor on dataset records.
pub fn fit_knn(records: &[DatasetRecord], k: usize, weighting: Weighting) -> Result<PredictionModel> {
    if records.is_empty() {
        return Err(Error::Fit("empty dataset".into()));
    }
    let features: Vec<Vec<f64>> = records.iter().map(|r| r.observation.features()).collect();
    let labels = records.iter().map(model_target).collect();
    Ok(PredictionModel::Knn(KnnModel::new(&features, labels, k, weighting)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dp(dx: f64) -> DeltaPose {
        DeltaPose::new(dx, 0.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn single_record_predicts_its_label() {
        let l = DeltaPose::new(0.01, -0.02, 0.003, 0.2).unwrap();
        let m = KnnModel::new(&[vec![1.0, 2.0]], vec![l], 1, Weighting::Uniform).unwrap();
        for q in [[0.0, 0.0], [5.0, -3.0]] {
            assert_eq!(m.predict(&q).unwrap(), l);
        }
    }

    #[test]
    fn exact_match_and_lowest_index_tie_break() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let labels = vec![dp(0.1), dp(0.2), dp(0.3)];
        let m = KnnModel::new(&rows, labels, 1, Weighting::InverseDistance).unwrap();
        assert_eq!(m.predict(&[1.0, 0.0]).unwrap(), dp(0.1));
        assert_eq!(m.predict(&[0.0, 1.0]).unwrap(), dp(0.2));
        // Equidistant from all three.
        assert_eq!(m.neighbors(&[0.0, 0.0]).unwrap()[0].0, 0);
    }

    #[test]
    fn inverse_distance_weights() {
        let rows = vec![vec![1.0], vec![3.0]];
        let labels = vec![dp(1.0), dp(0.0)];
        let m = KnnModel::new(&rows, labels, 2, Weighting::InverseDistance).unwrap();
        let p = m.predict(&[0.0]).unwrap();
        let oracle = (1.0 * (1.0 / 1.0) + 0.0 * (1.0 / 3.0)) / (1.0 / 1.0 + 1.0 / 3.0);
        assert!((p.dx() - oracle).abs() < 1e-12);
        assert!((p.dx() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn yaw_uses_circular_mean() {
        let rows = vec![vec![0.0], vec![0.0]];
        let a = 179f64.to_radians();
        let labels = vec![DeltaPose::new(0.0, 0.0, 0.0, a).unwrap(), DeltaPose::new(0.0, 0.0, 0.0, -a).unwrap()];
        let m = KnnModel::new(&rows, labels, 2, Weighting::Uniform).unwrap();
        let p = m.predict(&[0.0]).unwrap().dpsi();
        assert!((p.abs() - std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_fits() {
        assert!(KnnModel::new(&[], vec![], 1, Weighting::Uniform).is_err());
        assert!(KnnModel::new(&[vec![0.0]], vec![dp(0.0)], 2, Weighting::Uniform).is_err());
        let m = KnnModel::new(&[vec![0.0]], vec![dp(0.0)], 1, Weighting::Uniform).unwrap();
        assert!(matches!(m.predict(&[0.0, 1.0]), Err(Error::FeatureMismatch { expected: 1, actual: 2 })));
    }

    #[test]
    fn scan_order_is_a_permutation_starting_at_height() {
        for w in [1usize, 2, 5, 32] {
            let dim = 2 * w * w + 1;
            let mut o = scan_order(dim);
            assert_eq!(o[0], dim - 1);
            o.sort_unstable();
            assert_eq!(o, (0..dim).collect::<Vec<_>>());
        }
        assert_eq!(scan_order(4), vec![0, 1, 2, 3]);
    }

    #[test]
    fn early_exit_matches_full_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let dim = 2 * 4 * 4 + 1;
        let rows: Vec<Vec<f64>> = (0..300).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
        let labels: Vec<DeltaPose> = (0..300).map(|i| dp(i as f64 * 1e-3)).collect();
        let m = KnnModel::new(&rows, labels, 5, Weighting::Uniform).unwrap();
        for _ in 0..50 {
            let q: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            let got: Vec<usize> = m.neighbors(&q).unwrap().into_iter().map(|(i, _)| i).collect();
            // Oracle: exhaustive f64 distances, stable sort.
            let mut all: Vec<(f64, usize)> = rows
                .iter()
                .enumerate()
                .map(|(i, r)| (r.iter().zip(&q).map(|(a, b)| (*a as f32 as f64 - *b as f32 as f64).powi(2)).sum(), i))
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let want: Vec<usize> = all[..5].iter().map(|p| p.1).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn record_order_does_not_matter() {
        use rand::seq::SliceRandom;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..9).map(|_| rng.random::<f64>()).collect()).collect();
        let labels: Vec<DeltaPose> =
            (0..200).map(|_| DeltaPose::new(rng.random(), rng.random(), rng.random(), rng.random()).unwrap()).collect();
        let mut idx: Vec<usize> = (0..200).collect();
        idx.shuffle(&mut rng);
        let a = KnnModel::new(&rows, labels.clone(), 4, Weighting::InverseDistance).unwrap();
        let rows_b: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
        let labels_b = idx.iter().map(|&i| labels[i]).collect();
        let b = KnnModel::new(&rows_b, labels_b, 4, Weighting::InverseDistance).unwrap();
        for _ in 0..50 {
            let q: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
            assert_eq!(a.predict(&q).unwrap(), b.predict(&q).unwrap());
        }
    }
}

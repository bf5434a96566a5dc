//! Pseudo-SSL tokenizer: k-means cluster labels over frame features.

use crate::error::{Error, Result};
use crate::frames::FrameMatrix;
use crate::tokenizer::kmeans::KMeans;

#[derive(Debug, Clone, PartialEq)]
pub struct SslModel {
    pub clusters: usize,
    pub dim: usize,
    pub seed: u64,
    pub kmeans: KMeans,
}

pub fn ssl_train(data: &FrameMatrix, clusters: usize, seed: u64) -> Result<SslModel> {
    if data.n_frames() < clusters {
        return Err(Error::Tokenize(format!(
            "ssl training needs at least {clusters} frames, got {}",
            data.n_frames()
        )));
    }
    let points: Vec<f64> = data.rows().flatten().copied().collect();
    Ok(SslModel {
        clusters,
        dim: data.dim(),
        seed,
        kmeans: KMeans::fit(&points, data.dim(), clusters, seed),
    })
}

pub fn ssl_encode(model: &SslModel, frames: &FrameMatrix) -> Result<Vec<u32>> {
    if frames.dim() != model.dim {
        return Err(Error::DimMismatch {
            expected: model.dim,
            got: frames.dim(),
        });
    }
    Ok(frames
        .rows()
        .map(|row| model.kmeans.assign(row) as u32)
        .collect())
}

/// SSL labels have no inverse; the nearest meaningful reconstruction is the
/// centroid itself.
pub fn ssl_decode(model: &SslModel, labels: &[u32]) -> Result<FrameMatrix> {
    let mut m = FrameMatrix::new(model.dim);
    for &l in labels {
        if l as usize >= model.clusters {
            return Err(Error::LocalIdOutOfRange {
                tokenizer: "ssl".into(),
                local: l,
                size: model.clusters as u32,
            });
        }
        m.push_row(model.kmeans.centroid(l as usize));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> FrameMatrix {
        FrameMatrix::from_rows(
            1,
            vec![0.0, 0.1, -0.1, 10.0, 10.1, 9.9, 20.0, 20.2, 19.8],
        )
        .unwrap()
    }

    #[test]
    fn centroid_maps_to_its_own_label() {
        let m = ssl_train(&data(), 3, 1).unwrap();
        for j in 0..3 {
            let f = FrameMatrix::from_rows(1, m.kmeans.centroid(j).to_vec()).unwrap();
            assert_eq!(ssl_encode(&m, &f).unwrap(), vec![j as u32]);
        }
    }

    #[test]
    fn one_label_per_frame() {
        let m = ssl_train(&data(), 3, 1).unwrap();
        assert_eq!(ssl_encode(&m, &data()).unwrap().len(), 9);
    }

    #[test]
    fn equidistant_tie_takes_lowest_cluster() {
        let mut m = ssl_train(&data(), 3, 1).unwrap();
        m.kmeans.centroids = vec![0.0, 2.0, 4.0];
        let f = FrameMatrix::from_rows(1, vec![1.0]).unwrap();
        assert_eq!(ssl_encode(&m, &f).unwrap(), vec![0]);
        let g = FrameMatrix::from_rows(1, vec![3.0]).unwrap();
        assert_eq!(ssl_encode(&m, &g).unwrap(), vec![1]);
    }

    #[test]
    fn dim_mismatch_rejected() {
        let m = ssl_train(&data(), 3, 1).unwrap();
        let bad = FrameMatrix::from_rows(2, vec![0.0, 0.0]).unwrap();
        assert!(ssl_encode(&m, &bad).is_err());
    }
}

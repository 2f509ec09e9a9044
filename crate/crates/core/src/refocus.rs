//! Attention refocusing: turn the user box into an object-centred mask by
//! clustering the object token's attention and keeping the clusters that sit
//! in the box.

use std::collections::{BTreeSet, VecDeque};

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{BinaryMask, Resolution};
use crate::error::{Error, Result};

const KMEANS_MAX_ITERS: usize = 50;

/// A partition of the attention grid into `k` labelled cells.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLabels {
    pub labels: Array2<usize>,
    pub k: usize,
}

impl ClusterLabels {
    pub fn shape(&self) -> (usize, usize) {
        self.labels.dim()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// One-dimensional k-means on cell intensity. Farthest-point initialisation
/// from a seeded first centre, Lloyd iterations, and labels renumbered so that
/// label 0 is the dimmest centre.
pub fn cluster_map(attn_row: ArrayView2<'_, f64>, k: usize, rng_seed: u64) -> Result<ClusterLabels> {
    let values: Vec<f64> = attn_row.iter().copied().collect();
    let n = values.len();
    if k < 2 {
        return Err(Error::Config("cluster count must be at least 2".into()));
    }
    if k > n {
        return Err(Error::Config(format!("{k} clusters requested for {n} cells")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut centers = vec![values[rng.random_range(0..n)]];
    while centers.len() < k {
        let (idx, _) = values
            .iter()
            .enumerate()
            .map(|(i, v)| (i, nearest(&centers, *v).1))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        centers.push(values[idx]);
    }

    let mut assign: Vec<usize> = values.iter().map(|v| nearest(&centers, *v).0).collect();
    for _ in 0..KMEANS_MAX_ITERS {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (v, &a) in values.iter().zip(&assign) {
            sums[a] += v;
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c] / counts[c] as f64;
            }
        }
        let next: Vec<usize> = values.iter().map(|v| nearest(&centers, *v).0).collect();
        if next == assign {
            break;
        }
        assign = next;
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centers[a].total_cmp(&centers[b]).then(a.cmp(&b)));
    let mut rank = vec![0; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    let labels = Array2::from_shape_vec(
        attn_row.dim(),
        assign.iter().map(|&a| rank[a]).collect(),
    )
    .expect("same cell count");
    Ok(ClusterLabels { labels, k })
}

fn nearest(centers: &[f64], v: f64) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| (i, (v - c).abs()))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Splits every cluster into its 4-connected pieces and renumbers them in
/// raster order of first appearance.
pub fn split_connected(labels: &ClusterLabels) -> ClusterLabels {
    let (h, w) = labels.shape();
    let mut out = Array2::from_elem((h, w), usize::MAX);
    let mut next = 0;
    for i in 0..h {
        for j in 0..w {
            if out[[i, j]] != usize::MAX {
                continue;
            }
            let l = labels.labels[[i, j]];
            let mut queue = VecDeque::from([(i, j)]);
            out[[i, j]] = next;
            while let Some((a, b)) = queue.pop_front() {
                for (x, y) in neighbors4(a, b, h, w) {
                    if out[[x, y]] == usize::MAX && labels.labels[[x, y]] == l {
                        out[[x, y]] = next;
                        queue.push_back((x, y));
                    }
                }
            }
            next += 1;
        }
    }
    ClusterLabels { labels: out, k: next }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub clusters: BTreeSet<usize>,
    /// Cluster with the largest attention mass inside the box.
    pub argmax: Option<usize>,
    /// Set when the mask was empty and nothing could be selected.
    pub empty_mask: bool,
}

/// Selects the cluster holding the most attention mass inside the box, plus
/// every cluster whose in-box cell fraction exceeds `h1`.
pub fn select_object_area(
    labels: &ClusterLabels,
    attn_row: ArrayView2<'_, f64>,
    mask_gamma: &BinaryMask,
    h1: f64,
) -> Result<Selection> {
    if labels.shape() != attn_row.dim() || labels.shape() != mask_gamma.shape() {
        return Err(Error::Shape(format!(
            "labels {:?}, attention {:?}, mask {:?}",
            labels.shape(),
            attn_row.dim(),
            mask_gamma.shape()
        )));
    }
    if mask_gamma.is_empty() {
        return Ok(Selection {
            clusters: BTreeSet::new(),
            argmax: None,
            empty_mask: true,
        });
    }
    let mut mass = vec![0.0; labels.k];
    let mut inside = vec![0usize; labels.k];
    let mut size = vec![0usize; labels.k];
    for ((idx, &l), &m) in labels.labels.indexed_iter().zip(mask_gamma.data().iter()) {
        size[l] += 1;
        if m == 1 {
            inside[l] += 1;
            mass[l] += attn_row[idx];
        }
    }
    let argmax = (0..labels.k)
        .filter(|&g| size[g] > 0)
        .fold(None::<usize>, |best, g| match best {
            Some(b) if mass[b] >= mass[g] => Some(b),
            _ => Some(g),
        });
    let mut clusters: BTreeSet<usize> = (0..labels.k)
        .filter(|&g| size[g] > 0 && inside[g] as f64 / size[g] as f64 > h1)
        .collect();
    clusters.extend(argmax);
    Ok(Selection {
        clusters,
        argmax,
        empty_mask: false,
    })
}

/// Indicator of the selected clusters.
pub fn refocus_mask(
    selected: &BTreeSet<usize>,
    labels: &ClusterLabels,
    resolution: Resolution,
) -> Result<BinaryMask> {
    if let Some(&bad) = selected.iter().find(|&&g| g >= labels.k) {
        return Err(Error::Contract(format!("cluster {bad} not among {} labels", labels.k)));
    }
    Ok(BinaryMask::from_fn(labels.shape(), resolution, |i, j| {
        selected.contains(&labels.labels[[i, j]])
    }))
}

pub(crate) fn neighbors4(i: usize, j: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let cand = [
        (i.wrapping_sub(1), j),
        (i + 1, j),
        (i, j.wrapping_sub(1)),
        (i, j + 1),
    ];
    cand.into_iter().filter(move |&(a, b)| a < h && b < w)
}

pub(crate) struct Component {
    pub cells: Vec<(usize, usize)>,
    pub touches_border: bool,
}

/// 4-connected components of the cells where `value` holds.
pub(crate) fn components(mask: &BinaryMask, value: bool) -> Vec<Component> {
    let (h, w) = mask.shape();
    let mut seen = Array2::from_elem((h, w), false);
    let mut out = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if seen[[i, j]] || mask.get(i, j) != value {
                continue;
            }
            seen[[i, j]] = true;
            let mut queue = VecDeque::from([(i, j)]);
            let mut comp = Component {
                cells: Vec::new(),
                touches_border: false,
            };
            while let Some((a, b)) = queue.pop_front() {
                comp.cells.push((a, b));
                if a == 0 || b == 0 || a + 1 == h || b + 1 == w {
                    comp.touches_border = true;
                }
                for (x, y) in neighbors4(a, b, h, w) {
                    if !seen[[x, y]] && mask.get(x, y) == value {
                        seen[[x, y]] = true;
                        queue.push_back((x, y));
                    }
                }
            }
            out.push(comp);
        }
    }
    out
}

/// Removes foreground components smaller than `min_component_size` cells,
/// then fills background components that do not touch the border.
pub fn morph_cleanup(mask: &BinaryMask, min_component_size: usize) -> BinaryMask {
    let mut out = mask.clone();
    for comp in components(mask, true) {
        if comp.cells.len() < min_component_size {
            for (i, j) in comp.cells {
                out.set(i, j, false);
            }
        }
    }
    for comp in components(&out.clone(), false) {
        if !comp.touches_border {
            for (i, j) in comp.cells {
                out.set(i, j, true);
            }
        }
    }
    out
}

/// Default speck threshold: 1% of the grid, at least one cell.
pub fn default_min_component_size(shape: (usize, usize)) -> usize {
    ((shape.0 * shape.1) / 100).max(1)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefocusOutcome {
    pub labels: ClusterLabels,
    pub selection: Selection,
    pub raw_mask: BinaryMask,
    pub mask: BinaryMask,
}

pub struct RefocusParams {
    pub k: usize,
    pub h1: f64,
    pub min_component_size: Option<usize>,
    pub split_connected: bool,
    pub seed: u64,
}

/// Cluster, select, rasterise and clean up in one go.
pub fn refocus(
    attn_row: ArrayView2<'_, f64>,
    mask_gamma: &BinaryMask,
    params: &RefocusParams,
) -> Result<RefocusOutcome> {
    let mut labels = cluster_map(attn_row, params.k, params.seed)?;
    if params.split_connected {
        labels = split_connected(&labels);
    }
    let selection = select_object_area(&labels, attn_row, mask_gamma, params.h1)?;
    let raw_mask = refocus_mask(&selection.clusters, &labels, mask_gamma.resolution())?;
    let min = params
        .min_component_size
        .unwrap_or_else(|| default_min_component_size(raw_mask.shape()));
    let mask = morph_cleanup(&raw_mask, min);
    Ok(RefocusOutcome {
        labels,
        selection,
        raw_mask,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::LayerId;
    use ndarray::array;

    const LAYER: Resolution = Resolution::Layer(LayerId(1));

    fn m(data: Array2<u8>) -> BinaryMask {
        BinaryMask::new(data, LAYER).unwrap()
    }

    #[test]
    fn plateaus_become_clusters() {
        let grid = Array2::from_shape_fn((6, 6), |(i, _)| i as f64 * 10.0);
        let c = cluster_map(grid.view(), 6, 3).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(c.labels[[i, j]], i);
            }
        }
    }

    #[test]
    fn two_levels_threshold_at_midpoint() {
        let grid = array![
            [0.1, 0.1, 0.9, 0.9],
            [0.1, 0.12, 0.88, 0.9],
            [0.1, 0.1, 0.1, 0.9],
            [0.08, 0.1, 0.1, 0.1]
        ];
        let c = cluster_map(grid.view(), 2, 11).unwrap();
        for (idx, &v) in grid.indexed_iter() {
            assert_eq!(c.labels[idx], (v > 0.5) as usize);
        }
    }

    #[test]
    fn clustering_is_deterministic() {
        let grid = Array2::from_shape_fn((8, 8), |(i, j)| ((i * 7 + j * 13) % 11) as f64);
        assert_eq!(cluster_map(grid.view(), 4, 9).unwrap(), cluster_map(grid.view(), 4, 9).unwrap());
    }

    #[test]
    fn too_many_clusters_is_config_error() {
        let grid = Array2::<f64>::zeros((2, 2));
        assert!(matches!(cluster_map(grid.view(), 5, 0), Err(Error::Config(_))));
    }

    #[test]
    fn selection_by_fraction_and_argmax() {
        // Cluster 0: 10 cells, 4 in box (40%). Cluster 1: 10 cells, 3 in box (30%).
        // Cluster 2: 5 cells, all in box with the highest mass.
        let mut labels = Array2::zeros((5, 5));
        let mut box_ = Array2::zeros((5, 5));
        let mut attn = Array2::zeros((5, 5));
        for j in 0..5 {
            labels[[0, j]] = 0;
            labels[[1, j]] = 0;
            labels[[2, j]] = 1;
            labels[[3, j]] = 1;
            labels[[4, j]] = 2;
            box_[[4, j]] = 1;
            attn[[4, j]] = 1.0;
        }
        for j in 0..4 {
            box_[[0, j]] = 1;
        }
        for j in 0..3 {
            box_[[2, j]] = 1;
        }
        let labels = ClusterLabels { labels, k: 3 };
        let sel = select_object_area(&labels, attn.view(), &m(box_), 0.35).unwrap();
        assert_eq!(sel.argmax, Some(2));
        assert_eq!(sel.clusters, BTreeSet::from([0, 2]));
    }

    #[test]
    fn argmax_by_mass_only() {
        let labels = ClusterLabels {
            labels: array![[0, 0], [1, 1]],
            k: 2,
        };
        let attn = array![[0.0, 0.0], [0.5, 0.5]];
        let box_ = m(array![[0, 0], [1, 0]]);
        let sel = select_object_area(&labels, attn.view(), &box_, 0.9).unwrap();
        assert_eq!(sel.clusters, BTreeSet::from([1]));
    }

    #[test]
    fn empty_box_selects_nothing() {
        let labels = ClusterLabels {
            labels: array![[0, 1]],
            k: 2,
        };
        let sel = select_object_area(&labels, array![[1.0, 2.0]].view(), &m(array![[0, 0]]), 0.35).unwrap();
        assert!(sel.empty_mask && sel.clusters.is_empty());
    }

    #[test]
    fn refocus_mask_indicator() {
        let labels = ClusterLabels {
            labels: array![[0, 1, 2], [2, 1, 0]],
            k: 3,
        };
        assert!(refocus_mask(&BTreeSet::new(), &labels, LAYER).unwrap().is_empty());
        assert_eq!(refocus_mask(&BTreeSet::from([0, 1, 2]), &labels, LAYER).unwrap().count(), 6);
        assert_eq!(
            refocus_mask(&BTreeSet::from([0]), &labels, LAYER).unwrap().data(),
            &array![[1, 0, 0], [0, 0, 1]]
        );
        assert!(refocus_mask(&BTreeSet::from([3]), &labels, LAYER).is_err());
    }

    #[test]
    fn ring_fills_to_disk() {
        let ring = m(array![
            [0, 0, 0, 0, 0],
            [0, 1, 1, 1, 0],
            [0, 1, 0, 1, 0],
            [0, 1, 1, 1, 0],
            [0, 0, 0, 0, 0]
        ]);
        let out = morph_cleanup(&ring, 1);
        assert_eq!(out.count(), 9);
        assert!(out.get(2, 2));
    }

    #[test]
    fn isolated_pixel_removed() {
        let mut d = Array2::zeros((5, 5));
        d[[2, 2]] = 1;
        assert!(morph_cleanup(&m(d), 4).is_empty());
    }

    #[test]
    fn split_connected_separates_islands() {
        let labels = ClusterLabels {
            labels: array![[0, 1, 0], [0, 1, 0]],
            k: 2,
        };
        let s = split_connected(&labels);
        assert_eq!(s.k, 3);
        assert_ne!(s.labels[[0, 0]], s.labels[[0, 2]]);
    }

    #[test]
    fn default_min_size_is_one_percent() {
        assert_eq!(default_min_component_size((32, 32)), 10);
        assert_eq!(default_min_component_size((4, 4)), 1);
    }
}

//! Spectral clustering of activity vectors: cosine KNN graph, normalized
//! Laplacian, eigengap choice of k, row-normalized embedding and k-means.

use nalgebra::DMatrix;

use crate::activity::ActivityVector;
use crate::error::{input, Error, Result};
use crate::kmeans::{kmeans_restarts, ClusterModel, DEFAULT_RESTARTS};

impl AsRef<[f64]> for ActivityVector {
    fn as_ref(&self) -> &[f64] {
        &self.weights
    }
}

/// Cosine of the angle between two vectors with positive norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return input("vectors differ in dimension");
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(na > 0.0 && nb > 0.0) || !na.is_finite() || !nb.is_finite() {
        return input("cosine similarity of a zero-norm vector");
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Symmetric weighted graph stored as sorted adjacency lists.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    adjacency: Vec<Vec<(usize, f64)>>,
    degrees: Vec<f64>,
}

impl SimilarityGraph {
    /// Builds a graph from undirected weighted edges. Repeated edges keep the
    /// last weight; self-loops and non-positive weights are ignored.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut maps = vec![std::collections::BTreeMap::new(); n];
        for (i, j, w) in edges {
            assert!(i < n && j < n, "edge ({i}, {j}) out of range for {n} nodes");
            if i == j || !(w > 0.0) {
                continue;
            }
            maps[i].insert(j, w);
            maps[j].insert(i, w);
        }
        let adjacency: Vec<Vec<(usize, f64)>> =
            maps.into_iter().map(|m| m.into_iter().collect()).collect();
        let degrees = adjacency
            .iter()
            .map(|row| row.iter().map(|(_, w)| w).sum())
            .collect();
        Self { adjacency, degrees }
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i]
            .binary_search_by_key(&j, |&(n, _)| n)
            .map(|pos| self.adjacency[i][pos].1)
            .unwrap_or(0.0)
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Component label per node, numbered by lowest member.
    pub fn components(&self) -> Vec<usize> {
        let n = self.n();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = next;
            while let Some(v) = stack.pop() {
                for &(u, _) in &self.adjacency[v] {
                    if label[u] == usize::MAX {
                        label[u] = next;
                        stack.push(u);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn isolated(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.adjacency[i].is_empty()).collect()
    }

    /// Induced subgraph on the nodes with at least one edge, together with
    /// the original index of every kept node.
    pub fn without_isolated(&self) -> (SimilarityGraph, Vec<usize>) {
        let kept: Vec<usize> = (0..self.n()).filter(|&i| !self.adjacency[i].is_empty()).collect();
        let mut new_index = vec![usize::MAX; self.n()];
        for (new, &old) in kept.iter().enumerate() {
            new_index[old] = new;
        }
        let edges = kept.iter().flat_map(|&i| {
            self.adjacency[i]
                .iter()
                .filter(move |&&(j, _)| j > i)
                .map(|&(j, w)| (new_index[i], new_index[j], w))
                .collect::<Vec<_>>()
        });
        (SimilarityGraph::from_edges(kept.len(), edges), kept)
    }
}

/// Cosine K-nearest-neighbour graph. Each node links to its `k` most similar
/// other nodes (ties to the lower index); the graph is the union of those
/// choices. Zero-similarity pairs never become edges.
pub fn knn_graph<V: AsRef<[f64]>>(vectors: &[V], k: usize) -> Result<SimilarityGraph> {
    let n = vectors.len();
    if k == 0 {
        return input("neighbour count must be at least 1");
    }
    if k >= n {
        return input(format!("neighbour count {k} must be below the node count {n}"));
    }
    let mut edges = Vec::new();
    let mut sims: Vec<(usize, f64)> = Vec::with_capacity(n);
    for i in 0..n {
        sims.clear();
        for j in 0..n {
            if j != i {
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                sims.push((j, cosine_similarity(vectors[a].as_ref(), vectors[b].as_ref())?));
            }
        }
        sims.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        for &(j, s) in sims.iter().take(k) {
            if s > 0.0 {
                edges.push((i, j, s));
            }
        }
    }
    Ok(SimilarityGraph::from_edges(n, edges))
}

/// `L_n = I - D^{-1/2} A D^{-1/2}`.
pub fn normalized_laplacian(g: &SimilarityGraph) -> Result<DMatrix<f64>> {
    let n = g.n();
    if let Some(i) = g.degrees.iter().position(|&d| !(d > 0.0)) {
        return input(format!("node {i} has zero degree"));
    }
    let inv_sqrt: Vec<f64> = g.degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut l = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for &(j, w) in &g.adjacency[i] {
            l[(i, j)] = -w * inv_sqrt[i] * inv_sqrt[j];
        }
    }
    Ok(l)
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: DMatrix<f64>,
}

/// Dense symmetric eigendecomposition with ascending eigenvalues.
pub fn decompose(matrix: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    if !matrix.is_square() || matrix.nrows() == 0 {
        return input("decomposition needs a non-empty square matrix");
    }
    let eig = matrix.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let n = matrix.nrows();
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SpectralDecomposition {
        eigenvalues: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        eigenvectors: vectors,
    })
}

/// `argmax_i (λ_{i+1} - λ_i)` over `i ∈ 1..=k_max` (1-based), ties to the
/// smallest `i`. `k_max` is clamped to the number of available gaps.
pub fn eigengap_k(eigenvalues: &[f64], k_max: usize) -> Result<usize> {
    if eigenvalues.len() < 2 {
        return input("eigengap needs at least two eigenvalues");
    }
    if k_max == 0 {
        return input("k_max must be at least 1");
    }
    if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
        return input("eigenvalues must be in ascending order");
    }
    let upper = k_max.min(eigenvalues.len() - 1);
    let mut best = 1;
    let mut best_gap = f64::NEG_INFINITY;
    for i in 1..=upper {
        let gap = eigenvalues[i] - eigenvalues[i - 1];
        if gap > best_gap {
            best_gap = gap;
            best = i;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub rows: Vec<Vec<f64>>,
    /// Rows that were all zero before normalisation.
    pub zero_rows: Vec<usize>,
}

/// Rows of the first `k` eigenvectors. Each eigenvector is flipped so its
/// largest-magnitude entry is positive; rows are optionally scaled to unit
/// length.
pub fn spectral_embed(
    decomp: &SpectralDecomposition,
    k: usize,
    normalize_rows: bool,
) -> Result<Embedding> {
    let n = decomp.eigenvectors.nrows();
    if k == 0 || k > n {
        return input(format!("embedding dimension {k} outside 1..={n}"));
    }
    let mut cols = Vec::with_capacity(k);
    for c in 0..k {
        let col = decomp.eigenvectors.column(c);
        let mut pivot = 0;
        for i in 1..n {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        cols.push(col.iter().map(|v| sign * v).collect::<Vec<f64>>());
    }
    let mut rows: Vec<Vec<f64>> = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    let mut zero_rows = Vec::new();
    for (i, row) in rows.iter_mut().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            zero_rows.push(i);
            row.iter_mut().for_each(|v| *v = 0.0);
        } else if normalize_rows {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(Embedding { rows, zero_rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    /// Neighbour count of the similarity graph.
    pub knn: usize,
    /// Largest k the eigengap search may return.
    pub k_max: usize,
    pub seed: u64,
    pub normalize_rows: bool,
    pub restarts: usize,
    /// Node cap for the dense eigensolver.
    pub max_nodes: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            knn: 10,
            k_max: 30,
            seed: 0,
            normalize_rows: true,
            restarts: DEFAULT_RESTARTS,
            max_nodes: 20_000,
        }
    }
}

/// Outcome of the full area-clustering pipeline.
#[derive(Debug, Clone)]
pub struct AreaClustering {
    pub model: ClusterModel,
    /// Cell id of every clustered node, aligned with `model.assignment`.
    pub cells: Vec<usize>,
    /// Cells left out because no neighbour had positive similarity.
    pub isolated_cells: Vec<usize>,
    /// Ascending spectrum of the normalized Laplacian.
    pub eigenvalues: Vec<f64>,
    /// Neighbour count actually used (clamped below the node count).
    pub knn_used: usize,
    pub params: ClusterParams,
}

impl AreaClustering {
    pub fn k(&self) -> usize {
        self.model.k
    }

    /// `(cell id, label)` pairs in cell id order.
    pub fn labels_by_cell(&self) -> Vec<(usize, u32)> {
        let mut v: Vec<(usize, u32)> = self
            .cells
            .iter()
            .copied()
            .zip(self.model.assignment.iter().copied())
            .collect();
        v.sort_unstable();
        v
    }
}

/// KNN graph → normalized Laplacian → eigengap k → embedding → k-means.
pub fn cluster_areas(vectors: &[ActivityVector], params: &ClusterParams) -> Result<AreaClustering> {
    if vectors.len() < 2 {
        return Err(Error::Degenerate(format!(
            "insufficient distinct profiles: {} profiled cell(s), need at least 2",
            vectors.len()
        )));
    }
    if vectors.len() > params.max_nodes {
        return input(format!(
            "{} profiled cells exceed the dense eigensolver cap of {}",
            vectors.len(),
            params.max_nodes
        ));
    }
    let knn_used = params.knn.min(vectors.len() - 1);
    let graph = knn_graph(vectors, knn_used)?;
    let (graph, kept) = graph.without_isolated();
    let kept_set: std::collections::BTreeSet<usize> = kept.iter().copied().collect();
    let isolated_cells: Vec<usize> = (0..vectors.len())
        .filter(|i| !kept_set.contains(i))
        .map(|i| vectors[i].cell_id)
        .collect();
    if graph.n() < 2 {
        return Err(Error::Degenerate(
            "insufficient distinct profiles: no two cells share an activity".into(),
        ));
    }
    let laplacian = normalized_laplacian(&graph)?;
    let decomp = decompose(&laplacian)?;
    let k = eigengap_k(&decomp.eigenvalues, params.k_max)?;
    let embedding = spectral_embed(&decomp, k, params.normalize_rows)?;
    let model = kmeans_restarts(&embedding.rows, k, params.seed, params.restarts)?;
    Ok(AreaClustering {
        model,
        cells: kept.iter().map(|&i| vectors[i].cell_id).collect(),
        isolated_cells,
        eigenvalues: decomp.eigenvalues,
        knn_used,
        params: params.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activity::N_CATEGORIES;

    fn av(cell_id: usize, w: &[f64]) -> ActivityVector {
        let mut weights = [0.0; N_CATEGORIES];
        weights[..w.len()].copy_from_slice(w);
        ActivityVector { cell_id, weights }
    }

    #[test]
    fn cosine_examples() {
        let a = [0.3, 0.0, 1.2];
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn knn_identical_vectors() {
        let v = vec![vec![1.0, 2.0]; 3];
        let g = knn_graph(&v, 1).unwrap();
        // node 0 picks 1, node 1 picks 0, node 2 picks 0: union has 2 edges
        assert_eq!(g.n_edges(), 2);
        assert!((g.weight(0, 1) - 1.0).abs() < 1e-15);
        assert!((g.weight(0, 2) - 1.0).abs() < 1e-15);
        let g = knn_graph(&v, 2).unwrap();
        assert_eq!(g.n_edges(), 3);
        for i in 0..3 {
            assert_eq!(g.weight(i, i), 0.0);
            for j in 0..3 {
                if i != j {
                    assert!((g.weight(i, j) - 1.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn knn_orthogonal_groups_disconnect() {
        let mut v = vec![vec![1.0, 0.0]; 3];
        v.extend(vec![vec![0.0, 1.0]; 3]);
        let g = knn_graph(&v, 2).unwrap();
        let comp = g.components();
        assert_eq!(comp, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn knn_rejects_large_k() {
        let v = vec![vec![1.0]; 3];
        assert!(knn_graph(&v, 3).is_err());
    }

    #[test]
    fn laplacian_of_single_edge_ignores_weight() {
        for w in [0.1, 1.0, 7.5] {
            let g = SimilarityGraph::from_edges(2, [(0, 1, w)]);
            let l = normalized_laplacian(&g).unwrap();
            let want = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
            assert!((l - want).abs().max() < 1e-15);
        }
    }

    #[test]
    fn laplacian_rejects_isolated_node() {
        let g = SimilarityGraph::from_edges(3, [(0, 1, 1.0)]);
        assert!(normalized_laplacian(&g).is_err());
    }

    #[test]
    fn path_graph_spectrum() {
        let g = SimilarityGraph::from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)]);
        let d = decompose(&normalized_laplacian(&g).unwrap()).unwrap();
        for (got, want) in d.eigenvalues.iter().zip([0.0, 1.0, 2.0]) {
            assert!((got - want).abs() < 1e-12, "{:?}", d.eigenvalues);
        }
    }

    #[test]
    fn null_vector_is_sqrt_degree() {
        let g = SimilarityGraph::from_edges(4, [(0, 1, 0.5), (1, 2, 2.0), (2, 3, 1.0), (0, 3, 0.3)]);
        let d = decompose(&normalized_laplacian(&g).unwrap()).unwrap();
        let v = d.eigenvectors.column(0);
        let s: Vec<f64> = g.degrees().iter().map(|x| x.sqrt()).collect();
        let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        let dot: f64 = v.iter().zip(&s).map(|(a, b)| a * b / norm).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-10);
        assert!(d.eigenvalues[0].abs() < 1e-12);
    }

    #[test]
    fn eigengap_examples() {
        assert_eq!(eigengap_k(&[0.0, 0.01, 0.02, 0.9, 0.95], 4).unwrap(), 3);
        assert_eq!(eigengap_k(&[0.0, 0.0, 0.0, 0.7, 0.8], 4).unwrap(), 3);
        // ties go to the smaller index
        assert_eq!(eigengap_k(&[0.0, 1.0, 2.0], 5).unwrap(), 1);
        assert!(eigengap_k(&[0.0], 3).is_err());
        assert!(eigengap_k(&[0.5, 0.1], 1).is_err());
    }

    #[test]
    fn eigengap_counts_components() {
        let edges = [(0, 1, 1.0), (1, 2, 1.0), (3, 4, 1.0), (5, 6, 0.5), (6, 7, 0.5), (5, 7, 0.5)];
        let g = SimilarityGraph::from_edges(8, edges);
        let d = decompose(&normalized_laplacian(&g).unwrap()).unwrap();
        assert_eq!(eigengap_k(&d.eigenvalues, 7).unwrap(), 3);
    }

    #[test]
    fn embed_k1_rows_equal() {
        let g = SimilarityGraph::from_edges(4, [(0, 1, 0.5), (1, 2, 2.0), (2, 3, 1.0)]);
        let d = decompose(&normalized_laplacian(&g).unwrap()).unwrap();
        let e = spectral_embed(&d, 1, true).unwrap();
        for r in &e.rows {
            assert!((r[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn embed_two_components_two_points() {
        let g = SimilarityGraph::from_edges(5, [(0, 1, 1.0), (1, 2, 0.4), (3, 4, 0.9)]);
        let d = decompose(&normalized_laplacian(&g).unwrap()).unwrap();
        let e = spectral_embed(&d, 2, true).unwrap();
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9);
        assert!(close(&e.rows[0], &e.rows[1]) && close(&e.rows[1], &e.rows[2]));
        assert!(close(&e.rows[3], &e.rows[4]));
        assert!(!close(&e.rows[0], &e.rows[3]));
        assert!(spectral_embed(&d, 6, true).is_err());
    }

    #[test]
    fn four_orthogonal_groups() {
        let mut vectors = Vec::new();
        for g in 0..4 {
            for _ in 0..5 {
                let mut w = [0.0; 4];
                w[g] = 1.0;
                vectors.push(av(vectors.len(), &w));
            }
        }
        let r = cluster_areas(&vectors, &ClusterParams::default()).unwrap();
        assert_eq!(r.k(), 4);
        assert_eq!(r.knn_used, 10);
        for g in 0..4 {
            let labels: Vec<u32> = r.model.assignment[g * 5..g * 5 + 5].to_vec();
            assert!(labels.iter().all(|&l| l == labels[0]));
        }
        let mut firsts: Vec<u32> = (0..4).map(|g| r.model.assignment[g * 5]).collect();
        firsts.dedup();
        assert_eq!(firsts, vec![1, 2, 3, 4]);
    }

    #[test]
    fn too_few_profiles_is_degenerate() {
        let v = vec![av(0, &[1.0])];
        assert!(matches!(cluster_areas(&v, &ClusterParams::default()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn isolated_profiles_are_set_aside() {
        let v = vec![av(0, &[1.0]), av(1, &[1.0, 0.1]), av(5, &[0.0, 0.0, 2.0])];
        let r = cluster_areas(&v, &ClusterParams::default()).unwrap();
        assert_eq!(r.isolated_cells, vec![5]);
        assert_eq!(r.cells, vec![0, 1]);
    }
}

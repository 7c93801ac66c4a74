//! Hartigan-Wong k-means with seeded multi-start.
//!
//! Each restart initializes centroids from sampled data rows, assigns every
//! point to its nearest centroid, then sweeps the single-point transfer
//! rule: point i leaves cluster r (size n_r) for cluster s (size n_s) when
//!
//! ```text
//! n_r * d(i, c_r)^2 / (n_r - 1)  >  n_s * d(i, c_s)^2 / (n_s + 1)
//! ```
//!
//! recomputing both affected centroids after every accepted move. The two
//! sides are exactly the WSS change caused by the move, so accepted moves
//! strictly lower the objective. A sweep with no accepted move (or whose
//! improvement falls within `tolerance`) ends the pass.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::preprocess::FeatureMatrix;

/// How the initial centroids are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    /// k distinct data rows, uniformly without replacement. The default.
    #[default]
    UniformDistinct,
    /// Squared-distance weighted seeding (k-means++).
    PlusPlus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    /// Upper bound on full sweeps per pass.
    pub max_iterations: usize,
    /// Independent restarts; the lowest-WSS pass wins.
    pub n_configurations: usize,
    pub seed: u64,
    /// A sweep improving total WSS by no more than this ends the pass.
    pub tolerance: f64,
    pub init: InitMethod,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> KMeansConfig {
        KMeansConfig {
            k,
            max_iterations: 10,
            n_configurations: 25,
            seed,
            tolerance: 0.0,
            init: InitMethod::UniformDistinct,
        }
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn with_n_configurations(mut self, n_configurations: usize) -> Self {
        self.n_configurations = n_configurations;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_init(mut self, init: InitMethod) -> Self {
        self.init = init;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self, n_rows: usize) -> Result<()> {
        if self.k < 1 {
            return Err(Error::BadK { k: self.k, min: 1 });
        }
        if self.k > n_rows {
            return Err(Error::TooFewDistinctRows {
                k: self.k,
                distinct: n_rows,
            });
        }
        if self.max_iterations < 1 || self.n_configurations < 1 {
            return Err(Error::invalid_input(
                "kmeans config",
                "max_iterations and n_configurations must be at least 1",
            ));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::invalid_input(
                "kmeans config",
                "tolerance must be non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClusteringResult {
    /// Cluster index in [0, k) per row, in row order.
    pub assignments: Vec<usize>,
    /// k centroids in the space the matrix was clustered in.
    pub centroids: Vec<Vec<f64>>,
    pub per_cluster_wss: Vec<f64>,
    pub total_wss: f64,
    /// Sweeps used by the winning pass.
    pub iterations_used: usize,
    /// Whether the winning pass reached a fixed point within its sweeps.
    pub converged: bool,
    /// Derived sub-seed of the restart that produced this result.
    pub seed_used: u64,
    pub restarts_discarded_for_empty_clusters: usize,
}

impl ClusteringResult {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }
}

/// Total WSS after the initial assignment and after each accepted move of
/// one restart, recomputed from scratch. Test instrumentation.
#[derive(Debug, Clone)]
pub struct PassTrace {
    pub sub_seed: u64,
    pub wss_after_each_step: Vec<f64>,
    pub total_wss: f64,
}

pub fn euclidean_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(sq_dist(x, y).sqrt())
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

/// Derive an independent sub-seed from a master seed, a stream tag, and a
/// counter. SplitMix64 finalizer; any (stream, index) pair yields the same
/// value regardless of evaluation order, so derived work can run in any
/// schedule without changing results.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0xA076_1D64_78BD_642F))
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream tags for [`derive_seed`].
pub mod seed_stream {
    /// Restart passes inside one `hartigan_wong` call.
    pub const KMEANS_PASS: u64 = 1;
    /// Reference dataset draws for the gap statistic.
    pub const GAP_REFERENCE: u64 = 2;
    /// Clustering of one gap reference dataset.
    pub const GAP_KMEANS: u64 = 3;
}

/// Sample k distinct rows uniformly without replacement.
///
/// Duplicate rows count once: the draw is over distinct row values, so the
/// returned centroids are pairwise distinct and every initial cluster owns
/// at least the row it was seeded from.
pub fn init_centroids(matrix: &FeatureMatrix, k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let distinct = distinct_rows(matrix);
    if distinct.len() < k {
        return Err(Error::TooFewDistinctRows {
            k,
            distinct: distinct.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..distinct.len()).collect();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let at = rng.gen_range(0..pool.len());
        chosen.push(distinct[pool.swap_remove(at)].clone());
    }
    Ok(chosen)
}

/// Squared-distance weighted seeding. First centroid uniform over distinct
/// rows, each further one drawn with probability proportional to the squared
/// distance to its nearest chosen centroid.
fn init_centroids_plusplus(matrix: &FeatureMatrix, k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let distinct = distinct_rows(matrix);
    if distinct.len() < k {
        return Err(Error::TooFewDistinctRows {
            k,
            distinct: distinct.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<Vec<f64>> = Vec::with_capacity(k);
    chosen.push(distinct[rng.gen_range(0..distinct.len())].clone());
    let mut weights: Vec<f64> = distinct
        .iter()
        .map(|row| sq_dist(row, &chosen[0]))
        .collect();
    while chosen.len() < k {
        let total: f64 = weights.iter().sum();
        debug_assert!(total > 0.0, "fewer distinct rows than k was ruled out");
        let mut ticket = rng.gen::<f64>() * total;
        let mut pick = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if ticket < *w {
                pick = i;
                break;
            }
            ticket -= w;
        }
        chosen.push(distinct[pick].clone());
        for (w, row) in weights.iter_mut().zip(&distinct) {
            let d = sq_dist(row, chosen.last().unwrap());
            if d < *w {
                *w = d;
            }
        }
    }
    Ok(chosen)
}

fn distinct_rows(matrix: &FeatureMatrix) -> Vec<Vec<f64>> {
    let mut seen: Vec<Vec<f64>> = Vec::new();
    for row in matrix.rows() {
        if !seen.iter().any(|r| r == row) {
            seen.push(row.clone());
        }
    }
    seen
}

/// Nearest centroid by squared distance; ties go to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = sq_dist(point, &centroids[0]);
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(point, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    (best, best_d)
}

struct Pass {
    assignments: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    per_cluster_wss: Vec<f64>,
    total_wss: f64,
    iterations_used: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn run_pass(
    matrix: &FeatureMatrix,
    config: &KMeansConfig,
    sub_seed: u64,
    record_trace: bool,
) -> Result<Pass> {
    let rows = matrix.rows();
    let n = rows.len();
    let k = config.k;

    let mut centroids = match config.init {
        InitMethod::UniformDistinct => init_centroids(matrix, k, sub_seed)?,
        InitMethod::PlusPlus => init_centroids_plusplus(matrix, k, sub_seed)?,
    };

    let mut assignments = Vec::with_capacity(n);
    let mut sizes = vec![0usize; k];
    for row in rows {
        let (j, _) = nearest(row, &centroids);
        assignments.push(j);
        sizes[j] += 1;
    }
    if let Some(index) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyCluster { index });
    }
    recompute_means(rows, &assignments, &mut centroids, &sizes);

    let mut trace = Vec::new();
    if record_trace {
        trace.push(exact_total_wss(rows, &assignments, &centroids));
    }

    let mut iterations_used = 0;
    let mut converged = false;
    for _ in 0..config.max_iterations {
        iterations_used += 1;
        let mut improvement = 0.0;
        let mut moves = 0usize;

        for (i, row) in rows.iter().enumerate() {
            let r = assignments[i];
            // A singleton's centroid is the point itself; moving it would
            // empty the cluster, and its removal gain is zero.
            if sizes[r] == 1 {
                continue;
            }
            let n_r = sizes[r] as f64;
            let removal_gain = n_r * sq_dist(row, &centroids[r]) / (n_r - 1.0);

            let mut best_s = usize::MAX;
            let mut best_cost = f64::INFINITY;
            for s in 0..k {
                if s == r {
                    continue;
                }
                let n_s = sizes[s] as f64;
                let cost = n_s * sq_dist(row, &centroids[s]) / (n_s + 1.0);
                if cost < best_cost {
                    best_cost = cost;
                    best_s = s;
                }
            }

            if best_s != usize::MAX && removal_gain > best_cost {
                // Exact WSS delta of the transfer; must be an improvement.
                let delta = best_cost - removal_gain;
                debug_assert!(delta < 0.0);
                move_point(row, r, best_s, &mut centroids, &mut sizes);
                assignments[i] = best_s;
                improvement += -delta;
                moves += 1;
                if record_trace {
                    trace.push(exact_total_wss(rows, &assignments, &centroids));
                }
            }
        }

        if moves == 0 || improvement <= config.tolerance {
            converged = true;
            break;
        }
    }

    if let Some(index) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyCluster { index });
    }

    // Incremental updates drift by rounding; settle on exact means so the
    // centroid-equals-mean invariant holds to full precision.
    recompute_means(rows, &assignments, &mut centroids, &sizes);
    let per_cluster_wss = per_cluster_wss(rows, &assignments, &centroids, k);
    let total_wss = per_cluster_wss.iter().sum();

    Ok(Pass {
        assignments,
        centroids,
        per_cluster_wss,
        total_wss,
        iterations_used,
        converged,
        trace,
    })
}

fn move_point(
    row: &[f64],
    from: usize,
    to: usize,
    centroids: &mut [Vec<f64>],
    sizes: &mut [usize],
) {
    let n_from = sizes[from] as f64;
    let n_to = sizes[to] as f64;
    for (c, x) in centroids[from].iter_mut().zip(row) {
        *c = (*c * n_from - x) / (n_from - 1.0);
    }
    for (c, x) in centroids[to].iter_mut().zip(row) {
        *c = (*c * n_to + x) / (n_to + 1.0);
    }
    sizes[from] -= 1;
    sizes[to] += 1;
}

fn recompute_means(
    rows: &[Vec<f64>],
    assignments: &[usize],
    centroids: &mut [Vec<f64>],
    sizes: &[usize],
) {
    for c in centroids.iter_mut() {
        c.iter_mut().for_each(|v| *v = 0.0);
    }
    for (row, &j) in rows.iter().zip(assignments) {
        for (c, x) in centroids[j].iter_mut().zip(row) {
            *c += x;
        }
    }
    for (c, &size) in centroids.iter_mut().zip(sizes) {
        let size = size as f64;
        c.iter_mut().for_each(|v| *v /= size);
    }
}

fn per_cluster_wss(
    rows: &[Vec<f64>],
    assignments: &[usize],
    centroids: &[Vec<f64>],
    k: usize,
) -> Vec<f64> {
    let mut wss = vec![0.0; k];
    for (row, &j) in rows.iter().zip(assignments) {
        wss[j] += sq_dist(row, &centroids[j]);
    }
    wss
}

fn exact_total_wss(rows: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    per_cluster_wss(rows, assignments, centroids, centroids.len())
        .iter()
        .sum()
}

/// Run the full multi-start clustering.
///
/// `n_configurations` passes run with sub-seeds derived from the master
/// seed by counter; the pass with the smallest total WSS wins, ties going
/// to the lowest sub-seed. A pass that ends with an empty cluster is
/// discarded, counted, and redrawn with a fresh sub-seed (a bounded number
/// of times); identical input and config give a bit-identical result.
pub fn hartigan_wong(matrix: &FeatureMatrix, config: &KMeansConfig) -> Result<ClusteringResult> {
    Ok(hartigan_wong_impl(matrix, config, false)?.0)
}

/// As [`hartigan_wong`], also returning each completed pass's WSS
/// trajectory for invariant checks.
pub fn hartigan_wong_traced(
    matrix: &FeatureMatrix,
    config: &KMeansConfig,
) -> Result<(ClusteringResult, Vec<PassTrace>)> {
    hartigan_wong_impl(matrix, config, true)
}

/// Redraw budget per restart slot when a pass collapses a cluster.
const MAX_REDRAWS: u64 = 16;

fn hartigan_wong_impl(
    matrix: &FeatureMatrix,
    config: &KMeansConfig,
    record_trace: bool,
) -> Result<(ClusteringResult, Vec<PassTrace>)> {
    config.validate(matrix.n_rows())?;

    let slots = config.n_configurations as u64;
    let mut best: Option<(Pass, u64)> = None;
    let mut traces = Vec::new();
    let mut discarded = 0usize;

    for slot in 0..slots {
        let mut completed = false;
        for attempt in 0..MAX_REDRAWS {
            let sub_seed = derive_seed(config.seed, seed_stream::KMEANS_PASS, slot + attempt * slots);
            match run_pass(matrix, config, sub_seed, record_trace) {
                Ok(pass) => {
                    if record_trace {
                        traces.push(PassTrace {
                            sub_seed,
                            wss_after_each_step: pass.trace.clone(),
                            total_wss: pass.total_wss,
                        });
                    }
                    let better = match &best {
                        None => true,
                        Some((b, b_seed)) => {
                            pass.total_wss < b.total_wss
                                || (pass.total_wss == b.total_wss && sub_seed < *b_seed)
                        }
                    };
                    if better {
                        best = Some((pass, sub_seed));
                    }
                    completed = true;
                    break;
                }
                Err(Error::EmptyCluster { .. }) => discarded += 1,
                Err(other) => return Err(other),
            }
        }
        let _ = completed;
    }

    let Some((pass, winning_seed)) = best else {
        return Err(Error::AllRestartsDiscarded {
            attempts: (slots * MAX_REDRAWS) as usize,
        });
    };

    Ok((
        ClusteringResult {
            assignments: pass.assignments,
            centroids: pass.centroids,
            per_cluster_wss: pass.per_cluster_wss,
            total_wss: pass.total_wss,
            iterations_used: pass.iterations_used,
            converged: pass.converged,
            seed_used: winning_seed,
            restarts_discarded_for_empty_clusters: discarded,
        },
        traces,
    ))
}

/// WSS of an arbitrary assignment against given centroids.
pub fn total_wss(
    matrix: &FeatureMatrix,
    assignments: &[usize],
    centroids: &[Vec<f64>],
) -> Result<f64> {
    let n = matrix.n_rows();
    if assignments.len() != n {
        return Err(Error::DimensionMismatch {
            left: assignments.len(),
            right: n,
        });
    }
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &label in assignments {
        if label >= k {
            return Err(Error::BadLabel { label, k });
        }
        sizes[label] += 1;
    }
    if let Some(index) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyCluster { index });
    }
    for c in centroids {
        if c.len() != matrix.n_features() {
            return Err(Error::DimensionMismatch {
                left: c.len(),
                right: matrix.n_features(),
            });
        }
    }
    Ok(exact_total_wss(matrix.rows(), assignments, centroids))
}

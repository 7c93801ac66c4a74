//! Cluster-count validation: the elbow on the WSS curve, average
//! silhouette width, and the gap statistic with its selection rule.

use chrono::NaiveDate;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kmeans::{
    derive_seed, euclidean_distance, hartigan_wong, seed_stream, KMeansConfig,
};
use crate::preprocess::FeatureMatrix;

/// Inclusive range of cluster counts to examine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct KRange {
    pub min: usize,
    pub max: usize,
}

impl KRange {
    pub fn new(min: usize, max: usize) -> Result<KRange> {
        if min < 1 || min > max {
            return Err(Error::BadKRange { min, max });
        }
        Ok(KRange { min, max })
    }

    pub fn values(&self) -> Vec<usize> {
        (self.min..=self.max).collect()
    }

    pub fn len(&self) -> usize {
        self.max - self.min + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// How the gap curve is turned into a single k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapRule {
    /// Smallest k with Gap(k) >= Gap(k+1) - se(k+1). The default.
    #[default]
    OneStandardError,
    /// Plain argmax of the gap curve.
    Argmax,
}

/// One k recommendation per method. Elbow needs three curve points and
/// silhouette needs k >= 2, so either can be undefined on a narrow range.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Recommended {
    pub elbow: Option<usize>,
    pub silhouette: Option<usize>,
    pub gap: usize,
}

/// Every curve over the examined k range plus the per-method picks.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ValidationReport {
    pub k_values: Vec<usize>,
    pub wss_curve: Vec<f64>,
    /// Average silhouette per k; undefined at k = 1.
    pub silhouette_curve: Vec<Option<f64>>,
    pub gap_curve: Vec<f64>,
    pub gap_se: Vec<f64>,
    pub bootstrap_count: usize,
    pub recommended: Recommended,
    pub seed: u64,
    pub warnings: Vec<String>,
}

/// Options for [`validate`]. The k of the embedded kmeans config is
/// ignored; its seed is the master seed for the whole report.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOptions {
    pub k_range: KRange,
    pub bootstrap_count: usize,
    pub gap_rule: GapRule,
    pub kmeans: KMeansConfig,
}

/// Best-of-restarts total WSS for each k in the range.
pub fn elbow_curve(
    matrix: &FeatureMatrix,
    k_range: KRange,
    kmeans: &KMeansConfig,
) -> Result<Vec<f64>> {
    check_range(k_range, matrix.n_rows())?;
    k_range
        .values()
        .into_iter()
        .map(|k| Ok(hartigan_wong(matrix, &kmeans.clone().with_k(k))?.total_wss))
        .collect()
}

/// Where [`detect_elbow`] landed and whether the curve actually bends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElbowChoice {
    pub k: usize,
    /// False when every second difference is equal (a straight line);
    /// the lowest interior k is returned in that case.
    pub distinct: bool,
}

/// Pick the k maximizing the discrete second difference
/// W(k-1) - 2 W(k) + W(k+1); ties go to the lowest k.
pub fn detect_elbow(k_values: &[usize], wss_curve: &[f64]) -> Result<ElbowChoice> {
    if k_values.len() != wss_curve.len() {
        return Err(Error::DimensionMismatch {
            left: k_values.len(),
            right: wss_curve.len(),
        });
    }
    if k_values.len() < 3 {
        return Err(Error::CurveTooShort {
            got: k_values.len(),
        });
    }
    if k_values.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::invalid_input(
            "elbow detection",
            "k values must be consecutive",
        ));
    }

    let mut best_i = 1;
    let mut best = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 1..k_values.len() - 1 {
        let d2 = wss_curve[i - 1] - 2.0 * wss_curve[i] + wss_curve[i + 1];
        if d2 > best {
            best = d2;
            best_i = i;
        }
        lo = lo.min(d2);
        hi = hi.max(d2);
    }
    let distinct = (hi - lo) > 1e-12 * hi.abs().max(1.0);
    Ok(ElbowChoice {
        k: if distinct { k_values[best_i] } else { k_values[1] },
        distinct,
    })
}

/// Per-point silhouette widths and their average.
///
/// a(i) is the mean distance to the other members of i's cluster and b(i)
/// the smallest mean distance to any other cluster; s(i) = (b - a) /
/// max(a, b). A singleton scores 0 by convention, as does a point whose
/// a and b are both exactly 0 (duplicates split across clusters).
pub fn silhouette_width(matrix: &FeatureMatrix, assignments: &[usize]) -> Result<(Vec<f64>, f64)> {
    let n = matrix.n_rows();
    if assignments.len() != n {
        return Err(Error::DimensionMismatch {
            left: assignments.len(),
            right: n,
        });
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::BadK { k, min: 2 });
    }
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    if let Some(index) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyCluster { index });
    }

    let rows = matrix.rows();
    if rows.iter().all(|r| r == &rows[0]) {
        return Err(Error::IdenticalPoints);
    }

    let mut scores = Vec::with_capacity(n);
    let mut cluster_sums = vec![0.0; k];
    for (i, row) in rows.iter().enumerate() {
        cluster_sums.iter_mut().for_each(|s| *s = 0.0);
        for (other_row, &c) in rows.iter().zip(assignments) {
            cluster_sums[c] += euclidean_distance(row, other_row)?;
        }

        let own = assignments[i];
        if sizes[own] == 1 {
            scores.push(0.0);
            continue;
        }
        let a = cluster_sums[own] / (sizes[own] - 1) as f64;
        let mut b = f64::INFINITY;
        for c in 0..k {
            if c != own {
                b = b.min(cluster_sums[c] / sizes[c] as f64);
            }
        }
        let denom = a.max(b);
        scores.push(if denom == 0.0 { 0.0 } else { (b - a) / denom });
    }

    let average = scores.iter().sum::<f64>() / n as f64;
    Ok((scores, average))
}

/// Gap statistic over the range: Gap(k) is the mean over references of
/// log W_k(reference) minus log W_k(data), with the reference sets drawn
/// uniformly inside the data's per-feature bounding box.
///
/// The spread term is the population standard deviation of the reference
/// log W_k values scaled by sqrt(1 + 1/B). References are clustered with
/// the same restart budget as the data.
pub fn gap_statistic(
    matrix: &FeatureMatrix,
    k_range: KRange,
    bootstrap_count: usize,
    kmeans: &KMeansConfig,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_range(k_range, matrix.n_rows())?;
    let data_wss = elbow_curve(matrix, k_range, kmeans)?;
    gap_from_curve(matrix, k_range, &data_wss, bootstrap_count, kmeans, seed)
}

fn gap_from_curve(
    matrix: &FeatureMatrix,
    k_range: KRange,
    data_wss: &[f64],
    bootstrap_count: usize,
    kmeans: &KMeansConfig,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if bootstrap_count < 1 {
        return Err(Error::invalid_input(
            "gap statistic",
            "bootstrap count must be at least 1",
        ));
    }

    let ks = k_range.values();
    let mut data_log = Vec::with_capacity(ks.len());
    for (&k, &wss) in ks.iter().zip(data_wss) {
        if wss <= 0.0 {
            return Err(Error::ZeroWss { k });
        }
        data_log.push(wss.ln());
    }

    let (lows, widths) = bounding_box(matrix)?;
    let n = matrix.n_rows();
    let d = matrix.n_features();

    // ref_log[b][i]: log W of reference b at ks[i].
    let mut ref_log = vec![vec![0.0; ks.len()]; bootstrap_count];
    for (b, row_log) in ref_log.iter_mut().enumerate() {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, seed_stream::GAP_REFERENCE, b as u64));
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..d)
                    .map(|j| lows[j] + widths[j] * rng.gen::<f64>())
                    .collect()
            })
            .collect();
        let reference = anonymous_matrix(matrix.feature_names().to_vec(), rows);
        let ref_seed = derive_seed(seed, seed_stream::GAP_KMEANS, b as u64);
        for (i, &k) in ks.iter().enumerate() {
            let config = kmeans.clone().with_k(k).with_seed(ref_seed);
            let wss = hartigan_wong(&reference, &config)?.total_wss;
            if wss <= 0.0 {
                return Err(Error::ZeroWss { k });
            }
            row_log[i] = wss.ln();
        }
    }

    let b_count = bootstrap_count as f64;
    let mut gap = Vec::with_capacity(ks.len());
    let mut gap_se = Vec::with_capacity(ks.len());
    for i in 0..ks.len() {
        let mean = ref_log.iter().map(|r| r[i]).sum::<f64>() / b_count;
        gap.push(mean - data_log[i]);
        let var = ref_log
            .iter()
            .map(|r| (r[i] - mean).powi(2))
            .sum::<f64>()
            / b_count;
        gap_se.push(var.sqrt() * (1.0 + 1.0 / b_count).sqrt());
    }
    Ok((gap, gap_se))
}

fn bounding_box(matrix: &FeatureMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = matrix.n_features();
    let mut lows = vec![f64::INFINITY; d];
    let mut highs = vec![f64::NEG_INFINITY; d];
    for row in matrix.rows() {
        for j in 0..d {
            lows[j] = lows[j].min(row[j]);
            highs[j] = highs[j].max(row[j]);
        }
    }
    let mut widths = Vec::with_capacity(d);
    for j in 0..d {
        let width = highs[j] - lows[j];
        if width <= 0.0 {
            return Err(Error::DegenerateBoundingBox {
                name: matrix.feature_names()[j].clone(),
            });
        }
        widths.push(width);
    }
    Ok((lows, widths))
}

/// FeatureMatrix for synthetic rows; dates are placeholders.
fn anonymous_matrix(names: Vec<String>, rows: Vec<Vec<f64>>) -> FeatureMatrix {
    let dates = (0..rows.len())
        .map(|i| NaiveDate::from_num_days_from_ce_opt(1 + i as i32).unwrap())
        .collect();
    FeatureMatrix::new(names, dates, rows).expect("synthetic rows are rectangular")
}

/// Turn the curves into one pick per method.
///
/// Silhouette takes the argmax over k >= 2; gap follows the configured
/// rule (falling back to the largest k when the one-standard-error
/// condition never triggers); elbow delegates to [`detect_elbow`].
/// Methods that cannot run on the given range come back as None with a
/// warning pushed to `warnings`.
pub fn recommend_k(
    k_values: &[usize],
    wss_curve: &[f64],
    silhouette_curve: &[Option<f64>],
    gap_curve: &[f64],
    gap_se: &[f64],
    rule: GapRule,
    warnings: &mut Vec<String>,
) -> Result<Recommended> {
    if k_values.is_empty() {
        return Err(Error::invalid_input("recommend_k", "empty curves"));
    }
    let lens = [
        wss_curve.len(),
        silhouette_curve.len(),
        gap_curve.len(),
        gap_se.len(),
    ];
    if lens.iter().any(|&l| l != k_values.len()) {
        return Err(Error::DimensionMismatch {
            left: k_values.len(),
            right: *lens.iter().find(|&&l| l != k_values.len()).unwrap(),
        });
    }

    let elbow = match detect_elbow(k_values, wss_curve) {
        Ok(choice) => {
            if !choice.distinct {
                warnings.push(
                    "no distinct elbow: all second differences equal; picked the lowest interior k"
                        .to_string(),
                );
            }
            Some(choice.k)
        }
        Err(Error::CurveTooShort { got }) => {
            warnings.push(format!(
                "elbow needs at least 3 k values, got {got}; no elbow recommendation"
            ));
            None
        }
        Err(other) => return Err(other),
    };

    let mut silhouette: Option<usize> = None;
    let mut best = f64::NEG_INFINITY;
    for (&k, s) in k_values.iter().zip(silhouette_curve) {
        if let Some(s) = s {
            if *s > best {
                best = *s;
                silhouette = Some(k);
            }
        }
    }
    if silhouette.is_none() {
        warnings.push("silhouette is undefined below k = 2; no recommendation".to_string());
    }

    let gap = match rule {
        GapRule::OneStandardError => {
            let mut pick = k_values[k_values.len() - 1];
            for i in 0..k_values.len() - 1 {
                if gap_curve[i] >= gap_curve[i + 1] - gap_se[i + 1] {
                    pick = k_values[i];
                    break;
                }
            }
            pick
        }
        GapRule::Argmax => {
            let mut pick = k_values[0];
            let mut best = f64::NEG_INFINITY;
            for (&k, &g) in k_values.iter().zip(gap_curve) {
                if g > best {
                    best = g;
                    pick = k;
                }
            }
            pick
        }
    };

    Ok(Recommended {
        elbow,
        silhouette,
        gap,
    })
}

/// Compute every curve and recommendation over the k range.
///
/// The range is capped at n - 1 so log W stays defined at the top end
/// (an exact fit has W = 0); the cap and any non-monotone stretch of the
/// WSS curve surface as warnings, not errors.
pub fn validate(matrix: &FeatureMatrix, options: &ValidationOptions) -> Result<ValidationReport> {
    let n = matrix.n_rows();
    let mut warnings = Vec::new();

    let mut k_range = options.k_range;
    if k_range.max >= n {
        if k_range.min >= n {
            return Err(Error::BadKRange {
                min: k_range.min,
                max: k_range.max,
            });
        }
        k_range = KRange::new(k_range.min, n - 1)?;
        warnings.push(format!(
            "k range capped at {} (n - 1): an exact fit has zero within-cluster sum of squares",
            n - 1
        ));
    }
    check_range(k_range, n)?;

    let ks = k_range.values();
    let mut wss_curve = Vec::with_capacity(ks.len());
    let mut silhouette_curve = Vec::with_capacity(ks.len());
    for &k in &ks {
        let result = hartigan_wong(matrix, &options.kmeans.clone().with_k(k))?;
        wss_curve.push(result.total_wss);
        if k >= 2 {
            let (_, average) = silhouette_width(matrix, &result.assignments)?;
            silhouette_curve.push(Some(average));
        } else {
            silhouette_curve.push(None);
        }
    }

    for i in 1..wss_curve.len() {
        if wss_curve[i] > wss_curve[i - 1] {
            warnings.push(format!(
                "wss curve increases from k = {} to k = {}; restarts may be too few",
                ks[i - 1],
                ks[i]
            ));
        }
    }

    let (gap_curve, gap_se) = gap_from_curve(
        matrix,
        k_range,
        &wss_curve,
        options.bootstrap_count,
        &options.kmeans,
        options.kmeans.seed,
    )?;

    let recommended = recommend_k(
        &ks,
        &wss_curve,
        &silhouette_curve,
        &gap_curve,
        &gap_se,
        options.gap_rule,
        &mut warnings,
    )?;

    Ok(ValidationReport {
        k_values: ks,
        wss_curve,
        silhouette_curve,
        gap_curve,
        gap_se,
        bootstrap_count: options.bootstrap_count,
        recommended,
        seed: options.kmeans.seed,
        warnings,
    })
}

fn check_range(k_range: KRange, n: usize) -> Result<()> {
    if k_range.min < 1 || k_range.min > k_range.max || k_range.max > n {
        return Err(Error::BadKRange {
            min: k_range.min,
            max: k_range.max,
        });
    }
    Ok(())
}

//! Embedding-space analysis: goal-state centroids, nearest-centroid grounding
//! of command texts, PCA and exact t-SNE projections.

use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::plot::{scatter_chart, ScatterPoint};
use super::HarnessError;
use crate::env::{Observation, NUM_COMMANDS};
use crate::mem::{evaluate_split, mem_distance, sample_distances, CommandSet, MemDataset, MemModel, Split, SplitMetrics, EMBED_DIM};

/// Largest point count accepted by the exact t-SNE.
pub const TSNE_MAX_POINTS: usize = 2000;
pub const TSNE_PERPLEXITY: f64 = 30.0;
const TSNE_ITERATIONS: usize = 1000;
/// Command text made of out-of-vocabulary tokens.
pub const GIBBERISH: &str = "xyzzy qwop";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    Pca,
    Tsne,
}

impl FromStr for ProjectionMethod {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pca" => Ok(Self::Pca),
            "tsne" => Ok(Self::Tsne),
            _ => Err(HarnessError::Config(format!("unknown projection method {s:?}"))),
        }
    }
}

fn encode_all(mem: &MemModel, obs: &[&Observation]) -> Result<Vec<Vec<f64>>, HarnessError> {
    let mut out = Vec::with_capacity(obs.len());
    for chunk in obs.chunks(256) {
        let t = mem.encode_states(chunk)?;
        out.extend(t.data().chunks_exact(EMBED_DIM).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// State embeddings of matched goal observations with their command ids.
/// With `per_command` set, takes that many per command, evenly spaced.
pub fn goal_state_embeddings(
    mem: &MemModel,
    dataset: &MemDataset,
    per_command: Option<usize>,
) -> Result<(Vec<Vec<f64>>, Vec<usize>), HarnessError> {
    let mut picked: Vec<(&Observation, usize)> = Vec::new();
    for c in 0..NUM_COMMANDS {
        let all: Vec<&Observation> = dataset
            .observations
            .iter()
            .filter(|o| o.label == Some(c))
            .map(|o| &o.observation)
            .collect();
        let take = per_command.unwrap_or(all.len()).min(all.len());
        for i in 0..take {
            picked.push((all[i * all.len() / take.max(1)], c));
        }
    }
    let obs: Vec<&Observation> = picked.iter().map(|p| p.0).collect();
    Ok((encode_all(mem, &obs)?, picked.iter().map(|p| p.1).collect()))
}

pub fn centroids(points: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    sums
}

/// Index of and distance to the closest centroid.
pub fn nearest_centroid(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (i, mem_distance(x, c)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, f64::NAN))
}

/// Mean silhouette coefficient with Euclidean distance.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let sizes: Vec<usize> = (0..k).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
    let mut total = 0.0;
    let mut n = 0usize;
    for (i, p) in points.iter().enumerate() {
        let own = labels[i];
        if sizes[own] < 2 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for (j, q) in points.iter().enumerate() {
            if i != j {
                sums[labels[j]] += mem_distance(p, q);
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b).max(1e-300);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Principal axes of a point cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-norm components, largest variance first. Each is signed so that
    /// its largest-magnitude entry is positive.
    pub components: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl Pca {
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x.iter().zip(&self.mean)).map(|(w, (v, m))| w * (v - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (c, &a) in self.components.iter().zip(y) {
            for (xi, ci) in x.iter_mut().zip(c) {
                *xi += a * ci;
            }
        }
        x
    }
}

/// Eigendecomposition of the sample covariance, keeping `k` components.
pub fn pca(points: &[Vec<f64>], k: usize) -> Result<Pca, HarnessError> {
    let n = points.len();
    let dim = points.first().map_or(0, Vec::len);
    if n < 2 || dim == 0 || k == 0 || k > dim {
        return Err(HarnessError::Projection(format!(
            "at least two points and 1 <= k <= dim (n = {n}, dim = {dim}, k = {k})"
        )));
    }
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, dim, |i, j| points[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut components = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let mut c: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let pivot = c.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
        if pivot < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(c);
        variances.push(eig.eigenvalues[i].max(0.0));
    }
    Ok(Pca {
        mean,
        components,
        variances,
    })
}

/// Row of conditional affinities with entropy matching `ln(perplexity)`.
fn affinity_row(d2: &[f64], i: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
    let mut row = vec![0.0; d2.len()];
    for _ in 0..64 {
        let min = d2.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, d)| *d).fold(f64::INFINITY, f64::min);
        let mut sum = 0.0;
        for (j, &d) in d2.iter().enumerate() {
            row[j] = if j == i { 0.0 } else { (-(d - min) * beta).exp() };
            sum += row[j];
        }
        let mut h = 0.0;
        for (j, &d) in d2.iter().enumerate() {
            if j != i {
                row[j] /= sum;
                h += row[j] * (d - min) * beta;
            }
        }
        h += sum.ln();
        if (h - target).abs() < 1e-5 {
            break;
        }
        if h > target {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    row
}

/// Exact (quadratic) t-SNE to two dimensions.
pub fn tsne(points: &[Vec<f64>], perplexity: f64, seed: u64) -> Result<Vec<[f64; 2]>, HarnessError> {
    let n = points.len();
    if n > TSNE_MAX_POINTS {
        return Err(HarnessError::TooManyPoints {
            got: n,
            max: TSNE_MAX_POINTS,
        });
    }
    if n < 3 {
        return Err(HarnessError::Projection("at least three points for t-SNE".into()));
    }
    let perp = perplexity.min((n - 1) as f64 / 3.0).max(1.0);
    let mut p = vec![0.0; n * n];
    let mut d2 = vec![0.0; n];
    for i in 0..n {
        for (j, d) in d2.iter_mut().enumerate() {
            *d = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
        }
        p[i * n..(i + 1) * n].copy_from_slice(&affinity_row(&d2, i, perp));
    }
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen_range(-1e-4..1e-4), rng.gen_range(-1e-4..1e-4)]).collect();
    let mut vel = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let lr = 200.0;
    for iter in 0..TSNE_ITERATIONS {
        let exaggeration = if iter < 250 { 12.0 } else { 1.0 };
        let momentum = if iter < 250 { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[i * n + j];
                let m = (exaggeration * sym[i * n + j] - q / z) * q;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            for d in 0..2 {
                let grad = 4.0 * g[d];
                gains[i][d] = if (grad > 0.0) != (vel[i][d] > 0.0) {
                    gains[i][d] + 0.2
                } else {
                    (gains[i][d] * 0.8).max(0.01)
                };
                vel[i][d] = momentum * vel[i][d] - lr * gains[i][d] * grad;
            }
        }
        let mut mean = [0.0; 2];
        for (yi, vi) in y.iter_mut().zip(&vel) {
            yi[0] += vi[0];
            yi[1] += vi[1];
            mean[0] += yi[0] / n as f64;
            mean[1] += yi[1] / n as f64;
        }
        for yi in &mut y {
            yi[0] -= mean[0];
            yi[1] -= mean[1];
        }
    }
    Ok(y)
}

/// Where one command text lands relative to the goal-state centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandPlacement {
    /// `original` or `alternate`.
    pub set: String,
    pub id: usize,
    pub text: String,
    pub nearest: usize,
    pub nearest_distance: f64,
    pub own_distance: f64,
    pub correct: bool,
    /// Projected coordinates (zero outside projection reports).
    pub coord: [f64; 2],
}

fn place(
    mem: &MemModel,
    set_name: &str,
    set: &CommandSet,
    cents: &[Vec<f64>],
) -> Result<(Vec<CommandPlacement>, Vec<Vec<f64>>), HarnessError> {
    let mut out = Vec::new();
    let mut embs = Vec::new();
    for c in set.commands() {
        let x = mem.encode_command(&c.text)?;
        let (nearest, nearest_distance) = nearest_centroid(&x, cents);
        out.push(CommandPlacement {
            set: set_name.into(),
            id: c.id,
            text: c.text.clone(),
            nearest,
            nearest_distance,
            own_distance: mem_distance(&x, &cents[c.id]),
            correct: nearest == c.id,
            coord: [0.0; 2],
        });
        embs.push(x);
    }
    Ok((out, embs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub method: ProjectionMethod,
    /// Projected goal states, one per entry of `labels`.
    pub coords: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    /// Goal-state centroids in the full embedding space.
    pub centroids: Vec<Vec<f64>>,
    pub commands: Vec<CommandPlacement>,
    /// Mean silhouette of the projected goal states in the full space.
    pub separation: f64,
    pub original_correct: usize,
    pub alternate_correct: usize,
}

/// Projects up to `max_samples` goal states plus every original and
/// alternate command embedding. Centroids use all matched goal states.
pub fn project_embeddings(
    mem: &MemModel,
    dataset: &MemDataset,
    originals: &CommandSet,
    alternates: &CommandSet,
    method: ProjectionMethod,
    max_samples: usize,
    seed: u64,
) -> Result<ProjectionReport, HarnessError> {
    let marked = originals.len() + alternates.len();
    if method == ProjectionMethod::Tsne && max_samples + marked > TSNE_MAX_POINTS {
        return Err(HarnessError::TooManyPoints {
            got: max_samples + marked,
            max: TSNE_MAX_POINTS,
        });
    }
    let (all, all_labels) = goal_state_embeddings(mem, dataset, None)?;
    if all.is_empty() {
        return Err(HarnessError::Projection("matched goal states in the dataset".into()));
    }
    let cents = centroids(&all, &all_labels, NUM_COMMANDS);
    let (points, labels) = goal_state_embeddings(mem, dataset, Some(max_samples / NUM_COMMANDS))?;
    let (mut placed, mut cmd_embs) = place(mem, "original", originals, &cents)?;
    let (alt_placed, alt_embs) = place(mem, "alternate", alternates, &cents)?;
    placed.extend(alt_placed);
    cmd_embs.extend(alt_embs);

    let (coords, cmd_coords) = match method {
        ProjectionMethod::Pca => {
            let fit = pca(&points, 2)?;
            let to2 = |x: &Vec<f64>| {
                let v = fit.transform(x);
                [v[0], v[1]]
            };
            (points.iter().map(to2).collect::<Vec<_>>(), cmd_embs.iter().map(to2).collect::<Vec<_>>())
        }
        ProjectionMethod::Tsne => {
            let mut joint = points.clone();
            joint.extend(cmd_embs.iter().cloned());
            let y = tsne(&joint, TSNE_PERPLEXITY, seed)?;
            (y[..points.len()].to_vec(), y[points.len()..].to_vec())
        }
    };
    for (p, c) in placed.iter_mut().zip(cmd_coords) {
        p.coord = c;
    }
    Ok(ProjectionReport {
        method,
        separation: silhouette(&points, &labels),
        coords,
        labels,
        centroids: cents,
        original_correct: placed.iter().filter(|p| p.set == "original" && p.correct).count(),
        alternate_correct: placed.iter().filter(|p| p.set == "alternate" && p.correct).count(),
        commands: placed,
    })
}

impl ProjectionReport {
    pub fn to_svg(&self, group_names: &[String]) -> String {
        let mut pts: Vec<ScatterPoint> = self
            .coords
            .iter()
            .zip(&self.labels)
            .map(|(c, &l)| ScatterPoint {
                x: c[0],
                y: c[1],
                group: l,
                label: None,
            })
            .collect();
        pts.extend(self.commands.iter().map(|c| ScatterPoint {
            x: c.coord[0],
            y: c.coord[1],
            group: c.id,
            label: Some(format!("{}: {}", if c.set == "original" { "O" } else { "A" }, c.text)),
        }));
        let method = match self.method {
            ProjectionMethod::Pca => "PCA",
            ProjectionMethod::Tsne => "t-SNE",
        };
        scatter_chart(
            &format!("Goal states and commands ({method})"),
            &pts,
            group_names,
            "Dots are goal-state embeddings colored by satisfied command; crosses are command embeddings (O original, A alternate).",
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibberishCheck {
    pub text: String,
    pub centroid_distances: Vec<f64>,
    /// Median distance of held-out matched pairs.
    pub matched_median: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    pub original: Vec<CommandPlacement>,
    pub alternate: Vec<CommandPlacement>,
    pub original_correct: usize,
    pub alternate_correct: usize,
    /// Held-out test-split metrics with each command text set.
    pub original_test: SplitMetrics,
    pub alternate_test: SplitMetrics,
    pub gibberish: GibberishCheck,
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

/// Grounding of an unseen command phrasing, measured against the same
/// goal-state centroids and held-out pairs as the originals.
pub fn generalization_eval(
    mem: &MemModel,
    originals: &CommandSet,
    alternates: &CommandSet,
    dataset: &MemDataset,
    threshold: f64,
) -> Result<GeneralizationReport, HarnessError> {
    let (all, labels) = goal_state_embeddings(mem, dataset, None)?;
    if all.is_empty() {
        return Err(HarnessError::Projection("matched goal states in the dataset".into()));
    }
    let cents = centroids(&all, &labels, NUM_COMMANDS);
    let (original, _) = place(mem, "original", originals, &cents)?;
    let (alternate, _) = place(mem, "alternate", alternates, &cents)?;
    let test = dataset.samples_in(Split::Test);
    let original_test = evaluate_split(mem, dataset, &test, originals, threshold)?;
    let alternate_test = evaluate_split(mem, dataset, &test, alternates, threshold)?;

    let matched: Vec<_> = test.iter().filter(|s| s.y == 0).copied().collect();
    let matched_median = median(sample_distances(mem, dataset, &matched, originals)?);
    let g = mem.encode_command(GIBBERISH)?;
    let centroid_distances: Vec<f64> = cents.iter().map(|c| mem_distance(&g, c)).collect();
    let passed = centroid_distances.iter().all(|d| *d > matched_median);
    Ok(GeneralizationReport {
        original_correct: original.iter().filter(|p| p.correct).count(),
        alternate_correct: alternate.iter().filter(|p| p.correct).count(),
        original,
        alternate,
        original_test,
        alternate_test,
        gibberish: GibberishCheck {
            text: GIBBERISH.into(),
            centroid_distances,
            matched_median,
            passed,
        },
    })
}

//! Object-assignment extraction and scoring: k-means over unit-magnitude
//! phase features, and foreground-only adjusted Rand index.
//!
//! Cluster features are built from the penultimate decoder activation by
//! discarding magnitudes entirely: each of the C complex channels contributes
//! its orientation as a (cos, sin) pair, embedding every foreground pixel in
//! R^{2C}. Background pixels are excluded from clustering and carry label -1.
//!
//! ARI is computed from exact integer pair counts with a single final
//! division, so results are reproducible bit-for-bit against any other exact
//! formulation of the same index.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ctensor::ComplexMap;
use crate::error::{Error, Result};
use crate::real::Real;

/// Per-pixel cluster ids; -1 marks masked background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<i32>,
}

impl AssignmentMap {
    pub fn label(&self, h: usize, w: usize) -> i32 {
        self.labels[h * self.width + w]
    }
}

/// Score report for one image.
#[derive(Debug, Clone, Serialize)]
pub struct AriReport {
    pub ari: f64,
    pub foreground_pixels: usize,
    pub k: usize,
    pub kmeans_inertia: f64,
}

/// Lloyd's algorithm with k-means++ seeding; best of `n_init` restarts by
/// inertia. `points` is row-major `[n, dim]`.
pub fn kmeans(points: &[f64], dim: usize, k: usize, n_init: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, f64)> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::shape("points buffer is not a multiple of dim".to_string()));
    }
    let n = points.len() / dim;
    if n < k {
        return Err(Error::contract(format!("k-means needs at least k={k} points, got {n}")));
    }
    if k == 0 {
        return Err(Error::config("k must be positive"));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..n_init.max(1) {
        let (labels, inertia, _) = lloyd_once(points, dim, k, rng);
        if best.as_ref().is_none_or(|(_, bi)| inertia < *bi) {
            best = Some((labels, inertia));
        }
    }
    Ok(best.expect("n_init >= 1"))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One restart: k-means++ seeding then Lloyd iterations until centroids move
/// less than 1e-6 or 300 iterations. Returns (labels, inertia,
/// per-iteration inertia trace).
fn lloyd_once(points: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64, Vec<f64>) {
    let n = points.len() / dim;
    let pt = |i: usize| &points[i * dim..(i + 1) * dim];

    // k-means++: D^2-weighted seeding.
    let mut centroids = vec![0.0; k * dim];
    let first = rng.gen_range(0..n);
    centroids[..dim].copy_from_slice(pt(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(pt(i), &centroids[..dim])).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let (dst, src) = (c * dim, chosen * dim);
        centroids[dst..dst + dim].copy_from_slice(&points[src..src + dim]);
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(pt(i), &centroids[dst..dst + dim]));
        }
    }

    let mut labels = vec![0usize; n];
    let mut inertia_trace = Vec::new();
    for _iter in 0..300 {
        // Assignment step.
        let mut step_inertia = 0.0;
        for i in 0..n {
            let (mut best_c, mut best_d) = (0usize, f64::INFINITY);
            for c in 0..k {
                let d = sq_dist(pt(i), &centroids[c * dim..(c + 1) * dim]);
                if d < best_d {
                    best_d = d;
                    best_c = c;
                }
            }
            labels[i] = best_c;
            step_inertia += best_d;
        }
        inertia_trace.push(step_inertia);

        // Update step.
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i] * dim..(labels[i] + 1) * dim].iter_mut().zip(pt(i)) {
                *s += v;
            }
        }
        // Empty clusters reseed to the point farthest from its centroid.
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(pt(a), &centroids[labels[a] * dim..(labels[a] + 1) * dim]);
                        let db = sq_dist(pt(b), &centroids[labels[b] * dim..(labels[b] + 1) * dim]);
                        da.partial_cmp(&db).expect("finite distances")
                    })
                    .expect("n >= 1");
                sums[c * dim..(c + 1) * dim].copy_from_slice(pt(far));
                counts[c] = 1;
            }
        }
        let mut movement: f64 = 0.0;
        for c in 0..k {
            for d in 0..dim {
                let new = sums[c * dim + d] / counts[c] as f64;
                movement = movement.max((new - centroids[c * dim + d]).abs());
                centroids[c * dim + d] = new;
            }
        }
        if movement < 1e-6 {
            break;
        }
    }
    // Final assignment against the converged centroids.
    let mut inertia = 0.0;
    for i in 0..n {
        let (mut best_c, mut best_d) = (0usize, f64::INFINITY);
        for c in 0..k {
            let d = sq_dist(pt(i), &centroids[c * dim..(c + 1) * dim]);
            if d < best_d {
                best_d = d;
                best_c = c;
            }
        }
        labels[i] = best_c;
        inertia += best_d;
    }
    inertia_trace.push(inertia);
    (labels, inertia, inertia_trace)
}

/// Unit-magnitude phase embedding of one pixel's channels: per channel
/// (cos phi, sin phi), concatenated to a 2C-vector.
fn phase_features<T: Real>(penult: &ComplexMap<T>, px: usize, out: &mut [f64]) {
    let c = penult.channels();
    for ch in 0..c {
        let re = penult.re()[px * c + ch].to_f64_lossy();
        let im = penult.im()[px * c + ch].to_f64_lossy();
        let mu = (re * re + im * im).sqrt();
        if mu > 0.0 {
            out[2 * ch] = re / mu;
            out[2 * ch + 1] = im / mu;
        } else {
            // Zero-phase convention.
            out[2 * ch] = 1.0;
            out[2 * ch + 1] = 0.0;
        }
    }
}

/// Cluster the foreground pixels of a penultimate feature map into `k`
/// objects. Magnitudes are replaced by 1 before clustering, so assignments
/// depend only on phase orientations; background pixels are excluded and get
/// label -1.
pub fn extract_assignments<T: Real>(
    penult: &ComplexMap<T>,
    background: &[bool],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(AssignmentMap, f64)> {
    let (h, w) = (penult.height(), penult.width());
    if background.len() != h * w {
        return Err(Error::shape(format!("background mask has {} entries for a {h}x{w} map", background.len())));
    }
    let fg: Vec<usize> = (0..h * w).filter(|&px| !background[px]).collect();
    if fg.is_empty() {
        return Err(Error::EmptyEval("no foreground pixels to cluster".to_string()));
    }
    let dim = 2 * penult.channels();
    let mut points = vec![0.0; fg.len() * dim];
    for (row, &px) in fg.iter().enumerate() {
        phase_features(penult, px, &mut points[row * dim..(row + 1) * dim]);
    }
    let k = k.min(fg.len());
    let (labels, inertia) = kmeans(&points, dim, k, 5, rng)?;
    let mut full = vec![-1i32; h * w];
    for (row, &px) in fg.iter().enumerate() {
        full[px] = labels[row] as i32;
    }
    Ok((AssignmentMap { height: h, width: w, labels: full }, inertia))
}

/// Exact-integer adjusted Rand index between two labelings restricted to
/// pixels where `foreground` is true. The degenerate case where the pair
/// denominator vanishes (e.g. both partitions single-class) scores 1.0.
pub fn ari(pred: &[i32], truth: &[u16], foreground: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() || pred.len() != foreground.len() {
        return Err(Error::shape("ari inputs must have identical extent".to_string()));
    }
    let mut a_ids: Vec<i32> = Vec::new();
    let mut b_ids: Vec<u16> = Vec::new();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..pred.len() {
        if !foreground[i] {
            continue;
        }
        let ai = match a_ids.iter().position(|&v| v == pred[i]) {
            Some(p) => p,
            None => {
                a_ids.push(pred[i]);
                a_ids.len() - 1
            }
        };
        let bi = match b_ids.iter().position(|&v| v == truth[i]) {
            Some(p) => p,
            None => {
                b_ids.push(truth[i]);
                b_ids.len() - 1
            }
        };
        pairs.push((ai, bi));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyEval("no foreground pixels to score".to_string()));
    }
    let (ka, kb) = (a_ids.len(), b_ids.len());
    let mut table = vec![0i128; ka * kb];
    for &(ai, bi) in &pairs {
        table[ai * kb + bi] += 1;
    }
    let choose2 = |x: i128| x * (x - 1) / 2;
    let index: i128 = table.iter().map(|&v| choose2(v)).sum();
    let sum_a: i128 = (0..ka).map(|i| choose2((0..kb).map(|j| table[i * kb + j]).sum())).sum();
    let sum_b: i128 = (0..kb).map(|j| choose2((0..ka).map(|i| table[i * kb + j]).sum())).sum();
    let n2 = choose2(pairs.len() as i128);
    let num = 2 * (n2 * index - sum_a * sum_b);
    let den = n2 * (sum_a + sum_b) - 2 * sum_a * sum_b;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// Aggregate over per-image reports.
#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub images: usize,
    pub mean_ari: f64,
    pub std_ari: f64,
    pub mean_inertia: f64,
}

pub fn summarize(reports: &[AriReport]) -> EvalSummary {
    let n = reports.len().max(1) as f64;
    let mean = reports.iter().map(|r| r.ari).sum::<f64>() / n;
    let var = reports.iter().map(|r| (r.ari - mean) * (r.ari - mean)).sum::<f64>() / n;
    EvalSummary {
        images: reports.len(),
        mean_ari: mean,
        std_ari: var.sqrt(),
        mean_inertia: reports.iter().map(|r| r.kmeans_inertia).sum::<f64>() / n,
    }
}

/// Write the per-image CSV (`index,ari,k,inertia`) and the aggregate JSON
/// next to it.
pub fn write_reports(csv_path: &Path, json_path: &Path, reports: &[AriReport]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
    writeln!(f, "index,ari,k,inertia")?;
    for (i, r) in reports.iter().enumerate() {
        writeln!(f, "{i},{:.6},{},{:.6}", r.ari, r.k, r.kmeans_inertia)?;
    }
    let summary = summarize(reports);
    let jf = std::fs::File::create(json_path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(jf), &summary).map_err(|e| Error::format(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
pub(crate) fn lloyd_inertia_trace(points: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    lloyd_once(points, dim, k, rng).2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    /// O(n^2) pair-counting oracle, independent of the contingency-table path.
    pub(crate) fn ari_bruteforce(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut same_same, mut same_diff, mut diff_same, mut diff_diff) = (0i128, 0i128, 0i128, 0i128);
        for i in 0..n {
            for j in i + 1..n {
                match (a[i] == a[j], b[i] == b[j]) {
                    (true, true) => same_same += 1,
                    (true, false) => same_diff += 1,
                    (false, true) => diff_same += 1,
                    (false, false) => diff_diff += 1,
                }
            }
        }
        let (aa, bb, cc, dd) = (same_same, same_diff, diff_same, diff_diff);
        let num = 2 * (aa * dd - bb * cc);
        let den = (aa + bb) * (bb + dd) + (aa + cc) * (cc + dd);
        if den == 0 {
            return 1.0;
        }
        num as f64 / den as f64
    }

    fn ari_full(pred: &[i32], truth: &[u16]) -> f64 {
        ari(pred, truth, &vec![true; pred.len()]).unwrap()
    }

    #[test]
    fn ari_basics() {
        assert_eq!(ari_full(&[0, 0, 1, 1], &[0, 0, 1, 1]), 1.0);
        // Relabel invariance.
        assert_eq!(ari_full(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        // The classic anti-correlated case.
        assert_eq!(ari_full(&[0, 1, 0, 1], &[0, 0, 1, 1]), -0.5);
        // Single-class degenerate convention.
        assert_eq!(ari_full(&[3, 3, 3], &[7, 7, 7]), 1.0);
    }

    #[test]
    fn ari_respects_foreground_mask() {
        let pred = [9, 0, 0, 1, 1];
        let truth = [0, 1, 1, 2, 2];
        let fg = [false, true, true, true, true];
        assert_eq!(ari(&pred, &truth, &fg).unwrap(), 1.0);
        assert!(matches!(
            ari(&pred, &truth, &[false; 5]),
            Err(Error::EmptyEval(_))
        ));
    }

    #[test]
    fn ari_matches_bruteforce_on_random_labelings() {
        let mut rng = rng_for(77, 0);
        for n in [2usize, 3, 5, 8, 13] {
            for _ in 0..200 {
                let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
                let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
                let pred: Vec<i32> = a.iter().map(|&v| v as i32).collect();
                let truth: Vec<u16> = b.iter().map(|&v| v as u16).collect();
                let got = ari_full(&pred, &truth);
                let want = ari_bruteforce(&a, &b);
                assert!(
                    got == want || (got - want).abs() == 0.0,
                    "n={n}: {got} vs {want} for {a:?} {b:?}"
                );
                // Symmetry.
                let sym = ari_full(&b.iter().map(|&v| v as i32).collect::<Vec<_>>(), &a.iter().map(|&v| v as u16).collect::<Vec<_>>());
                assert_eq!(got.to_bits(), sym.to_bits());
            }
        }
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let mut rng = rng_for(5, 0);
        let centers = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for (ci, c) in centers.iter().enumerate() {
            for _ in 0..40 {
                points.push(c[0] + 0.05 * (rng.gen::<f64>() - 0.5));
                points.push(c[1] + 0.05 * (rng.gen::<f64>() - 0.5));
                truth.push(ci);
            }
        }
        let (labels, inertia) = kmeans(&points, 2, 3, 5, &mut rng).unwrap();
        // Perfect recovery up to relabeling.
        let pred: Vec<i32> = labels.iter().map(|&v| v as i32).collect();
        let t: Vec<u16> = truth.iter().map(|&v| v as u16).collect();
        assert_eq!(ari(&pred, &t, &vec![true; t.len()]).unwrap(), 1.0);
        assert!(inertia < 120.0 * 0.05 * 0.05);
    }

    #[test]
    fn kmeans_identical_points() {
        let points = vec![0.3, 0.7].repeat(10);
        let mut rng = rng_for(6, 0);
        let (labels, inertia) = kmeans(&points, 2, 1, 3, &mut rng).unwrap();
        assert_eq!(labels, vec![0; 10]);
        // Zero up to the rounding of the 10-term centroid mean.
        assert!(inertia.abs() < 1e-25, "inertia {inertia}");
        // Fewer distinct points than k still returns k-range labels.
        let (labels, _) = kmeans(&points, 2, 3, 3, &mut rng).unwrap();
        assert!(labels.iter().all(|&l| l < 3));
    }

    #[test]
    fn kmeans_unit_square_two_clusters() {
        // Corners of the unit square with k=2: optimum pairs adjacent
        // corners along one side; inertia = 4 * (1/2)^2 = 1.
        let points = vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
        let mut rng = rng_for(8, 0);
        let (labels, inertia) = kmeans(&points, 2, 2, 10, &mut rng).unwrap();
        assert!((inertia - 1.0).abs() < 1e-9, "inertia {inertia}");
        // The partition must pair corners along one side, never diagonally.
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 2);
        let (c0, c1): (Vec<usize>, Vec<usize>) = (0..4).partition(|&i| labels[i] == 0);
        let diag = |a: usize, b: usize| a + b == 3; // (0,3) and (1,2) are diagonals
        assert!(!diag(c0[0], c0[1]));
        assert!(!diag(c1[0], c1[1]));
    }

    #[test]
    fn lloyd_inertia_is_monotone() {
        let mut rng = rng_for(9, 0);
        let points: Vec<f64> = (0..400).map(|_| rng.gen::<f64>()).collect();
        for k in [2, 3, 5] {
            let trace = lloyd_inertia_trace(&points, 2, k, &mut rng);
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "inertia increased: {w:?}");
            }
        }
    }

    fn antipodal_penult(h: usize, w: usize, c: usize) -> (ComplexMap<f64>, Vec<bool>, Vec<u16>) {
        // Left half phase 0, right half phase pi, all unit-ish magnitudes.
        let mut re = vec![0.0; h * w * c];
        let mut im = vec![0.0; h * w * c];
        let mut truth = vec![0u16; h * w];
        for i in 0..h {
            for j in 0..w {
                let left = j < w / 2;
                truth[i * w + j] = if left { 1 } else { 2 };
                for ch in 0..c {
                    let idx = (i * w + j) * c + ch;
                    // Varying magnitudes prove the extraction ignores them.
                    let mag = 0.1 + 0.9 * ((i + j + ch) % 5) as f64 / 4.0;
                    re[idx] = if left { mag } else { -mag };
                    im[idx] = 0.0;
                }
            }
        }
        let map = ComplexMap::from_parts(h, w, c, re, im).unwrap();
        let bg = vec![false; h * w];
        (map, bg, truth)
    }

    #[test]
    fn extraction_separates_antipodal_regions() {
        let (map, bg, truth) = antipodal_penult(8, 8, 4);
        let mut rng = rng_for(10, 0);
        let (assign, _) = extract_assignments(&map, &bg, 2, &mut rng).unwrap();
        let score = ari(&assign.labels, &truth, &bg.iter().map(|&b| !b).collect::<Vec<_>>()).unwrap();
        assert_eq!(score, 1.0);
    }

    #[test]
    fn extraction_single_phase_single_cluster() {
        let map = ComplexMap::constant(4, 4, 3, 0.3, 0.4);
        let bg = vec![false; 16];
        let mut rng = rng_for(11, 0);
        let (assign, inertia) = extract_assignments(&map, &bg, 1, &mut rng).unwrap();
        assert!(assign.labels.iter().all(|&l| l == 0));
        assert!(inertia < 1e-20);
    }

    #[test]
    fn extraction_is_phase_rotation_invariant() {
        let (map, bg, _) = antipodal_penult(8, 8, 4);
        let theta: f64 = 0.9;
        let (ct, st) = (theta.cos(), theta.sin());
        let rotated = ComplexMap::from_parts(
            8,
            8,
            4,
            map.re().iter().zip(map.im()).map(|(r, i)| r * ct - i * st).collect(),
            map.re().iter().zip(map.im()).map(|(r, i)| r * st + i * ct).collect(),
        )
        .unwrap();
        let (a, _) = extract_assignments(&map, &bg, 2, &mut rng_for(12, 0)).unwrap();
        let (b, _) = extract_assignments(&rotated, &bg, 2, &mut rng_for(12, 0)).unwrap();
        let truth: Vec<u16> = a.labels.iter().map(|&l| l as u16).collect();
        let fg = vec![true; 64];
        assert_eq!(ari(&b.labels, &truth, &fg).unwrap(), 1.0);
    }

    #[test]
    fn extraction_requires_foreground() {
        let map = ComplexMap::constant(4, 4, 2, 1.0, 0.0);
        let bg = vec![true; 16];
        let mut rng = rng_for(13, 0);
        assert!(matches!(extract_assignments(&map, &bg, 2, &mut rng), Err(Error::EmptyEval(_))));
    }
}

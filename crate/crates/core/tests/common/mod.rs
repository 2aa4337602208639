#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svdd::{Observation, SampleTable};

/// Gaussian kernel matrix written out independently of the library.
pub fn gram(data: &[Observation], s: f64) -> Vec<Vec<f64>> {
    data.iter()
        .map(|a| {
            data.iter()
                .map(|b| {
                    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
                    (-d2 / (2.0 * s * s)).exp()
                })
                .collect()
        })
        .collect()
}

/// Dual objective `sum_i a_i K_ii - a' K a`.
pub fn dual_objective(k: &[Vec<f64>], alpha: &[f64]) -> f64 {
    let n = alpha.len();
    let mut lin = 0.0;
    let mut quad = 0.0;
    for i in 0..n {
        lin += alpha[i] * k[i][i];
        for j in 0..n {
            quad += alpha[i] * alpha[j] * k[i][j];
        }
    }
    lin - quad
}

/// Euclidean projection onto `{sum a = 1, 0 <= a <= c}` by bisection on the
/// shift.
pub fn project_capped_simplex(v: &[f64], c: f64) -> Vec<f64> {
    let mass = |t: f64| v.iter().map(|x| (x - t).clamp(0.0, c)).sum::<f64>();
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - c - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    v.iter().map(|x| (x - t).clamp(0.0, c)).collect()
}

/// Brute-force maximizer of the dual by accelerated projected gradient
/// (FISTA with restarts), run up to `iterations` steps.
pub fn projected_gradient_oracle(k: &[Vec<f64>], c: f64, iterations: usize) -> (Vec<f64>, f64) {
    let n = k.len();
    // Lipschitz constant of the gradient 2K a: 2 * max row sum bounds 2 lambda_max.
    let lip = 2.0 * k.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut x = project_capped_simplex(&vec![1.0 / n as f64; n], c);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut best = dual_objective(k, &x);
    for _ in 0..iterations {
        // ascent on f(a) = diag(K)'a - a'Ka
        let grad: Vec<f64> = (0..n)
            .map(|i| k[i][i] - 2.0 * (0..n).map(|j| k[i][j] * y[j]).sum::<f64>())
            .collect();
        let stepped: Vec<f64> = y.iter().zip(&grad).map(|(a, g)| a + g / lip).collect();
        let next = project_capped_simplex(&stepped, c);
        let value = dual_objective(k, &next);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        if value < best {
            // restart momentum
            y = x.clone();
            t = 1.0;
            continue;
        }
        let moved = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        y = next
            .iter()
            .zip(&x)
            .map(|(a, b)| a + (t - 1.0) / t_next * (a - b))
            .collect();
        x = next;
        t = t_next;
        best = value;
        if moved < 1e-15 {
            break;
        }
    }
    (x, best)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_points(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Vec<Observation> {
    (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    let v: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

/// Two isotropic Gaussian blobs of `per_class` points each.
pub fn two_blobs(seed: u64, per_class: usize, p: usize, sigma: f64, separation: f64) -> SampleTable {
    let mut r = rng(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (class, centre) in [("blob_a", 0.0), ("blob_b", separation)] {
        for _ in 0..per_class {
            rows.push((0..p).map(|_| centre + sigma * normal(&mut r)).collect());
            labels.push(class);
        }
    }
    SampleTable::from_rows(rows, &labels).unwrap()
}

pub fn annulus(seed: u64, n: usize) -> Vec<Observation> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let radius: f64 = r.random_range(0.5..1.0);
            let angle: f64 = r.random_range(0.0..std::f64::consts::TAU);
            vec![radius * angle.cos(), radius * angle.sin()]
        })
        .collect()
}

/// Nearest-centroid labels, the reference classifier for well separated
/// synthetic classes.
pub fn nearest_centroid(train: &SampleTable, rows: &[Observation]) -> Vec<usize> {
    let k = train.classes().len();
    let p = train.band_count();
    let mut centroids = vec![vec![0.0; p]; k];
    let counts = train.class_counts();
    for (x, &l) in train.features().iter().zip(train.labels()) {
        for (c, v) in centroids[l].iter_mut().zip(x) {
            *c += v / counts[l] as f64;
        }
    }
    rows.iter()
        .map(|x| {
            (0..k)
                .min_by(|&a, &b| {
                    let da: f64 = centroids[a].iter().zip(x).map(|(c, v)| (c - v).powi(2)).sum();
                    let db: f64 = centroids[b].iter().zip(x).map(|(c, v)| (c - v).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap()
        })
        .collect()
}

//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::VecDeque;

use driftscan::raster::Grid;
use driftscan::refine::{Marker, MarkerMap};
use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_distr::Distribution;

fn rat(n: u64, d: u64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Exhaustive Otsu: between-class variance `w0 w1 (mu0 - mu1)^2` evaluated
/// in exact rationals for every one of the 256 bin edges; first maximum wins.
pub fn otsu_oracle(values: &[f64]) -> Option<f64> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return None;
    }
    let span = hi - lo;
    let bins: Vec<usize> = finite
        .iter()
        .map(|v| ((((v - lo) / span) * 256.0) as usize).min(255))
        .collect();
    let n = bins.len() as u64;
    let mut best: Option<(BigRational, usize)> = None;
    for k in 0..256 {
        let (mut n0, mut s0, mut n1, mut s1) = (0u64, 0u64, 0u64, 0u64);
        for &b in &bins {
            if b <= k {
                n0 += 1;
                s0 += b as u64;
            } else {
                n1 += 1;
                s1 += b as u64;
            }
        }
        let var = if n0 == 0 || n1 == 0 {
            BigRational::zero()
        } else {
            let d = rat(s0, n0) - rat(s1, n1);
            rat(n0, n) * rat(n1, n) * d.clone() * d
        };
        if best.as_ref().is_none_or(|(b, _)| var > *b) {
            best = Some((var, k));
        }
    }
    let k = best.unwrap().1;
    Some(lo + span * ((k + 1) as f64 / 256.0))
}

/// Dense Dirichlet solve of the walker system with a full Laplacian.
/// Unlabeled components that touch no marker get 0.5.
pub fn dense_walker(guidance: &Grid<f32>, markers: &MarkerMap, beta: f64) -> Vec<f64> {
    let (w, h) = (guidance.width(), guidance.height());
    let n = w * h;
    let vals: Vec<f64> = guidance.data().iter().map(|&v| v as f64).collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let g: Vec<f64> = vals
        .iter()
        .map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect();
    let mut lap = DMatrix::<f64>::zeros(n, n);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut nb = Vec::new();
            if x + 1 < w {
                nb.push(i + 1);
            }
            if y + 1 < h {
                nb.push(i + w);
            }
            for j in nb {
                let wij = (-beta * (g[i] - g[j]).powi(2)).exp();
                lap[(i, j)] -= wij;
                lap[(j, i)] -= wij;
                lap[(i, i)] += wij;
                lap[(j, j)] += wij;
            }
        }
    }
    let m = markers.data();
    let mut out: Vec<f64> = m
        .iter()
        .map(|k| match k {
            Marker::Debris => 1.0,
            Marker::Other => 0.0,
            Marker::Unlabeled => 0.5,
        })
        .collect();

    // unlabeled pixels connected (through unlabeled pixels) to some marker
    let mut reach = vec![false; n];
    let mut queue: VecDeque<usize> = VecDeque::new();
    queue.extend((0..n).filter(|&i| m[i] != Marker::Unlabeled));
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let mut nb = Vec::new();
        if x > 0 {
            nb.push(i - 1);
        }
        if x + 1 < w {
            nb.push(i + 1);
        }
        if y > 0 {
            nb.push(i - w);
        }
        if y + 1 < h {
            nb.push(i + w);
        }
        for j in nb {
            if m[j] == Marker::Unlabeled && !reach[j] {
                reach[j] = true;
                queue.push_back(j);
            }
        }
    }
    let unknown: Vec<usize> = (0..n).filter(|&i| reach[i]).collect();
    if unknown.is_empty() {
        return out;
    }
    let known: Vec<usize> = (0..n).filter(|&i| m[i] != Marker::Unlabeled).collect();
    let lu = DMatrix::from_fn(unknown.len(), unknown.len(), |a, b| lap[(unknown[a], unknown[b])]);
    let mvec = DVector::from_iterator(known.len(), known.iter().map(|&k| (m[k] == Marker::Debris) as u8 as f64));
    let b = DMatrix::from_fn(unknown.len(), known.len(), |a, c| lap[(unknown[a], known[c])]);
    let rhs = -(b * mvec);
    let x = lu.lu().solve(&rhs).expect("non-singular block");
    for (a, &i) in unknown.iter().enumerate() {
        out[i] = x[a];
    }
    out
}

/// Mann-Whitney by enumerating every positive/negative pair.
pub fn auroc_pairs(scores: &[(f64, bool)]) -> f64 {
    let (mut num, mut pairs) = (0.0f64, 0u64);
    for &(sp, lp) in scores {
        if !lp {
            continue;
        }
        for &(sn, ln) in scores {
            if ln {
                continue;
            }
            pairs += 1;
            if sp > sn {
                num += 1.0;
            } else if sp == sn {
                num += 0.5;
            }
        }
    }
    num / pairs as f64
}

/// Every candidate `(tau, precision, recall, f1)` of the midpoint sweep.
pub fn calibration_sweep(scores: &[(f64, bool)]) -> Vec<(f64, f64, f64, f64)> {
    let mut distinct: Vec<f64> = scores.iter().map(|s| s.0).collect();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    let positives = scores.iter().filter(|s| s.1).count();
    distinct
        .windows(2)
        .map(|w| {
            let tau = 0.5 * (w[0] + w[1]);
            let tp = scores.iter().filter(|s| s.0 >= tau && s.1).count();
            let fp = scores.iter().filter(|s| s.0 >= tau && !s.1).count();
            let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let r = tp as f64 / positives as f64;
            let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            (tau, p, r, f1)
        })
        .collect()
}

/// Brute-force local maxima with greedy suppression, quadratic in the
/// number of candidates.
pub fn detect_oracle(values: &Grid<f32>, tau: f64, md: usize) -> Vec<(usize, usize, f32)> {
    let (w, h) = (values.width() as i64, values.height() as i64);
    let r = md as i64;
    let mut cands = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = *values.get(x as usize, y as usize);
            if (v as f64) < tau {
                continue;
            }
            let mut is_max = true;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (u, t) = (x + dx, y + dy);
                    if u >= 0 && t >= 0 && u < w && t < h && *values.get(u as usize, t as usize) > v {
                        is_max = false;
                    }
                }
            }
            if is_max {
                cands.push((x as usize, y as usize, v));
            }
        }
    }
    cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));
    let mut kept: Vec<(usize, usize, f32)> = Vec::new();
    for c in cands {
        if kept
            .iter()
            .all(|k| k.0.abs_diff(c.0).max(k.1.abs_diff(c.1)) > md)
        {
            kept.push(c);
        }
    }
    kept
}

/// Exhaustive Gini split over all features and all midpoints, with the
/// weighted child impurity `sum 2 p q / n` in exact rationals.
/// Returns `(feature, threshold)` of the lowest impurity, then feature,
/// then threshold.
pub fn gini_oracle(rows: &[Vec<f64>], labels: &[bool]) -> Option<(usize, f64)> {
    let nf = rows[0].len();
    let mut best: Option<(BigRational, usize, f64)> = None;
    for f in 0..nf {
        let mut vals: Vec<f64> = rows.iter().map(|r| r[f]).collect();
        vals.sort_by(|a, b| a.total_cmp(b));
        vals.dedup();
        for pair in vals.windows(2) {
            let mut t = pair[0] + (pair[1] - pair[0]) * 0.5;
            if t >= pair[1] {
                t = pair[0];
            }
            let side = |left: bool| {
                let idx: Vec<usize> = (0..rows.len()).filter(|&i| (rows[i][f] <= t) == left).collect();
                let n = idx.len() as u64;
                let p = idx.iter().filter(|&&i| labels[i]).count() as u64;
                if n == 0 {
                    BigRational::zero()
                } else {
                    rat(2 * p * (n - p), n)
                }
            };
            let imp = side(true) + side(false);
            let better = match &best {
                None => true,
                Some((b, bf, bt)) => imp < *b || (imp == *b && (f, t) < (*bf, *bt)),
            };
            if better {
                best = Some((imp, f, t));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

pub fn abs_rat(r: &BigRational) -> BigRational {
    r.abs()
}

/// Random scores drawn from a small pool so ties are frequent.
pub fn tied_scores<R: Rng>(rng: &mut R, n: usize, levels: u32) -> Vec<(f64, bool)> {
    (0..n)
        .map(|_| {
            let level = rng.random_range(0..=levels);
            (level as f64 / levels as f64, rng.random_bool(0.4))
        })
        .collect()
}

const FEATURE_COLLECTION_SCHEMA: &str = include_str!("../fixtures/feature_collection.schema.json");

/// Schema violations of `doc` against the GeoJSON FeatureCollection schema.
pub fn geojson_violations(doc: &serde_json::Value) -> Vec<String> {
    let schema: serde_json::Value = serde_json::from_str(FEATURE_COLLECTION_SCHEMA).unwrap();
    let validator = jsonschema::draft7::new(&schema).unwrap();
    validator.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path())).collect()
}

/// Two unit-variance Gaussian blobs centred at -2 and +2 on the first axis.
pub fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise = rand_distr::Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let positive = i % 2 == 0;
        let cx = if positive { 2.0 } else { -2.0 };
        rows.push(vec![cx + noise.sample(&mut rng), noise.sample(&mut rng)]);
        labels.push(positive);
    }
    (rows, labels)
}

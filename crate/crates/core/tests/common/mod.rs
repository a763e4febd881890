#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rvseg_core::refine::{KnnParams, NlaParams};
use rvseg_core::tca::{AttentionParams, FeatureGrid};
use rvseg_core::{ClassId, LabelImage, RangeImage, RigidTransform};

pub fn random_transform(rng: &mut impl Rng) -> RigidTransform {
    let axis = [
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ];
    let axis = if axis.iter().all(|a: &f64| a.abs() < 1e-3) {
        [0.0, 0.0, 1.0]
    } else {
        axis
    };
    let angle = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let t = [
        rng.gen_range(-5.0..5.0),
        rng.gen_range(-5.0..5.0),
        rng.gen_range(-1.0..1.0),
    ];
    RigidTransform::from_axis_angle(axis, angle, t).unwrap()
}

/// Plain triple-loop 4x4 product.
pub fn naive_product(a: &RigidTransform, b: &RigidTransform) -> [[f64; 4]; 4] {
    let (a, b) = (a.matrix(), b.matrix());
    let mut out = [[0.0; 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            for k in 0..4 {
                *v += a[(i, k)] * b[(k, j)];
            }
        }
    }
    out
}

/// Every valid pixel within Chebyshev distance `half`: `(diff, is_center, row, col)`.
fn neighbors(image: &RangeImage, row: usize, col: usize, half: usize, range: f64) -> Vec<(f64, bool, usize, usize)> {
    let mut out = Vec::new();
    for r in row.saturating_sub(half)..(row + half + 1).min(image.height) {
        for c in col.saturating_sub(half)..(col + half + 1).min(image.width) {
            if !image.is_valid(r, c) {
                continue;
            }
            let diff = (image.pixel_range(r, c) as f64 - range).abs();
            out.push((diff, r == row && c == col, r, c));
        }
    }
    out
}

/// Selection-by-repeated-minimum reference for k-NN refinement.
pub fn naive_knn(image: &RangeImage, labels: &LabelImage, p: &KnnParams, ignore: ClassId) -> Vec<ClassId> {
    (0..image.num_points())
        .map(|i| {
            let Some(px) = image.point_pixel[i] else { return ignore };
            let (row, col) = (px.row as usize, px.col as usize);
            let mut pool: Vec<_> = neighbors(image, row, col, p.window / 2, image.point_range[i])
                .into_iter()
                .filter(|n| n.0 <= p.cutoff)
                .collect();
            if pool.is_empty() {
                return labels.get(row, col);
            }
            let mut votes: BTreeMap<ClassId, usize> = BTreeMap::new();
            for _ in 0..p.k.min(pool.len()) {
                let mut best = 0;
                for j in 1..pool.len() {
                    let (a, b) = (pool[j], pool[best]);
                    let better = a.0 < b.0
                        || (a.0 == b.0 && a.1 && !b.1)
                        || (a.0 == b.0 && a.1 == b.1 && (a.2, a.3) < (b.2, b.3));
                    if better {
                        best = j;
                    }
                }
                let n = pool.remove(best);
                *votes.entry(labels.get(n.2, n.3)).or_default() += 1;
            }
            let top = *votes.values().max().unwrap();
            *votes.iter().find(|(_, &v)| v == top).unwrap().0
        })
        .collect()
}

pub fn naive_nla(image: &RangeImage, labels: &LabelImage, p: &NlaParams, ignore: ClassId) -> Vec<ClassId> {
    (0..image.num_points())
        .map(|i| {
            let Some(px) = image.point_pixel[i] else { return ignore };
            let (row, col) = (px.row as usize, px.col as usize);
            let range = image.point_range[i];
            if (image.pixel_range(row, col) as f64 - range).abs() <= p.tau {
                return labels.get(row, col);
            }
            let pool = neighbors(image, row, col, p.patch / 2, range);
            let mut best: Option<(f64, bool, usize, usize)> = None;
            for n in pool {
                let take = match best {
                    None => true,
                    Some(b) => {
                        n.0 < b.0
                            || (n.0 == b.0 && n.1 && !b.1)
                            || (n.0 == b.0 && n.1 == b.1 && (n.2, n.3) < (b.2, b.3))
                    }
                };
                if take {
                    best = Some(n);
                }
            }
            best.map(|b| labels.get(b.2, b.3)).unwrap_or(labels.get(row, col))
        })
        .collect()
}

/// Single-head attention by explicit loops over cells and channels.
#[allow(clippy::needless_range_loop)]
pub fn naive_attention(current: &FeatureGrid, previous: &FeatureGrid, params: &AttentionParams) -> Vec<Vec<f64>> {
    let d = current.channels;
    let lin = |l: &rvseg_core::tca::Linear, x: &[f64]| -> Vec<f64> {
        (0..l.outputs)
            .map(|o| {
                let mut s = l.bias[o];
                for i in 0..l.inputs {
                    s += l.weight[o * l.inputs + i] * x[i];
                }
                s
            })
            .collect()
    };
    let qs: Vec<_> = (0..current.cells())
        .map(|i| lin(&params.query, current.cell(i)))
        .collect();
    let ks: Vec<_> = (0..previous.cells())
        .map(|j| lin(&params.key, previous.cell(j)))
        .collect();
    let vs: Vec<_> = (0..previous.cells())
        .map(|j| lin(&params.value, previous.cell(j)))
        .collect();
    qs.iter()
        .map(|q| {
            let logits: Vec<f64> = ks
                .iter()
                .map(|k| {
                    let mut s = 0.0;
                    for c in 0..d {
                        s += q[c] * k[c];
                    }
                    s / (d as f64).sqrt()
                })
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            let mut out = vec![0.0; d];
            for (l, v) in logits.iter().zip(&vs) {
                for c in 0..d {
                    out[c] += l.exp() / z * v[c];
                }
            }
            out
        })
        .collect()
}

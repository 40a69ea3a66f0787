//! SLIC-style superpixels on grayscale images, used as pseudo-masks.

use crate::tensor::Tensor;

/// Intensity weight in the clustering space `(x/S, y/S, λ·I)`.
pub const SLIC_COMPACTNESS: f64 = 10.0;
pub const SLIC_ITERATIONS: usize = 10;

/// H×W map of superpixel labels `0..num_labels`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub h: usize,
    pub w: usize,
    pub labels: Vec<usize>,
    pub num_labels: usize,
}

impl LabelMap {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_labels];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

#[derive(Clone, Copy, Debug)]
struct Center {
    y: f64,
    x: f64,
    v: f64,
}

/// Regular `S × S` seed grid with `S = sqrt(H·W / k)`.
fn seed_grid(h: usize, w: usize, k: usize) -> (f64, Vec<(f64, f64)>) {
    let s = ((h * w) as f64 / k as f64).sqrt();
    let ny = ((h as f64 / s).round() as usize).max(1);
    let nx = ((w as f64 / s).round() as usize).max(1);
    let seeds = (0..ny)
        .flat_map(|j| {
            (0..nx).map(move |i| {
                (
                    (j as f64 + 0.5) * h as f64 / ny as f64,
                    (i as f64 + 0.5) * w as f64 / nx as f64,
                )
            })
        })
        .collect();
    (s, seeds)
}

pub fn superpixels(image: &Tensor, k: usize) -> LabelMap {
    superpixels_with(image, k, SLIC_COMPACTNESS, SLIC_ITERATIONS)
}

pub fn superpixels_with(image: &Tensor, k: usize, compactness: f64, iterations: usize) -> LabelMap {
    let (h, w) = image.dims2().expect("superpixels expects an H×W image");
    let k = k.max(1);
    let px = image.data();
    let (s, seeds) = seed_grid(h, w, k);
    let mut centers: Vec<Center> = seeds
        .iter()
        .map(|&(y, x)| {
            let (iy, ix) = ((y as usize).min(h - 1), (x as usize).min(w - 1));
            Center { y, x, v: px[iy * w + ix] }
        })
        .collect();

    let mut labels = vec![0usize; h * w];
    let mut dist = vec![f64::INFINITY; h * w];
    let window = (2.0 * s).ceil() as isize;
    for _ in 0..iterations {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (ci, c) in centers.iter().enumerate() {
            let (cy, cx) = (c.y.floor() as isize, c.x.floor() as isize);
            for y in (cy - window).max(0)..(cy + window + 1).min(h as isize) {
                for x in (cx - window).max(0)..(cx + window + 1).min(w as isize) {
                    let i = y as usize * w + x as usize;
                    let dy = (y as f64 + 0.5 - c.y) / s;
                    let dx = (x as f64 + 0.5 - c.x) / s;
                    let dv = compactness * (px[i] - c.v);
                    let d = dy * dy + dx * dx + dv * dv;
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = ci;
                    }
                }
            }
        }
        let mut acc = vec![(0.0, 0.0, 0.0, 0usize); centers.len()];
        for (i, &l) in labels.iter().enumerate() {
            let a = &mut acc[l];
            a.0 += (i / w) as f64 + 0.5;
            a.1 += (i % w) as f64 + 0.5;
            a.2 += px[i];
            a.3 += 1;
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a.3 > 0 {
                let n = a.3 as f64;
                *c = Center {
                    y: a.0 / n,
                    x: a.1 / n,
                    v: a.2 / n,
                };
            }
        }
    }

    enforce_connectivity(h, w, &labels, (h * w) / (4 * k).max(1), 2 * k)
}

/// 4-connected components of `labels`.
fn components(h: usize, w: usize, labels: &[usize]) -> (Vec<usize>, usize) {
    let mut comp = vec![usize::MAX; h * w];
    let mut n = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = n;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if comp[j] == usize::MAX && labels[j] == labels[i] {
                    comp[j] = n;
                    stack.push(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
        n += 1;
    }
    (comp, n)
}

/// Splits labels into connected segments, then merges segments smaller than
/// `min_size` (and, if needed, the smallest remaining ones) into a neighbour
/// until at most `max_labels` remain.
fn enforce_connectivity(h: usize, w: usize, labels: &[usize], min_size: usize, max_labels: usize) -> LabelMap {
    let (mut seg, mut n) = components(h, w, labels);
    loop {
        let mut sizes = vec![0usize; n];
        for &s in &seg {
            sizes[s] += 1;
        }
        if n <= 1 {
            break;
        }
        let smallest = (0..n).min_by_key(|&s| (sizes[s], s)).expect("n > 1");
        if sizes[smallest] >= min_size && n <= max_labels {
            break;
        }
        // neighbour sharing the longest border
        let mut border = vec![0usize; n];
        for i in 0..h * w {
            if seg[i] != smallest {
                continue;
            }
            let (y, x) = (i / w, i % w);
            let mut touch = |j: usize| {
                if seg[j] != smallest {
                    border[seg[j]] += 1;
                }
            };
            if y > 0 {
                touch(i - w);
            }
            if y + 1 < h {
                touch(i + w);
            }
            if x > 0 {
                touch(i - 1);
            }
            if x + 1 < w {
                touch(i + 1);
            }
        }
        let target = (0..n)
            .filter(|&s| border[s] > 0)
            .max_by_key(|&s| (border[s], std::cmp::Reverse(s)))
            .expect("a segment of a connected image always has a neighbour");
        let target = if target > smallest { target - 1 } else { target };
        for s in seg.iter_mut() {
            if *s == smallest {
                *s = target;
            } else if *s > smallest {
                *s -= 1;
            }
        }
        n -= 1;
    }
    LabelMap {
        h,
        w,
        labels: seg,
        num_labels: n,
    }
}

//! Independent reference computations shared by the integration tests and
//! the acceptance suite.

#![allow(dead_code)]

use radloc::field::{render_color, render_depth, transmittance, weights};
use radloc::geometry::{box_from_pose, iou3d, Box3D, Mat3};
use radloc::matching::{brute_force_assignment, hungarian};
use radloc::seed::rng_for;
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

/// A ray crossing constant-density slabs that start and end on sample
/// boundaries: each slab covers `len` consecutive intervals of width `dt`.
pub struct SlabRay {
    pub ts: Vec<f64>,
    pub dt: f64,
    /// `(first sample, len, sigma, color)`.
    pub slabs: Vec<(usize, usize, f64, [f64; 3])>,
}

impl SlabRay {
    pub fn random(rng: &mut impl Rng) -> Self {
        let n = rng.gen_range(4..64);
        let near = rng.gen_range(0.05..1.0);
        let far = near + rng.gen_range(1.0..8.0);
        let dt = (far - near) / (n - 1) as f64;
        let ts: Vec<f64> = (0..n).map(|k| near + k as f64 * dt).collect();
        let mut slabs = vec![];
        let mut k = 0;
        while k < n {
            let len = rng.gen_range(1..=(n - k).min(12));
            let sigma = if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.05..8.0) };
            let color = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            slabs.push((k, len, sigma, color));
            k += len;
        }
        Self { ts, dt, slabs }
    }

    pub fn per_sample(&self) -> (Vec<f64>, Vec<[f64; 3]>) {
        let mut sig = vec![];
        let mut col = vec![];
        for &(_, len, s, c) in &self.slabs {
            sig.extend(std::iter::repeat_n(s, len));
            col.extend(std::iter::repeat_n(c, len));
        }
        (sig, col)
    }

    /// Closed-form color and depth: each slab contributes
    /// `T_a (1 − qᵐ) c` with `q = e^{−σΔ}`, and its depth term sums the
    /// arithmetic-geometric series `Σ (a + iΔ) qⁱ (1 − q)` in closed form.
    pub fn closed_form(&self) -> ([f64; 3], f64) {
        let mut trans = 1.0;
        let mut color = [0.0; 3];
        let mut depth = 0.0;
        for &(first, len, sigma, c) in &self.slabs {
            let x = sigma * self.dt;
            let q = (-x).exp();
            let m = len as i32;
            let absorbed = -(-x * m as f64).exp_m1();
            for i in 0..3 {
                color[i] += trans * absorbed * c[i];
            }
            if sigma > 0.0 {
                let a = self.ts[first];
                let one_minus_q = -(-x).exp_m1();
                let s0 = absorbed / one_minus_q;
                let s1 =
                    q * (1.0 - m as f64 * q.powi(m - 1) + (m - 1) as f64 * q.powi(m)) / (one_minus_q * one_minus_q);
                depth += trans * one_minus_q * (a * s0 + self.dt * s1);
            }
            trans *= q.powi(m);
        }
        (color, depth)
    }
}

/// Worst absolute disagreement between the renderer and the closed form
/// over `count` random slab rays.
pub fn slab_render_error(seed: u64, count: usize) -> f64 {
    let mut rng = rng_for(seed, "slab-oracle");
    let mut worst = 0.0f64;
    for _ in 0..count {
        let ray = SlabRay::random(&mut rng);
        let (sig, col) = ray.per_sample();
        let (want_c, want_d) = ray.closed_form();
        let got_c = render_color(&col, &sig, &ray.ts);
        let got_d = render_depth(&sig, &ray.ts);
        for i in 0..3 {
            worst = worst.max((got_c[i] - want_c[i]).abs());
        }
        worst = worst.max((got_d - want_d).abs());
    }
    worst
}

/// Counts rays violating `T_1 = 1`, monotone transmittance or
/// `Σ w ∈ [0, 1]`.
pub fn transmittance_violations(seed: u64, count: usize) -> usize {
    let mut rng = rng_for(seed, "transmittance");
    let mut bad = 0;
    for _ in 0..count {
        let n = rng.gen_range(2..96);
        let near = rng.gen_range(0.01..1.0);
        let dt = rng.gen_range(0.001..0.5);
        let ts: Vec<f64> = (0..n).map(|k| near + k as f64 * dt).collect();
        let sig: Vec<f64> = (0..n)
            .map(|_| match rng.gen_range(0..4) {
                0 => 0.0,
                1 => rng.gen_range(0.0..1.0),
                2 => rng.gen_range(0.0..100.0),
                _ => rng.gen_range(0.0..1e6),
            })
            .collect();
        let tr = transmittance(&sig, &ts);
        let w = weights(&sig, &ts);
        let total = compensated_sum(&w);
        let ok = tr[0] == 1.0
            && tr.windows(2).all(|p| p[1] <= p[0])
            && w.iter().all(|&x| x >= 0.0)
            && (0.0..=1.0).contains(&total);
        if !ok {
            bad += 1;
        }
    }
    bad
}

/// Neumaier-compensated sum, so the check sees the weights' own total
/// rather than the rounding of a naive left-to-right accumulation.
pub fn compensated_sum(xs: &[f64]) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for &x in xs {
        let t = sum + x;
        c += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + c
}

/// Random cost matrices with entries on a 1/1024 grid, so every
/// assignment total is exact and ties are common. Returns the number of
/// matrices where the solver's total differs from brute force.
pub fn hungarian_mismatches(seed: u64, count: usize) -> usize {
    let mut rng = rng_for(seed, "hungarian");
    let mut bad = 0;
    for _ in 0..count {
        let j = rng.gen_range(1..=7);
        let m = rng.gen_range(0..=j);
        let cost: Vec<Vec<f64>> =
            (0..m).map(|_| (0..j).map(|_| rng.gen_range(0..4096) as f64 / 1024.0).collect()).collect();
        let got = hungarian(&cost, j).expect("m <= j").total(&cost);
        let (want, _) = brute_force_assignment(&cost, j).expect("m <= j");
        if got != want {
            bad += 1;
        }
    }
    bad
}

pub fn random_box(rng: &mut impl Rng, near: [f64; 3]) -> Box3D<f64> {
    let center = near.map(|c| c + rng.gen_range(-0.6..0.6));
    let size = [rng.gen_range(0.2..1.2), rng.gen_range(0.2..1.2), rng.gen_range(0.2..1.2)];
    box_from_pose(center, size, &Mat3::identity()).unwrap()
}

fn extent(b: &Box3D<f64>) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in &b.corners {
        for k in 0..3 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    (lo, hi)
}

/// Monte-Carlo IoU from `samples` uniform points in the joint hull.
pub fn monte_carlo_iou(a: &Box3D<f64>, b: &Box3D<f64>, samples: usize, rng: &mut impl Rng) -> f64 {
    let (alo, ahi) = extent(a);
    let (blo, bhi) = extent(b);
    let lo = [0, 1, 2].map(|k| alo[k].min(blo[k]));
    let span = [0, 1, 2].map(|k| ahi[k].max(bhi[k]) - lo[k]);
    let inside =
        |p: &[f64; 3], l: &[f64; 3], h: &[f64; 3]| (0..3).fold(true, |acc, k| acc & (p[k] >= l[k]) & (p[k] <= h[k]));
    let mut fast = SmallRng::from_rng(rng).expect("seed");
    let (mut inter, mut union) = (0usize, 0usize);
    for _ in 0..samples {
        let p = [0, 1, 2].map(|k| lo[k] + span[k] * fast.gen::<f64>());
        let (ia, ib) = (inside(&p, &alo, &ahi), inside(&p, &blo, &bhi));
        inter += usize::from(ia & ib);
        union += usize::from(ia | ib);
    }
    inter as f64 / union as f64
}

/// Worst `|iou3d − Monte-Carlo|` over `pairs` random overlapping boxes.
pub fn iou_monte_carlo_error(seed: u64, pairs: usize, samples: usize) -> f64 {
    let mut rng = rng_for(seed, "iou-oracle");
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let a = random_box(&mut rng, [0.0; 3]);
        let b = random_box(&mut rng, a.center());
        let mc = monte_carlo_iou(&a, &b, samples, &mut rng);
        worst = worst.max((iou3d(&a, &b) - mc).abs());
    }
    worst
}

/// Identical → 1, disjoint → 0, half-shifted unit cube → 1/3, all exact.
pub fn iou_hand_cases_exact() -> bool {
    let unit = |x: f64| box_from_pose([x, 0.0, 0.0], [1.0; 3], &Mat3::identity()).unwrap();
    iou3d(&unit(0.0), &unit(0.0)) == 1.0
        && iou3d(&unit(0.0), &unit(3.0)) == 0.0
        && iou3d(&unit(0.0), &unit(0.5)) == 1.0 / 3.0
}

//! Discrete volume rendering along one ray.

use crate::scalar::Scalar;

/// Interval lengths `t_{k+1} − t_k`; the last interval repeats the previous
/// spacing since samples are equally spaced.
pub fn deltas<T: Scalar>(ts: &[T]) -> Vec<T> {
    let n = ts.len();
    let mut d = Vec::with_capacity(n);
    for k in 0..n {
        let dt = if k + 1 < n {
            ts[k + 1] - ts[k]
        } else if n >= 2 {
            ts[n - 1] - ts[n - 2]
        } else {
            T::zero()
        };
        d.push(dt);
    }
    d
}

/// `T_k = exp(−Σ_{k'<k} σ_{k'} Δt_{k'})`, with `T_1 = 1`.
pub fn transmittance<T: Scalar>(sigmas: &[T], ts: &[T]) -> Vec<T> {
    debug_assert_eq!(sigmas.len(), ts.len());
    let dt = deltas(ts);
    let mut out = Vec::with_capacity(sigmas.len());
    let mut acc = T::zero();
    for k in 0..sigmas.len() {
        out.push(if k == 0 { T::one() } else { (-acc).exp() });
        acc += sigmas[k] * dt[k];
    }
    out
}

/// Per-sample compositing weights `T_k (1 − exp(−σ_k Δt_k))`, evaluated as
/// `T_k − T_{k+1}` so that they are non-negative and sum to `1 − T_{N+1}`.
pub fn weights<T: Scalar>(sigmas: &[T], ts: &[T]) -> Vec<T> {
    let trans = transmittance(sigmas, ts);
    let n = sigmas.len();
    let exit = match n {
        0 => return vec![],
        _ => {
            let dt = deltas(ts);
            let acc: T = (0..n).fold(T::zero(), |a, k| a + sigmas[k] * dt[k]);
            (-acc).exp()
        }
    };
    (0..n).map(|k| trans[k] - if k + 1 < n { trans[k + 1] } else { exit }).collect()
}

pub fn render_color<T: Scalar>(colors: &[[T; 3]], sigmas: &[T], ts: &[T]) -> [T; 3] {
    let w = weights(sigmas, ts);
    let mut c = [T::zero(); 3];
    for (wk, ck) in w.iter().zip(colors) {
        for i in 0..3 {
            c[i] += *wk * ck[i];
        }
    }
    c
}

/// Expected termination depth, not normalised by total opacity.
pub fn render_depth<T: Scalar>(sigmas: &[T], ts: &[T]) -> T {
    weights(sigmas, ts).iter().zip(ts).map(|(&w, &t)| w * t).sum()
}

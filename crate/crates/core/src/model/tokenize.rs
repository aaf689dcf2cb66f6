use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::field::{render_grid, ModalitySet, SampleGrid, SAMPLE_CHANNELS};
use crate::geometry::Aabb;
use crate::scalar::Scalar;

/// One token per ray: `[rays, d_in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch<T> {
    pub tokens: Array<T>,
}

impl<T: Scalar> TokenBatch<T> {
    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.tokens.shape()[1]
    }

    /// Reorders tokens: row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let w = self.width();
        let d = self.tokens.data();
        let data = perm.iter().flat_map(|&r| d[r * w..(r + 1) * w].iter().copied()).collect();
        Self { tokens: Array::new(vec![perm.len(), w], data).expect("permutation keeps the shape") }
    }
}

/// Flattens each ray's samples into one feature row.
///
/// Raw samples contribute `(x, y, z, r, g, b, ln(1+σ))` per point with
/// positions mapped to `[-1, 1]` by `bounds`; rendered color contributes the
/// ray's RGB; rendered depth contributes `D̂ / t_far`.
pub fn tokenize<T: Scalar>(grid: &SampleGrid<T>, modality: ModalitySet, bounds: &Aabb<f64>) -> Result<TokenBatch<T>> {
    if modality.is_empty() {
        return Err(Error::Invalid("tokenize needs a non-empty modality".into()));
    }
    let n = grid.samples;
    let width =
        usize::from(modality.raw) * n * SAMPLE_CHANNELS + usize::from(modality.color) * 3 + usize::from(modality.depth);
    let rays = grid.num_rays();
    let center: [T; 3] = [0, 1, 2].map(|k| T::of(0.5 * (bounds.min[k] + bounds.max[k])));
    let inv_half: [T; 3] = [0, 1, 2].map(|k| T::of(2.0 / (bounds.max[k] - bounds.min[k])));
    let t_far = *grid.depths().last().expect("grids hold >= 2 samples");

    let rendered = render_grid(grid, modality.color, modality.depth);
    let mut data = Vec::with_capacity(rays * width);
    for i in 0..rays {
        if modality.raw {
            for s in grid.ray(i).chunks(SAMPLE_CHANNELS) {
                for k in 0..3 {
                    data.push((s[k] - center[k]) * inv_half[k]);
                }
                data.extend_from_slice(&s[3..6]);
                data.push(s[6].ln_1p());
            }
        }
        if let Some(c) = &rendered.color {
            data.extend_from_slice(&c[i]);
        }
        if let Some(d) = &rendered.depth {
            data.push(d[i] / t_far);
        }
    }
    Ok(TokenBatch { tokens: Array::new(vec![rays, width], data)? })
}

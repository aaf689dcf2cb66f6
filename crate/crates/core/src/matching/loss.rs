use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{giou3d, Box3D, LabeledBox};
use crate::matching::hungarian::{hungarian, Assignment};
use crate::model::{DetectionSet, DetectionVars};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_iou: f64,
    pub lambda_l1: f64,
    /// Cross-entropy weight for predictions assigned to the no-object class.
    pub noobj_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_iou: 2.0, lambda_l1: 5.0, noobj_weight: 0.1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.lambda_iou, self.lambda_l1, self.noobj_weight].iter().all(|v| *v >= 0.0 && v.is_finite());
        if !ok {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// `λ_iou·(1 − GIoU) + λ_l1·mean|pred − gt|` over the 24 corner coordinates.
pub fn box_loss<T: Scalar>(pred: &Box3D<T>, gt: &Box3D<T>, cfg: &LossConfig) -> T {
    let giou = giou3d(pred, gt);
    let l1 = pred.flat().iter().zip(gt.flat()).map(|(&p, g)| (p - g).abs()).sum::<T>() / T::of(24.0);
    T::of(cfg.lambda_iou) * (T::one() - giou) + T::of(cfg.lambda_l1) * l1
}

/// `−log softmax(logits)[class]`.
pub fn cross_entropy<T: Scalar>(logits: &[T], class: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    lse - logits[class]
}

pub fn match_cost<T: Scalar>(pred: &Box3D<T>, logits: &[T], gt: &LabeledBox<f64>, cfg: &LossConfig) -> T {
    box_loss(pred, &gt.bbox.cast(), cfg) + cross_entropy(logits, gt.class_id)
}

/// Assignment costs indexed `[gt][pred]`: the matching cost minus the
/// no-object term the prediction would otherwise pay, so that the optimal
/// assignment also minimises the total loss.
pub fn cost_matrix<T: Scalar>(preds: &DetectionSet<T>, gts: &[LabeledBox<f64>], cfg: &LossConfig) -> Vec<Vec<f64>> {
    let c = preds.logits.shape()[1];
    let logits = preds.logits.data();
    let noobj: Vec<f64> = (0..preds.len())
        .map(|j| cfg.noobj_weight * cross_entropy(&logits[j * c..(j + 1) * c], c - 1).as_f64())
        .collect();
    gts.iter()
        .map(|gt| {
            preds
                .boxes
                .iter()
                .enumerate()
                .map(|(j, b)| match_cost(b, &logits[j * c..(j + 1) * c], gt, cfg).as_f64() - noobj[j])
                .collect()
        })
        .collect()
}

fn check_classes<T: Scalar>(preds: &DetectionSet<T>, gts: &[LabeledBox<f64>]) -> Result<()> {
    let c = preds.num_classes();
    if let Some(bad) = gts.iter().find(|g| g.class_id >= c) {
        return Err(Error::Invalid(format!("ground-truth class {} outside {c} classes", bad.class_id)));
    }
    if gts.len() > preds.len() {
        return Err(Error::Invalid(format!("{} ground-truth objects exceed {} predictions", gts.len(), preds.len())));
    }
    Ok(())
}

/// Plain-value Hungarian loss under an explicit assignment.
pub fn assignment_loss<T: Scalar>(
    preds: &DetectionSet<T>,
    gts: &[LabeledBox<f64>],
    assignment: &Assignment,
    cfg: &LossConfig,
) -> T {
    let c = preds.logits.shape()[1];
    let logits = preds.logits.data();
    let noobj = c - 1;
    assignment
        .gt_for_pred()
        .into_iter()
        .enumerate()
        .map(|(j, g)| {
            let row = &logits[j * c..(j + 1) * c];
            match g {
                Some(g) => match_cost(&preds.boxes[j], row, &gts[g], cfg),
                None => T::of(cfg.noobj_weight) * cross_entropy(row, noobj),
            }
        })
        .sum()
}

/// Optimal assignment and the resulting loss value, without a tape.
pub fn hungarian_loss_value<T: Scalar>(
    preds: &DetectionSet<T>,
    gts: &[LabeledBox<f64>],
    cfg: &LossConfig,
) -> Result<(T, Assignment)> {
    check_classes(preds, gts)?;
    let assignment = hungarian(&cost_matrix(preds, gts, cfg), preds.len())?;
    Ok((assignment_loss(preds, gts, &assignment, cfg), assignment))
}

/// Differentiable Hungarian loss. The assignment is computed from the
/// current prediction values and held fixed during backward.
pub fn hungarian_loss<T: Scalar>(
    t: &mut Tape<T>,
    preds: DetectionVars,
    gts: &[LabeledBox<f64>],
    cfg: &LossConfig,
) -> Result<(Var, Assignment)> {
    let values = DetectionSet::from_vars(t, preds)?;
    check_classes(&values, gts)?;
    let assignment = hungarian(&cost_matrix(&values, gts, cfg), values.len())?;
    let j_count = values.len();
    let c = values.logits.shape()[1];

    // Classification: one weighted target per prediction row.
    let owner = assignment.gt_for_pred();
    let mut mask = vec![T::zero(); j_count * c];
    for (j, g) in owner.iter().enumerate() {
        match g {
            Some(g) => mask[j * c + gts[*g].class_id] = T::one(),
            None => mask[j * c + c - 1] = T::of(cfg.noobj_weight),
        }
    }
    let logp = t.log_softmax(preds.logits, 1)?;
    let mask = t.constant(Array::new(vec![j_count, c], mask)?)?;
    let picked = t.mul(logp, mask)?;
    let ce = t.sum(picked)?;
    let ce = t.neg(ce)?;
    if assignment.pairs.is_empty() {
        return Ok((ce, assignment));
    }

    // Box terms, with rows in prediction order.
    let mut pairs = assignment.pairs.clone();
    pairs.sort_unstable();
    let rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let m = rows.len();
    let gt_boxes: Vec<Box3D<T>> = pairs.iter().map(|&(_, g)| gts[g].bbox.cast()).collect();
    let gt_flat: Vec<T> = gt_boxes.iter().flat_map(|b| b.flat()).collect();

    let pred = t.gather_rows(preds.boxes, &rows)?;
    let target = t.constant(Array::new(vec![m, 24], gt_flat)?)?;
    let diff = t.sub(pred, target)?;
    let diff = t.abs(diff)?;
    let l1 = t.mean_axes(diff, &[1])?;

    let corners = t.reshape(pred, &[m, 8, 3])?;
    let p_min = t.min_axis(corners, 1)?;
    let p_max = t.max_axis(corners, 1)?;
    let (g_min, g_max) = gt_extents(&gt_boxes)?;
    let g_min = t.constant(g_min)?;
    let g_max = t.constant(g_max)?;
    let g_vol = {
        let span = t.sub(g_max, g_min)?;
        product_of_columns(t, span)?
    };
    let p_vol = {
        let span = t.sub(p_max, p_min)?;
        let span = t.relu(span)?;
        product_of_columns(t, span)?
    };
    let lo = t.maximum(p_min, g_min)?;
    let hi = t.minimum(p_max, g_max)?;
    let overlap = t.sub(hi, lo)?;
    let overlap = t.relu(overlap)?;
    let inter = product_of_columns(t, overlap)?;
    let union = t.add(p_vol, g_vol)?;
    let union = t.sub(union, inter)?;
    let iou = t.div(inter, union)?;
    let c_lo = t.minimum(p_min, g_min)?;
    let c_hi = t.maximum(p_max, g_max)?;
    let c_span = t.sub(c_hi, c_lo)?;
    let c_vol = product_of_columns(t, c_span)?;
    let excess = t.sub(c_vol, union)?;
    let excess = t.div(excess, c_vol)?;
    let giou = t.sub(iou, excess)?;

    let iou_term = t.neg(giou)?;
    let iou_term = t.add_scalar(iou_term, 1.0)?;
    let iou_term = t.scale(iou_term, cfg.lambda_iou)?;
    let l1_term = t.scale(l1, cfg.lambda_l1)?;
    let per_pair = t.add(iou_term, l1_term)?;
    let boxes = t.sum(per_pair)?;
    let total = t.add(boxes, ce)?;
    Ok((total, assignment))
}

/// Per-box AABB minimum and maximum, each `[m, 3]`.
fn gt_extents<T: Scalar>(boxes: &[Box3D<T>]) -> Result<(Array<T>, Array<T>)> {
    let mut lo = Vec::with_capacity(boxes.len() * 3);
    let mut hi = Vec::with_capacity(boxes.len() * 3);
    for b in boxes {
        let h = crate::geometry::aabb(b);
        lo.extend(h.min);
        hi.extend(h.max);
    }
    Ok((Array::new(vec![boxes.len(), 3], lo)?, Array::new(vec![boxes.len(), 3], hi)?))
}

/// `x[:, 0] · x[:, 1] · x[:, 2]` for an `[m, 3]` input.
fn product_of_columns<T: Scalar>(t: &mut Tape<T>, x: Var) -> Result<Var> {
    let a = t.slice(x, 1, 0, 1)?;
    let b = t.slice(x, 1, 1, 2)?;
    let c = t.slice(x, 1, 2, 3)?;
    let ab = t.mul(a, b)?;
    let abc = t.mul(ab, c)?;
    let m = t.shape(x)[0];
    t.reshape(abc, &[m])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{box_from_pose, Mat3};
    use crate::matching::hungarian::brute_force_assignment;
    use rand::{seq::SliceRandom, Rng};

    fn cube(center: [f64; 3], side: f64) -> Box3D<f64> {
        box_from_pose(center, [side; 3], &Mat3::identity()).unwrap()
    }

    fn random_box(rng: &mut impl Rng) -> Box3D<f64> {
        let c = [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0));
        let s = [0, 1, 2].map(|_| rng.gen_range(0.3..1.0));
        box_from_pose(c, s, &Mat3::rotation_z(rng.gen_range(0.0..1.0))).unwrap()
    }

    fn random_preds(rng: &mut impl Rng, j: usize, c: usize) -> DetectionSet<f64> {
        let boxes = (0..j)
            .map(|_| {
                let flat: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.5..1.5)).collect();
                Box3D::from_flat(&flat).unwrap()
            })
            .collect();
        let logits = (0..j * (c + 1)).map(|_| rng.gen_range(-2.0..2.0)).collect();
        DetectionSet { boxes, logits: Array::new(vec![j, c + 1], logits).unwrap() }
    }

    fn random_gts(rng: &mut impl Rng, m: usize, c: usize) -> Vec<LabeledBox<f64>> {
        (0..m).map(|_| LabeledBox { bbox: random_box(rng), class_id: rng.gen_range(0..c) }).collect()
    }

    fn tape_loss(preds: &DetectionSet<f64>, gts: &[LabeledBox<f64>], cfg: &LossConfig) -> (f64, Assignment) {
        let mut t = Tape::new();
        let flat: Vec<f64> = preds.boxes.iter().flat_map(|b| b.flat()).collect();
        let boxes = t.leaf(Array::new(vec![preds.len(), 24], flat).unwrap()).unwrap();
        let logits = t.leaf(preds.logits.clone()).unwrap();
        let (l, a) = hungarian_loss(&mut t, DetectionVars { boxes, logits }, gts, cfg).unwrap();
        (t.value(l).item(), a)
    }

    #[test]
    fn identical_boxes_cost_nothing() {
        let b = cube([0.1, 0.2, 0.3], 0.7);
        assert_eq!(box_loss(&b, &b, &LossConfig::default()), 0.0);
    }

    #[test]
    fn half_shifted_unit_cubes() {
        let a = cube([0.5; 3], 1.0);
        let b = cube([1.0, 0.5, 0.5], 1.0);
        let got = box_loss(&a, &b, &LossConfig::default());
        let want = 2.0 * (2.0 / 3.0) + 5.0 * (0.5 / 3.0);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn box_loss_is_nonnegative() {
        let mut rng = crate::seed::rng_for(1, "box-loss");
        for _ in 0..200 {
            let (a, b) = (random_box(&mut rng), random_box(&mut rng));
            assert!(box_loss(&a, &b, &LossConfig::default()) >= 0.0);
        }
    }

    #[test]
    fn uniform_logits_cost_ln5() {
        assert!((cross_entropy(&[0.3; 5], 2) - 5f64.ln()).abs() < 1e-15);
        let b = cube([0.0; 3], 1.0);
        let gt = LabeledBox { bbox: b, class_id: 1 };
        assert!((match_cost(&b, &[0.0; 5], &gt, &LossConfig::default()) - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cost_decreases_with_true_logit() {
        let b = cube([0.0; 3], 1.0);
        let gt = LabeledBox { bbox: b, class_id: 0 };
        let mut last = f64::INFINITY;
        for k in 0..10 {
            let cost = match_cost(&b, &[k as f64 * 0.5, 0.0, 0.0, 0.0, 0.0], &gt, &LossConfig::default());
            assert!(cost < last);
            last = cost;
        }
    }

    #[test]
    fn empty_scene_pays_noobj_everywhere() {
        let mut rng = crate::seed::rng_for(2, "empty");
        let preds = random_preds(&mut rng, 4, 4);
        let cfg = LossConfig::default();
        let (l, _) = hungarian_loss_value(&preds, &[], &cfg).unwrap();
        let want: f64 = (0..4).map(|j| 0.1 * cross_entropy(&preds.logits.data()[j * 5..j * 5 + 5], 4)).sum();
        assert!((l - want).abs() < 1e-12);
        let (lt, _) = tape_loss(&preds, &[], &cfg);
        assert!((lt - want).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_approaches_zero() {
        let gt = LabeledBox { bbox: cube([0.2, 0.0, -0.1], 0.8), class_id: 2 };
        let far = cube([5.0; 3], 0.1);
        let mut logits = vec![-30.0; 10];
        logits[2] = 30.0;
        logits[9] = 30.0;
        let preds = DetectionSet { boxes: vec![gt.bbox, far], logits: Array::new(vec![2, 5], logits).unwrap() };
        let (l, a) = hungarian_loss_value(&preds, &[gt], &LossConfig::default()).unwrap();
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert!(l < 1e-10);
    }

    #[test]
    fn optimal_assignment_beats_every_alternative() {
        let mut rng = crate::seed::rng_for(3, "optimal");
        let cfg = LossConfig::default();
        for _ in 0..20 {
            let preds = random_preds(&mut rng, 4, 4);
            let gts = random_gts(&mut rng, 2, 4);
            let (best, _) = hungarian_loss_value(&preds, &gts, &cfg).unwrap();
            for p0 in 0..4 {
                for p1 in (0..4).filter(|&p| p != p0) {
                    let alt = Assignment { pairs: vec![(p0, 0), (p1, 1)], num_preds: 4 };
                    assert!(best <= assignment_loss(&preds, &gts, &alt, &cfg) + 1e-12);
                }
            }
            let cost = cost_matrix(&preds, &gts, &cfg);
            assert!(brute_force_assignment(&cost, 4).is_some());
        }
    }

    #[test]
    fn tape_loss_matches_plain_value() {
        let mut rng = crate::seed::rng_for(4, "consistency");
        let cfg = LossConfig::default();
        for _ in 0..20 {
            let preds = random_preds(&mut rng, 6, 4);
            let gts = random_gts(&mut rng, 3, 4);
            let (plain, a) = hungarian_loss_value(&preds, &gts, &cfg).unwrap();
            let (taped, b) = tape_loss(&preds, &gts, &cfg);
            assert_eq!(a, b);
            assert!((plain - taped).abs() < 1e-10, "{plain} vs {taped}");
        }
    }

    #[test]
    fn invariant_under_gt_permutation() {
        let mut rng = crate::seed::rng_for(6, "gt-perm");
        let cfg = LossConfig::default();
        for _ in 0..20 {
            let preds = random_preds(&mut rng, 6, 4);
            let gts = random_gts(&mut rng, 3, 4);
            let (l, _) = tape_loss(&preds, &gts, &cfg);
            let mut shuffled = gts.clone();
            shuffled.shuffle(&mut rng);
            let (ls, _) = tape_loss(&preds, &shuffled, &cfg);
            assert_eq!(l.to_bits(), ls.to_bits());
        }
    }

    #[test]
    fn invariant_under_joint_prediction_permutation() {
        let mut rng = crate::seed::rng_for(7, "pred-perm");
        let cfg = LossConfig::default();
        let preds = random_preds(&mut rng, 5, 4);
        let gts = random_gts(&mut rng, 2, 4);
        let (l, _) = hungarian_loss_value(&preds, &gts, &cfg).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let permuted = DetectionSet {
            boxes: perm.iter().map(|&p| preds.boxes[p]).collect(),
            logits: Array::new(
                vec![5, 5],
                perm.iter().flat_map(|&p| preds.logits.data()[p * 5..p * 5 + 5].to_vec()).collect(),
            )
            .unwrap(),
        };
        let (lp, _) = hungarian_loss_value(&permuted, &gts, &cfg).unwrap();
        assert!((l - lp).abs() < 1e-12);
    }

    #[test]
    fn too_many_objects_rejected() {
        let mut rng = crate::seed::rng_for(8, "too-many");
        let preds = random_preds(&mut rng, 2, 4);
        let gts = random_gts(&mut rng, 3, 4);
        assert!(hungarian_loss_value(&preds, &gts, &LossConfig::default()).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = crate::seed::rng_for(9, "loss-fd");
        let cfg = LossConfig::default();
        let preds = random_preds(&mut rng, 4, 3);
        let gts = random_gts(&mut rng, 2, 3);
        let flat: Vec<f64> = preds.boxes.iter().flat_map(|b| b.flat()).collect();

        let mut t = Tape::new();
        let boxes = t.leaf(Array::new(vec![4, 24], flat.clone()).unwrap()).unwrap();
        let logits = t.leaf(preds.logits.clone()).unwrap();
        let (l, assignment) = hungarian_loss(&mut t, DetectionVars { boxes, logits }, &gts, &cfg).unwrap();
        let g = t.grads(l).unwrap();
        let gb = g.wrt(boxes).unwrap().clone();
        let gl = g.wrt(logits).unwrap().clone();

        let eval = |flat: &[f64], logits: &[f64]| {
            let p = DetectionSet {
                boxes: flat.chunks(24).map(|c| Box3D::from_flat(c).unwrap()).collect(),
                logits: Array::new(vec![4, 4], logits.to_vec()).unwrap(),
            };
            assignment_loss(&p, &gts, &assignment, &cfg)
        };
        let h = 1e-6;
        for i in 0..flat.len() {
            let (mut up, mut dn) = (flat.clone(), flat.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (eval(&up, preds.logits.data()) - eval(&dn, preds.logits.data())) / (2.0 * h);
            assert!((fd - gb.data()[i]).abs() / fd.abs().max(1.0) < 1e-5, "box {i}: {fd} vs {}", gb.data()[i]);
        }
        for i in 0..preds.logits.len() {
            let (mut up, mut dn) = (preds.logits.data().to_vec(), preds.logits.data().to_vec());
            up[i] += h;
            dn[i] -= h;
            let fd = (eval(&flat, &up) - eval(&flat, &dn)) / (2.0 * h);
            assert!((fd - gl.data()[i]).abs() / fd.abs().max(1.0) < 1e-5, "logit {i}");
        }
    }
}

use radloc::autodiff::{grad_check, Array, ParamStore, Tape, Var};
use radloc::seed::rng_for;
use radloc::Result;
use rand::Rng;

type Op = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

fn random(shape: &[usize], lo: f64, hi: f64, seed: &str) -> Array<f64> {
    let mut rng = rng_for(3, seed);
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Array::new(shape.to_vec(), data).unwrap()
}

/// Checks `Σ w ⊙ op(inputs)` against central differences for every input entry.
fn check(name: &str, inputs: Vec<Array<f64>>, op: Op) {
    let mut store = ParamStore::new();
    let ids: Vec<_> =
        inputs.into_iter().enumerate().map(|(i, a)| store.register(format!("{name}.{i}"), a).unwrap()).collect();
    let out_shape = {
        let mut t = Tape::new();
        let vars: Vec<Var> = ids.iter().map(|&id| t.param(&store, id).unwrap()).collect();
        let y = op(&mut t, &vars).unwrap();
        t.shape(y).to_vec()
    };
    let weights = random(&out_shape, -1.0, 1.0, &format!("{name}/w"));
    let report = grad_check(
        &store,
        |t, ps| {
            let vars: Vec<Var> = ids.iter().map(|&id| t.param(ps, id)).collect::<Result<_>>()?;
            let y = op(t, &vars)?;
            let w = t.constant(weights.clone())?;
            let p = t.mul(y, w)?;
            t.sum(p)
        },
        1e-6,
    )
    .unwrap();
    assert!(
        report.max_relative_error < 1e-6,
        "{name}: max error {:.3e} in {:?}",
        report.max_relative_error,
        report.per_param.first()
    );
}

#[test]
fn elementwise_binary_ops() {
    let a = || random(&[3, 4], -2.0, 2.0, "a");
    let b = || random(&[3, 4], 0.5, 2.5, "b");
    let row = || random(&[4], -1.0, 1.0, "row");
    check("add", vec![a(), b()], |t, v| t.add(v[0], v[1]));
    check("add_broadcast", vec![a(), row()], |t, v| t.add(v[0], v[1]));
    check("sub", vec![a(), row()], |t, v| t.sub(v[0], v[1]));
    check("mul", vec![a(), b()], |t, v| t.mul(v[0], v[1]));
    check("mul_broadcast", vec![a(), row()], |t, v| t.mul(v[0], v[1]));
    check("div", vec![a(), b()], |t, v| t.div(v[0], v[1]));
    // the second operand alternates far above and far below the first
    let far = {
        let d: Vec<f64> =
            (0..12).map(|i| if i % 2 == 0 { 3.0 + 0.1 * i as f64 } else { -3.0 - 0.1 * i as f64 }).collect();
        Array::new(vec![3, 4], d).unwrap()
    };
    check("maximum", vec![a(), far], |t, v| {
        let s = t.scale(v[1], -1.0)?;
        let m = t.maximum(v[0], v[1])?;
        let n = t.minimum(v[0], s)?;
        t.add(m, n)
    });
}

#[test]
fn elementwise_unary_ops() {
    let x = || random(&[2, 5], -2.0, 2.0, "x");
    let pos = || random(&[2, 5], 0.2, 3.0, "pos");
    check("scale", vec![x()], |t, v| t.scale(v[0], -1.7));
    check("add_scalar", vec![x()], |t, v| t.add_scalar(v[0], 0.3));
    check("neg", vec![x()], |t, v| t.neg(v[0]));
    check("abs", vec![pos()], |t, v| {
        let n = t.neg(v[0])?;
        t.abs(n)
    });
    check("exp", vec![x()], |t, v| t.exp(v[0]));
    check("log", vec![pos()], |t, v| t.log(v[0]));
    check("sigmoid", vec![x()], |t, v| t.sigmoid(v[0]));
    check("relu", vec![pos()], |t, v| {
        let y = t.relu(v[0])?;
        let n = t.neg(v[0])?;
        let z = t.relu(n)?;
        t.add(y, z)
    });
    check("gelu", vec![x()], |t, v| t.gelu(v[0]));
}

#[test]
fn matrix_and_normalisation_ops() {
    check("matmul", vec![random(&[3, 4], -1.0, 1.0, "m1"), random(&[4, 2], -1.0, 1.0, "m2")], |t, v| {
        t.matmul(v[0], v[1])
    });
    check("transpose", vec![random(&[3, 4], -1.0, 1.0, "tr")], |t, v| t.transpose(v[0]));
    check("softmax", vec![random(&[3, 4], -2.0, 2.0, "sm")], |t, v| t.softmax(v[0], 1));
    check("softmax_axis0", vec![random(&[3, 4], -2.0, 2.0, "sm0")], |t, v| t.softmax(v[0], 0));
    check("log_softmax", vec![random(&[3, 4], -2.0, 2.0, "lsm")], |t, v| t.log_softmax(v[0], 1));
    check("layer_norm", vec![random(&[3, 6], -2.0, 2.0, "ln")], |t, v| t.layer_norm(v[0], 1, 1e-5));
}

#[test]
fn reductions_and_shape_ops() {
    let x = || random(&[2, 3, 4], -2.0, 2.0, "r");
    check("sum", vec![x()], |t, v| t.sum(v[0]));
    check("mean", vec![x()], |t, v| t.mean(v[0]));
    check("sum_axes", vec![x()], |t, v| t.sum_axes(v[0], &[0, 2]));
    check("mean_axes", vec![x()], |t, v| t.mean_axes(v[0], &[1]));
    // distinct values so the extremum is unique
    let distinct = || {
        let data: Vec<f64> = (0..24).map(|i| ((i * 7) % 24) as f64 * 0.1).collect();
        Array::new(vec![2, 3, 4], data).unwrap()
    };
    check("max_axis", vec![distinct()], |t, v| t.max_axis(v[0], 2));
    check("min_axis", vec![distinct()], |t, v| t.min_axis(v[0], 1));
    check("reshape", vec![x()], |t, v| t.reshape(v[0], &[6, 4]));
    check("broadcast", vec![random(&[4], -1.0, 1.0, "bc")], |t, v| t.broadcast(v[0], &[3, 4]));
    check("concat", vec![random(&[2, 3], -1.0, 1.0, "c1"), random(&[2, 2], -1.0, 1.0, "c2")], |t, v| {
        t.concat(&[v[0], v[1]], 1)
    });
    check("slice", vec![random(&[5, 3], -1.0, 1.0, "sl")], |t, v| t.slice(v[0], 0, 1, 4));
    check("gather_rows", vec![random(&[4, 3], -1.0, 1.0, "g")], |t, v| t.gather_rows(v[0], &[2, 0, 2]));
}

#[test]
fn gradients_are_linear_in_the_objective() {
    let mut store = ParamStore::new();
    let w = store.register("w", random(&[4, 3], -1.0, 1.0, "lin_w")).unwrap();
    let x = random(&[5, 4], -1.0, 1.0, "lin_x");
    let f = |t: &mut Tape<f64>, ps: &ParamStore<f64>, kind: u8| -> Result<Var> {
        let xv = t.constant(x.clone())?;
        let wv = t.param(ps, w)?;
        let y = t.matmul(xv, wv)?;
        let a = t.gelu(y)?;
        let a = t.sum(a)?;
        let s = t.softmax(y, 1)?;
        let l = t.log(s)?;
        let b = t.mean(l)?;
        match kind {
            0 => Ok(a),
            1 => Ok(b),
            _ => {
                let a = t.scale(a, 2.5)?;
                let b = t.scale(b, -0.75)?;
                t.add(a, b)
            }
        }
    };
    let grad = |kind| {
        let mut t = Tape::new();
        let l = f(&mut t, &store, kind).unwrap();
        t.param_gradients(l, &store).unwrap().get(w).unwrap().clone()
    };
    let (ga, gb, gc) = (grad(0), grad(1), grad(2));
    for i in 0..ga.len() {
        let want = 2.5 * ga.data()[i] - 0.75 * gb.data()[i];
        assert!((gc.data()[i] - want).abs() < 1e-12);
    }
}

#[test]
fn repeated_backward_is_bitwise_identical() {
    let mut store = ParamStore::new();
    let w = store.register("w", random(&[6, 6], -1.0, 1.0, "det_w")).unwrap();
    let run = || {
        let mut t = Tape::new();
        let wv = t.param(&store, w).unwrap();
        let y = t.matmul(wv, wv).unwrap();
        let y = t.layer_norm(y, 1, 1e-5).unwrap();
        let y = t.softmax(y, 0).unwrap();
        let l = t.sum(y).unwrap();
        let l = t.log(l).unwrap();
        t.param_gradients(l, &store).unwrap().get(w).unwrap().clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_forward_values_are_errors() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Array::from_f64(vec![2], &[0.0, 1.0]).unwrap()).unwrap();
    assert!(t.log(x).is_err());
}

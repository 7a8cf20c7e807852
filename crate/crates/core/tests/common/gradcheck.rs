//! Central finite differences against reverse-mode gradients.

use deeptransport::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use deeptransport::dataset::{SampleIndex, SampleRef};
use deeptransport::model::{Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const POINTS: u64 = 20;
pub const TOL: f64 = 1e-5;
const H: f64 = 1e-4;

type Op = Box<dyn Fn(&mut Tape, &[Var]) -> Var + Sync>;

pub struct Case {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub op: Op,
}

fn case(name: &'static str, shapes: &[&[usize]], op: impl Fn(&mut Tape, &[Var]) -> Var + Sync + 'static) -> Case {
    Case {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        op: Box::new(op),
    }
}

/// One case per tape primitive.
pub fn primitives() -> Vec<Case> {
    vec![
        case("affine", &[&[4, 3], &[3, 5], &[5]], |t, v| t.affine(v[0], v[1], v[2]).unwrap()),
        case("conv1d_nonoverlap", &[&[3, 6], &[2, 4], &[4]], |t, v| t.conv1d_nonoverlap(v[0], v[1], v[2], 2).unwrap()),
        case("reshape", &[&[4, 3]], |t, v| {
            let r = t.reshape(v[0], vec![2, 6]).unwrap();
            t.tanh(r).unwrap()
        }),
        case("tanh", &[&[3, 4]], |t, v| t.tanh(v[0]).unwrap()),
        case("sigmoid", &[&[3, 4]], |t, v| t.sigmoid(v[0]).unwrap()),
        case("softmax", &[&[3, 5]], |t, v| t.softmax(v[0]).unwrap()),
        case("add", &[&[3, 4], &[3, 4]], |t, v| t.add(v[0], v[1]).unwrap()),
        case("mul", &[&[3, 4], &[3, 4]], |t, v| t.mul(v[0], v[1]).unwrap()),
        case("concat_columns", &[&[3, 2], &[3, 4]], |t, v| t.concat(&[v[0], v[1], v[0]], 1).unwrap()),
        case("concat_rows", &[&[2, 3], &[4, 3]], |t, v| t.concat(&[v[0], v[1]], 0).unwrap()),
        case("slice_cols", &[&[3, 6]], |t, v| t.slice_cols(v[0], 2, 3).unwrap()),
        case("slice_rows", &[&[6, 3]], |t, v| t.slice_rows(v[0], 1, 4).unwrap()),
        case("scale_rows", &[&[4, 3], &[4, 1]], |t, v| t.scale_rows(v[0], v[1]).unwrap()),
        case("gather", &[&[5, 3]], |t, v| t.gather(v[0], vec![4, 0, 0, 2, 4, 1]).unwrap()),
        case("gather_sum", &[&[6, 3]], |t, v| t.gather_sum(v[0], vec![0, 5, 1, 1, 3, 2, 4, 0, 5], 3).unwrap()),
        case("matmul", &[&[3, 4], &[4, 2]], |t, v| t.matmul(v[0], v[1]).unwrap()),
        case("sum_groups", &[&[6, 2]], |t, v| t.sum_groups(v[0], 3).unwrap()),
        case("masked_max_pool", &[&[9, 4]], |t, v| {
            let mask = [true, false, true, false, false, false, true, true, true];
            t.masked_max_pool(v[0], &mask, 3, 0.0).unwrap()
        }),
        case("squared_error", &[&[3, 2], &[3, 2]], |t, v| {
            let mask = [true, true, false, true, true, false];
            t.squared_error(v[0], v[1], &mask).unwrap()
        }),
        case("sum", &[&[3, 4]], |t, v| {
            let s = t.sigmoid(v[0]).unwrap();
            t.sum(s).unwrap()
        }),
    ]
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-6)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

/// Compares every parameter coordinate. Returns the worst per-coordinate
/// relative error and the relative error of the whole gradient vector,
/// `‖a − n‖ / (‖a‖ + ‖n‖)`.
pub fn check<F>(params: &ParamStore, f: F) -> (f64, f64)
where
    F: Fn(&mut Tape) -> Var,
{
    let mut tape = Tape::new(params);
    let loss = f(&mut tape);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    for (id, _, t) in params.iter() {
        for k in 0..t.len() {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.get_mut(id).data_mut()[k] += delta;
                let mut tape = Tape::new(&p);
                let l = f(&mut tape);
                tape.value(l).item()
            };
            // Five-point central stencil: truncation error O(h⁴).
            let numeric = (8.0 * (eval(H) - eval(-H)) - (eval(2.0 * H) - eval(-2.0 * H))) / (12.0 * H);
            let analytic = grads.get(id).data()[k];
            worst = worst.max(rel_err(analytic, numeric));
            diff2 += (analytic - numeric).powi(2);
            a2 += analytic * analytic;
            n2 += numeric * numeric;
        }
    }
    (worst, diff2.sqrt() / (a2.sqrt() + n2.sqrt()).max(1e-300))
}

/// Worst per-coordinate relative error of `case` over `POINTS` random
/// points. The scalar loss is `Σ op(..) ⊙ R` for a fixed random `R`.
pub fn primitive_error(case: &Case) -> f64 {
    let mut worst: f64 = 0.0;
    for point in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(point * 1000 + case.name.len() as u64);
        let mut params = ParamStore::new();
        let ids: Vec<ParamId> = case
            .shapes
            .iter()
            .enumerate()
            .map(|(i, s)| params.insert(format!("x{i}"), random(&mut rng, s)).unwrap())
            .collect();
        let probe_seed = rng.gen::<u64>();
        let (err, _) = check(&params, |tape| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
            let out = (case.op)(tape, &vars);
            if tape.value(out).len() == 1 {
                return out;
            }
            let shape = tape.value(out).shape().to_vec();
            let r = random(&mut ChaCha8Rng::seed_from_u64(probe_seed), &shape);
            let r = tape.leaf(r).unwrap();
            let m = tape.mul(out, r).unwrap();
            tape.sum(m).unwrap()
        });
        worst = worst.max(err);
    }
    worst
}

/// Worst (vector, per-coordinate) relative errors of the full network at
/// a tiny configuration over `POINTS` random points.
pub fn tiny_model_errors() -> (f64, f64) {
    let graph = super::fig3();
    let store = super::patterned_store(&graph, 40);
    let config = ModelConfig {
        history: 2,
        radius: 2,
        width: 2,
        embed_dim: 3,
        feature_maps: 2,
        hidden: 3,
        horizons: vec![1, 3],
        attn_hidden: 4,
    };
    let index = SampleIndex::new(&store, &graph, config.sample_spec()).unwrap();
    let (mut whole, mut coord): (f64, f64) = (0.0, 0.0);
    for point in 0..POINTS {
        let mut model = Model::new(config.clone(), point).unwrap();
        // Spread the weights so gates and attention leave their linear regime.
        let mut rng = ChaCha8Rng::seed_from_u64(point);
        let ids: Vec<ParamId> = model.params().iter().map(|(id, _, _)| id).collect();
        for id in ids {
            for x in model.params_mut().get_mut(id).data_mut() {
                *x += rng.gen_range(-0.3..0.3);
            }
        }
        let refs: Vec<SampleRef> = (0..4)
            .map(|k| index.refs()[(point as usize * 7 + k * 11) % index.len()])
            .collect();
        let batch = index.batch(&refs);
        let (worst, vector) = check(model.params(), |tape| {
            let out = model.forward_tape(tape, &batch).unwrap();
            deeptransport::model::loss(tape, out.predictions, &batch.labels, &batch.label_mask).unwrap()
        });
        whole = whole.max(vector);
        coord = coord.max(worst);
    }
    (whole, coord)
}

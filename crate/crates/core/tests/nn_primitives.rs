use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use squim::nn::{
    attention_weights, grad_check, AttentionWeights, ChunkLayout, LstmWeights, NnError, Tape, Tensor, Var,
};

const PRIMITIVE_TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Reduces `out` to a scalar with fixed pseudo-random weights so that every
/// output element contributes a distinct gradient.
fn probe(tape: &Tape, out: &Var, seed: u64) -> Result<Var, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(rand_tensor(&mut rng, out.shape(), 1.0));
    let prod = tape.mul(out, &w)?;
    tape.sum(&prod)
}

fn assert_grad_ok(params: &[Tensor], f: impl Fn(&Tape, &[Var]) -> Result<Var, NnError>) {
    let report = grad_check(params, f).unwrap();
    assert!(
        report.max_rel_error < PRIMITIVE_TOL,
        "max rel err {} at {:?}",
        report.max_rel_error,
        report.worst
    );
}

#[test]
fn matmul_identity_and_transpose() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = tape.constant(rand_tensor(&mut rng, &[3, 4], 1.0));
    let mut eye = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        eye.data_mut()[i * 3 + i] = 1.0;
    }
    let i = tape.constant(eye);
    assert_eq!(tape.matmul(&i, &a).unwrap().value(), a.value());
    let tt = tape.transpose(&tape.transpose(&a).unwrap()).unwrap();
    assert_eq!(tt.value(), a.value());
}

#[test]
fn shape_errors_report_offending_shapes() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    match tape.matmul(&a, &b) {
        Err(NnError::ShapeMismatch { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
    let c = tape.constant(Tensor::zeros(&[3, 2]));
    assert!(tape.add(&a, &c).is_err());
    assert!(tape.reshape(&a, &[5]).is_err());
}

#[test]
fn matmul_gradient_is_transpose_structured() {
    // d/dA sum(A B) = 1 B^T: every row equals the row sums of B.
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = tape.param(rand_tensor(&mut rng, &[2, 3], 1.0));
    let b = tape.param(rand_tensor(&mut rng, &[3, 4], 1.0));
    let loss = tape.sum(&tape.matmul(&a, &b).unwrap()).unwrap();
    let g = tape.backward(&loss).unwrap();
    let ga = g.get(&a).unwrap();
    for r in 0..2 {
        for k in 0..3 {
            let row_sum: f64 = b.data()[k * 4..k * 4 + 4].iter().sum();
            assert!((ga[r * 3 + k] - row_sum).abs() < 1e-12);
        }
    }
    let params = [a.value().clone(), b.value().clone()];
    assert_grad_ok(&params, |t, p| t.sum(&t.matmul(&p[0], &p[1])?));
}

#[test]
fn linear_algebra_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(&mut rng, &[3, 4], 1.0);
    let b = rand_tensor(&mut rng, &[3, 4], 1.0);
    let bias = rand_tensor(&mut rng, &[4], 1.0);
    assert_grad_ok(&[a.clone(), b.clone()], |t, p| {
        let s = t.add(&p[0], &p[1])?;
        let d = t.sub(&s, &p[1])?;
        let m = t.mul(&d, &p[1])?;
        probe(t, &m, 10)
    });
    assert_grad_ok(&[a.clone(), bias], |t, p| {
        let y = t.add_row_bias(&p[0], &p[1])?;
        probe(t, &t.scale(&y, 1.7)?, 11)
    });
    assert_grad_ok(&[a.clone(), b.clone()], |t, p| {
        let c = t.concat(&[&p[0], &p[1]], 1)?;
        let s = t.slice(&c, 1, 2, 7)?;
        let r = t.reshape(&s, &[5, 3])?;
        let tr = t.transpose(&r)?;
        probe(t, &tr, 12)
    });
    let x3 = rand_tensor(&mut rng, &[2, 3, 4], 1.0);
    assert_grad_ok(&[x3], |t, p| {
        let y = t.permute(&p[0], &[2, 0, 1])?;
        let c = t.concat(&[&y, &y], 0)?;
        probe(t, &c, 13)
    });
    assert_grad_ok(&[a, b], |t, p| {
        let d = t.sub(&p[0], &p[1])?;
        let l1 = t.mean_abs(&d)?;
        let l2 = t.mean_square(&d)?;
        let m = t.mean(&p[0])?;
        let s = t.add(&l1, &l2)?;
        t.add(&s, &m)
    });
}

#[test]
fn permute_round_trip() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = tape.constant(rand_tensor(&mut rng, &[2, 3, 4], 1.0));
    let y = tape.permute(&x, &[1, 2, 0]).unwrap();
    assert_eq!(y.shape(), &[3, 4, 2]);
    assert_eq!(y.value().at(&[2, 1, 0]), x.value().at(&[0, 2, 1]));
    let back = tape.permute(&y, &[2, 0, 1]).unwrap();
    assert_eq!(back.value(), x.value());
}

#[test]
fn activation_values() {
    let tape = Tape::new();
    let x = tape.param(Tensor::from_vec(vec![0.0, -1.0, 2.0]));
    let s = tape.sigmoid(&x).unwrap();
    assert_eq!(s.data()[0], 0.5);
    let r = tape.relu(&x).unwrap();
    assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
    let loss = tape.sum(&r).unwrap();
    let g = tape.backward(&loss).unwrap();
    assert_eq!(g.get(&x).unwrap()[1], 0.0);

    let a = tape.constant(Tensor::scalar(0.25));
    let p = tape.prelu(&x, &a).unwrap();
    assert_eq!(p.data(), &[0.0, -0.25, 2.0]);
    let th = tape.tanh(&x).unwrap();
    assert!((th.data()[2] - 2f64.tanh()).abs() < 1e-15);
}

#[test]
fn activation_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // keep away from the ReLU/PReLU kink
    let x = Tensor::new(
        vec![3, 5],
        (0..15)
            .map(|_| {
                let v: f64 = rng.gen_range(0.05..2.0);
                if rng.gen_bool(0.5) { v } else { -v }
            })
            .collect(),
    )
    .unwrap();
    assert_grad_ok(&[x.clone()], |t, p| probe(t, &t.sigmoid(&p[0])?, 20));
    assert_grad_ok(&[x.clone()], |t, p| probe(t, &t.tanh(&p[0])?, 21));
    assert_grad_ok(&[x.clone()], |t, p| probe(t, &t.relu(&p[0])?, 22));
    assert_grad_ok(&[x.clone(), Tensor::scalar(0.3)], |t, p| probe(t, &t.prelu(&p[0], &p[1])?, 23));
    assert_grad_ok(&[x], |t, p| probe(t, &t.softmax_rows(&p[0])?, 24));
}

#[test]
fn softmax_rows_sum_to_one_without_overflow() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = tape.constant(rand_tensor(&mut rng, &[20, 7], 1000.0));
    let y = tape.softmax_rows(&x).unwrap();
    for row in y.data().chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn layer_norm_values_and_grads() {
    let tape = Tape::new();
    let gain = tape.constant(Tensor::from_vec(vec![2.0, 3.0, 4.0]));
    let bias = tape.constant(Tensor::from_vec(vec![0.1, 0.2, 0.3]));
    let x = tape.constant(Tensor::filled(&[2, 3], 5.0));
    let y = tape.layer_norm(&x, 1, &gain, &bias).unwrap();
    assert_eq!(y.data(), &[0.1, 0.2, 0.3, 0.1, 0.2, 0.3]);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = tape.constant(rand_tensor(&mut rng, &[4, 6], 3.0));
    let ones = tape.constant(Tensor::filled(&[6], 1.0));
    let zeros = tape.constant(Tensor::zeros(&[6]));
    let y = tape.layer_norm(&x, 1, &ones, &zeros).unwrap();
    for row in y.data().chunks(6) {
        let mean = row.iter().sum::<f64>() / 6.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    let x = rand_tensor(&mut rng, &[3, 4, 5], 1.0);
    let g = rand_tensor(&mut rng, &[4], 1.0);
    let b = rand_tensor(&mut rng, &[4], 1.0);
    assert_grad_ok(&[x.clone(), g, b], |t, p| probe(t, &t.layer_norm(&p[0], 1, &p[1], &p[2])?, 30));
    let g5 = rand_tensor(&mut rng, &[5], 1.0);
    let b5 = rand_tensor(&mut rng, &[5], 1.0);
    assert_grad_ok(&[x, g5, b5], |t, p| probe(t, &t.layer_norm(&p[0], 2, &p[1], &p[2])?, 31));
}

#[test]
fn conv1d_lengths_and_values() {
    assert_eq!(squim::nn::conv_out_len(80_000, 64, 32), 2499);
    assert_eq!(squim::nn::conv_out_len(64, 64, 32), 1);
    let tape = Tape::new();
    let x = tape.constant(Tensor::from_vec((1..=8).map(f64::from).collect()));
    let k = tape.constant(Tensor::filled(&[2, 1, 4], 1.0));
    let y = tape.conv1d(&x, &k, 4).unwrap();
    assert_eq!(y.shape(), &[2, 2]);
    assert_eq!(y.data(), &[10.0, 26.0, 10.0, 26.0]);
    let short = tape.constant(Tensor::from_vec(vec![1.0; 3]));
    assert!(matches!(tape.conv1d(&short, &k, 1), Err(NnError::InputTooShort { .. })));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&mut rng, &[1, 23], 1.0);
    let k = rand_tensor(&mut rng, &[3, 1, 6], 1.0);
    assert_grad_ok(&[x, k], |t, p| probe(t, &t.conv1d(&p[0], &p[1], 3)?, 40));
}

fn lstm_params(rng: &mut ChaCha8Rng, feat: usize, hidden: usize) -> Vec<Tensor> {
    let mut out = Vec::new();
    for _ in 0..2 {
        out.push(rand_tensor(rng, &[feat, 4 * hidden], 0.5));
        out.push(rand_tensor(rng, &[hidden, 4 * hidden], 0.5));
        out.push(rand_tensor(rng, &[4 * hidden], 0.5));
    }
    out
}

fn run_blstm(t: &Tape, x: &Var, p: &[Var]) -> Result<Var, NnError> {
    t.blstm(
        x,
        LstmWeights {
            w_ih: &p[0],
            w_hh: &p[1],
            bias: &p[2],
        },
        LstmWeights {
            w_ih: &p[3],
            w_hh: &p[4],
            bias: &p[5],
        },
    )
}

#[test]
fn blstm_zero_weights_give_zero_output() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = tape.constant(rand_tensor(&mut rng, &[2, 5, 3], 1.0));
    let zeros: Vec<Var> = [[3, 16], [4, 16]]
        .iter()
        .flat_map(|s| [s.to_vec()])
        .chain([vec![16]])
        .cycle()
        .take(6)
        .map(|s| tape.constant(Tensor::zeros(&s)))
        .collect();
    let y = run_blstm(&tape, &x, &zeros).unwrap();
    assert_eq!(y.shape(), &[2, 5, 8]);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn blstm_single_step_directions_agree() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = tape.constant(rand_tensor(&mut rng, &[1, 1, 3], 1.0));
    let p = lstm_params(&mut rng, 3, 2);
    let mut vars: Vec<Var> = p.iter().take(3).map(|t| tape.constant(t.clone())).collect();
    vars.extend(p.iter().take(3).map(|t| tape.constant(t.clone())));
    let y = run_blstm(&tape, &x, &vars).unwrap();
    assert_eq!(&y.data()[..2], &y.data()[2..]);
}

#[test]
fn blstm_matches_stepwise_reference() {
    // Independent scalar recurrence for the forward direction of one sequence.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (t_len, f, h) = (4, 3, 2);
    let x = rand_tensor(&mut rng, &[1, t_len, f], 1.0);
    let p = lstm_params(&mut rng, f, h);
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars: Vec<Var> = p.iter().map(|t| tape.constant(t.clone())).collect();
    let y = run_blstm(&tape, &xv, &vars).unwrap();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
    for step in 0..t_len {
        let mut pre = vec![0.0; 4 * h];
        for (g, pg) in pre.iter_mut().enumerate() {
            *pg = p[2].data()[g];
            for i in 0..f {
                *pg += x.data()[step * f + i] * p[0].data()[i * 4 * h + g];
            }
            for j in 0..h {
                *pg += hs[j] * p[1].data()[j * 4 * h + g];
            }
        }
        for j in 0..h {
            let c = sig(pre[h + j]) * cs[j] + sig(pre[j]) * pre[2 * h + j].tanh();
            cs[j] = c;
            hs[j] = sig(pre[3 * h + j]) * c.tanh();
        }
        for j in 0..h {
            let got = y.value().at(&[0, step, j]);
            assert!((got - hs[j]).abs() < 1e-12);
        }
    }
}

#[test]
fn blstm_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut params = vec![rand_tensor(&mut rng, &[2, 5, 3], 1.0)];
    params.extend(lstm_params(&mut rng, 3, 3));
    assert_grad_ok(&params, |t, p| probe(t, &run_blstm(t, &p[0], &p[1..])?, 50));
}

fn attention_case(t: &Tape, p: &[Var], heads: usize) -> Result<Var, NnError> {
    let w = AttentionWeights {
        query: p[1..1 + heads].iter().collect(),
        key: p[1 + heads..1 + 2 * heads].iter().collect(),
        value: p[1 + 2 * heads..1 + 3 * heads].iter().collect(),
        output: &p[1 + 3 * heads],
    };
    t.multi_head_attention(&p[0], &w)
}

fn attention_params(rng: &mut ChaCha8Rng, l: usize, n: usize, d: usize, heads: usize) -> Vec<Tensor> {
    let mut p = vec![rand_tensor(rng, &[l, n], 1.0)];
    for _ in 0..3 * heads {
        p.push(rand_tensor(rng, &[n, d], 0.7));
    }
    p.push(rand_tensor(rng, &[heads * d, d], 0.7));
    p
}

#[test]
fn attention_single_key_passes_values_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let p = attention_params(&mut rng, 1, 4, 3, 2);
    let tape = Tape::new();
    let vars: Vec<Var> = p.iter().map(|t| tape.constant(t.clone())).collect();
    let out = attention_case(&tape, &vars, 2).unwrap();
    // With one key the softmax weight is 1: output = concat(x Wv_i) Wo.
    let v0 = tape.matmul(&vars[0], &vars[5]).unwrap();
    let v1 = tape.matmul(&vars[0], &vars[6]).unwrap();
    let cat = tape.concat(&[&v0, &v1], 1).unwrap();
    let expected = tape.matmul(&cat, &vars[7]).unwrap();
    for (a, b) in out.data().iter().zip(expected.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let p = attention_params(&mut rng, 5, 4, 4, 2);
    let tape = Tape::new();
    let vars: Vec<Var> = p.iter().map(|t| tape.constant(t.clone())).collect();
    let out = attention_case(&tape, &vars, 2).unwrap();
    let perm = [3, 0, 4, 1, 2];
    let rows: Vec<Var> = perm.iter().map(|&r| tape.slice(&vars[0], 0, r, r + 1).unwrap()).collect();
    let refs: Vec<&Var> = rows.iter().collect();
    let mut pvars = vars.clone();
    pvars[0] = tape.concat(&refs, 0).unwrap();
    let pout = attention_case(&tape, &pvars, 2).unwrap();
    for (i, &r) in perm.iter().enumerate() {
        for j in 0..4 {
            assert!((pout.value().at(&[i, j]) - out.value().at(&[r, j])).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_weight_rows_sum_to_one_and_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let q = rand_tensor(&mut rng, &[6, 4], 3.0);
    let k = rand_tensor(&mut rng, &[6, 4], 3.0);
    let w = attention_weights(q.data(), k.data(), 6, 4, 0.5);
    for row in w.chunks(6) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let p = attention_params(&mut rng, 3, 4, 4, 2);
    assert_grad_ok(&p, |t, v| probe(t, &attention_case(t, v, 2)?, 60));
}

#[test]
fn auto_pool_values() {
    let tape = Tape::new();
    let col = |v: Vec<f64>| tape.constant(Tensor::new(vec![v.len(), 1], v).unwrap());
    let pool = |x: &Var, a: f64| tape.auto_pool(x, &tape.constant(Tensor::scalar(a))).unwrap().item();
    assert!((pool(&col(vec![1.0, 3.0]), 0.0) - 2.0).abs() < 1e-15);
    assert!((pool(&col(vec![1.0, 3.0]), 50.0) - 3.0).abs() < 1e-8);
    // softmax([0, ln 3]) = [1/4, 3/4]
    let expected = 0.75 * 3f64.ln();
    assert!((pool(&col(vec![0.0, 3f64.ln()]), 1.0) - expected).abs() < 1e-12);
    assert!((expected - 0.823959).abs() < 1e-6);
    // large magnitudes stay finite
    assert!(pool(&col(vec![900.0, -900.0]), 1.0).is_finite());
}

#[test]
fn auto_pool_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = rand_tensor(&mut rng, &[5, 3], 1.0);
    assert_grad_ok(&[x, Tensor::scalar(0.7)], |t, p| probe(t, &t.auto_pool(&p[0], &p[1])?, 70));
}

/// Number of chunks covering each position, by enumeration.
fn coverage(len: usize, layout: &ChunkLayout) -> Vec<f64> {
    (0..len)
        .map(|i| {
            (0..layout.chunks)
                .filter(|c| (c * layout.hop..c * layout.hop + layout.chunk).contains(&i))
                .count() as f64
        })
        .collect()
}

#[test]
fn chunk_overlap_add_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (len, r) in [(2499, 71), (50, 8), (7, 8), (8, 8), (33, 6)] {
        let hop = r / 2;
        let tape = Tape::new();
        let f = tape.constant(rand_tensor(&mut rng, &[3, len], 1.0));
        let (c, layout) = tape.chunk(&f, r, hop).unwrap();
        assert_eq!(c.shape(), &[3, layout.chunks, r]);
        let back = tape.overlap_add(&c, hop, len).unwrap();
        assert_eq!(back.shape(), &[3, len]);
        let counts = coverage(len, &layout);
        if r % 2 == 0 {
            assert!(counts.iter().all(|&k| k == 1.0 || k == 2.0));
        }
        for n in 0..3 {
            for i in 0..len {
                let want = f.value().at(&[n, i]) * counts[i];
                assert!((back.value().at(&[n, i]) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn single_chunk_overlap_add_is_identity() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![2, 1, 5], (0..10).map(f64::from).collect()).unwrap());
    let y = tape.overlap_add(&x, 2, 4).unwrap();
    assert_eq!(y.data(), &[0.0, 1.0, 2.0, 3.0, 5.0, 6.0, 7.0, 8.0]);
}

#[test]
fn chunk_and_overlap_add_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let f = rand_tensor(&mut rng, &[2, 11], 1.0);
    assert_grad_ok(&[f], |t, p| {
        let (c, _) = t.chunk(&p[0], 6, 3)?;
        probe(t, &c, 80)
    });
    // two chunks of 4 at hop 2 -> natural length 6
    let c = rand_tensor(&mut rng, &[3, 2, 4], 1.0);
    assert_grad_ok(&[c], |t, p| probe(t, &t.overlap_add(&p[0], 2, 5)?, 81));
}

#[test]
fn tape_replay_is_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let tape = Tape::new();
        let mut params = vec![tape.param(rand_tensor(&mut rng, &[2, 4, 3], 1.0))];
        params.extend(lstm_params(&mut rng, 3, 2).into_iter().map(|t| tape.param(t)));
        let y = run_blstm(&tape, &params[0], &params[1..]).unwrap();
        let loss = probe(&tape, &y, 5).unwrap();
        let g = tape.backward(&loss).unwrap();
        let grads: Vec<Vec<f64>> = params.iter().map(|p| g.get(p).unwrap().to_vec()).collect();
        (loss.item().to_bits(), grads)
    };
    assert_eq!(run(), run());
}

#[test]
fn nan_production_is_an_error() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::scalar(f64::MAX));
    assert!(matches!(tape.scale(&x, 10.0), Err(NnError::NonFinite { .. })));
}

#[test]
fn linear_function_gradcheck_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let x = rand_tensor(&mut rng, &[4], 1.0);
    let report = grad_check(&[x], |t, p| {
        let s = t.scale(&p[0], 3.0)?;
        t.sum(&s)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-9, "{}", report.max_rel_error);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn primitives_match_finite_differences_on_random_shapes(
        rows in 1usize..5,
        cols in 1usize..5,
        inner in 1usize..4,
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, &[rows, inner], 1.0);
        let b = rand_tensor(&mut rng, &[inner, cols], 1.0);
        let g = rand_tensor(&mut rng, &[cols], 1.0);
        let bias = rand_tensor(&mut rng, &[cols], 1.0);
        let report = grad_check(&[a, b, g, bias], |t, p| {
            let y = t.matmul(&p[0], &p[1])?;
            let y = t.tanh(&y)?;
            let y = if cols > 1 { t.layer_norm(&y, 1, &p[2], &p[3])? } else { y };
            let y = t.sigmoid(&y)?;
            probe(t, &y, seed)
        }).unwrap();
        prop_assert!(report.max_rel_error < PRIMITIVE_TOL, "{}", report.max_rel_error);
    }

    #[test]
    fn chunk_overlap_add_equals_count_scaling(len in 1usize..60, r in 2usize..12) {
        let hop = r / 2;
        let tape = Tape::new();
        let x: Vec<f64> = (0..len).map(|i| (i as f64 * 0.37).sin()).collect();
        let f = tape.constant(Tensor::from_vec(x.clone()));
        let (c, layout) = tape.chunk(&f, r, hop).unwrap();
        let back = tape.overlap_add(&c, hop, len).unwrap();
        let counts = coverage(len, &layout);
        for i in 0..len {
            prop_assert!((back.data()[i] - x[i] * counts[i]).abs() < 1e-12);
        }
    }
}

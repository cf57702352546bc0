//! Central finite-difference verification of analytic gradients.

use rayon::prelude::*;

use super::{GradBuffer, ParamStore};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Checks `analytic` against central differences of `loss` for every
/// scalar parameter in `store`.
///
/// The relative error for one scalar is |a − fd| / max(|a|, |fd|, 0.01);
/// the floor keeps finite-difference roundoff (≈1e-8 absolute here) from
/// dominating near-zero gradients while still flagging real mismatches.
pub fn check_gradients<F>(
    store: &ParamStore,
    analytic: &GradBuffer,
    loss: F,
    h: f64,
    tolerance: f64,
) -> GradCheckReport
where
    F: Fn(&ParamStore) -> f64 + Sync,
{
    let coords: Vec<(usize, usize)> = store
        .ids()
        .enumerate()
        .flat_map(|(pi, id)| (0..store.value(id).len()).map(move |ei| (pi, ei)))
        .collect();

    let chunks: Vec<(f64, String)> = coords
        .par_chunks(512.max(coords.len() / 64 + 1))
        .map(|chunk| {
            let mut local = store.clone();
            let ids: Vec<_> = local.ids().collect();
            let mut worst = (0.0_f64, String::new());
            for &(pi, ei) in chunk {
                let id = ids[pi];
                let orig = local.value(id).as_slice()[ei];
                local.value_mut(id).as_mut_slice()[ei] = orig + h;
                let up = loss(&local);
                local.value_mut(id).as_mut_slice()[ei] = orig - h;
                let down = loss(&local);
                local.value_mut(id).as_mut_slice()[ei] = orig;
                let fd = (up - down) / (2.0 * h);
                let a = analytic.get(id).as_slice()[ei];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
                if rel > worst.0 {
                    worst = (rel, format!("{}[{}]", store.name(id), ei));
                }
            }
            worst
        })
        .collect();

    let mut max_rel_err = 0.0;
    let mut worst_param = String::new();
    for (rel, name) in chunks {
        if rel >= max_rel_err {
            max_rel_err = rel;
            worst_param = name;
        }
    }
    GradCheckReport { checked: coords.len(), max_rel_err, worst_param, tolerance }
}

#[cfg(test)]
mod tests {
    use super::super::{he_init, Matrix, ParamStore, Tape};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn dense_identity_passthrough() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::identity(3));
        let b = store.add("b", Matrix::zeros(3, 1));
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::column(&[1.0, -2.0, 0.25]));
        let y = tape.dense(&store, w, Some(b), x).unwrap();
        assert_eq!(tape.value(y).as_slice(), &[1.0, -2.0, 0.25]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::column(&[-1.0, 2.0]));
        let y = tape.relu(x);
        let _ = &store;
        assert_eq!(tape.value(y).as_slice(), &[0.0, 2.0]);
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let w = store.add("w", he_init(4, 6, &mut rng));
        let b = store.add("b", he_init(4, 1, &mut rng));
        let input = he_init(6, 3, &mut rng);

        let run = |s: &ParamStore| -> (f64, Option<GradBuffer>) {
            let mut tape = Tape::new();
            let x = tape.constant(input.clone());
            let wid = s.id("w").unwrap();
            let bid = s.id("b").unwrap();
            let y = tape.dense(s, wid, Some(bid), x).unwrap();
            let y = tape.relu(y);
            let l = tape.sum_squares(y);
            let mut grads = GradBuffer::zeros_like(s);
            tape.backward(l, s, &mut grads);
            (tape.scalar(l), Some(grads))
        };
        let (_, grads) = run(&store);
        let report =
            check_gradients(&store, &grads.unwrap(), |s| run(s).0, 1e-5, 1e-6);
        assert!(report.passed(), "max rel err {} at {}", report.max_rel_err, report.worst_param);
        let _ = (w, b);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::column(&[0.0, 0.0]));
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y).as_slice(), &[0.5, 0.5]);

        let x1 = tape.constant(Matrix::column(&[3.7]));
        let y1 = tape.softmax(x1).unwrap();
        assert_eq!(tape.value(y1).as_slice(), &[1.0]);

        // extreme scores must not overflow
        let x2 = tape.constant(Matrix::column(&[1000.0, 0.0]));
        let y2 = tape.softmax(x2).unwrap();
        let v = tape.value(y2).as_slice();
        assert!(v.iter().all(|x| x.is_finite()));
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!(v[1].abs() < 1e-300);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_empty_input_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::zeros(0, 1));
        assert!(tape.softmax(x).is_err());
    }

    #[test]
    fn lstm_zero_everything_gives_zero_hidden() {
        let mut store = ParamStore::new();
        let h = 3;
        let p = super::super::LstmParamIds {
            w_i: store.add("w_i", Matrix::zeros(h, 2 * h)),
            w_f: store.add("w_f", Matrix::zeros(h, 2 * h)),
            w_c: store.add("w_c", Matrix::zeros(h, 2 * h)),
            w_o: store.add("w_o", Matrix::zeros(h, 2 * h)),
            b_i: store.add("b_i", Matrix::zeros(h, 1)),
            b_f: store.add("b_f", Matrix::zeros(h, 1)),
            b_c: store.add("b_c", Matrix::zeros(h, 1)),
            b_o: store.add("b_o", Matrix::zeros(h, 1)),
        };
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::zeros(h, 1));
        let h0 = tape.constant(Matrix::zeros(h, 1));
        let c0 = tape.constant(Matrix::zeros(h, 1));
        let (h1, c1) = super::super::lstm_cell(&mut tape, &store, &p, x, h0, c0).unwrap();
        // σ(0)=0.5, tanh(0)=0 ⇒ c = 0, h = 0
        assert!(tape.value(h1).as_slice().iter().all(|&v| v == 0.0));
        assert!(tape.value(c1).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_saturated_forget_gate_preserves_cell() {
        // f-gate bias 50 ⇒ f ≈ 1, so c_t ≈ c_prev + i⊙C̃ per the formula.
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let h = 4;
        let mut store = ParamStore::new();
        let p = super::super::LstmParamIds {
            w_i: store.add("w_i", he_init(h, 2 * h, &mut rng)),
            w_f: store.add("w_f", Matrix::zeros(h, 2 * h)),
            w_c: store.add("w_c", he_init(h, 2 * h, &mut rng)),
            w_o: store.add("w_o", he_init(h, 2 * h, &mut rng)),
            b_i: store.add("b_i", Matrix::zeros(h, 1)),
            b_f: store.add("b_f", {
                let mut m = Matrix::zeros(h, 1);
                m.fill(50.0);
                m
            }),
            b_c: store.add("b_c", Matrix::zeros(h, 1)),
            b_o: store.add("b_o", Matrix::zeros(h, 1)),
        };
        let x_in = he_init(h, 1, &mut rng);
        let c_in = he_init(h, 1, &mut rng);
        let h_in = he_init(h, 1, &mut rng);

        let mut tape = Tape::new();
        let x = tape.constant(x_in.clone());
        let h0 = tape.constant(h_in.clone());
        let c0 = tape.constant(c_in.clone());
        let (_h1, c1) = super::super::lstm_cell(&mut tape, &store, &p, x, h0, c0).unwrap();

        // direct formula evaluation with f = 1
        let z: Vec<f64> = x_in.as_slice().iter().chain(h_in.as_slice()).copied().collect();
        let zm = Matrix::from_vec(2 * h, 1, z).unwrap();
        let mut i_lin = Matrix::zeros(h, 1);
        store.value(p.w_i).matmul_into(&zm, &mut i_lin);
        let mut c_lin = Matrix::zeros(h, 1);
        store.value(p.w_c).matmul_into(&zm, &mut c_lin);
        for r in 0..h {
            let i_gate = 1.0 / (1.0 + (-i_lin.get(r, 0)).exp());
            let c_tilde = c_lin.get(r, 0).tanh();
            let want = c_in.get(r, 0) + i_gate * c_tilde;
            assert!(
                (tape.value(c1).get(r, 0) - want).abs() < 1e-15,
                "row {r}: {} vs {want}",
                tape.value(c1).get(r, 0)
            );
        }
    }

    #[test]
    fn lstm_three_chained_steps_gradcheck() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let h = 4;
        let mut store = ParamStore::new();
        let _layout = super::super::LstmParamIds {
            w_i: store.add("w_i", he_init(h, 2 * h, &mut rng)),
            w_f: store.add("w_f", he_init(h, 2 * h, &mut rng)),
            w_c: store.add("w_c", he_init(h, 2 * h, &mut rng)),
            w_o: store.add("w_o", he_init(h, 2 * h, &mut rng)),
            b_i: store.add("b_i", he_init(h, 1, &mut rng)),
            b_f: store.add("b_f", he_init(h, 1, &mut rng)),
            b_c: store.add("b_c", he_init(h, 1, &mut rng)),
            b_o: store.add("b_o", he_init(h, 1, &mut rng)),
        };
        let inputs: Vec<Matrix> = (0..3).map(|_| he_init(h, 2, &mut rng)).collect();

        let run = |s: &ParamStore| -> (f64, GradBuffer) {
            let ids = super::super::LstmParamIds {
                w_i: s.id("w_i").unwrap(),
                w_f: s.id("w_f").unwrap(),
                w_c: s.id("w_c").unwrap(),
                w_o: s.id("w_o").unwrap(),
                b_i: s.id("b_i").unwrap(),
                b_f: s.id("b_f").unwrap(),
                b_c: s.id("b_c").unwrap(),
                b_o: s.id("b_o").unwrap(),
            };
            let mut tape = Tape::new();
            let mut hs = tape.constant(Matrix::zeros(h, 2));
            let mut cs = tape.constant(Matrix::zeros(h, 2));
            for x in &inputs {
                let xin = tape.constant(x.clone());
                let (h1, c1) = super::super::lstm_cell(&mut tape, s, &ids, xin, hs, cs).unwrap();
                hs = h1;
                cs = c1;
            }
            let l = tape.sum_squares(hs);
            let mut grads = GradBuffer::zeros_like(s);
            tape.backward(l, s, &mut grads);
            (tape.scalar(l), grads)
        };
        let (_, grads) = run(&store);
        let report = check_gradients(&store, &grads, |s| run(s).0, 1e-5, 1e-5);
        assert!(report.passed(), "max rel err {} at {}", report.max_rel_err, report.worst_param);
    }

    #[test]
    fn every_primitive_op_passes_finite_differences() {
        // Routes gradients through concat/sum/mul/relu/elu/sigmoid/tanh/
        // softmax/row/scale_rows/gather/squared_error in one graph.
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let mut store = ParamStore::new();
        store.add("w1", he_init(5, 7, &mut rng));
        store.add("b1", he_init(5, 1, &mut rng));
        store.add("w2", he_init(3, 10, &mut rng));
        let input = he_init(7, 4, &mut rng);
        let other = he_init(5, 4, &mut rng);

        let run = |s: &ParamStore| -> (f64, GradBuffer) {
            let w1 = s.id("w1").unwrap();
            let b1 = s.id("b1").unwrap();
            let w2 = s.id("w2").unwrap();
            let mut tape = Tape::new();
            let x = tape.constant(input.clone());
            let o = tape.constant(other.clone());
            let y1 = tape.dense(s, w1, Some(b1), x).unwrap();
            let y1 = tape.elu(y1);
            let prod = tape.mul(y1, o).unwrap();
            let cat = tape.concat(&[y1, prod]).unwrap();
            let y2 = tape.dense(s, w2, None, cat).unwrap();
            let y2 = tape.tanh(y2);
            let sm = tape.softmax(y2).unwrap();
            let r0 = tape.row(sm, 0);
            let scaled = tape.scale_rows(r0, y1).unwrap();
            let sig = tape.sigmoid(scaled);
            let g = tape.gather_per_column(sig, vec![0, 2, 4, 1]).unwrap();
            let se = tape.squared_error(g, vec![0.3, -0.2, 0.5, 0.9]).unwrap();
            let ss = tape.sum_squares(sig);
            let both = tape.add(se, ss).unwrap();
            let l = tape.scale_const(both, 0.5);
            let mut grads = GradBuffer::zeros_like(s);
            tape.backward(l, s, &mut grads);
            (tape.scalar(l), grads)
        };
        let (_, grads) = run(&store);
        let report = check_gradients(&store, &grads, |s| run(s).0, 1e-5, 1e-4);
        assert!(report.passed(), "max rel err {} at {}", report.max_rel_err, report.worst_param);
    }
}

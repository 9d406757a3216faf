//! Recurrent building blocks on top of the tape.

use rand::Rng;

use super::{ParamSet, Result, Tape, TensorError, Var};

/// Weights of one LSTM with gate order input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    /// `input x 4H`
    pub w_x: Var,
    /// `H x 4H`
    pub w_h: Var,
    /// `1 x 4H`
    pub b: Var,
    pub hidden: usize,
}

impl LstmWeights {
    /// Registers `{prefix}.w_x`, `{prefix}.w_h`, `{prefix}.b`. The forget-gate
    /// bias starts at 1, every other bias at 0.
    pub fn init<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<()> {
        let fan_in = input + hidden;
        params.insert_uniform(format!("{prefix}.w_x"), vec![input, 4 * hidden], fan_in, rng)?;
        params.insert_uniform(format!("{prefix}.w_h"), vec![hidden, 4 * hidden], fan_in, rng)?;
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        params.insert(format!("{prefix}.b"), super::Tensor::row(b)?)
    }

    pub fn bind(tape: &Tape, params: &ParamSet, prefix: &str) -> Result<Self> {
        let w_h = tape.param(params, &format!("{prefix}.w_h"))?;
        let hidden = tape.dims(w_h).0;
        Ok(Self {
            w_x: tape.param(params, &format!("{prefix}.w_x"))?,
            w_h,
            b: tape.param(params, &format!("{prefix}.b"))?,
            hidden,
        })
    }
}

/// One LSTM step over a batch: `x` is `B x input`, `h` and `c` are `B x H`.
pub fn lstm_cell(tape: &Tape, x: Var, h: Var, c: Var, w: &LstmWeights) -> Result<(Var, Var)> {
    let xw = tape.matmul(x, w.w_x)?;
    lstm_from_projection(tape, xw, h, c, w)
}

fn lstm_from_projection(tape: &Tape, xw: Var, h: Var, c: Var, w: &LstmWeights) -> Result<(Var, Var)> {
    let hd = w.hidden;
    if tape.dims(h).1 != hd || tape.dims(c) != tape.dims(h) {
        return Err(TensorError::Shape {
            op: "lstm_cell",
            lhs: vec![tape.dims(h).0, tape.dims(h).1],
            rhs: vec![tape.dims(c).0, hd],
        });
    }
    let hw = tape.matmul(h, w.w_h)?;
    let gates = tape.add_row(tape.add(xw, hw)?, w.b)?;
    let i = tape.sigmoid(tape.slice_cols(gates, 0, hd)?);
    let f = tape.sigmoid(tape.slice_cols(gates, hd, 2 * hd)?);
    let g = tape.tanh(tape.slice_cols(gates, 2 * hd, 3 * hd)?);
    let o = tape.sigmoid(tape.slice_cols(gates, 3 * hd, 4 * hd)?);
    let c_next = tape.add(tape.mul(f, c)?, tape.mul(i, g)?)?;
    let h_next = tape.mul(o, tape.tanh(c_next))?;
    Ok((h_next, c_next))
}

/// Forward and backward LSTMs of one bidirectional layer.
#[derive(Clone, Copy, Debug)]
pub struct BiLstmLayer {
    pub fwd: LstmWeights,
    pub bwd: LstmWeights,
}

impl BiLstmLayer {
    pub fn init<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<()> {
        LstmWeights::init(params, &format!("{prefix}.fwd"), input, hidden, rng)?;
        LstmWeights::init(params, &format!("{prefix}.bwd"), input, hidden, rng)
    }

    pub fn bind(tape: &Tape, params: &ParamSet, prefix: &str) -> Result<Self> {
        Ok(Self {
            fwd: LstmWeights::bind(tape, params, &format!("{prefix}.fwd"))?,
            bwd: LstmWeights::bind(tape, params, &format!("{prefix}.bwd"))?,
        })
    }
}

/// Runs stacked bidirectional LSTMs over `inputs` (one `B x input` matrix per
/// position, `B` independent sequences of equal length). Returns one
/// `B x 2H` matrix per position: forward state then backward state.
///
/// When `dropout` is given, each layer's input is passed through inverted
/// dropout with that rate.
pub fn bilstm_encode(
    tape: &Tape,
    inputs: &[Var],
    layers: &[BiLstmLayer],
    mut dropout: Option<(f64, &mut dyn rand::RngCore)>,
) -> Result<Vec<Var>> {
    if inputs.is_empty() {
        return Err(TensorError::Empty { op: "bilstm_encode" });
    }
    let batch = tape.dims(inputs[0]).0;
    let mut current = inputs.to_vec();
    for layer in layers {
        let mut stacked = tape.concat_rows(&current)?;
        if let Some((p, rng)) = dropout.as_mut() {
            stacked = tape.dropout(stacked, *p, true, rng)?;
        }
        let len = current.len();
        let run = |w: &LstmWeights, reverse: bool| -> Result<Vec<Var>> {
            let xw = tape.matmul(stacked, w.w_x)?;
            let zeros = vec![0.0; batch * w.hidden];
            let mut h = tape.constant(batch, w.hidden, zeros.clone())?;
            let mut c = tape.constant(batch, w.hidden, zeros)?;
            let mut out = vec![h; len];
            for step in 0..len {
                let j = if reverse { len - 1 - step } else { step };
                let xj = tape.slice_rows(xw, j * batch, (j + 1) * batch)?;
                (h, c) = lstm_from_projection(tape, xj, h, c, w)?;
                out[j] = h;
            }
            Ok(out)
        };
        let fwd = run(&layer.fwd, false)?;
        let bwd = run(&layer.bwd, true)?;
        current = fwd
            .into_iter()
            .zip(bwd)
            .map(|(f, b)| tape.concat_cols(&[f, b]))
            .collect::<Result<_>>()?;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::check_gradients;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    fn zero_lstm(tape: &Tape, input: usize, hidden: usize) -> LstmWeights {
        LstmWeights {
            w_x: tape.constant(input, 4 * hidden, vec![0.0; input * 4 * hidden]).unwrap(),
            w_h: tape.constant(hidden, 4 * hidden, vec![0.0; hidden * 4 * hidden]).unwrap(),
            b: tape.constant(1, 4 * hidden, vec![0.0; 4 * hidden]).unwrap(),
            hidden,
        }
    }

    #[test]
    fn zero_weights_analytic_case() {
        let tape = Tape::new();
        let w = zero_lstm(&tape, 3, 2);
        let x = tape.constant(1, 3, vec![0.3, -1.0, 2.0]).unwrap();
        let h = tape.constant(1, 2, vec![0.9, -0.4]).unwrap();
        let c = tape.constant(1, 2, vec![1.5, -2.0]).unwrap();
        let (h2, c2) = lstm_cell(&tape, x, h, c, &w).unwrap();
        let cw: Vec<f64> = vec![0.75, -1.0];
        assert_eq!(tape.data(c2), cw);
        let hw: Vec<f64> = cw.iter().map(|v| 0.5 * f64::tanh(*v)).collect();
        assert_eq!(tape.data(h2), hw);
    }

    #[test]
    fn cell_dimension_mismatch() {
        let tape = Tape::new();
        let w = zero_lstm(&tape, 3, 2);
        let x = tape.constant(1, 4, vec![0.0; 4]).unwrap();
        let h = tape.constant(1, 2, vec![0.0; 2]).unwrap();
        assert!(lstm_cell(&tape, x, h, h, &w).is_err());
        let x = tape.constant(1, 3, vec![0.0; 3]).unwrap();
        let h3 = tape.constant(1, 3, vec![0.0; 3]).unwrap();
        assert!(lstm_cell(&tape, x, h3, h3, &w).is_err());
    }

    #[test]
    fn gates_strictly_inside_unit_interval() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut params = ParamSet::new();
        LstmWeights::init(&mut params, "l", 4, 3, &mut rng).unwrap();
        let tape = Tape::new();
        let w = LstmWeights::bind(&tape, &params, "l").unwrap();
        let x = tape.constant(1, 4, vec![50.0, -50.0, 3.0, 0.0]).unwrap();
        let h = tape.constant(1, 3, vec![0.0; 3]).unwrap();
        let (h2, c2) = lstm_cell(&tape, x, h, h, &w).unwrap();
        // |c'| = |i*g| < 1 and |h'| < |c'| guarantee gates were inside (0, 1)
        assert!(tape.data(c2).iter().all(|v| v.abs() < 1.0));
        assert_eq!(tape.dims(h2), (1, 3));
    }

    #[test]
    fn cell_gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let shapes = [(2, 3), (2, 2), (2, 2), (3, 8), (2, 8), (1, 8)];
        let inputs: Vec<Tensor> = shapes
            .iter()
            .map(|&(r, c)| {
                Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
            })
            .collect();
        let report = check_gradients(&inputs, 1e-5, |tape, v| {
            let w = LstmWeights {
                w_x: v[3],
                w_h: v[4],
                b: v[5],
                hidden: 2,
            };
            let (h, c) = lstm_cell(tape, v[0], v[1], v[2], &w)?;
            let hc = tape.concat_cols(&[h, c])?;
            let wts = tape.constant(2, 4, (0..8).map(|k| 0.3 * k as f64 - 1.0).collect())?;
            Ok(tape.sum(tape.mul(hc, wts)?))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    fn encode_rows(tape: &Tape, layers: &[BiLstmLayer], xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let inputs: Vec<Var> = xs
            .iter()
            .map(|x| tape.constant(1, x.len(), x.clone()).unwrap())
            .collect();
        bilstm_encode(tape, &inputs, layers, None)
            .unwrap()
            .into_iter()
            .map(|v| tape.data(v))
            .collect()
    }

    #[test]
    fn bilstm_shapes_and_errors() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut params = ParamSet::new();
        BiLstmLayer::init(&mut params, "l0", 5, 64, &mut rng).unwrap();
        BiLstmLayer::init(&mut params, "l1", 128, 64, &mut rng).unwrap();
        let tape = Tape::new();
        let layers = [
            BiLstmLayer::bind(&tape, &params, "l0").unwrap(),
            BiLstmLayer::bind(&tape, &params, "l1").unwrap(),
        ];
        assert!(bilstm_encode(&tape, &[], &layers, None).is_err());
        let one = encode_rows(&tape, &layers, &[vec![0.1; 5]]);
        assert_eq!(one.len(), 1);
        let out = encode_rows(&tape, &layers, &[vec![0.1; 5], vec![0.2; 5], vec![-0.3; 5]]);
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|o| o.len() == 128));
    }

    #[test]
    fn reversal_swaps_directions_when_weights_are_shared() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut params = ParamSet::new();
        LstmWeights::init(&mut params, "shared", 3, 4, &mut rng).unwrap();
        let tape = Tape::new();
        let w = LstmWeights::bind(&tape, &params, "shared").unwrap();
        let layer = [BiLstmLayer { fwd: w, bwd: w }];
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|k| (0..3).map(|j| ((k * 3 + j) as f64 * 0.37).sin()).collect())
            .collect();
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let a = encode_rows(&tape, &layer, &xs);
        let b = encode_rows(&tape, &layer, &rev);
        for (j, row) in a.iter().enumerate() {
            let other = &b[xs.len() - 1 - j];
            assert_eq!(&row[..4], &other[4..]);
            assert_eq!(&row[4..], &other[..4]);
        }
    }

    #[test]
    fn batched_rows_match_single_sequences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut params = ParamSet::new();
        BiLstmLayer::init(&mut params, "l0", 2, 3, &mut rng).unwrap();
        let tape = Tape::new();
        let layer = [BiLstmLayer::bind(&tape, &params, "l0").unwrap()];
        let seq_a = [vec![0.1, 0.2], vec![0.3, -0.1], vec![1.0, 0.0]];
        let seq_b = [vec![-0.5, 0.2], vec![0.0, 0.9], vec![0.4, 0.4]];
        let batched: Vec<Var> = seq_a
            .iter()
            .zip(&seq_b)
            .map(|(a, b)| tape.constant(2, 2, [a.clone(), b.clone()].concat()).unwrap())
            .collect();
        let out = bilstm_encode(&tape, &batched, &layer, None).unwrap();
        let ea = encode_rows(&tape, &layer, &seq_a);
        let eb = encode_rows(&tape, &layer, &seq_b);
        for j in 0..3 {
            let d = tape.data(out[j]);
            for (x, y) in d[..6].iter().zip(&ea[j]) {
                assert!((x - y).abs() < 1e-14);
            }
            for (x, y) in d[6..].iter().zip(&eb[j]) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }
}

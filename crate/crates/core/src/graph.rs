//! The dynamic entity-location graph: soft coreference across and within
//! steps, then stacked recurrent update layers.

use rand::Rng;

use crate::config::ModelConfig;
use crate::forward::Forward;
use crate::mrc::Specials;
use crate::tensor::{lstm_cell, LstmWeights, ParamSet, Tape, Tensor, Var};
use crate::Result;

/// Graph after step `t`. All matrices have one row per entity.
#[derive(Clone, Debug)]
pub struct GraphState {
    pub t: usize,
    /// Entity nodes, `N x d`.
    pub entities: Var,
    /// Location nodes, `N x d`.
    pub locations: Var,
    /// Within-step coreference, `N x N`, rows sum to one.
    pub adjacency: Var,
    /// `(h, c)` per update layer, each `N x d`.
    pub carries: Vec<(Var, Var)>,
}

/// Parameter nodes of the graph module for one forward pass.
#[derive(Clone, Debug)]
pub struct GraphWeights {
    pub specials: Specials,
    pub gate_w: Option<Var>,
    pub gate_b: Option<Var>,
    pub layers: Vec<LstmWeights>,
    /// Replaces the whole graph when the LSTM-unit ablation is on.
    pub unit: Option<LstmWeights>,
}

pub fn init_params<R: Rng + ?Sized>(params: &mut ParamSet, config: &ModelConfig, rng: &mut R) -> Result<()> {
    let d = config.node_dim;
    let a = &config.ablation;
    if !a.has_graph() {
        return Ok(());
    }
    params.insert_uniform("graph.nowhere", vec![1, d], d, rng)?;
    params.insert_uniform("graph.somewhere", vec![1, d], d, rng)?;
    if a.lstm_graph_unit {
        LstmWeights::init(params, "graph.unit", d, d, rng)?;
        return Ok(());
    }
    if !a.no_coref_across {
        params.insert_uniform("graph.gate.w", vec![2 * d, 1], 2 * d, rng)?;
        params.insert_zeros("graph.gate.b", vec![1, 1])?;
    }
    for l in 0..config.graph_layers {
        LstmWeights::init(params, &format!("graph.layer.{l}"), 2 * d, d, rng)?;
    }
    Ok(())
}

impl GraphWeights {
    pub fn bind(fw: &Forward) -> Result<Self> {
        let a = &fw.config.ablation;
        let specials = Specials {
            nowhere: fw.p("graph.nowhere")?,
            somewhere: fw.p("graph.somewhere")?,
        };
        if a.lstm_graph_unit {
            return Ok(Self {
                specials,
                gate_w: None,
                gate_b: None,
                layers: Vec::new(),
                unit: Some(LstmWeights::bind(fw.tape, fw.params, "graph.unit")?),
            });
        }
        let (gate_w, gate_b) = if a.no_coref_across {
            (None, None)
        } else {
            (Some(fw.p("graph.gate.w")?), Some(fw.p("graph.gate.b")?))
        };
        let layers = (0..fw.config.graph_layers)
            .map(|l| LstmWeights::bind(fw.tape, fw.params, &format!("graph.layer.{l}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            specials,
            gate_w,
            gate_b,
            layers,
            unit: None,
        })
    }
}

fn identity(tape: &Tape, n: usize) -> Result<Var> {
    Ok(tape.leaf(&Tensor::identity(n)?)?)
}

fn zeros(tape: &Tape, r: usize, c: usize) -> Result<Var> {
    Ok(tape.constant(r, c, vec![0.0; r * c])?)
}

/// `G_0`: entity nodes `ν`, every location the somewhere vector, identity
/// adjacency, zero carries for `layers` update layers.
pub fn init_graph(tape: &Tape, nu: Var, somewhere: Var, layers: usize) -> Result<GraphState> {
    let (n, d) = tape.dims(nu);
    let locations = tape.concat_rows(&vec![somewhere; n])?;
    let carries = (0..layers)
        .map(|_| Ok((zeros(tape, n, d)?, zeros(tape, n, d)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(GraphState {
        t: 0,
        entities: nu,
        locations,
        adjacency: identity(tape, n)?,
        carries,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct Across {
    /// `λ'`, `N x d`.
    pub locations: Var,
    /// Row `i` is entity `i`'s attention over the previous locations.
    pub attention: Var,
    /// Scalar gate per entity, `N x 1`.
    pub gate: Var,
}

/// Attention of each new location `ψ_i` over the previous locations, then a
/// scalar gate between `ψ_i` and the attended summary `ψ'_i`.
pub fn coref_across(tape: &Tape, psi: Var, prev: Var, gate_w: Var, gate_b: Var) -> Result<Across> {
    let attention = tape.softmax_rows(tape.matmul(psi, tape.transpose(prev))?);
    let attended = tape.matmul(attention, prev)?;
    let gate_in = tape.concat_cols(&[attended, psi])?;
    let gate = tape.sigmoid(tape.add_row(tape.matmul(gate_in, gate_w)?, gate_b)?);
    // g ψ + (1 - g) ψ' = ψ' + g (ψ - ψ')
    let locations = tape.add(attended, tape.scale_rows(tape.sub(psi, attended)?, gate)?)?;
    Ok(Across {
        locations,
        attention,
        gate,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct Within {
    pub locations: Var,
    pub adjacency: Var,
}

/// Self-attention among the locations of one step: `U = softmax(Λ Λᵀ)`,
/// output `U Λ`.
pub fn coref_within(tape: &Tape, locations: Var) -> Result<Within> {
    let adjacency = tape.softmax_rows(tape.matmul(locations, tape.transpose(locations))?);
    Ok(Within {
        locations: tape.matmul(adjacency, locations)?,
        adjacency,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct LayerOutput {
    pub entities: Var,
    pub locations: Var,
    pub carry: (Var, Var),
}

/// One update layer: an LSTM over `[e; λ]` with the layer's carry, residual
/// adds to both node sets, then pooling of the locations by `U`.
pub fn update_layer(
    tape: &Tape,
    entities: Var,
    locations: Var,
    carry: (Var, Var),
    adjacency: Var,
    w: &LstmWeights,
    fw: Option<&Forward>,
) -> Result<LayerOutput> {
    let mut x = tape.concat_cols(&[entities, locations])?;
    if let Some(fw) = fw {
        x = fw.dropout(x, fw.config.dropout_recurrent)?;
    }
    let (h, c) = lstm_cell(tape, x, carry.0, carry.1, w)?;
    let e_next = tape.add(entities, h)?;
    let residual = tape.add(locations, h)?;
    Ok(LayerOutput {
        entities: e_next,
        locations: tape.matmul(adjacency, residual)?,
        carry: (h, c),
    })
}

/// Intermediate values of one step, for traces.
#[derive(Clone, Copy, Debug)]
pub struct StepNodes {
    pub attention: Option<Var>,
    pub gate: Option<Var>,
    pub adjacency: Var,
}

/// Advances the graph by one step given one location vector per entity
/// (`psi`, `N x d`).
pub fn graph_step(fw: &Forward, state: &GraphState, psi: Var, w: &GraphWeights) -> Result<(GraphState, StepNodes)> {
    let tape = fw.tape;
    let n = tape.dims(psi).0;
    let drop = fw.training().then_some(fw);
    if let Some(unit) = &w.unit {
        let mut x = psi;
        if let Some(fw) = drop {
            x = fw.dropout(x, fw.config.dropout_recurrent)?;
        }
        let (h, c) = lstm_cell(tape, x, state.carries[0].0, state.carries[0].1, unit)?;
        let adjacency = identity(tape, n)?;
        return Ok((
            GraphState {
                t: state.t + 1,
                entities: h,
                locations: psi,
                adjacency,
                carries: vec![(h, c)],
            },
            StepNodes {
                attention: None,
                gate: None,
                adjacency,
            },
        ));
    }

    let (merged, attention, gate) = match (w.gate_w, w.gate_b) {
        (Some(gw), Some(gb)) => {
            let a = coref_across(tape, psi, state.locations, gw, gb)?;
            (a.locations, Some(a.attention), Some(a.gate))
        }
        _ => (psi, None, None),
    };
    let (mut lam, adjacency) = if fw.config.ablation.no_coref_within {
        (merged, identity(tape, n)?)
    } else {
        let wi = coref_within(tape, merged)?;
        (wi.locations, wi.adjacency)
    };
    let mut e = state.entities;
    let mut carries = Vec::with_capacity(w.layers.len());
    for (layer, carry) in w.layers.iter().zip(&state.carries) {
        let out = update_layer(tape, e, lam, *carry, adjacency, layer, drop)?;
        e = out.entities;
        lam = out.locations;
        carries.push(out.carry);
    }
    Ok((
        GraphState {
            t: state.t + 1,
            entities: e,
            locations: lam,
            adjacency,
            carries,
        },
        StepNodes {
            attention,
            gate,
            adjacency,
        },
    ))
}

/// Number of carries `init_graph` should allocate for a configuration.
pub fn carry_layers(config: &ModelConfig) -> usize {
    if config.ablation.lstm_graph_unit {
        1
    } else {
        config.graph_layers
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Ablation;
    use crate::corpus::{EmbeddingTable, Vocab};
    use crate::tensor::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn row_sums(tape: &Tape, v: Var) -> Vec<f64> {
        let (_, c) = tape.dims(v);
        tape.data(v).chunks(c).map(|r| r.iter().sum()).collect()
    }

    #[test]
    fn single_node_attention_copies_previous_location() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let psi = tape.leaf(&rand_t(&mut rng, 1, 3)).unwrap();
        let prev = tape.leaf(&rand_t(&mut rng, 1, 3)).unwrap();
        let gw = tape.leaf(&rand_t(&mut rng, 6, 1)).unwrap();
        let gb = tape.constant(1, 1, vec![0.2]).unwrap();
        let a = coref_across(&tape, psi, prev, gw, gb).unwrap();
        assert_eq!(tape.data(a.attention), vec![1.0]);
        let attended = tape.matmul(a.attention, prev).unwrap();
        assert_eq!(tape.data(attended), tape.data(prev));
        let w = coref_within(&tape, psi).unwrap();
        assert_eq!(tape.data(w.adjacency), vec![1.0]);
        assert_eq!(tape.data(w.locations), tape.data(psi));
    }

    #[test]
    fn saturated_gate_keeps_new_location() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let psi = tape.leaf(&rand_t(&mut rng, 3, 4)).unwrap();
        let prev = tape.leaf(&rand_t(&mut rng, 3, 4)).unwrap();
        let gw = tape.constant(8, 1, vec![0.0; 8]).unwrap();
        let gb = tape.constant(1, 1, vec![800.0]).unwrap();
        let a = coref_across(&tape, psi, prev, gw, gb).unwrap();
        assert_eq!(tape.data(a.gate), vec![1.0; 3]);
        assert_eq!(tape.data(a.locations), tape.data(psi));
    }

    #[test]
    fn two_node_across_matches_hand_oracle() {
        let tape = Tape::new();
        let psi_v = [1.0, 0.0, 0.0, 2.0];
        let prev_v = [0.5, 1.0, -1.0, 0.0];
        let w_v = [0.3, -0.2, 0.1, 0.4];
        let b_v = -0.1;
        let psi = tape.constant(2, 2, psi_v.to_vec()).unwrap();
        let prev = tape.constant(2, 2, prev_v.to_vec()).unwrap();
        let gw = tape.constant(4, 1, w_v.to_vec()).unwrap();
        let gb = tape.constant(1, 1, vec![b_v]).unwrap();
        let got = coref_across(&tape, psi, prev, gw, gb).unwrap();
        let out = tape.data(got.locations);
        for i in 0..2 {
            let p = &psi_v[2 * i..2 * i + 2];
            let s: Vec<f64> = (0..2).map(|k| p[0] * prev_v[2 * k] + p[1] * prev_v[2 * k + 1]).collect();
            let z = s[0].exp() + s[1].exp();
            let a = [s[0].exp() / z, s[1].exp() / z];
            let pp = [
                a[0] * prev_v[0] + a[1] * prev_v[2],
                a[0] * prev_v[1] + a[1] * prev_v[3],
            ];
            let g = 1.0 / (1.0 + (-(pp[0] * w_v[0] + pp[1] * w_v[1] + p[0] * w_v[2] + p[1] * w_v[3] + b_v)).exp());
            for k in 0..2 {
                let want = g * p[k] + (1.0 - g) * pp[k];
                assert!((out[2 * i + k] - want).abs() < 1e-12);
                // convex combination
                let (lo, hi) = if p[k] < pp[k] { (p[k], pp[k]) } else { (pp[k], p[k]) };
                assert!(out[2 * i + k] >= lo - 1e-12 && out[2 * i + k] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn within_matches_softmax_oracle() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lt = rand_t(&mut rng, 3, 2);
        let l = lt.values().to_vec();
        let w = coref_within(&tape, tape.leaf(&lt).unwrap()).unwrap();
        let u = tape.data(w.adjacency);
        let out = tape.data(w.locations);
        for i in 0..3 {
            let s: Vec<f64> = (0..3).map(|j| l[2 * i] * l[2 * j] + l[2 * i + 1] * l[2 * j + 1]).collect();
            let z: f64 = s.iter().map(|x| x.exp()).sum();
            for j in 0..3 {
                assert!((u[3 * i + j] - s[j].exp() / z).abs() < 1e-12);
            }
            for k in 0..2 {
                let want: f64 = (0..3).map(|j| s[j].exp() / z * l[2 * j + k]).sum();
                assert!((out[2 * i + k] - want).abs() < 1e-12);
            }
        }
        for s in row_sums(&tape, w.adjacency) {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let tape = Tape::new();
        let l = tape.constant(2, 3, vec![0.2, -0.4, 1.0, 0.2, -0.4, 1.0]).unwrap();
        let w = coref_within(&tape, l).unwrap();
        let u = tape.data(w.adjacency);
        assert_eq!(u[0..2], u[2..4]);
        let o = tape.data(w.locations);
        assert_eq!(o[0..3], o[3..6]);
    }

    fn zero_lstm(tape: &Tape, input: usize, hidden: usize) -> LstmWeights {
        LstmWeights {
            w_x: tape.constant(input, 4 * hidden, vec![0.0; input * 4 * hidden]).unwrap(),
            w_h: tape.constant(hidden, 4 * hidden, vec![0.0; 4 * hidden * hidden]).unwrap(),
            b: tape.constant(1, 4 * hidden, vec![0.0; 4 * hidden]).unwrap(),
            hidden,
        }
    }

    #[test]
    fn zero_weight_layer_is_residual_identity() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = tape.leaf(&rand_t(&mut rng, 3, 2)).unwrap();
        let l = tape.leaf(&rand_t(&mut rng, 3, 2)).unwrap();
        let z = tape.constant(3, 2, vec![0.0; 6]).unwrap();
        let u = coref_within(&tape, l).unwrap().adjacency;
        let out = update_layer(&tape, e, l, (z, z), u, &zero_lstm(&tape, 4, 2), None).unwrap();
        assert_eq!(tape.data(out.entities), tape.data(e));
        assert_eq!(tape.data(out.locations), tape.data(tape.matmul(u, l).unwrap()));
    }

    #[test]
    fn update_layer_matches_hand_composition() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let e = tape.leaf(&rand_t(&mut rng, 2, 2)).unwrap();
        let l = tape.leaf(&rand_t(&mut rng, 2, 2)).unwrap();
        let h0 = tape.leaf(&rand_t(&mut rng, 2, 2)).unwrap();
        let c0 = tape.leaf(&rand_t(&mut rng, 2, 2)).unwrap();
        let u = coref_within(&tape, l).unwrap().adjacency;
        let w = LstmWeights {
            w_x: tape.leaf(&rand_t(&mut rng, 4, 8)).unwrap(),
            w_h: tape.leaf(&rand_t(&mut rng, 2, 8)).unwrap(),
            b: tape.leaf(&rand_t(&mut rng, 1, 8)).unwrap(),
            hidden: 2,
        };
        let out = update_layer(&tape, e, l, (h0, c0), u, &w, None).unwrap();
        // oracle: scalar LSTM arithmetic per entity
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let (ev, lv, hv, cv) = (tape.data(e), tape.data(l), tape.data(h0), tape.data(c0));
        let (wx, wh, b) = (tape.data(w.w_x), tape.data(w.w_h), tape.data(w.b));
        let uv = tape.data(u);
        let mut h_new = vec![0.0; 4];
        for i in 0..2 {
            let x = [ev[2 * i], ev[2 * i + 1], lv[2 * i], lv[2 * i + 1]];
            let gate = |k: usize| -> f64 {
                b[k] + (0..4).map(|r| x[r] * wx[r * 8 + k]).sum::<f64>()
                    + (0..2).map(|r| hv[2 * i + r] * wh[r * 8 + k]).sum::<f64>()
            };
            for j in 0..2 {
                let c = sig(gate(2 + j)) * cv[2 * i + j] + sig(gate(j)) * gate(4 + j).tanh();
                h_new[2 * i + j] = sig(gate(6 + j)) * c.tanh();
            }
        }
        let oe = tape.data(out.entities);
        let ol = tape.data(out.locations);
        for i in 0..2 {
            for k in 0..2 {
                assert!((oe[2 * i + k] - (ev[2 * i + k] + h_new[2 * i + k])).abs() < 1e-12);
                let want: f64 = (0..2).map(|j| uv[2 * i + j] * (lv[2 * j + k] + h_new[2 * j + k])).sum();
                assert!((ol[2 * i + k] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn graph_ops_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inputs = vec![rand_t(&mut rng, 3, 4), rand_t(&mut rng, 3, 4), rand_t(&mut rng, 8, 1), rand_t(&mut rng, 1, 1)];
        let r = check_gradients(&inputs, 1e-5, |t, v| {
            let a = coref_across(t, v[0], v[1], v[2], v[3]).unwrap();
            let w = coref_within(t, a.locations).unwrap();
            Ok(t.sum(t.mul(w.locations, w.locations)?))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");

        let inputs = vec![
            rand_t(&mut rng, 2, 3),
            rand_t(&mut rng, 2, 3),
            rand_t(&mut rng, 2, 3),
            rand_t(&mut rng, 2, 3),
            rand_t(&mut rng, 6, 12),
            rand_t(&mut rng, 3, 12),
            rand_t(&mut rng, 1, 12),
        ];
        let r = check_gradients(&inputs, 1e-5, |t, v| {
            let u = coref_within(t, v[1]).unwrap().adjacency;
            let w = LstmWeights {
                w_x: v[4],
                w_h: v[5],
                b: v[6],
                hidden: 3,
            };
            let o = update_layer(t, v[0], v[1], (v[2], v[3]), u, &w, None).unwrap();
            let s = t.add(t.mul(o.entities, o.entities)?, o.locations)?;
            Ok(t.sum(t.add(s, o.carry.1)?))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    fn graph_fixture(ablation: Ablation) -> (ParamSet, ModelConfig, EmbeddingTable) {
        let config = ModelConfig {
            embed_dim: 3,
            hidden: 2,
            node_dim: 4,
            ablation,
            ..Default::default()
        };
        let mut params = ParamSet::new();
        init_params(&mut params, &config, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let emb = EmbeddingTable::random(&Vocab::default(), 3, 0);
        (params, config, emb)
    }

    #[test]
    fn init_graph_shapes() {
        let (params, config, emb) = graph_fixture(Ablation::default());
        let tape = Tape::new();
        let fw = Forward::eval(&tape, &params, &config, &emb);
        let nu = tape.constant(1, 4, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let g = init_graph(&tape, nu, fw.p("graph.somewhere").unwrap(), 2).unwrap();
        assert_eq!(tape.data(g.adjacency), vec![1.0]);
        assert_eq!(tape.data(g.entities), vec![0.1, 0.2, 0.3, 0.4]);
        let nu3 = tape.constant(3, 4, vec![0.5; 12]).unwrap();
        let g = init_graph(&tape, nu3, fw.p("graph.somewhere").unwrap(), 2).unwrap();
        let l = tape.data(g.locations);
        assert_eq!(l[0..4], l[4..8]);
        assert_eq!(l[0..4], *params.get("graph.somewhere").unwrap().values());
        assert_eq!(g.carries.len(), 2);
    }

    #[test]
    fn step_equals_composed_oracle() {
        let (params, config, emb) = graph_fixture(Ablation::default());
        let tape = Tape::new();
        let fw = Forward::eval(&tape, &params, &config, &emb);
        let w = GraphWeights::bind(&fw).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let nu = tape.leaf(&rand_t(&mut rng, 2, 4)).unwrap();
        let psi = tape.leaf(&rand_t(&mut rng, 2, 4)).unwrap();
        let g0 = init_graph(&tape, nu, w.specials.somewhere, 2).unwrap();
        let (g1, nodes) = graph_step(&fw, &g0, psi, &w).unwrap();

        let a = coref_across(&tape, psi, g0.locations, w.gate_w.unwrap(), w.gate_b.unwrap()).unwrap();
        let wi = coref_within(&tape, a.locations).unwrap();
        let o1 = update_layer(&tape, nu, wi.locations, g0.carries[0], wi.adjacency, &w.layers[0], None).unwrap();
        let o2 = update_layer(&tape, o1.entities, o1.locations, g0.carries[1], wi.adjacency, &w.layers[1], None).unwrap();
        assert_eq!(tape.data(g1.entities), tape.data(o2.entities));
        assert_eq!(tape.data(g1.locations), tape.data(o2.locations));
        assert_eq!(tape.data(nodes.adjacency), tape.data(wi.adjacency));
        assert_eq!(tape.dims(g1.entities), tape.dims(g0.entities));
        assert_eq!(g1.t, 1);
        for s in row_sums(&tape, nodes.attention.unwrap()) {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_entities_permutes_outputs() {
        let (params, config, emb) = graph_fixture(Ablation::default());
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let nu = rand_t(&mut rng, 3, 4);
        let psi = rand_t(&mut rng, 3, 4);
        let perm = [2, 0, 1];
        let permute = |t: &Tensor| {
            let v = t.values();
            Tensor::matrix(3, 4, perm.iter().flat_map(|&i| v[4 * i..4 * i + 4].to_vec()).collect()).unwrap()
        };
        let run = |nu: &Tensor, psi: &Tensor| {
            let tape = Tape::new();
            let fw = Forward::eval(&tape, &params, &config, &emb);
            let w = GraphWeights::bind(&fw).unwrap();
            let g0 = init_graph(&tape, tape.leaf(nu).unwrap(), w.specials.somewhere, 2).unwrap();
            let (g1, _) = graph_step(&fw, &g0, tape.leaf(psi).unwrap(), &w).unwrap();
            let (g2, _) = graph_step(&fw, &g1, tape.leaf(psi).unwrap(), &w).unwrap();
            (tape.data(g2.entities), tape.data(g2.locations))
        };
        let (e, l) = run(&nu, &psi);
        let (ep, lp) = run(&permute(&nu), &permute(&psi));
        for (k, &i) in perm.iter().enumerate() {
            for c in 0..4 {
                assert!((ep[4 * k + c] - e[4 * i + c]).abs() < 1e-12);
                assert!((lp[4 * k + c] - l[4 * i + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ablations_change_parameters_and_outputs() {
        let run = |ab: Ablation| {
            let (params, config, emb) = graph_fixture(ab);
            let tape = Tape::new();
            let fw = Forward::eval(&tape, &params, &config, &emb);
            let w = GraphWeights::bind(&fw).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let nu = tape.leaf(&rand_t(&mut rng, 2, 4)).unwrap();
            let psi = tape.leaf(&rand_t(&mut rng, 2, 4)).unwrap();
            let g0 = init_graph(&tape, nu, w.specials.somewhere, carry_layers(&config)).unwrap();
            let (g1, _) = graph_step(&fw, &g0, psi, &w).unwrap();
            (params.names().map(String::from).collect::<Vec<_>>(), tape.data(g1.entities))
        };
        let full = run(Ablation::default());
        for ab in [
            Ablation { no_coref_across: true, ..Default::default() },
            Ablation { no_coref_within: true, ..Default::default() },
            Ablation { lstm_graph_unit: true, ..Default::default() },
        ] {
            let out = run(ab);
            assert_ne!(out.1, full.1, "{}", ab.label());
        }
        let (names, _) = run(Ablation { no_coref_across: true, ..Default::default() });
        assert!(!names.iter().any(|n| n.starts_with("graph.gate")));
    }
}

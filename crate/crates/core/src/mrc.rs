//! Entity-conditioned span-extraction reader.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::{tokenize, LocationState};
use crate::encoder::span_projection;
use crate::forward::Forward;
use crate::tensor::{bilstm_encode, BiLstmLayer, ParamSet, Tape, Var};
use crate::Result;

/// Words of the question template besides the entity name.
pub const QUESTION_WORDS: &[&str] = &["where", "is", "located", "?"];

/// `where is <entity> located ?`. Only the first of `;`-separated
/// alternative names is used.
pub fn make_question(entity_name: &str) -> Vec<String> {
    let name = entity_name.split(';').map(str::trim).find(|s| !s.is_empty()).unwrap_or("");
    let mut q = vec!["where".to_string(), "is".to_string()];
    q.extend(tokenize(name));
    q.push("located".into());
    q.push("?".into());
    q
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StateClass {
    Nowhere,
    Somewhere,
    Span,
}

impl StateClass {
    pub const ALL: [StateClass; 3] = [StateClass::Nowhere, StateClass::Somewhere, StateClass::Span];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn of(state: &LocationState) -> Self {
        match state {
            LocationState::Nowhere => Self::Nowhere,
            LocationState::Somewhere => Self::Somewhere,
            LocationState::Span { .. } => Self::Span,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Nowhere => "nowhere",
            Self::Somewhere => "somewhere",
            Self::Span => "span",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s.trim().to_lowercase())
    }
}

/// Start and end distributions over prefix tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanScores {
    pub start_logits: Vec<f64>,
    pub end_logits: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatePrediction {
    pub class: StateClass,
    /// Nowhere, somewhere, span.
    pub probs: [f64; 3],
    /// Decoded span, reported only when `class` is `Span`.
    pub span: Option<(usize, usize)>,
    pub scores: SpanScores,
}

impl StatePrediction {
    pub fn state(&self) -> LocationState {
        match (self.class, self.span) {
            (StateClass::Nowhere, _) => LocationState::Nowhere,
            (StateClass::Span, Some((start, end))) => LocationState::Span { start, end },
            _ => LocationState::Somewhere,
        }
    }
}

/// Two-layer perceptron `relu(x W1 + b1) W2 + b2`.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<()> {
        params.insert_uniform(format!("{prefix}.w1"), vec![input, hidden], input, rng)?;
        params.insert_zeros(format!("{prefix}.b1"), vec![1, hidden])?;
        params.insert_uniform(format!("{prefix}.w2"), vec![hidden, output], hidden, rng)?;
        params.insert_zeros(format!("{prefix}.b2"), vec![1, output])?;
        Ok(())
    }

    pub fn bind(fw: &Forward, prefix: &str) -> Result<Self> {
        Ok(Self {
            w1: fw.p(&format!("{prefix}.w1"))?,
            b1: fw.p(&format!("{prefix}.b1"))?,
            w2: fw.p(&format!("{prefix}.w2"))?,
            b2: fw.p(&format!("{prefix}.b2"))?,
        })
    }

    /// Applies the MLP; with `fw` given, its hidden layer gets dropout.
    pub fn apply(&self, tape: &Tape, x: Var, fw: Option<&Forward>) -> Result<Var> {
        let mut h = tape.relu(tape.add_row(tape.matmul(x, self.w1)?, self.b1)?);
        if let Some(fw) = fw {
            h = fw.dropout(h, fw.config.dropout_other)?;
        }
        Ok(tape.add_row(tape.matmul(h, self.w2)?, self.b2)?)
    }
}

/// Attention-pooled summary of the rows of a matrix.
#[derive(Clone, Copy, Debug)]
pub struct Pooled {
    pub vector: Var,
    /// `1 x n`, sums to one.
    pub weights: Var,
}

/// Self-attentive pooling: weights `softmax((x w)ᵀ)`, output `weights x`.
pub fn attention_pool(tape: &Tape, x: Var, w: Var) -> Result<Pooled> {
    let scores = tape.transpose(tape.matmul(x, w)?);
    let weights = tape.softmax_rows(scores);
    Ok(Pooled {
        vector: tape.matmul(weights, x)?,
        weights,
    })
}

pub fn init_params<R: Rng + ?Sized>(params: &mut ParamSet, config: &ModelConfig, rng: &mut R) -> Result<()> {
    let d = config.node_dim;
    let c = config.context_dim();
    BiLstmLayer::init(params, "mrc.q.lstm", config.embed_dim, d / 2, rng)?;
    params.insert_uniform("mrc.q.attn", vec![d, 1], d, rng)?;
    Mlp::init(params, "mrc.cond", 2 * d, d, d, rng)?;
    params.insert_uniform("mrc.start.w", vec![c, d], c, rng)?;
    params.insert_uniform("mrc.end.w", vec![c, d], c, rng)?;
    params.insert_uniform("mrc.summary.w", vec![c, 1], c, rng)?;
    Mlp::init(params, "mrc.cls", d + c, d, 3, rng)?;
    Ok(())
}

/// Encodes the question tokens with a one-layer BiLSTM and pools the
/// states; the result is `1 x d`.
pub fn encode_question(fw: &Forward, tokens: &[String]) -> Result<Pooled> {
    let inputs = tokens
        .iter()
        .map(|t| fw.tape.constant(1, fw.embeddings.dim(), fw.embeddings.lookup(t).to_vec()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let layer = BiLstmLayer::bind(fw.tape, fw.params, "mrc.q.lstm")?;
    let p = fw.config.dropout_recurrent;
    let states = fw.with_rng(|rng| match rng {
        Some(rng) => bilstm_encode(fw.tape, &inputs, &[layer], Some((p, rng))),
        None => bilstm_encode(fw.tape, &inputs, &[layer], None),
    })?;
    let x = fw.tape.concat_rows(&states)?;
    attention_pool(fw.tape, x, fw.p("mrc.q.attn")?)
}

/// `MLP([q; e_prev])`, the entity-dependent question.
pub fn condition_on_entity(tape: &Tape, q: Var, e_prev: Var, mlp: &Mlp, fw: Option<&Forward>) -> Result<Var> {
    let x = tape.concat_cols(&[q, e_prev])?;
    mlp.apply(tape, x, fw)
}

/// Log-distribution `1 x P` of `C W q̃ᵀ` over the prefix tokens.
pub fn span_log_probs(tape: &Tape, context: Var, q_tilde: Var, w: Var) -> Result<Var> {
    let wq = tape.matmul(w, tape.transpose(q_tilde))?;
    let logits = tape.transpose(tape.matmul(context, wq)?);
    Ok(tape.log_softmax_rows(logits))
}

/// Best `(i, j)` with `i <= j <= i + max_len` by `start[i] + end[j]`;
/// ties go to the smaller `i`, then the smaller `j`.
pub fn decode_span(start: &[f64], end: &[f64], max_len: usize) -> (usize, usize) {
    let n = start.len().min(end.len());
    let mut best = (0, 0);
    let mut best_score = f64::NEG_INFINITY;
    for i in 0..n {
        for j in i..n.min(i + max_len + 1) {
            let s = start[i] + end[j];
            if s > best_score {
                best_score = s;
                best = (i, j);
            }
        }
    }
    best
}

/// Log-probabilities `1 x 3` over nowhere, somewhere, span.
pub fn classify_state(tape: &Tape, e_node: Var, summary: Var, mlp: &Mlp, fw: Option<&Forward>) -> Result<Var> {
    let x = tape.concat_cols(&[e_node, summary])?;
    Ok(tape.log_softmax_rows(mlp.apply(tape, x, fw)?))
}

/// Learned location vectors for the two special classes.
#[derive(Clone, Copy, Debug)]
pub struct Specials {
    pub nowhere: Var,
    pub somewhere: Var,
}

/// Tape nodes of one reader query.
#[derive(Clone, Debug)]
pub struct ReadOutput {
    pub prediction: StatePrediction,
    /// Location vector of the prediction, when specials are given.
    pub psi: Option<Var>,
    pub class_log_probs: Var,
    pub start_log_probs: Var,
    pub end_log_probs: Var,
    pub summary_weights: Var,
}

fn exp_all(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.exp()).collect()
}

/// Queries one entity against its prefix encoding `context` (`P x 2H`),
/// given its pooled question `q` and its previous node `e_prev`.
pub fn read(fw: &Forward, context: Var, q: Var, e_prev: Var, specials: Option<Specials>) -> Result<ReadOutput> {
    let tape = fw.tape;
    let drop = fw.training().then_some(fw);
    let q_tilde = condition_on_entity(tape, q, e_prev, &Mlp::bind(fw, "mrc.cond")?, drop)?;
    let start_lp = span_log_probs(tape, context, q_tilde, fw.p("mrc.start.w")?)?;
    let end_lp = span_log_probs(tape, context, q_tilde, fw.p("mrc.end.w")?)?;
    let summary = attention_pool(tape, context, fw.p("mrc.summary.w")?)?;
    let class_lp = classify_state(tape, e_prev, summary.vector, &Mlp::bind(fw, "mrc.cls")?, drop)?;

    let start_logits = tape.data(start_lp);
    let end_logits = tape.data(end_lp);
    let span = decode_span(&start_logits, &end_logits, fw.config.max_span_len);
    let probs_v = exp_all(&tape.data(class_lp));
    let probs = [probs_v[0], probs_v[1], probs_v[2]];
    // first maximum wins
    let mut k = 0;
    for c in 1..3 {
        if probs[c] > probs[k] {
            k = c;
        }
    }
    let class = StateClass::ALL[k];
    let psi = match (specials, class) {
        (None, _) => None,
        (Some(s), StateClass::Nowhere) => Some(s.nowhere),
        (Some(s), StateClass::Somewhere) => Some(s.somewhere),
        (Some(_), StateClass::Span) => Some(span_projection(
            tape,
            context,
            span.0,
            span.1,
            fw.p("enc.span.w")?,
            fw.p("enc.span.b")?,
        )?),
    };
    Ok(ReadOutput {
        prediction: StatePrediction {
            class,
            probs,
            span: (class == StateClass::Span).then_some(span),
            scores: SpanScores {
                start: exp_all(&start_logits),
                end: exp_all(&end_logits),
                start_logits,
                end_logits,
            },
        },
        psi,
        class_log_probs: class_lp,
        start_log_probs: start_lp,
        end_log_probs: end_lp,
        summary_weights: summary.weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EmbeddingTable, Vocab};
    use crate::tensor::Tensor;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config() -> ModelConfig {
        ModelConfig {
            embed_dim: 5,
            hidden: 3,
            node_dim: 4,
            ..Default::default()
        }
    }

    fn fixture() -> (ParamSet, ModelConfig, EmbeddingTable) {
        let config = config();
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        crate::encoder::init_params(&mut params, &config, &mut rng).unwrap();
        init_params(&mut params, &config, &mut rng).unwrap();
        params.insert_uniform("graph.nowhere", vec![1, 4], 4, &mut rng).unwrap();
        params.insert_uniform("graph.somewhere", vec![1, 4], 4, &mut rng).unwrap();
        let vocab = Vocab::from_words(["glucose", "leaf", "where", "is", "located", "?"]);
        (params, config.clone(), EmbeddingTable::random(&vocab, config.embed_dim, 4))
    }

    fn rand_var(tape: &Tape, rng: &mut ChaCha8Rng, r: usize, c: usize) -> Var {
        tape.constant(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn question_template() {
        assert_eq!(make_question("glucose"), ["where", "is", "glucose", "located", "?"]);
        assert_eq!(
            make_question("Electric Oven"),
            ["where", "is", "electric", "oven", "located", "?"]
        );
        assert_eq!(make_question("co2; carbon dioxide"), make_question("co2"));
        assert_eq!(make_question("x"), make_question("x"));
    }

    #[test]
    fn single_token_pooling_is_identity() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = rand_var(&tape, &mut rng, 1, 4);
        let w = rand_var(&tape, &mut rng, 4, 1);
        let p = attention_pool(&tape, x, w).unwrap();
        assert_eq!(tape.data(p.weights), vec![1.0]);
        assert_eq!(tape.data(p.vector), tape.data(x));
    }

    #[test]
    fn pooling_matches_weighted_sum_oracle() {
        let tape = Tape::new();
        let xv = vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0];
        let wv = vec![0.4, -0.3];
        let x = tape.constant(3, 2, xv.clone()).unwrap();
        let w = tape.constant(2, 1, wv.clone()).unwrap();
        let p = attention_pool(&tape, x, w).unwrap();
        let scores: Vec<f64> = (0..3).map(|r| xv[2 * r] * wv[0] + xv[2 * r + 1] * wv[1]).collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        let a: Vec<f64> = scores.iter().map(|s| s.exp() / z).collect();
        let want = [
            (0..3).map(|r| a[r] * xv[2 * r]).sum::<f64>(),
            (0..3).map(|r| a[r] * xv[2 * r + 1]).sum::<f64>(),
        ];
        let got = tape.data(p.vector);
        assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12);
        assert!((tape.data(p.weights).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn encoded_question_is_d_wide() {
        let (params, config, emb) = fixture();
        let tape = Tape::new();
        let fw = Forward::eval(&tape, &params, &config, &emb);
        let q = encode_question(&fw, &make_question("glucose")).unwrap();
        assert_eq!(tape.dims(q.vector), (1, 4));
        assert!((tape.data(q.weights).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_weight_mlp_returns_bias() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp {
            w1: tape.constant(4, 3, vec![0.0; 12]).unwrap(),
            b1: rand_var(&tape, &mut rng, 1, 3),
            w2: tape.constant(3, 2, vec![0.0; 6]).unwrap(),
            b2: tape.constant(1, 2, vec![0.25, -0.5]).unwrap(),
        };
        for _ in 0..3 {
            let q = rand_var(&tape, &mut rng, 1, 2);
            let e = rand_var(&tape, &mut rng, 1, 2);
            let out = condition_on_entity(&tape, q, e, &mlp, None).unwrap();
            assert_eq!(tape.data(out), vec![0.25, -0.5]);
        }
    }

    #[test]
    fn conditioning_depends_on_entity_node() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp {
            w1: rand_var(&tape, &mut rng, 4, 6),
            b1: rand_var(&tape, &mut rng, 1, 6),
            w2: rand_var(&tape, &mut rng, 6, 2),
            b2: rand_var(&tape, &mut rng, 1, 2),
        };
        let q = rand_var(&tape, &mut rng, 1, 2);
        let e1 = rand_var(&tape, &mut rng, 1, 2);
        let e2 = rand_var(&tape, &mut rng, 1, 2);
        let a = condition_on_entity(&tape, q, e1, &mlp, None).unwrap();
        let b = condition_on_entity(&tape, q, e2, &mlp, None).unwrap();
        assert_eq!(tape.dims(a), (1, 2));
        assert_ne!(tape.data(a), tape.data(b));
        let bad = rand_var(&tape, &mut rng, 1, 3);
        assert!(condition_on_entity(&tape, q, bad, &mlp, None).is_err());
    }

    #[test]
    fn single_token_prefix_decodes_to_origin() {
        assert_eq!(decode_span(&[-3.0], &[-1.0], 15), (0, 0));
        // ties: smaller start, then smaller end
        assert_eq!(decode_span(&[0.0, 0.0], &[0.0, 0.0], 15), (0, 0));
        assert_eq!(decode_span(&[0.0, 0.0, 0.0], &[-1.0, 0.0, 0.0], 15), (0, 1));
    }

    fn brute_force(start: &[f64], end: &[f64], max_len: usize) -> (usize, usize) {
        let mut cands = Vec::new();
        for i in 0..start.len() {
            for j in 0..end.len() {
                if i <= j && j <= i + max_len {
                    cands.push((start[i] + end[j], i, j));
                }
            }
        }
        let best = cands.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
        let (_, i, j) = cands.into_iter().filter(|c| c.0 == best).min_by_key(|c| (c.1, c.2)).unwrap();
        (i, j)
    }

    proptest! {
        #[test]
        fn decode_matches_exhaustive_enumeration(
            logits in prop::collection::vec((-4i32..4, -4i32..4), 1..40),
            max_len in 0usize..20,
        ) {
            // small integer logits make ties frequent
            let start: Vec<f64> = logits.iter().map(|p| p.0 as f64).collect();
            let end: Vec<f64> = logits.iter().map(|p| p.1 as f64).collect();
            let got = decode_span(&start, &end, max_len);
            prop_assert_eq!(got, brute_force(&start, &end, max_len));
            prop_assert!(got.0 <= got.1 && got.1 <= got.0 + max_len && got.1 < start.len());
        }
    }

    #[test]
    fn read_distributions_normalize() {
        let (params, config, emb) = fixture();
        let tape = Tape::new();
        let fw = Forward::eval(&tape, &params, &config, &emb);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ctx = rand_var(&tape, &mut rng, 7, 6);
        let q = rand_var(&tape, &mut rng, 1, 4);
        let e = rand_var(&tape, &mut rng, 1, 4);
        let out = read(&fw, ctx, q, e, None).unwrap();
        let p = &out.prediction;
        assert_eq!(p.scores.start.len(), 7);
        assert!((p.scores.start.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!((p.scores.end.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(out.psi.is_none());
    }

    fn force_class(params: &mut ParamSet, class: StateClass) {
        let w2 = params.get_mut("mrc.cls.w2").unwrap();
        w2.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut b = vec![0.0; 3];
        b[class.index()] = 10.0;
        *params.get_mut("mrc.cls.b2").unwrap() = Tensor::row(b).unwrap();
    }

    #[test]
    fn special_classes_emit_their_embeddings() {
        let (mut params, config, emb) = fixture();
        for class in [StateClass::Nowhere, StateClass::Somewhere] {
            force_class(&mut params, class);
            let tape = Tape::new();
            let fw = Forward::eval(&tape, &params, &config, &emb);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let ctx = rand_var(&tape, &mut rng, 4, 6);
            let q = rand_var(&tape, &mut rng, 1, 4);
            let e = rand_var(&tape, &mut rng, 1, 4);
            let specials = Specials {
                nowhere: fw.p("graph.nowhere").unwrap(),
                somewhere: fw.p("graph.somewhere").unwrap(),
            };
            let out = read(&fw, ctx, q, e, Some(specials)).unwrap();
            assert_eq!(out.prediction.class, class);
            assert!(out.prediction.span.is_none());
            let name = if class == StateClass::Nowhere { "graph.nowhere" } else { "graph.somewhere" };
            assert_eq!(tape.data(out.psi.unwrap()), params.get(name).unwrap().values());
        }
    }

    #[test]
    fn read_composes_sub_operations() {
        let (mut params, config, emb) = fixture();
        force_class(&mut params, StateClass::Span);
        let tape = Tape::new();
        let fw = Forward::eval(&tape, &params, &config, &emb);
        let inst = crate::corpus::ProcessInstance::new(
            "toy",
            vec![tokenize("glucose is in the leaf .")],
            &["glucose".to_string()],
            crate::corpus::LocationGrid::new(vec![vec![LocationState::Somewhere; 2]]),
        )
        .unwrap();
        let enc = crate::encoder::encode_prefix(&fw, &inst, 1, &[0]).unwrap();
        let ctx = enc.per_entity[0];
        let q = encode_question(&fw, &make_question("glucose")).unwrap().vector;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let e = rand_var(&tape, &mut rng, 1, 4);
        let specials = Specials {
            nowhere: fw.p("graph.nowhere").unwrap(),
            somewhere: fw.p("graph.somewhere").unwrap(),
        };
        let out = read(&fw, ctx, q, e, Some(specials)).unwrap();

        // by hand
        let q_t = condition_on_entity(&tape, q, e, &Mlp::bind(&fw, "mrc.cond").unwrap(), None).unwrap();
        let s = tape.data(span_log_probs(&tape, ctx, q_t, fw.p("mrc.start.w").unwrap()).unwrap());
        let en = tape.data(span_log_probs(&tape, ctx, q_t, fw.p("mrc.end.w").unwrap()).unwrap());
        let span = decode_span(&s, &en, 15);
        let psi = span_projection(&tape, ctx, span.0, span.1, fw.p("enc.span.w").unwrap(), fw.p("enc.span.b").unwrap())
            .unwrap();
        assert_eq!(out.prediction.class, StateClass::Span);
        assert_eq!(out.prediction.span, Some(span));
        assert_eq!(out.prediction.scores.start_logits, s);
        assert_eq!(tape.data(out.psi.unwrap()), tape.data(psi));
        assert!(span.1 < inst.tokens.len());
    }

    #[test]
    fn class_names_round_trip() {
        for c in StateClass::ALL {
            assert_eq!(StateClass::parse(c.as_str()), Some(c));
        }
        assert_eq!(StateClass::parse("elsewhere"), None);
    }
}

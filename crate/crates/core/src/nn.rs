//! Neural building blocks recorded on a [`Tape`].
//!
//! Layers only hold [`ParamId`]s; the values live in the model's
//! [`ParamSet`], so a layer can be shared freely between tapes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Id of the unknown token in every vocabulary.
pub const UNK_ID: usize = 0;
/// Id reserved for padding in every vocabulary.
pub const PAD_ID: usize = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Linear {
            weight: params.add_matrix(format!("{name}.weight"), in_dim, out_dim, rng),
            bias: params.add_bias(format!("{name}.bias"), out_dim),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight)?;
        let b = tape.param(self.bias)?;
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }
}

/// A `vocab x dim` lookup table. Row 0 is the unknown token, row 1 padding.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    /// Registers a table with `U(-0.1, 0.1)` rows, or the given initial matrix.
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        vocab_size: usize,
        dim: usize,
        trainable: bool,
        init: Option<Tensor>,
        rng: &mut R,
    ) -> Result<Self> {
        let matrix = match init {
            Some(m) => {
                if m.shape() != [vocab_size, dim] {
                    return Err(Error::Shape {
                        op: "embedding init",
                        lhs: vec![vocab_size, dim],
                        rhs: m.shape().to_vec(),
                    });
                }
                m
            }
            None => Tensor::from_parts(
                vec![vocab_size, dim],
                (0..vocab_size * dim)
                    .map(|_| rng.random_range(-0.1..0.1))
                    .collect(),
            ),
        };
        Ok(EmbeddingTable {
            matrix: params.add(name, matrix, trainable),
            vocab_size,
            dim,
        })
    }

    pub fn lookup(&self, tape: &mut Tape<'_>, id: usize) -> Result<Var> {
        tape.embed_row(self.matrix, id)
    }
}

/// GRU cell with the reset gate applied to the previous state before the
/// candidate projection:
///
/// ```text
/// z  = sigmoid(x W_z + h U_z + b_z)
/// r  = sigmoid(x W_r + h U_r + b_r)
/// n  = tanh(x W_n + (r * h) U_n + b_n)
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GruCell {
    pub w_update: ParamId,
    pub w_reset: ParamId,
    pub w_candidate: ParamId,
    pub u_update: ParamId,
    pub u_reset: ParamId,
    pub u_candidate: ParamId,
    pub b_update: ParamId,
    pub b_reset: ParamId,
    pub b_candidate: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut w = |g: &str| params.add_matrix(format!("{name}.w_{g}"), input_dim, hidden_dim, rng);
        let (w_update, w_reset, w_candidate) = (w("update"), w("reset"), w("candidate"));
        let mut u =
            |g: &str| params.add_matrix(format!("{name}.u_{g}"), hidden_dim, hidden_dim, rng);
        let (u_update, u_reset, u_candidate) = (u("update"), u("reset"), u("candidate"));
        GruCell {
            w_update,
            w_reset,
            w_candidate,
            u_update,
            u_reset,
            u_candidate,
            b_update: params.add_bias(format!("{name}.b_update"), hidden_dim),
            b_reset: params.add_bias(format!("{name}.b_reset"), hidden_dim),
            b_candidate: params.add_bias(format!("{name}.b_candidate"), hidden_dim),
            input_dim,
            hidden_dim,
        }
    }

    pub fn initial_state(&self, tape: &mut Tape<'_>) -> Var {
        tape.constant(Tensor::zeros(&[self.hidden_dim]))
    }

    fn gate(&self, tape: &mut Tape<'_>, x: Var, h: Var, w: ParamId, u: ParamId, b: ParamId) -> Result<Var> {
        let w = tape.param(w)?;
        let u = tape.param(u)?;
        let b = tape.param(b)?;
        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(h, u)?;
        let s = tape.add(xw, hu)?;
        tape.add(s, b)
    }

    pub fn step(&self, tape: &mut Tape<'_>, x: Var, h: Var) -> Result<Var> {
        if tape.shape(x) != [self.input_dim] {
            return Err(Error::Shape {
                op: "gru step",
                lhs: vec![self.input_dim],
                rhs: tape.shape(x).to_vec(),
            });
        }
        let za = self.gate(tape, x, h, self.w_update, self.u_update, self.b_update)?;
        let z = tape.sigmoid(za)?;
        let ra = self.gate(tape, x, h, self.w_reset, self.u_reset, self.b_reset)?;
        let r = tape.sigmoid(ra)?;
        let rh = tape.mul(r, h)?;
        let na = self.gate(tape, x, rh, self.w_candidate, self.u_candidate, self.b_candidate)?;
        let n = tape.tanh(na)?;
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        tape.add(n, zd)
    }
}

/// Two GRU cells reading the sequence left-to-right and right-to-left.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BiGruEncoder {
    pub forward_cell: GruCell,
    pub backward_cell: GruCell,
}

impl BiGruEncoder {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        BiGruEncoder {
            forward_cell: GruCell::new(params, &format!("{name}.fwd"), input_dim, hidden_dim, rng),
            backward_cell: GruCell::new(params, &format!("{name}.bwd"), input_dim, hidden_dim, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward_cell.hidden_dim
    }

    fn run(&self, tape: &mut Tape<'_>, inputs: &[Var]) -> Result<(Vec<Var>, Vec<Var>)> {
        if inputs.is_empty() {
            return Err(Error::invalid("cannot encode an empty sequence"));
        }
        let mut fwd = Vec::with_capacity(inputs.len());
        let mut h = self.forward_cell.initial_state(tape);
        for &x in inputs {
            h = self.forward_cell.step(tape, x, h)?;
            fwd.push(h);
        }
        let mut bwd = vec![h; inputs.len()];
        let mut h = self.backward_cell.initial_state(tape);
        for (t, &x) in inputs.iter().enumerate().rev() {
            h = self.backward_cell.step(tape, x, h)?;
            bwd[t] = h;
        }
        Ok((fwd, bwd))
    }

    /// One `[fwd_t ; bwd_t]` vector per position.
    pub fn encode(&self, tape: &mut Tape<'_>, inputs: &[Var]) -> Result<Vec<Var>> {
        let (fwd, bwd) = self.run(tape, inputs)?;
        fwd.into_iter()
            .zip(bwd)
            .map(|(f, b)| tape.concat(&[f, b]))
            .collect()
    }

    /// `[fwd_T ; bwd_1]`: the final state of each direction.
    pub fn final_states(&self, tape: &mut Tape<'_>, inputs: &[Var]) -> Result<Var> {
        let (fwd, bwd) = self.run(tape, inputs)?;
        tape.concat(&[*fwd.last().unwrap(), bwd[0]])
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeedForward {
    pub layers: Vec<Linear>,
}

impl FeedForward {
    /// `dims = [input, hidden.., output]`.
    pub fn new<R: Rng>(params: &mut ParamSet, name: &str, dims: &[usize], rng: &mut R) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        FeedForward { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    fn check_input(&self, tape: &Tape<'_>, x: Var, op: &'static str) -> Result<()> {
        if tape.shape(x) != [self.input_dim()] {
            return Err(Error::Shape {
                op,
                lhs: vec![self.input_dim()],
                rhs: tape.shape(x).to_vec(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        self.check_input(tape, x, "feedforward")?;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Log-probabilities over the output classes.
    pub fn log_probs(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let l = self.logits(tape, x)?;
        tape.log_softmax(l)
    }

    /// `-log p(target | x)`.
    pub fn nll(&self, tape: &mut Tape<'_>, x: Var, target: usize) -> Result<Var> {
        let l = self.logits(tape, x)?;
        tape.cross_entropy(l, target)
    }
}

/// Word vector concatenated with the final states of a character BiGRU.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TokenEmbedder {
    pub words: EmbeddingTable,
    pub chars: EmbeddingTable,
    pub char_encoder: BiGruEncoder,
}

impl TokenEmbedder {
    pub fn output_dim(&self) -> usize {
        self.words.dim + self.char_encoder.output_dim()
    }

    pub fn embed_token(&self, tape: &mut Tape<'_>, word_id: usize, char_ids: &[usize]) -> Result<Var> {
        let w = self.words.lookup(tape, word_id)?;
        let unk = [UNK_ID];
        let char_ids = if char_ids.is_empty() { &unk[..] } else { char_ids };
        let chars = char_ids
            .iter()
            .map(|&c| self.chars.lookup(tape, c))
            .collect::<Result<Vec<_>>>()?;
        let c = self.char_encoder.final_states(tape, &chars)?;
        tape.concat(&[w, c])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::log_sum_exp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn embedder(params: &mut ParamSet, rng: &mut ChaCha8Rng, word_dim: usize, char_hidden: usize) -> TokenEmbedder {
        TokenEmbedder {
            words: EmbeddingTable::new(params, "words", 7, word_dim, true, None, rng).unwrap(),
            chars: EmbeddingTable::new(params, "chars", 5, 4, true, None, rng).unwrap(),
            char_encoder: BiGruEncoder::new(params, "char_gru", 4, char_hidden, rng),
        }
    }

    #[test]
    fn token_embedding_dim_matches_word_plus_two_char_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::new();
        let emb = embedder(&mut ps, &mut rng, 100, 25);
        let mut t = Tape::with_params(&ps);
        let v = emb.embed_token(&mut t, UNK_ID, &[2, 3]).unwrap();
        assert_eq!(t.shape(v), &[150]);
        assert_eq!(&t.value(v).data()[..100], ps.value(emb.words.matrix).row(0));
        // empty tokens fall back to the unknown character
        let e = emb.embed_token(&mut t, 3, &[]).unwrap();
        assert_eq!(t.shape(e), &[150]);
        assert!(emb.embed_token(&mut t, 7, &[2]).is_err());
    }

    #[test]
    fn identical_tokens_embed_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::new();
        let emb = embedder(&mut ps, &mut rng, 6, 3);
        let mut t = Tape::with_params(&ps);
        let a = emb.embed_token(&mut t, 4, &[2, 3, 4]).unwrap();
        let _ = emb.embed_token(&mut t, 5, &[3]).unwrap();
        let b = emb.embed_token(&mut t, 4, &[2, 3, 4]).unwrap();
        assert_eq!(t.value(a), t.value(b));
    }

    #[test]
    fn zero_weight_decoder_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamSet::new();
        let dec = FeedForward::new(&mut ps, "dec", &[3, 5, 5, 11], &mut rng);
        for id in ps.ids().collect::<Vec<_>>() {
            ps.get_mut(id).value.fill(0.0);
        }
        let mut t = Tape::with_params(&ps);
        let z = t.constant(Tensor::vector(vec![0.4, -2.0, 1.0]).unwrap());
        let lp = dec.log_probs(&mut t, z).unwrap();
        for v in t.value(lp).data() {
            assert!((v - (1.0f64 / 11.0).ln()).abs() < 1e-12);
        }
        assert!(log_sum_exp(t.value(lp).data()).abs() < 1e-10);
        let wrong = t.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(dec.log_probs(&mut t, wrong).is_err());
    }

    #[test]
    fn encode_rejects_empty_and_counts_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new();
        let enc = BiGruEncoder::new(&mut ps, "enc", 3, 4, &mut rng);
        let mut t = Tape::with_params(&ps);
        assert!(enc.encode(&mut t, &[]).is_err());
        for len in 1..=10 {
            let xs: Vec<Var> = (0..len)
                .map(|i| t.constant(Tensor::vector(vec![i as f64 * 0.1, 0.5, -0.3]).unwrap()))
                .collect();
            let hs = enc.encode(&mut t, &xs).unwrap();
            assert_eq!(hs.len(), len);
            assert!(hs.iter().all(|&h| t.shape(h) == [8]));
        }
    }
}

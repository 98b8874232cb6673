use std::cell::RefCell;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::graph_encoder::init_weight;
use crate::tensor::{Mask, ParamId, ParamStore, Stage, Tape, Tensor, TensorError, Var};

use super::ModelError;

/// Per-forward state: the tape, parameter values, train/eval switch and the
/// dropout stream.
pub struct Fwd<'t, 's> {
    pub tape: &'t Tape,
    pub store: &'s ParamStore,
    pub training: bool,
    rng: RefCell<ChaCha8Rng>,
}

impl<'t, 's> Fwd<'t, 's> {
    pub fn new(tape: &'t Tape, store: &'s ParamStore, training: bool, rng: ChaCha8Rng) -> Self {
        Fwd {
            tape,
            store,
            training,
            rng: RefCell::new(rng),
        }
    }

    pub fn eval(tape: &'t Tape, store: &'s ParamStore) -> Self {
        use rand::SeedableRng;
        Self::new(tape, store, false, ChaCha8Rng::seed_from_u64(0))
    }

    pub fn param(&self, id: ParamId) -> Var<'t> {
        self.tape.param(self.store, id)
    }

    pub fn constant(&self, t: Tensor) -> Var<'t> {
        self.tape.constant(t)
    }

    pub fn dropout(&self, x: Var<'t>, p: f64) -> Var<'t> {
        if !self.training || p == 0.0 {
            return x;
        }
        x.dropout(p, true, &mut *self.rng.borrow_mut())
    }

    pub(crate) fn with_rng<T>(&self, f: impl FnOnce(&mut ChaCha8Rng) -> T) -> T {
        f(&mut self.rng.borrow_mut())
    }
}

/// Affine map `x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        (rows, cols): (usize, usize),
        d: usize,
        bias: bool,
        stage: Stage,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let w = store.add(format!("{name}.w"), init_weight(rows, cols, d, rng), stage)?;
        let b = if bias {
            Some(store.add(format!("{name}.b"), Tensor::zeros(vec![1, cols]), stage)?)
        } else {
            None
        };
        Ok(Linear { w, b })
    }

    pub fn forward<'t>(&self, fx: &Fwd<'t, '_>, x: Var<'t>) -> Result<Var<'t>, TensorError> {
        let y = x.matmul(fx.param(self.w))?;
        match self.b {
            Some(b) => y.add_row(fx.param(b)),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-6;

    pub fn new(store: &mut ParamStore, name: &str, d: usize, stage: Stage) -> Result<Self, TensorError> {
        Ok(LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::ones(vec![1, d]), stage)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![1, d]), stage)?,
        })
    }

    pub fn forward<'t>(&self, fx: &Fwd<'t, '_>, x: Var<'t>) -> Result<Var<'t>, TensorError> {
        x.layer_norm(fx.param(self.gain), fx.param(self.bias), Self::EPS)
    }
}

/// Scaled dot-product attention split over `heads` column blocks.
///
/// Projections are applied by the caller; `mask` rows are queries and
/// columns keys. A query row whose mask admits no key yields zeros.
pub fn multi_head_attention<'t>(q: Var<'t>, k: Var<'t>, v: Var<'t>, heads: usize, mask: Option<&Mask>) -> Result<Var<'t>, TensorError> {
    let d = q.cols();
    if !d.is_multiple_of(heads) || k.cols() != d || v.cols() != d || k.rows() != v.rows() {
        return Err(TensorError::mismatch("attention", &q.shape(), &k.shape()));
    }
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = (q.slice_cols(h * dk, dk)?, k.slice_cols(h * dk, dk)?, v.slice_cols(h * dk, dk)?);
        let weights = qh.matmul(kh.transpose())?.scale(scale).softmax_rows(mask)?;
        outs.push(weights.matmul(vh)?);
    }
    if heads == 1 {
        Ok(outs[0])
    } else {
        Var::concat_cols(&outs)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        stage: Stage,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        // A key bias only shifts every score of a query row by the same
        // amount, so it is omitted.
        let mut lin = |part: &str, bias: bool, rng: &mut R| Linear::new(store, &format!("{name}.{part}"), (d, d), d, bias, stage, rng);
        Ok(MultiHeadAttention {
            heads,
            q: lin("q", true, rng)?,
            k: lin("k", false, rng)?,
            v: lin("v", true, rng)?,
            o: lin("o", true, rng)?,
        })
    }

    pub fn forward<'t>(&self, fx: &Fwd<'t, '_>, query: Var<'t>, memory: Var<'t>, mask: Option<&Mask>) -> Result<Var<'t>, TensorError> {
        let q = self.q.forward(fx, query)?;
        let k = self.k.forward(fx, memory)?;
        let v = self.v.forward(fx, memory)?;
        self.o.forward(fx, multi_head_attention(q, k, v, self.heads, mask)?)
    }
}

/// `λ ⊙ H_a + (1 − λ) ⊙ H_c` with `λ = σ(H_a W_a + H_c W_c)`.
pub fn gate<'t>(h_a: Var<'t>, h_c: Var<'t>, w_a: Var<'t>, w_c: Var<'t>) -> Result<Var<'t>, TensorError> {
    if h_a.shape() != h_c.shape() {
        return Err(TensorError::mismatch("gate", &h_a.shape(), &h_c.shape()));
    }
    let lambda = h_a.matmul(w_a)?.add(h_c.matmul(w_c)?)?.sigmoid();
    // λ H_a + (1 − λ) H_c = H_c + λ (H_a − H_c)
    h_c.add(lambda.mul(h_a.sub(h_c)?)?)
}

#[derive(Clone, Debug)]
pub struct Gate {
    pub w_a: ParamId,
    pub w_c: ParamId,
}

impl Gate {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, stage: Stage, rng: &mut R) -> Result<Self, TensorError> {
        Ok(Gate {
            w_a: store.add(format!("{name}.w_a"), init_weight(d, d, d, rng), stage)?,
            w_c: store.add(format!("{name}.w_c"), init_weight(d, d, d, rng), stage)?,
        })
    }

    pub fn forward<'t>(&self, fx: &Fwd<'t, '_>, h_a: Var<'t>, h_c: Var<'t>) -> Result<Var<'t>, TensorError> {
        gate(h_a, h_c, fx.param(self.w_a), fx.param(self.w_c))
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        ffn: usize,
        stage: Stage,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        Ok(FeedForward {
            inner: Linear::new(store, &format!("{name}.inner"), (d, ffn), d, true, stage, rng)?,
            outer: Linear::new(store, &format!("{name}.outer"), (ffn, d), d, true, stage, rng)?,
        })
    }

    pub fn forward<'t>(&self, fx: &Fwd<'t, '_>, x: Var<'t>, dropout: f64) -> Result<Var<'t>, ModelError> {
        let h = fx.dropout(self.inner.forward(fx, x)?.relu(), dropout);
        Ok(self.outer.forward(fx, h)?)
    }
}

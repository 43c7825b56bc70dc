//! Parameterized building blocks over [`ParamStore`] ids.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{attention, Bound, ParamId, ParamStore, Tensor};

pub(crate) const LN_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    /// Weights ~ N(0, gain^2 / fan_in), zero bias.
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, gain: f64, rng: &mut R) -> Self {
        let w = ps.normal(&format!("{name}.w"), &[fan_in, fan_out], gain / (fan_in as f64).sqrt(), rng);
        let b = ps.zeros(&format!("{name}.b"), &[fan_out]);
        Self { w, b }
    }

    pub fn fwd(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
        x.matmul(p.get(self.w))?.add_row(p.get(self.b))
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Norm {
    g: ParamId,
    b: ParamId,
}

impl Norm {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            g: ps.filled(&format!("{name}.g"), &[d], 1.0),
            b: ps.zeros(&format!("{name}.b"), &[d]),
        }
    }

    pub fn fwd(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(LN_EPS)?.mul_row(p.get(self.g))?.add_row(p.get(self.b))
    }
}

/// Two-layer perceptron with a GELU in between.
#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    l1: Linear,
    l2: Linear,
}

impl Mlp {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, d_in: usize, d_hidden: usize, d_out: usize, rng: &mut R) -> Self {
        Self {
            l1: Linear::new(ps, &format!("{name}.l1"), d_in, d_hidden, 1.0, rng),
            l2: Linear::new(ps, &format!("{name}.l2"), d_hidden, d_out, 1.0, rng),
        }
    }

    pub fn fwd(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
        self.l2.fwd(p, &self.l1.fwd(p, x)?.gelu())
    }
}

/// Pre-norm attention block followed by a feed-forward sublayer, both residual.
#[derive(Debug, Clone)]
pub(crate) struct AttnBlock {
    ln_q: Norm,
    ln_kv: Option<Norm>,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln_ff: Norm,
    ff: Mlp,
}

impl AttnBlock {
    /// `cross` blocks get their own norm for the key/value source.
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, d: usize, cross: bool, rng: &mut R) -> Self {
        Self {
            ln_q: Norm::new(ps, &format!("{name}.ln_q"), d),
            ln_kv: cross.then(|| Norm::new(ps, &format!("{name}.ln_kv"), d)),
            q: Linear::new(ps, &format!("{name}.q"), d, d, 1.0, rng),
            k: Linear::new(ps, &format!("{name}.k"), d, d, 1.0, rng),
            v: Linear::new(ps, &format!("{name}.v"), d, d, 1.0, rng),
            o: Linear::new(ps, &format!("{name}.o"), d, d, 0.5, rng),
            ln_ff: Norm::new(ps, &format!("{name}.ln_ff"), d),
            ff: Mlp::new(ps, &format!("{name}.ff"), d, 2 * d, d, rng),
        }
    }

    /// Self-attention when `kv` is `None`; otherwise keys from `kv.0` and values from `kv.1`.
    pub fn fwd(
        &self,
        p: &Bound,
        x: &Tensor,
        kv: Option<(&Tensor, &Tensor)>,
        key_mask: Option<&[bool]>,
        heads: usize,
    ) -> Result<Tensor> {
        let hq = self.ln_q.fwd(p, x)?;
        let (hk, hv) = match (kv, &self.ln_kv) {
            (None, _) => (hq.clone(), hq.clone()),
            (Some((k, v)), Some(ln)) if Tensor::ptr_eq(k, v) => {
                let h = ln.fwd(p, k)?;
                (h.clone(), h)
            }
            (Some((k, v)), Some(ln)) => (ln.fwd(p, k)?, ln.fwd(p, v)?),
            (Some(_), None) => return Err(Error::Domain("self-attention block given a key/value source".into())),
        };
        let a = attention(&self.q.fwd(p, &hq)?, &self.k.fwd(p, &hk)?, &self.v.fwd(p, &hv)?, heads, key_mask)?;
        let x = x.add(&self.o.fwd(p, &a)?)?;
        let f = self.ff.fwd(p, &self.ln_ff.fwd(p, &x)?)?;
        x.add(&f)
    }
}

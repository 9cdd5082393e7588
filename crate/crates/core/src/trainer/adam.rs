use crate::autodiff::{Checkpoint, ParamStore, Real, Record, Tensor};
use crate::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam with bias correction. Moment buffers are indexed like the store
/// and only allocated for trainable, unfrozen entries.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = |id| {
            if store.requires_grad(id) {
                vec![T::zero(); store.value(id).len()]
            } else {
                Vec::new()
            }
        };
        Self {
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS,
            step: 0,
            m: store.ids().map(zeros).collect(),
            v: store.ids().map(zeros).collect(),
        }
    }

    /// One update with learning rate `lr` from the gradients held in `store`.
    /// A non-finite gradient aborts before any parameter changes.
    pub fn update(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        let ids: Vec<_> = store.trainable().collect();
        for &id in &ids {
            if store.grad(id).iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of parameter `{}`", store.name(id))));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one, eps) = (T::one(), T::lit(self.eps));
        let (c1, c2, lr) = (T::lit(c1), T::lit(c2), T::lit(lr));
        for id in ids {
            let k = id.index();
            let grad = store.grad(id).to_vec();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            if m.len() != grad.len() {
                return Err(Error::invalid(format!("optimizer state does not cover `{}`", store.name(id))));
            }
            let p = store.value_mut(id).data_mut();
            for i in 0..grad.len() {
                let gi = grad[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Appends moment buffers as `adam.m.{name}` / `adam.v.{name}` records.
    pub fn save(&self, store: &ParamStore<T>, ck: &mut Checkpoint) {
        ck.set_header("adam.step", self.step);
        for id in store.ids() {
            let k = id.index();
            if self.m[k].is_empty() {
                continue;
            }
            for (tag, buf) in [("m", &self.m[k]), ("v", &self.v[k])] {
                ck.records.push(Record {
                    name: format!("adam.{tag}.{}", store.name(id)),
                    shape: vec![buf.len()],
                    data: buf.iter().map(|x| x.as_f32()).collect(),
                });
            }
        }
    }

    pub fn load(store: &ParamStore<T>, ck: &Checkpoint) -> Result<Self> {
        let mut adam = Self::new(store);
        adam.step = ck
            .header_value("adam.step")
            .ok_or_else(|| Error::format("checkpoint", "missing adam.step"))?
            .parse()
            .map_err(|_| Error::format("checkpoint", "bad adam.step"))?;
        for id in store.ids() {
            let k = id.index();
            if adam.m[k].is_empty() {
                continue;
            }
            for tag in ["m", "v"] {
                let key = format!("adam.{tag}.{}", store.name(id));
                let rec = ck
                    .record(&key)
                    .ok_or_else(|| Error::format("checkpoint", format!("missing record `{key}`")))?;
                let vals = Tensor::new(&rec.shape, rec.data.iter().map(|&v| T::from_f32(v)).collect())?;
                let dst = if tag == "m" { &mut adam.m[k] } else { &mut adam.v[k] };
                if vals.len() != dst.len() {
                    return Err(Error::format("checkpoint", format!("record `{key}` has the wrong size")));
                }
                dst.copy_from_slice(vals.data());
            }
        }
        Ok(adam)
    }
}

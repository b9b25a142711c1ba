use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{matvec, matvec_t_acc, outer_acc, sigmoid, Grads, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

fn lookup(store: &ParamStore, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = store
        .id(name)
        .ok_or_else(|| Error::shape(format!("missing parameter '{name}'")))?;
    if store.get(id).shape != shape {
        return Err(Error::shape(format!(
            "parameter '{name}' has shape {:?}, expected {shape:?}",
            store.get(id).shape
        )));
    }
    Ok(id)
}

/// GRU cell with `h' = (1 - z) ⊙ h + z ⊙ ĥ` and the reset gate applied to
/// `h` inside the candidate's recurrent product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruCell {
    pub input: usize,
    pub hidden: usize,
    w_z: ParamId,
    u_z: ParamId,
    b_z: ParamId,
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_c: ParamId,
    u_c: ParamId,
    b_c: ParamId,
}

/// Intermediates of one GRU step, kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct GruCache {
    x: Vec<f64>,
    h: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
    rh: Vec<f64>,
}

const GATES: [&str; 3] = ["z", "r", "c"];

impl GruCell {
    /// Registers Glorot-initialized weights and zero biases under `prefix`.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        for g in GATES {
            store.add(
                format!("{prefix}.w_{g}"),
                Tensor::glorot(hidden, input, rng),
            )?;
            store.add(
                format!("{prefix}.u_{g}"),
                Tensor::glorot(hidden, hidden, rng),
            )?;
            store.add(format!("{prefix}.b_{g}"), Tensor::zeros(&[hidden]))?;
        }
        Self::bind(store, prefix, input, hidden)
    }

    /// Binds to tensors already present in `store`.
    pub fn bind(store: &ParamStore, prefix: &str, input: usize, hidden: usize) -> Result<Self> {
        let w = |g: &str| lookup(store, &format!("{prefix}.w_{g}"), &[hidden, input]);
        let u = |g: &str| lookup(store, &format!("{prefix}.u_{g}"), &[hidden, hidden]);
        let b = |g: &str| lookup(store, &format!("{prefix}.b_{g}"), &[hidden]);
        Ok(Self {
            input,
            hidden,
            w_z: w("z")?,
            u_z: u("z")?,
            b_z: b("z")?,
            w_r: w("r")?,
            u_r: u("r")?,
            b_r: b("r")?,
            w_c: w("c")?,
            u_c: u("c")?,
            b_c: b("c")?,
        })
    }

    pub fn forward(&self, store: &ParamStore, h: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.hidden || x.len() != self.input {
            return Err(Error::shape(format!(
                "GRU expects h[{}], x[{}]; got h[{}], x[{}]",
                self.hidden,
                self.input,
                h.len(),
                x.len()
            )));
        }
        Ok(self.step(store, h, x).0)
    }

    fn gate(
        &self,
        store: &ParamStore,
        w: ParamId,
        u: ParamId,
        b: ParamId,
        x: &[f64],
        h: &[f64],
    ) -> Vec<f64> {
        let (hd, inp) = (self.hidden, self.input);
        let mut a = vec![0.0; hd];
        let mut tmp = vec![0.0; hd];
        matvec(store.data(w), hd, inp, x, &mut a);
        matvec(store.data(u), hd, hd, h, &mut tmp);
        let bias = store.data(b);
        for i in 0..hd {
            a[i] += tmp[i] + bias[i];
        }
        a
    }

    /// Unchecked forward step returning the new state and its cache.
    pub fn step(&self, store: &ParamStore, h: &[f64], x: &[f64]) -> (Vec<f64>, GruCache) {
        let mut z = self.gate(store, self.w_z, self.u_z, self.b_z, x, h);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));
        let mut r = self.gate(store, self.w_r, self.u_r, self.b_r, x, h);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let mut cand = self.gate(store, self.w_c, self.u_c, self.b_c, x, &rh);
        cand.iter_mut().for_each(|v| *v = v.tanh());
        let next = (0..self.hidden)
            .map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i])
            .collect();
        let cache = GruCache {
            x: x.to_vec(),
            h: h.to_vec(),
            z,
            r,
            cand,
            rh,
        };
        (next, cache)
    }

    /// Accumulates parameter gradients for one step and returns `dL/dh`.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &GruCache,
        dh_next: &[f64],
        grads: &mut Grads,
    ) -> Vec<f64> {
        let hd = self.hidden;
        let mut dh = vec![0.0; hd];
        let mut da_z = vec![0.0; hd];
        let mut da_c = vec![0.0; hd];
        for i in 0..hd {
            let (z, c, h) = (cache.z[i], cache.cand[i], cache.h[i]);
            dh[i] = dh_next[i] * (1.0 - z);
            da_z[i] = dh_next[i] * (c - h) * z * (1.0 - z);
            da_c[i] = dh_next[i] * z * (1.0 - c * c);
        }
        outer_acc(grads.get_mut(self.w_c), &da_c, &cache.x);
        outer_acc(grads.get_mut(self.u_c), &da_c, &cache.rh);
        add(grads.get_mut(self.b_c), &da_c);
        let mut d_rh = vec![0.0; hd];
        matvec_t_acc(store.data(self.u_c), hd, hd, &da_c, &mut d_rh);
        let mut da_r = vec![0.0; hd];
        for i in 0..hd {
            dh[i] += d_rh[i] * cache.r[i];
            let r = cache.r[i];
            da_r[i] = d_rh[i] * cache.h[i] * r * (1.0 - r);
        }
        outer_acc(grads.get_mut(self.w_z), &da_z, &cache.x);
        outer_acc(grads.get_mut(self.u_z), &da_z, &cache.h);
        add(grads.get_mut(self.b_z), &da_z);
        matvec_t_acc(store.data(self.u_z), hd, hd, &da_z, &mut dh);
        outer_acc(grads.get_mut(self.w_r), &da_r, &cache.x);
        outer_acc(grads.get_mut(self.u_r), &da_r, &cache.h);
        add(grads.get_mut(self.b_r), &da_r);
        matvec_t_acc(store.data(self.u_r), hd, hd, &da_r, &mut dh);
        dh
    }

    pub fn param_ids(&self) -> [ParamId; 9] {
        [
            self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_c, self.u_c,
            self.b_c,
        ]
    }
}

fn add(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }
}

/// `activation(W x + b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Vec<f64>,
    output: Vec<f64>,
}

impl Dense {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        store.add(format!("{prefix}.w"), Tensor::glorot(outputs, inputs, rng))?;
        store.add(format!("{prefix}.b"), Tensor::zeros(&[outputs]))?;
        Self::bind(store, prefix, inputs, outputs, activation)
    }

    pub fn bind(
        store: &ParamStore,
        prefix: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
    ) -> Result<Self> {
        Ok(Self {
            inputs,
            outputs,
            activation,
            w: lookup(store, &format!("{prefix}.w"), &[outputs, inputs])?,
            b: lookup(store, &format!("{prefix}.b"), &[outputs])?,
        })
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs {
            return Err(Error::shape(format!(
                "dense layer expects {} inputs, got {}",
                self.inputs,
                x.len()
            )));
        }
        Ok(self.step(store, x).0)
    }

    pub fn step(&self, store: &ParamStore, x: &[f64]) -> (Vec<f64>, DenseCache) {
        let mut out = vec![0.0; self.outputs];
        matvec(store.data(self.w), self.outputs, self.inputs, x, &mut out);
        for (o, b) in out.iter_mut().zip(store.data(self.b)) {
            *o = self.activation.apply(*o + b);
        }
        let cache = DenseCache {
            input: x.to_vec(),
            output: out.clone(),
        };
        (out, cache)
    }

    /// Accumulates `dW`, `db` and returns `dL/dx`.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &DenseCache,
        d_out: &[f64],
        grads: &mut Grads,
    ) -> Vec<f64> {
        let da: Vec<f64> = match self.activation {
            Activation::Identity => d_out.to_vec(),
            Activation::Tanh => d_out
                .iter()
                .zip(&cache.output)
                .map(|(g, y)| g * (1.0 - y * y))
                .collect(),
        };
        outer_acc(grads.get_mut(self.w), &da, &cache.input);
        add(grads.get_mut(self.b), &da);
        let mut dx = vec![0.0; self.inputs];
        matvec_t_acc(store.data(self.w), self.outputs, self.inputs, &da, &mut dx);
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Inverted-dropout multipliers: 0 for dropped units, `1 / (1 - rate)` for
/// survivors.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(pub Vec<f64>);

impl DropoutMask {
    pub fn sample<R: Rng + ?Sized>(width: usize, rate: f64, rng: &mut R) -> Self {
        if rate == 0.0 {
            return Self(vec![1.0; width]);
        }
        let keep = 1.0 / (1.0 - rate);
        Self(
            (0..width)
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                .collect(),
        )
    }

    pub fn ones(width: usize) -> Self {
        Self(vec![1.0; width])
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.0).map(|(a, m)| a * m).collect()
    }
}

/// Identity in eval mode; inverted dropout in train mode, returning the mask.
pub fn dropout_forward<R: Rng>(
    x: &[f64],
    rate: f64,
    mode: DropoutMode,
    rng: &mut R,
) -> Result<(Vec<f64>, Option<DropoutMask>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    match mode {
        DropoutMode::Eval => Ok((x.to_vec(), None)),
        DropoutMode::Train => {
            let mask = DropoutMask::sample(x.len(), rate, rng);
            Ok((mask.apply(x), Some(mask)))
        }
    }
}

//! Action-value network: a strided conv stack over channels-last inputs,
//! batch norm on every conv after the first, a fully connected trunk, and
//! either a plain linear head or a dueling value/advantage pair recombined
//! through a final linear layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    maxpool2, maxpool2_backward, relu, relu_backward, BatchNorm2d, BnCache, Conv2d, ConvCache,
    Dense,
};
use super::tensor::{Scalar, TensorN};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DuelingAggregation {
    /// q = out(v + a)
    BroadcastSum,
    /// q = out(v + a - mean(a))
    MeanCentered,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QNetworkConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub in_channels: usize,
    pub convs: Vec<ConvSpec>,
    pub fc_units: usize,
    pub n_actions: usize,
    pub dueling: bool,
    pub aggregation: DuelingAggregation,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl QNetworkConfig {
    /// The production architecture for 84x84 4-frame difference stacks and
    /// the six rigid adjustment actions.
    pub fn bscan84() -> Self {
        QNetworkConfig {
            input_h: 84,
            input_w: 84,
            in_channels: 4,
            convs: vec![
                ConvSpec { filters: 32, kernel: 5, stride: 2 },
                ConvSpec { filters: 32, kernel: 5, stride: 2 },
                ConvSpec { filters: 64, kernel: 4, stride: 2 },
                ConvSpec { filters: 64, kernel: 3, stride: 2 },
            ],
            fc_units: 512,
            n_actions: 6,
            dueling: true,
            aggregation: DuelingAggregation::BroadcastSum,
            bn_momentum: 0.99,
            bn_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bounded = |name: &str, v: usize, lo: usize, hi: usize| -> Result<()> {
            if v < lo || v > hi {
                Err(Error::Config(format!("{} = {} outside [{}, {}]", name, v, lo, hi)))
            } else {
                Ok(())
            }
        };
        bounded("input_h", self.input_h, 1, 4096)?;
        bounded("input_w", self.input_w, 1, 4096)?;
        bounded("in_channels", self.in_channels, 1, 1024)?;
        bounded("fc_units", self.fc_units, 1, 65536)?;
        bounded("n_actions", self.n_actions, 1, 4096)?;
        if self.convs.is_empty() || self.convs.len() > 16 {
            return Err(Error::Config(format!(
                "conv stack of {} layers unsupported",
                self.convs.len()
            )));
        }
        for (i, c) in self.convs.iter().enumerate() {
            bounded(&format!("conv{} filters", i + 1), c.filters, 1, 4096)?;
            bounded(&format!("conv{} kernel", i + 1), c.kernel, 1, 64)?;
            bounded(&format!("conv{} stride", i + 1), c.stride, 1, 32)?;
        }
        if !(self.bn_momentum >= 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::Config(format!(
                "bn_momentum = {} outside [0, 1)",
                self.bn_momentum
            )));
        }
        if !(self.bn_eps > 0.0 && self.bn_eps.is_finite()) {
            return Err(Error::Config(format!("bn_eps = {} must be positive", self.bn_eps)));
        }
        self.feature_len()?;
        Ok(())
    }

    /// Spatial size after each conv layer, in order.
    pub fn conv_output_sizes(&self) -> Result<Vec<(usize, usize)>> {
        let (mut h, mut w) = (self.input_h, self.input_w);
        let mut sizes = Vec::with_capacity(self.convs.len());
        for (i, c) in self.convs.iter().enumerate() {
            if h < c.kernel || w < c.kernel {
                return Err(Error::Config(format!(
                    "conv{}: input {}x{} smaller than {}x{} kernel",
                    i + 1,
                    h,
                    w,
                    c.kernel,
                    c.kernel
                )));
            }
            h = (h - c.kernel) / c.stride + 1;
            w = (w - c.kernel) / c.stride + 1;
            sizes.push((h, w));
        }
        Ok(sizes)
    }

    /// Flattened feature count entering the fully connected trunk.
    pub fn feature_len(&self) -> Result<usize> {
        let sizes = self.conv_output_sizes()?;
        let (h, w) = *sizes.last().expect("validated non-empty");
        if h < 2 || w < 2 {
            return Err(Error::Config(format!(
                "final conv output {}x{} too small for 2x2 pooling",
                h, w
            )));
        }
        Ok((h / 2) * (w / 2) * self.convs.last().expect("non-empty").filters)
    }
}

#[derive(Clone, Debug)]
enum Head<F> {
    Single {
        out: Dense<F>,
    },
    Dueling {
        value: Dense<F>,
        advantage: Dense<F>,
        out: Dense<F>,
        aggregation: DuelingAggregation,
    },
}

#[derive(Clone, Debug)]
pub struct QNetwork<F> {
    cfg: QNetworkConfig,
    convs: Vec<Conv2d<F>>,
    bns: Vec<Option<BatchNorm2d<F>>>,
    fc: Dense<F>,
    head: Head<F>,
}

/// Intermediate activations kept from a training-mode forward pass.
pub struct FwdCache<F> {
    conv: Vec<ConvCache<F>>,
    conv_out: Vec<Option<TensorN<F>>>,
    bn: Vec<Option<BnCache<F>>>,
    pre_relu: Vec<TensorN<F>>,
    pool_in_shape: Vec<usize>,
    pool_argmax: Vec<u32>,
    flat: TensorN<F>,
    fc_pre: TensorN<F>,
    hidden: TensorN<F>,
    head: HeadCache<F>,
}

enum HeadCache<F> {
    Single,
    Dueling { combined: TensorN<F> },
}

/// Gradients for every trainable tensor, in the same order as
/// [`QNetwork::trainable`].
#[derive(Clone, Debug)]
pub struct GradSet<F> {
    pub tensors: Vec<Vec<F>>,
}

fn ensure_finite<F: Scalar>(t: &TensorN<F>, stage: &str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite activation after {}", stage)))
    }
}

impl<F: Scalar> QNetwork<F> {
    pub fn new(cfg: QNetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(cfg.convs.len());
        let mut bns = Vec::with_capacity(cfg.convs.len());
        let mut in_c = cfg.in_channels;
        for (i, spec) in cfg.convs.iter().enumerate() {
            convs.push(Conv2d::new(
                spec.kernel,
                spec.kernel,
                in_c,
                spec.filters,
                spec.stride,
                &mut rng,
            ));
            bns.push(if i == 0 {
                None
            } else {
                Some(BatchNorm2d::new(spec.filters, cfg.bn_momentum, cfg.bn_eps))
            });
            in_c = spec.filters;
        }
        let feat = cfg.feature_len()?;
        let fc = Dense::new(feat, cfg.fc_units, &mut rng);
        let head = if cfg.dueling {
            Head::Dueling {
                value: Dense::new(cfg.fc_units, 1, &mut rng),
                advantage: Dense::new(cfg.fc_units, cfg.n_actions, &mut rng),
                out: Dense::new(cfg.n_actions, cfg.n_actions, &mut rng),
                aggregation: cfg.aggregation,
            }
        } else {
            Head::Single {
                out: Dense::new(cfg.fc_units, cfg.n_actions, &mut rng),
            }
        };
        Ok(QNetwork { cfg, convs, bns, fc, head })
    }

    pub fn config(&self) -> &QNetworkConfig {
        &self.cfg
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    fn check_input(&self, x: &TensorN<F>) -> Result<usize> {
        let s = x.shape();
        if s.len() != 4
            || s[1] != self.cfg.input_h
            || s[2] != self.cfg.input_w
            || s[3] != self.cfg.in_channels
        {
            return Err(Error::Dimension(format!(
                "network expects [b,{},{},{}], got {:?}",
                self.cfg.input_h, self.cfg.input_w, self.cfg.in_channels, s
            )));
        }
        if s[0] == 0 {
            return Err(Error::Input("empty batch".into()));
        }
        Ok(s[0])
    }

    pub fn forward(&mut self, x: &TensorN<F>, mode: ForwardMode) -> Result<TensorN<F>> {
        match mode {
            ForwardMode::Eval => self.forward_eval(x),
            ForwardMode::Train => self.forward_train(x).map(|(q, _)| q),
        }
    }

    pub fn forward_eval(&self, x: &TensorN<F>) -> Result<TensorN<F>> {
        self.check_input(x)?;
        ensure_finite(x, "input")?;
        let mut a = None;
        for (i, conv) in self.convs.iter().enumerate() {
            let mut y = conv.infer(a.as_ref().unwrap_or(x))?;
            ensure_finite(&y, &format!("conv{}", i + 1))?;
            if let Some(bn) = &self.bns[i] {
                y = bn.forward_eval(&y)?;
                ensure_finite(&y, &format!("bn{}", i + 1))?;
            }
            a = Some(relu(&y));
        }
        let (pooled, _) = maxpool2(a.as_ref().expect("at least one conv"))?;
        let b = pooled.shape()[0];
        let feat = pooled.len() / b;
        let flat = pooled.reshaped(&[b, feat])?;
        let hidden = relu(&self.fc.forward(&flat)?);
        ensure_finite(&hidden, "fc")?;
        let q = match &self.head {
            Head::Single { out } => out.forward(&hidden)?,
            Head::Dueling { value, advantage, out, aggregation } => {
                let v = value.forward(&hidden)?;
                let adv = advantage.forward(&hidden)?;
                let combined = combine(&v, &adv, *aggregation)?;
                out.forward(&combined)?
            }
        };
        ensure_finite(&q, "q head")?;
        Ok(q)
    }

    pub fn forward_train(&mut self, x: &TensorN<F>) -> Result<(TensorN<F>, FwdCache<F>)> {
        self.check_input(x)?;
        ensure_finite(x, "input")?;
        let n_convs = self.convs.len();
        let mut conv_caches = Vec::with_capacity(n_convs);
        let mut conv_outs = Vec::with_capacity(n_convs);
        let mut bn_caches = Vec::with_capacity(n_convs);
        let mut pre_relus = Vec::with_capacity(n_convs);
        let mut a: Option<TensorN<F>> = None;
        for i in 0..n_convs {
            let (y, cache) = self.convs[i].forward(a.as_ref().unwrap_or(x))?;
            ensure_finite(&y, &format!("conv{}", i + 1))?;
            conv_caches.push(cache);
            let pre = if let Some(bn) = &mut self.bns[i] {
                let (z, bc) = bn.forward_train(&y)?;
                ensure_finite(&z, &format!("bn{}", i + 1))?;
                conv_outs.push(Some(y));
                bn_caches.push(Some(bc));
                z
            } else {
                conv_outs.push(None);
                bn_caches.push(None);
                y
            };
            a = Some(relu(&pre));
            pre_relus.push(pre);
        }
        let last = a.expect("at least one conv");
        let pool_in_shape = last.shape().to_vec();
        let (pooled, pool_argmax) = maxpool2(&last)?;
        let b = pooled.shape()[0];
        let feat = pooled.len() / b;
        let flat = pooled.reshaped(&[b, feat])?;
        let fc_pre = self.fc.forward(&flat)?;
        ensure_finite(&fc_pre, "fc")?;
        let hidden = relu(&fc_pre);
        let (q, head_cache) = match &self.head {
            Head::Single { out } => (out.forward(&hidden)?, HeadCache::Single),
            Head::Dueling { value, advantage, out, aggregation } => {
                let v = value.forward(&hidden)?;
                let adv = advantage.forward(&hidden)?;
                let combined = combine(&v, &adv, *aggregation)?;
                let q = out.forward(&combined)?;
                (q, HeadCache::Dueling { combined })
            }
        };
        ensure_finite(&q, "q head")?;
        let cache = FwdCache {
            conv: conv_caches,
            conv_out: conv_outs,
            bn: bn_caches,
            pre_relu: pre_relus,
            pool_in_shape,
            pool_argmax,
            flat,
            fc_pre,
            hidden,
            head: head_cache,
        };
        Ok((q, cache))
    }

    /// Mean squared error between `q[i, actions[i]]` and `targets[i]`,
    /// backpropagated through the whole network. Runs its own training-mode
    /// forward pass; batch norm running statistics advance once.
    pub fn backward(
        &mut self,
        x: &TensorN<F>,
        actions: &[usize],
        targets: &[F],
    ) -> Result<(F, GradSet<F>)> {
        let b = self.check_input(x)?;
        if actions.len() != b || targets.len() != b {
            return Err(Error::Dimension(format!(
                "batch {} with {} actions, {} targets",
                b,
                actions.len(),
                targets.len()
            )));
        }
        for &a in actions {
            if a >= self.cfg.n_actions {
                return Err(Error::Input(format!(
                    "action {} out of range 0..{}",
                    a, self.cfg.n_actions
                )));
            }
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numeric("non-finite training target".into()));
        }

        let (q, cache) = self.forward_train(x)?;
        let n = self.cfg.n_actions;
        let inv_b = F::from_f64(1.0 / b as f64);
        let mut loss = F::zero();
        let mut gq = TensorN::zeros(&[b, n]);
        {
            let gqd = gq.data_mut();
            for i in 0..b {
                let d = q.data()[i * n + actions[i]] - targets[i];
                loss += d * d * inv_b;
                gqd[i * n + actions[i]] = F::from_f64(2.0) * d * inv_b;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }

        // Head gradients, producing per-tensor grads in declaration order and
        // the gradient flowing back into the hidden activation.
        let mut head_grads: Vec<Vec<F>> = Vec::new();
        let ghidden = match (&self.head, &cache.head) {
            (Head::Single { out }, HeadCache::Single) => {
                let (gh, gw, gb) = out.backward(&cache.hidden, &gq);
                head_grads.push(gw.into_data());
                head_grads.push(gb);
                gh
            }
            (
                Head::Dueling { value, advantage, out, aggregation },
                HeadCache::Dueling { combined },
            ) => {
                let (gc, gow, gob) = out.backward(combined, &gq);
                let (gv, ga) = split_combined_grad(&gc, *aggregation);
                let (gh_v, gvw, gvb) = value.backward(&cache.hidden, &gv);
                let (gh_a, gaw, gab) = advantage.backward(&cache.hidden, &ga);
                head_grads.push(gvw.into_data());
                head_grads.push(gvb);
                head_grads.push(gaw.into_data());
                head_grads.push(gab);
                head_grads.push(gow.into_data());
                head_grads.push(gob);
                let mut gh = gh_v;
                for (acc, v) in gh.data_mut().iter_mut().zip(gh_a.data()) {
                    *acc += *v;
                }
                gh
            }
            _ => unreachable!("cache always matches head shape"),
        };

        let gfc_pre = relu_backward(&cache.fc_pre, &ghidden);
        let (gflat, gfcw, gfcb) = self.fc.backward(&cache.flat, &gfc_pre);
        let gpooled = gflat.reshaped(&[
            cache.pool_in_shape[0],
            cache.pool_in_shape[1] / 2,
            cache.pool_in_shape[2] / 2,
            cache.pool_in_shape[3],
        ])?;
        let mut g = maxpool2_backward(&cache.pool_in_shape, &cache.pool_argmax, &gpooled);

        // Per-conv grads gathered back-to-front, then reversed into
        // canonical order.
        let mut conv_grads_rev: Vec<Vec<Vec<F>>> = Vec::with_capacity(self.convs.len());
        for i in (0..self.convs.len()).rev() {
            let gpre = relu_backward(&cache.pre_relu[i], &g);
            let mut layer: Vec<Vec<F>> = Vec::with_capacity(4);
            let gconv_out = if let Some(bn) = &self.bns[i] {
                let x_bn = cache.conv_out[i].as_ref().expect("bn layers cache conv output");
                let bc = cache.bn[i].as_ref().expect("bn cache present");
                let (gx, ggamma, gbeta) = bn.backward(x_bn, bc, &gpre);
                layer.push(ggamma);
                layer.push(gbeta);
                gx
            } else {
                gpre
            };
            let (gx, gw, gb) = self.convs[i].backward(&cache.conv[i], &gconv_out);
            // canonical per-layer order: weight, bias, then gamma, beta
            layer.insert(0, gb);
            layer.insert(0, gw.into_data());
            conv_grads_rev.push(layer);
            g = gx;
        }

        let mut tensors: Vec<Vec<F>> = Vec::new();
        for layer in conv_grads_rev.into_iter().rev() {
            tensors.extend(layer);
        }
        tensors.push(gfcw.into_data());
        tensors.push(gfcb);
        tensors.extend(head_grads);

        let grads = GradSet { tensors };
        debug_assert_eq!(grads.tensors.len(), self.trainable().len());
        Ok((loss, grads))
    }

    /// Trainable tensors in canonical order: per conv layer weight, bias,
    /// then batch norm gamma and beta when present; the fully connected
    /// trunk; then the head layers in declaration order.
    pub fn trainable(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = Vec::new();
        for (conv, bn) in self.convs.iter().zip(&self.bns) {
            out.push(conv.weight.data());
            out.push(&conv.bias);
            if let Some(bn) = bn {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out.push(self.fc.weight.data());
        out.push(&self.fc.bias);
        match &self.head {
            Head::Single { out: o } => {
                out.push(o.weight.data());
                out.push(&o.bias);
            }
            Head::Dueling { value, advantage, out: o, .. } => {
                out.push(value.weight.data());
                out.push(&value.bias);
                out.push(advantage.weight.data());
                out.push(&advantage.bias);
                out.push(o.weight.data());
                out.push(&o.bias);
            }
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        for (conv, bn) in self.convs.iter_mut().zip(self.bns.iter_mut()) {
            out.push(conv.weight.data_mut());
            out.push(&mut conv.bias);
            if let Some(bn) = bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out.push(self.fc.weight.data_mut());
        out.push(&mut self.fc.bias);
        match &mut self.head {
            Head::Single { out: o } => {
                out.push(o.weight.data_mut());
                out.push(&mut o.bias);
            }
            Head::Dueling { value, advantage, out: o, .. } => {
                out.push(value.weight.data_mut());
                out.push(&mut value.bias);
                out.push(advantage.weight.data_mut());
                out.push(&mut advantage.bias);
                out.push(o.weight.data_mut());
                out.push(&mut o.bias);
            }
        }
        out
    }

    /// Batch norm running statistics in layer order, mean then variance.
    pub fn running_stats(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = Vec::new();
        for bn in self.bns.iter().flatten() {
            out.push(&bn.running_mean);
            out.push(&bn.running_var);
        }
        out
    }

    pub fn running_stats_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        for bn in self.bns.iter_mut().flatten() {
            out.push(&mut bn.running_mean);
            out.push(&mut bn.running_var);
        }
        out
    }

    /// Copies every parameter and running statistic from `src`.
    pub fn copy_from(&mut self, src: &QNetwork<F>) -> Result<()> {
        if self.cfg != src.cfg {
            return Err(Error::Dimension("network configurations differ".into()));
        }
        let from = src.trainable();
        for (dst, s) in self.trainable_mut().into_iter().zip(from) {
            dst.copy_from_slice(s);
        }
        let from = src.running_stats();
        for (dst, s) in self.running_stats_mut().into_iter().zip(from) {
            dst.copy_from_slice(s);
        }
        Ok(())
    }
}

fn combine<F: Scalar>(
    v: &TensorN<F>,
    adv: &TensorN<F>,
    aggregation: DuelingAggregation,
) -> Result<TensorN<F>> {
    let b = v.shape()[0];
    let n = adv.shape()[1];
    let mut out = TensorN::zeros(&[b, n]);
    let od = out.data_mut();
    for i in 0..b {
        let row = &adv.data()[i * n..(i + 1) * n];
        let base = match aggregation {
            DuelingAggregation::BroadcastSum => v.data()[i],
            DuelingAggregation::MeanCentered => {
                let mean = row.iter().fold(F::zero(), |a, &x| a + x) / F::from_f64(n as f64);
                v.data()[i] - mean
            }
        };
        for j in 0..n {
            od[i * n + j] = base + row[j];
        }
    }
    Ok(out)
}

fn split_combined_grad<F: Scalar>(
    gc: &TensorN<F>,
    aggregation: DuelingAggregation,
) -> (TensorN<F>, TensorN<F>) {
    let b = gc.shape()[0];
    let n = gc.shape()[1];
    let mut gv = TensorN::zeros(&[b, 1]);
    let mut ga = TensorN::zeros(&[b, n]);
    for i in 0..b {
        let row = &gc.data()[i * n..(i + 1) * n];
        let total = row.iter().fold(F::zero(), |a, &x| a + x);
        gv.data_mut()[i] = total;
        let mean = total / F::from_f64(n as f64);
        for j in 0..n {
            ga.data_mut()[i * n + j] = match aggregation {
                DuelingAggregation::BroadcastSum => row[j],
                DuelingAggregation::MeanCentered => row[j] - mean,
            };
        }
    }
    (gv, ga)
}

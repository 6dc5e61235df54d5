use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gemm, Mat, Real, View};
use crate::error::{Error, Result};
use crate::textio::{self, Header};

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

const CHECKPOINT_MAGIC: &str = "ADAPTBC-DENSENET";

/// Output activation of the final layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Linear,
    /// `low + (high - low) * (tanh(z) + 1) / 2`, per output dimension.
    ScaledTanh { low: Vec<f64>, high: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerLayout {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

/// A dense feed-forward network: affine layers with ReLU between them.
///
/// Weights of each layer are stored row-major with shape `(fan_in, fan_out)`
/// followed by the bias, all in one flat parameter vector.
#[derive(Debug)]
pub struct DenseNet<T> {
    id: u64,
    generation: u64,
    widths: Vec<usize>,
    head: Head,
    seed: u64,
    layout: Vec<LayerLayout>,
    params: Vec<T>,
}

impl<T: Real> Clone for DenseNet<T> {
    fn clone(&self) -> Self {
        DenseNet {
            id: fresh_id(),
            generation: 0,
            widths: self.widths.clone(),
            head: self.head.clone(),
            seed: self.seed,
            layout: self.layout.clone(),
            params: self.params.clone(),
        }
    }
}

/// Activations recorded by [`DenseNet::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    net_id: u64,
    generation: u64,
    /// `acts[l]` is the input to layer `l`.
    acts: Vec<Mat<T>>,
    tanh: Option<Mat<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.acts[0].rows()
    }
}

/// Gradient with the same flat layout as the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T>(pub Vec<T>);

impl<T: Real> ParamGrads<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn add_assign(&mut self, other: &ParamGrads<T>) {
        assert_eq!(self.0.len(), other.0.len());
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> T {
        self.0.iter().fold(T::zero(), |m, &g| m.max(g.abs()))
    }
}

fn build_layout(widths: &[usize]) -> Vec<LayerLayout> {
    let mut offset = 0;
    widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let layer = LayerLayout {
                fan_in,
                fan_out,
                w: offset,
                b: offset + fan_in * fan_out,
            };
            offset += fan_in * fan_out + fan_out;
            layer
        })
        .collect()
}

fn validate(widths: &[usize], head: &Head) -> Result<()> {
    if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
        return Err(Error::Shape(format!(
            "network widths {widths:?} need at least two positive entries"
        )));
    }
    if let Head::ScaledTanh { low, high } = head {
        let out = *widths.last().unwrap();
        if low.len() != out || high.len() != out {
            return Err(Error::Shape(format!(
                "scaled-tanh bounds have {}/{} entries for {out} outputs",
                low.len(),
                high.len()
            )));
        }
        if low.iter().zip(high).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidConfig("scaled-tanh requires low < high".into()));
        }
    }
    Ok(())
}

impl<T: Real> DenseNet<T> {
    /// Network with every weight and bias drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn with_seed(widths: &[usize], head: Head, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(widths, head)?;
        net.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &net.layout {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            let end = layer.b + layer.fan_out;
            for p in &mut net.params[layer.w..end] {
                *p = T::of(rng.random_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn zeros(widths: &[usize], head: Head) -> Result<Self> {
        validate(widths, &head)?;
        let layout = build_layout(widths);
        let n = layout.last().map_or(0, |l| l.b + l.fan_out);
        Ok(DenseNet {
            id: fresh_id(),
            generation: 0,
            widths: widths.to_vec(),
            head,
            seed: 0,
            layout,
            params: vec![T::zero(); n],
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    /// Mutable parameter access. Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [T] {
        self.generation += 1;
        &mut self.params
    }

    pub fn set_params(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                values.len()
            )));
        }
        self.params_mut().copy_from_slice(values);
        Ok(())
    }

    /// Same architecture (widths and head).
    pub fn same_shape(&self, other: &DenseNet<T>) -> bool {
        self.widths == other.widths && self.head == other.head
    }

    /// Weight matrix of layer `l`, row-major `(fan_in, fan_out)`.
    pub fn weights(&self, l: usize) -> &[T] {
        let layer = self.layout[l];
        &self.params[layer.w..layer.b]
    }

    pub fn bias(&self, l: usize) -> &[T] {
        let layer = self.layout[l];
        &self.params[layer.b..layer.b + layer.fan_out]
    }

    pub fn num_layers(&self) -> usize {
        self.layout.len()
    }

    fn affine(&self, l: usize, input: &Mat<T>) -> Mat<T> {
        let layer = self.layout[l];
        let bias = self.bias(l);
        let mut out = Mat::zeros(input.rows(), layer.fan_out);
        for r in 0..input.rows() {
            out.row_mut(r).copy_from_slice(bias);
        }
        gemm(
            T::one(),
            input.view(),
            View::row_major(self.weights(l), layer.fan_in, layer.fan_out),
            T::one(),
            out.as_mut_slice(),
        );
        out
    }

    fn check_input(&self, x: &Mat<T>) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Mat<T>) -> Result<(Mat<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let n_layers = self.layout.len();
        let mut acts = Vec::with_capacity(n_layers);
        acts.push(x.clone());
        for l in 0..n_layers - 1 {
            let mut z = self.affine(l, &acts[l]);
            for v in z.as_mut_slice() {
                *v = v.max(T::zero());
            }
            acts.push(z);
        }
        let z = self.affine(n_layers - 1, &acts[n_layers - 1]);
        let (out, tanh) = self.apply_head(z);
        Ok((
            out,
            ForwardCache {
                net_id: self.id,
                generation: self.generation,
                acts,
                tanh,
            },
        ))
    }

    /// Forward pass without keeping a cache.
    pub fn predict(&self, x: &Mat<T>) -> Result<Mat<T>> {
        self.check_input(x)?;
        let n_layers = self.layout.len();
        let mut cur = self.affine(0, x);
        for l in 1..n_layers {
            for v in cur.as_mut_slice() {
                *v = v.max(T::zero());
            }
            cur = self.affine(l, &cur);
        }
        Ok(self.apply_head(cur).0)
    }

    fn apply_head(&self, mut z: Mat<T>) -> (Mat<T>, Option<Mat<T>>) {
        match &self.head {
            Head::Linear => (z, None),
            Head::ScaledTanh { low, high } => {
                // Keep tanh strictly inside (-1, 1) so outputs never touch the bounds.
                let lim = T::one() - T::epsilon();
                let cols = z.cols();
                let mut out = Mat::zeros(z.rows(), cols);
                for r in 0..z.rows() {
                    let zr = z.row_mut(r);
                    for (c, v) in zr.iter_mut().enumerate() {
                        *v = v.tanh().max(-lim).min(lim);
                        let (lo, hi) = (T::of(low[c]), T::of(high[c]));
                        let mid = (hi + lo) * T::of(0.5);
                        let half = (hi - lo) * T::of(0.5);
                        out.row_mut(r)[c] = mid + half * *v;
                    }
                }
                (out, Some(z))
            }
        }
    }

    /// Gradients of `<output_grad, output>` with respect to every parameter
    /// and every input.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        output_grad: &Mat<T>,
    ) -> Result<(ParamGrads<T>, Mat<T>)> {
        let (grads, dx) = self.backward_impl(cache, output_grad, true)?;
        Ok((grads.expect("parameter gradients requested"), dx))
    }

    /// Input gradients only; skips the weight-gradient products.
    pub fn backward_inputs(&self, cache: &ForwardCache<T>, output_grad: &Mat<T>) -> Result<Mat<T>> {
        Ok(self.backward_impl(cache, output_grad, false)?.1)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache<T>,
        output_grad: &Mat<T>,
        want_params: bool,
    ) -> Result<(Option<ParamGrads<T>>, Mat<T>)> {
        if cache.net_id != self.id || cache.generation != self.generation {
            return Err(Error::StaleCache);
        }
        let batch = cache.batch_size();
        if output_grad.rows() != batch || output_grad.cols() != self.output_dim() {
            return Err(Error::Shape(format!(
                "output gradient is {}x{}, expected {batch}x{}",
                output_grad.rows(),
                output_grad.cols(),
                self.output_dim()
            )));
        }

        let mut delta = output_grad.clone();
        if let (Head::ScaledTanh { low, high }, Some(t)) = (&self.head, &cache.tanh) {
            for r in 0..batch {
                let tr = t.row(r);
                for (c, d) in delta.row_mut(r).iter_mut().enumerate() {
                    let half = T::of((high[c] - low[c]) * 0.5);
                    *d *= half * (T::one() - tr[c] * tr[c]);
                }
            }
        }

        let mut grads = want_params.then(|| vec![T::zero(); self.params.len()]);
        for l in (0..self.layout.len()).rev() {
            let layer = self.layout[l];
            let x = &cache.acts[l];
            if let Some(g) = grads.as_mut() {
                gemm(
                    T::one(),
                    x.view().t(),
                    delta.view(),
                    T::zero(),
                    &mut g[layer.w..layer.b],
                );
                let db = &mut g[layer.b..layer.b + layer.fan_out];
                for r in 0..batch {
                    for (acc, &d) in db.iter_mut().zip(delta.row(r)) {
                        *acc += d;
                    }
                }
            }
            let mut dx = Mat::zeros(batch, layer.fan_in);
            gemm(
                T::one(),
                delta.view(),
                View::row_major(self.weights(l), layer.fan_in, layer.fan_out).t(),
                T::zero(),
                dx.as_mut_slice(),
            );
            if l > 0 {
                for (d, &a) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            delta = dx;
        }
        Ok((grads.map(ParamGrads), delta))
    }

    /// Copies this network into another element type.
    pub fn cast<U: Real>(&self) -> DenseNet<U> {
        DenseNet {
            id: fresh_id(),
            generation: 0,
            widths: self.widths.clone(),
            head: self.head.clone(),
            seed: self.seed,
            layout: self.layout.clone(),
            params: self.params.iter().map(|&p| U::of(p.as_f64())).collect(),
        }
    }

    /// Writes the self-describing checkpoint: text header, then the
    /// parameters as little-endian `f32` in layer order (weights, then bias).
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut h = Header::new();
        h.put("version", 1)
            .put("widths", textio::join(&self.widths))
            .put("seed", self.seed)
            .put("params", self.params.len());
        match &self.head {
            Head::Linear => {
                h.put("head", "linear");
            }
            Head::ScaledTanh { low, high } => {
                h.put("head", "scaled_tanh")
                    .put("head.low", textio::join(low))
                    .put("head.high", textio::join(high));
            }
        }
        h.write_to(CHECKPOINT_MAGIC, w)?;
        textio::write_f32s(w, self.params.iter().map(|p| p.as_f64() as f32))
    }

    pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<Self> {
        let h = Header::read_from(CHECKPOINT_MAGIC, r)?;
        let version: u32 = h.get("version")?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported network version {version}")));
        }
        let widths: Vec<usize> = h.get_list("widths")?;
        let head = match h.raw("head")? {
            "linear" => Head::Linear,
            "scaled_tanh" => Head::ScaledTanh {
                low: h.get_list("head.low")?,
                high: h.get_list("head.high")?,
            },
            other => return Err(Error::Format(format!("unknown head `{other}`"))),
        };
        let mut net = Self::zeros(&widths, head).map_err(|e| Error::Format(e.to_string()))?;
        net.seed = h.get("seed")?;
        let n: usize = h.get("params")?;
        if n != net.params.len() {
            return Err(Error::Format(format!(
                "header declares {n} parameters but widths imply {}",
                net.params.len()
            )));
        }
        let values = textio::read_f32s(r, n)?;
        for (p, v) in net.params.iter_mut().zip(values) {
            *p = T::of(v as f64);
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_values(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Straight-line forward pass written independently of `forward`:
    /// explicit loops, no gemm, no caches.
    fn oracle_forward(net: &DenseNet<f64>, x: &[f64]) -> Vec<f64> {
        let widths = net.widths();
        let p = net.params();
        let mut cur = x.to_vec();
        let mut off = 0;
        for l in 0..widths.len() - 1 {
            let (fi, fo) = (widths[l], widths[l + 1]);
            let mut next = vec![0.0; fo];
            for (j, nj) in next.iter_mut().enumerate() {
                let mut s = p[off + fi * fo + j];
                for (i, xi) in cur.iter().enumerate() {
                    s += xi * p[off + i * fo + j];
                }
                *nj = s;
            }
            off += fi * fo + fo;
            if l + 2 < widths.len() {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cur = next;
        }
        match net.head() {
            Head::Linear => cur,
            Head::ScaledTanh { low, high } => cur
                .iter()
                .enumerate()
                .map(|(c, z)| low[c] + (high[c] - low[c]) * (z.tanh() + 1.0) / 2.0)
                .collect(),
        }
    }

    #[test]
    fn parameter_count_matches_layer_sum() {
        let net = DenseNet::<f32>::zeros(&[3, 256, 256, 1], Head::Linear).unwrap();
        assert_eq!(net.param_count(), 3 * 256 + 256 + 256 * 256 + 256 + 256 + 1);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let x = Mat::from_rows(&[[0.3, -1.0, 2.0], [5.0, 1.0, 1.0]]).unwrap();
        let lin = DenseNet::<f64>::zeros(&[3, 4, 4, 2], Head::Linear).unwrap();
        assert!(lin.predict(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
        let tanh = DenseNet::<f64>::zeros(
            &[3, 4, 4, 1],
            Head::ScaledTanh {
                low: vec![-2.0],
                high: vec![2.0],
            },
        )
        .unwrap();
        assert!(tanh.predict(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        for head in [
            Head::Linear,
            Head::ScaledTanh {
                low: vec![-1.5],
                high: vec![0.5],
            },
        ] {
            let net = DenseNet::<f64>::with_seed(&[3, 4, 4, 1], head, 11).unwrap();
            let xs = lcg_values(15, 3);
            let x = Mat::from_vec(5, 3, xs.clone()).unwrap();
            let (y, _) = net.forward(&x).unwrap();
            for r in 0..5 {
                let expect = oracle_forward(&net, &xs[r * 3..r * 3 + 3]);
                assert!((y.get(r, 0) - expect[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let net = DenseNet::<f64>::zeros(&[3, 4, 4, 1], Head::Linear).unwrap();
        let x = Mat::zeros(2, 2);
        assert!(matches!(net.forward(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn single_linear_layer_gradients_are_analytic() {
        // y = W^T x + b with W stored (fan_in, fan_out)
        let mut net = DenseNet::<f64>::zeros(&[2, 2], Head::Linear).unwrap();
        net.set_params(&[1.0, 2.0, 3.0, 4.0, 0.5, -0.5]).unwrap();
        let x = Mat::from_rows(&[[1.0, -2.0]]).unwrap();
        let g = Mat::from_rows(&[[0.25, 2.0]]).unwrap();
        let (y, cache) = net.forward(&x).unwrap();
        assert_eq!(y.row(0), &[1.0 - 6.0 + 0.5, 2.0 - 8.0 - 0.5]);
        let (pg, dx) = net.backward(&cache, &g).unwrap();
        // dW[i][j] = x_i g_j, db = g, dx_i = sum_j W[i][j] g_j
        assert_eq!(pg.0, vec![0.25, 2.0, -0.5, -4.0, 0.25, 2.0]);
        assert_eq!(dx.row(0), &[1.0 * 0.25 + 2.0 * 2.0, 3.0 * 0.25 + 4.0 * 2.0]);
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let net = DenseNet::<f64>::with_seed(&[3, 5, 5, 2], Head::Linear, 1).unwrap();
        let x = Mat::from_vec(4, 3, lcg_values(12, 9)).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        let (pg, dx) = net.backward(&cache, &Mat::zeros(4, 2)).unwrap();
        assert!(pg.0.iter().all(|&v| v == 0.0));
        assert!(dx.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = DenseNet::<f64>::with_seed(&[2, 3, 1], Head::Linear, 2).unwrap();
        let x = Mat::zeros(1, 2);
        let (_, cache) = net.forward(&x).unwrap();
        net.params_mut()[0] += 1.0;
        assert!(matches!(
            net.backward(&cache, &Mat::zeros(1, 1)),
            Err(Error::StaleCache)
        ));
        let other = net.clone();
        let (_, cache) = other.forward(&x).unwrap();
        assert!(matches!(
            net.backward(&cache, &Mat::zeros(1, 1)),
            Err(Error::StaleCache)
        ));
    }

    #[test]
    fn batch_backward_is_sum_of_per_sample_backward() {
        let net = DenseNet::<f64>::with_seed(&[3, 6, 6, 2], Head::Linear, 5).unwrap();
        let xs = lcg_values(3 * 7, 1);
        let gs = lcg_values(2 * 7, 2);
        let x = Mat::from_vec(7, 3, xs.clone()).unwrap();
        let g = Mat::from_vec(7, 2, gs.clone()).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        let (batch_grads, _) = net.backward(&cache, &g).unwrap();
        let mut summed = ParamGrads(vec![0.0; net.param_count()]);
        for r in 0..7 {
            let xr = Mat::from_vec(1, 3, xs[r * 3..r * 3 + 3].to_vec()).unwrap();
            let gr = Mat::from_vec(1, 2, gs[r * 2..r * 2 + 2].to_vec()).unwrap();
            let (_, c) = net.forward(&xr).unwrap();
            summed.add_assign(&net.backward(&c, &gr).unwrap().0);
        }
        for (a, b) in batch_grads.0.iter().zip(&summed.0) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn initialization_is_seed_deterministic_and_bounded() {
        let a = DenseNet::<f32>::with_seed(&[3, 16, 16, 1], Head::Linear, 77).unwrap();
        let b = DenseNet::<f32>::with_seed(&[3, 16, 16, 1], Head::Linear, 77).unwrap();
        let c = DenseNet::<f32>::with_seed(&[3, 16, 16, 1], Head::Linear, 78).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
        let bound = 1.0 / 16f32.sqrt();
        assert!(a.weights(1).iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn checkpoint_round_trip_and_rejects_truncation() {
        let net = DenseNet::<f32>::with_seed(
            &[3, 8, 8, 2],
            Head::ScaledTanh {
                low: vec![-1.0, -2.0],
                high: vec![1.0, 0.5],
            },
            4,
        )
        .unwrap();
        let mut bytes = Vec::new();
        net.write_checkpoint(&mut bytes).unwrap();
        let back = DenseNet::<f32>::read_checkpoint(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.params(), net.params());
        assert_eq!(back.head(), net.head());
        assert_eq!(back.seed(), 4);
        let cut = &bytes[..bytes.len() - 3];
        assert!(DenseNet::<f32>::read_checkpoint(&mut &cut[..]).is_err());
    }

    #[test]
    fn scaled_tanh_saturation_stays_inside_bounds() {
        let mut net = DenseNet::<f32>::zeros(
            &[1, 1],
            Head::ScaledTanh {
                low: vec![-2.0],
                high: vec![2.0],
            },
        )
        .unwrap();
        net.set_params(&[1000.0, 0.0]).unwrap();
        let y = net
            .predict(&Mat::from_rows(&[[1.0f32], [-1.0]]).unwrap())
            .unwrap();
        assert!(y.get(0, 0) < 2.0 && y.get(1, 0) > -2.0);
    }
}

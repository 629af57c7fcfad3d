//! Batched forward and reverse-mode passes over a [`NetworkSpec`].

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::gemm::{axpy, gemm_nn, gemm_nt, gemm_tn};
use super::{Activation, Layer, NetworkSpec, NnError, Parameters, Tensor};
use crate::scalar::Scalar;

/// Intermediate values of one forward pass, kept for [`backward_traced`].
#[derive(Debug, Clone)]
pub struct Trace<T> {
    input: Tensor<T>,
    /// Post-activation output of every layer.
    outputs: Vec<Tensor<T>>,
}

impl<T: Scalar> Trace<T> {
    /// Network output, shape `(batch, action_count)`.
    pub fn output(&self) -> &Tensor<T> {
        self.outputs.last().unwrap_or(&self.input)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct ConvGeom {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn p(&self) -> usize {
        self.out_h * self.out_w
    }

    /// For each input cell, the (kernel row, output position) pairs it
    /// contributes to, in compressed-row form. The kernel row indexes a
    /// `[K × filters]` weight layout; the output position indexes
    /// `out_h × out_w`.
    /// Tap tables are cached per thread; a network has few distinct
    /// geometries and rebuilding them dominated small batches.
    fn taps(&self) -> Rc<TapTable> {
        thread_local! {
            static TABLES: RefCell<HashMap<ConvGeom, Rc<TapTable>>> = RefCell::new(HashMap::new());
        }
        TABLES.with(|t| t.borrow_mut().entry(*self).or_insert_with(|| Rc::new(self.tap_table())).clone())
    }

    fn tap_table(&self) -> TapTable {
        let mut offsets = vec![0];
        let mut taps = Vec::new();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    self.taps_of(c, y, x, |row, pos| taps.push((row, pos)));
                    offsets.push(taps.len());
                }
            }
        }
        TapTable { offsets, taps }
    }

    fn taps_of(&self, c: usize, y: usize, x: usize, mut f: impl FnMut(usize, usize)) {
        for ki in 0..self.kernel.min(y + 1) {
            let dy = y - ki;
            if dy % self.stride != 0 || dy / self.stride >= self.out_h {
                continue;
            }
            let oy = dy / self.stride;
            for kj in 0..self.kernel.min(x + 1) {
                let dx = x - kj;
                if dx % self.stride != 0 || dx / self.stride >= self.out_w {
                    continue;
                }
                f((c * self.kernel + ki) * self.kernel + kj, oy * self.out_w + dx / self.stride);
            }
        }
    }
}

struct TapTable {
    offsets: Vec<usize>,
    taps: Vec<(usize, usize)>,
}

impl TapTable {
    #[inline]
    fn of(&self, input: usize) -> &[(usize, usize)] {
        &self.taps[self.offsets[input]..self.offsets[input + 1]]
    }
}

fn check_input<T: Scalar>(spec: &NetworkSpec, input: &Tensor<T>) -> Result<usize, NnError> {
    let shape = input.shape();
    if shape.len() != spec.input.len() + 1 || shape[1..] != spec.input[..] {
        return Err(NnError::ShapeMismatch {
            layer: "input".into(),
            detail: format!("expected (batch, {:?}), got {shape:?}", spec.input),
        });
    }
    Ok(shape[0])
}

fn activate<T: Scalar>(activation: Activation, data: &mut [T]) {
    if activation == Activation::Relu {
        for v in data.iter_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
    }
}

fn layer_name(i: usize, layer: &Layer) -> String {
    match layer {
        Layer::Convolution { .. } => format!("conv{i}"),
        Layer::Dense { .. } => format!("dense{i}"),
        Layer::Flatten => format!("flatten{i}"),
    }
}

fn conv_geom(input_shape: &[usize], kernel: usize, stride: usize, out: &[usize]) -> ConvGeom {
    ConvGeom {
        channels: input_shape[0],
        height: input_shape[1],
        width: input_shape[2],
        kernel,
        stride,
        out_h: out[1],
        out_w: out[2],
    }
}

/// Runs the network on a batch and records intermediates.
pub fn forward_traced<T: Scalar>(
    spec: &NetworkSpec,
    params: &Parameters<T>,
    input: &Tensor<T>,
) -> Result<Trace<T>, NnError> {
    let batch = check_input(spec, input)?;
    let shapes = spec.layer_shapes()?;
    let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(spec.layers.len());
    let mut in_shape = spec.input.clone();

    for (i, layer) in spec.layers.iter().enumerate() {
        let x = outputs.last().unwrap_or(input);
        let out_shape = &shapes[i];
        let mut batched = vec![batch];
        batched.extend_from_slice(out_shape);
        let out = match *layer {
            Layer::Convolution { filters, kernel, stride, activation } => {
                let name = layer_name(i, layer);
                let w = params.require(&format!("{name}.weight"))?;
                let b = params.require(&format!("{name}.bias"))?;
                let geom = conv_geom(&in_shape, kernel, stride, out_shape);
                check_param(&name, w, &[filters, geom.channels, kernel, kernel])?;
                check_param(&name, b, &[filters])?;
                let p = geom.p();
                let in_len = geom.channels * geom.height * geom.width;
                let mut out = vec![T::zero(); batch * filters * p];
                // Scatter form: each non-zero input cell adds its weighted
                // filter column to the outputs it touches, so the zero cells
                // of a one-hot observation cost nothing.
                let wt = transpose(w.data(), filters, geom.k());
                let table = geom.taps();
                let mut out_t = vec![T::zero(); p * filters];
                for s in 0..batch {
                    let sample = &x.data()[s * in_len..(s + 1) * in_len];
                    for chunk in out_t.chunks_mut(filters) {
                        chunk.copy_from_slice(b.data());
                    }
                    for (input, &v) in sample.iter().enumerate() {
                        if v == T::zero() {
                            continue;
                        }
                        for &(row, pos) in table.of(input) {
                            axpy(v, &wt[row * filters..(row + 1) * filters], &mut out_t[pos * filters..(pos + 1) * filters]);
                        }
                    }
                    let o = &mut out[s * filters * p..(s + 1) * filters * p];
                    for (f, chunk) in o.chunks_mut(p).enumerate() {
                        for (pos, v) in chunk.iter_mut().enumerate() {
                            *v = out_t[pos * filters + f];
                        }
                    }
                }
                activate(activation, &mut out);
                Tensor::new(batched, out)?
            }
            Layer::Dense { units, activation } => {
                let name = layer_name(i, layer);
                let w = params.require(&format!("{name}.weight"))?;
                let b = params.require(&format!("{name}.bias"))?;
                let fan_in = in_shape[0];
                check_param(&name, w, &[fan_in, units])?;
                check_param(&name, b, &[units])?;
                let mut out = Vec::with_capacity(batch * units);
                for _ in 0..batch {
                    out.extend_from_slice(b.data());
                }
                gemm_nn(batch, units, fan_in, x.data(), w.data(), &mut out);
                activate(activation, &mut out);
                Tensor::new(batched, out)?
            }
            Layer::Flatten => x.clone().reshape(batched)?,
        };
        outputs.push(out);
        in_shape = out_shape.clone();
    }
    let trace = Trace { input: input.clone(), outputs };
    if !trace.output().all_finite() {
        return Err(NnError::NonFinite("forward output".into()));
    }
    Ok(trace)
}

fn check_param<T: Scalar>(layer: &str, t: &Tensor<T>, expected: &[usize]) -> Result<(), NnError> {
    if t.shape() != expected {
        return Err(NnError::ShapeMismatch {
            layer: layer.to_string(),
            detail: format!("parameter shape {:?}, expected {expected:?}", t.shape()),
        });
    }
    Ok(())
}

/// Action values for a batch of inputs, shape `(batch, action_count)`.
pub fn forward<T: Scalar>(spec: &NetworkSpec, params: &Parameters<T>, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let mut trace = forward_traced(spec, params, input)?;
    Ok(trace.outputs.pop().unwrap_or_else(|| input.clone()))
}

/// Gradient of `sum(output * output_grad)` with respect to every parameter.
pub fn backward<T: Scalar>(
    spec: &NetworkSpec,
    params: &Parameters<T>,
    input: &Tensor<T>,
    output_grad: &Tensor<T>,
) -> Result<Parameters<T>, NnError> {
    let trace = forward_traced(spec, params, input)?;
    backward_traced(spec, params, &trace, output_grad)
}

/// Reverse pass reusing the intermediates of a previous forward pass.
pub fn backward_traced<T: Scalar>(
    spec: &NetworkSpec,
    params: &Parameters<T>,
    trace: &Trace<T>,
    output_grad: &Tensor<T>,
) -> Result<Parameters<T>, NnError> {
    if output_grad.shape() != trace.output().shape() {
        return Err(NnError::ShapeMismatch {
            layer: "output".into(),
            detail: format!(
                "output gradient {:?} does not match forward output {:?}",
                output_grad.shape(),
                trace.output().shape()
            ),
        });
    }
    let shapes = spec.layer_shapes()?;
    let batch = trace.input.rows();
    let mut grads = params.zeros_like();
    let mut upstream: Vec<T> = output_grad.data().to_vec();

    for i in (0..spec.layers.len()).rev() {
        let layer = &spec.layers[i];
        let out = &trace.outputs[i];
        let x = if i == 0 { &trace.input } else { &trace.outputs[i - 1] };
        let in_shape: &[usize] = if i == 0 { &spec.input } else { &shapes[i - 1] };
        let need_input_grad = i > 0;
        upstream = match *layer {
            Layer::Flatten => upstream,
            Layer::Dense { units, activation } => {
                if activation == Activation::Relu {
                    relu_mask(out.data(), &mut upstream);
                }
                let name = layer_name(i, layer);
                let fan_in = in_shape[0];
                let w = params.require(&format!("{name}.weight"))?;
                {
                    let gw = grads.get_mut(&format!("{name}.weight")).expect("layout");
                    gemm_tn(fan_in, units, batch, x.data(), &upstream, gw.data_mut());
                }
                {
                    let gb = grads.get_mut(&format!("{name}.bias")).expect("layout");
                    for row in upstream.chunks(units) {
                        for (g, &u) in gb.data_mut().iter_mut().zip(row) {
                            *g = *g + u;
                        }
                    }
                }
                if need_input_grad {
                    let mut dx = vec![T::zero(); batch * fan_in];
                    gemm_nt(batch, fan_in, units, &upstream, w.data(), &mut dx);
                    dx
                } else {
                    Vec::new()
                }
            }
            Layer::Convolution { filters, kernel, stride, activation } => {
                if activation == Activation::Relu {
                    relu_mask(out.data(), &mut upstream);
                }
                let name = layer_name(i, layer);
                let geom = conv_geom(in_shape, kernel, stride, &shapes[i]);
                let (k, p) = (geom.k(), geom.p());
                let in_len = geom.channels * geom.height * geom.width;
                let table = geom.taps();
                let w = params.require(&format!("{name}.weight"))?;
                let wt = transpose(w.data(), filters, k);
                let mut dx = if need_input_grad { vec![T::zero(); batch * in_len] } else { Vec::new() };
                // Weight gradient accumulated transposed, `[K × filters]`,
                // visiting only the non-zero input cells.
                let mut gw_t = vec![T::zero(); k * filters];
                for s in 0..batch {
                    let g = &upstream[s * filters * p..(s + 1) * filters * p];
                    let g_t = transpose(g, filters, p);
                    let sample = &x.data()[s * in_len..(s + 1) * in_len];
                    for (input, &v) in sample.iter().enumerate() {
                        if v == T::zero() {
                            continue;
                        }
                        for &(row, pos) in table.of(input) {
                            axpy(v, &g_t[pos * filters..(pos + 1) * filters], &mut gw_t[row * filters..(row + 1) * filters]);
                        }
                    }
                    {
                        let gb = grads.get_mut(&format!("{name}.bias")).expect("layout");
                        for (f, chunk) in g.chunks(p).enumerate() {
                            let sum: T = chunk.iter().copied().sum();
                            gb.data_mut()[f] = gb.data_mut()[f] + sum;
                        }
                    }
                    if need_input_grad {
                        let d = &mut dx[s * in_len..(s + 1) * in_len];
                        for (input, dv) in d.iter_mut().enumerate() {
                            let mut acc = T::zero();
                            for &(row, pos) in table.of(input) {
                                let wr = &wt[row * filters..(row + 1) * filters];
                                let gr = &g_t[pos * filters..(pos + 1) * filters];
                                acc = acc + wr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
                            }
                            *dv = acc;
                        }
                    }
                }
                let gw = grads.get_mut(&format!("{name}.weight")).expect("layout");
                for (f, row) in gw.data_mut().chunks_mut(k).enumerate() {
                    for (kk, v) in row.iter_mut().enumerate() {
                        *v = *v + gw_t[kk * filters + f];
                    }
                }
                dx
            }
        };
    }
    if !grads.all_finite() {
        return Err(NnError::NonFinite("gradient".into()));
    }
    Ok(grads)
}

/// Row-major `rows × cols` matrix to `cols × rows`.
fn transpose<T: Scalar>(m: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

fn relu_mask<T: Scalar>(out: &[T], grad: &mut [T]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

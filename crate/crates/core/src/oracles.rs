//! Reference computations used by the test suites to check the optimized
//! code paths. Nothing here shares code with [`crate::nn`] beyond the
//! spec and parameter containers.

use crate::nn::{Activation, Layer, NetworkSpec, Parameters};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Straight nested-loop evaluation of one sample. Returns the output and,
/// for every rectified layer, the sign pattern of its pre-activations.
pub fn naive_forward(spec: &NetworkSpec, params: &Parameters<f64>, sample: &[f64]) -> (Vec<f64>, Vec<Vec<bool>>) {
    let mut x = sample.to_vec();
    let mut shape = spec.input.clone();
    let mut masks = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        match *layer {
            Layer::Convolution { filters, kernel, stride, activation } => {
                let (c_in, h, w) = (shape[0], shape[1], shape[2]);
                let oh = (h - kernel) / stride + 1;
                let ow = (w - kernel) / stride + 1;
                let weight = params.get(&format!("conv{i}.weight")).unwrap().data();
                let bias = params.get(&format!("conv{i}.bias")).unwrap().data();
                let mut y = vec![0.0; filters * oh * ow];
                for f in 0..filters {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = bias[f];
                            for c in 0..c_in {
                                for ki in 0..kernel {
                                    for kj in 0..kernel {
                                        let wv = weight[((f * c_in + c) * kernel + ki) * kernel + kj];
                                        let xv = x[(c * h + oy * stride + ki) * w + ox * stride + kj];
                                        acc += wv * xv;
                                    }
                                }
                            }
                            y[(f * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
                if activation == Activation::Relu {
                    masks.push(y.iter().map(|&v| v > 0.0).collect());
                    y.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                x = y;
                shape = vec![filters, oh, ow];
            }
            Layer::Dense { units, activation } => {
                let fan_in = shape[0];
                let weight = params.get(&format!("dense{i}.weight")).unwrap().data();
                let bias = params.get(&format!("dense{i}.bias")).unwrap().data();
                let mut y: Vec<f64> = bias.to_vec();
                for (o, yo) in y.iter_mut().enumerate() {
                    for (k, xk) in x.iter().enumerate() {
                        *yo += xk * weight[k * units + o];
                    }
                }
                debug_assert_eq!(x.len(), fan_in);
                if activation == Activation::Relu {
                    masks.push(y.iter().map(|&v| v > 0.0).collect());
                    y.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                x = y;
                shape = vec![units];
            }
            Layer::Flatten => {
                shape = vec![shape.iter().product()];
            }
        }
    }
    (x, masks)
}

/// Result of a central finite-difference comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed a ReLU kink.
    pub skipped: usize,
    pub max_relative_error: f64,
}

/// Relative error with a floor on the denominator so that two tiny numbers
/// compare as equal.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of
/// `loss(θ) = Σ_batch Σ_out output · weights` evaluated by [`naive_forward`].
pub fn finite_difference_check(
    spec: &NetworkSpec,
    params: &Parameters<f64>,
    batch: &[Vec<f64>],
    output_weights: &[Vec<f64>],
    analytic: &Parameters<f64>,
    perturbation: f64,
) -> GradCheck {
    let eval = |p: &Parameters<f64>| {
        let mut total = 0.0;
        let mut masks = Vec::new();
        for (sample, g) in batch.iter().zip(output_weights) {
            let (out, m) = naive_forward(spec, p, sample);
            total += out.iter().zip(g).map(|(o, w)| o * w).sum::<f64>();
            masks.push(m);
        }
        (total, masks)
    };
    let (_, base_masks) = eval(params);
    let mut probe = params.clone();
    let mut result = GradCheck { checked: 0, skipped: 0, max_relative_error: 0.0 };
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let len = params.get(&name).unwrap().len();
        for idx in 0..len {
            let original = params.get(&name).unwrap().data()[idx];
            probe.get_mut(&name).unwrap().data_mut()[idx] = original + perturbation;
            let (plus, plus_masks) = eval(&probe);
            probe.get_mut(&name).unwrap().data_mut()[idx] = original - perturbation;
            let (minus, minus_masks) = eval(&probe);
            probe.get_mut(&name).unwrap().data_mut()[idx] = original;
            if plus_masks != base_masks || minus_masks != base_masks {
                result.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * perturbation);
            let exact = analytic.get(&name).unwrap().data()[idx];
            result.checked += 1;
            result.max_relative_error = result.max_relative_error.max(relative_error(exact, numeric));
        }
    }
    result
}

/// Pearson chi-square goodness-of-fit against the uniform distribution.
#[derive(Debug, Clone, Copy)]
pub struct ChiSquare {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

impl ChiSquare {
    pub fn passes(&self, significance: f64) -> bool {
        self.p_value > significance
    }
}

pub fn chi_square_uniform(counts: &[u64]) -> ChiSquare {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let statistic = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let degrees_of_freedom = counts.len().saturating_sub(1).max(1);
    let dist = ChiSquared::new(degrees_of_freedom as f64).expect("positive degrees of freedom");
    ChiSquare { statistic, degrees_of_freedom, p_value: 1.0 - dist.cdf(statistic) }
}

/// Value iteration to a fixed point for a deterministic MDP given as
/// `next[s][a]`, `reward[s][a]`, `terminal[s][a]`.
pub fn value_iteration(
    next: &[Vec<usize>],
    reward: &[Vec<f64>],
    terminal: &[Vec<bool>],
    gamma: f64,
    tolerance: f64,
) -> Vec<Vec<f64>> {
    let states = next.len();
    let actions = next[0].len();
    let mut q = vec![vec![0.0; actions]; states];
    loop {
        let v: Vec<f64> = q.iter().map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
        let mut delta: f64 = 0.0;
        for s in 0..states {
            for a in 0..actions {
                let target = if terminal[s][a] { reward[s][a] } else { reward[s][a] + gamma * v[next[s][a]] };
                delta = delta.max((target - q[s][a]).abs());
                q[s][a] = target;
            }
        }
        if delta < tolerance {
            return q;
        }
    }
}

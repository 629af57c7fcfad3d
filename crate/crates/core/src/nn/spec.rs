use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Layer {
    /// Valid (unpadded) 2-D convolution over a `(channels, height, width)` input.
    Convolution { filters: usize, kernel: usize, stride: usize, activation: Activation },
    Dense { units: usize, activation: Activation },
    Flatten,
}

/// Architecture of a Q-network: per-sample input shape plus an ordered layer list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl NetworkSpec {
    /// Default Q-network: two convolutions, flatten, a hidden dense layer and a
    /// linear head with one unit per action.
    pub fn default_q_network(input: [usize; 3], action_count: usize) -> Self {
        Self {
            input: input.to_vec(),
            layers: vec![
                Layer::Convolution { filters: 8, kernel: 3, stride: 1, activation: Activation::Relu },
                Layer::Convolution { filters: 16, kernel: 3, stride: 2, activation: Activation::Relu },
                Layer::Flatten,
                Layer::Dense { units: 128, activation: Activation::Relu },
                Layer::Dense { units: action_count, activation: Activation::Identity },
            ],
        }
    }

    /// One linear layer from a flat input; with one-hot inputs this is a Q-table.
    pub fn tabular(states: usize, action_count: usize) -> Self {
        Self {
            input: vec![states],
            layers: vec![Layer::Dense { units: action_count, activation: Activation::Identity }],
        }
    }

    /// Per-sample shape produced by every layer, checking compatibility.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        if self.input.is_empty() || self.input.iter().any(|&d| d == 0) {
            return Err(NnError::InvalidSpec(format!("bad input shape {:?}", self.input)));
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut current = self.input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            current = match *layer {
                Layer::Convolution { filters, kernel, stride, .. } => {
                    let [_, h, w] = current[..] else {
                        return Err(NnError::InvalidSpec(format!(
                            "layer {i} (convolution) needs a (channels, height, width) input, got {current:?}"
                        )));
                    };
                    if filters == 0 || kernel == 0 || stride == 0 {
                        return Err(NnError::InvalidSpec(format!("layer {i}: zero-sized convolution")));
                    }
                    if kernel > h || kernel > w {
                        return Err(NnError::InvalidSpec(format!(
                            "layer {i}: kernel {kernel} exceeds input {h}x{w}"
                        )));
                    }
                    vec![filters, (h - kernel) / stride + 1, (w - kernel) / stride + 1]
                }
                Layer::Dense { units, .. } => {
                    if current.len() != 1 {
                        return Err(NnError::InvalidSpec(format!(
                            "layer {i} (dense) needs a flat input, got {current:?}; insert a flatten layer"
                        )));
                    }
                    if units == 0 {
                        return Err(NnError::InvalidSpec(format!("layer {i}: zero units")));
                    }
                    vec![units]
                }
                Layer::Flatten => vec![current.iter().product()],
            };
            shapes.push(current.clone());
        }
        Ok(shapes)
    }

    /// Validates the whole spec as a Q-network head for `action_count` actions.
    pub fn validate_q_network(&self, action_count: usize) -> Result<(), NnError> {
        self.layer_shapes()?;
        match self.layers.last() {
            Some(Layer::Dense { units, activation: Activation::Identity }) if *units == action_count => Ok(()),
            Some(other) => Err(NnError::InvalidSpec(format!(
                "final layer must be dense({action_count}, identity), got {other:?}"
            ))),
            None => Err(NnError::InvalidSpec("network has no layers".into())),
        }
    }

    pub fn output_units(&self) -> Result<usize, NnError> {
        let shapes = self.layer_shapes()?;
        let last = shapes.last().ok_or_else(|| NnError::InvalidSpec("network has no layers".into()))?;
        Ok(last.iter().product())
    }

    /// `(name, shape, fan_in)` of every parameter tensor, in layer order.
    pub fn parameter_layout(&self) -> Result<Vec<(String, Vec<usize>, usize)>, NnError> {
        let shapes = self.layer_shapes()?;
        let mut layout = Vec::new();
        let mut input = self.input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Convolution { filters, kernel, .. } => {
                    let fan_in = input[0] * kernel * kernel;
                    layout.push((format!("conv{i}.weight"), vec![filters, input[0], kernel, kernel], fan_in));
                    layout.push((format!("conv{i}.bias"), vec![filters], fan_in));
                }
                Layer::Dense { units, .. } => {
                    let fan_in = input[0];
                    layout.push((format!("dense{i}.weight"), vec![fan_in, units], fan_in));
                    layout.push((format!("dense{i}.bias"), vec![units], fan_in));
                }
                Layer::Flatten => {}
            }
            input = shapes[i].clone();
        }
        Ok(layout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_network_shapes() {
        let spec = NetworkSpec::default_q_network([36, 12, 12], 8);
        let shapes = spec.layer_shapes().unwrap();
        assert_eq!(shapes[0], vec![8, 10, 10]);
        assert_eq!(shapes[1], vec![16, 4, 4]);
        assert_eq!(shapes[2], vec![256]);
        assert_eq!(shapes[4], vec![8]);
        spec.validate_q_network(8).unwrap();
        assert!(spec.validate_q_network(7).is_err());
    }

    #[test]
    fn dense_after_conv_without_flatten_is_rejected() {
        let spec = NetworkSpec {
            input: vec![1, 4, 4],
            layers: vec![
                Layer::Convolution { filters: 2, kernel: 3, stride: 1, activation: Activation::Relu },
                Layer::Dense { units: 2, activation: Activation::Identity },
            ],
        };
        let err = spec.layer_shapes().unwrap_err().to_string();
        assert!(err.contains("layer 1"), "{err}");
    }

    #[test]
    fn parameter_names_are_layer_qualified() {
        let spec = NetworkSpec::default_q_network([6, 12, 12], 4);
        let names: Vec<_> = spec.parameter_layout().unwrap().into_iter().map(|(n, _, _)| n).collect();
        assert_eq!(
            names,
            [
                "conv0.weight", "conv0.bias", "conv1.weight", "conv1.bias", "dense3.weight", "dense3.bias",
                "dense4.weight", "dense4.bias"
            ]
        );
    }
}

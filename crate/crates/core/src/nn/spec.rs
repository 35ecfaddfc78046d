use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Zero-padded, size-preserving convolution with a 1x1 or 3x3 kernel.
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
    },
    Relu,
    /// 2x2 average pooling with stride 2; odd edges pool over the valid pixels.
    Downsample2,
    /// Bilinear upsampling by an integer factor.
    BilinearUp {
        factor: usize,
    },
    /// Append the auxiliary input's channels to the activations.
    ConcatInput {
        channels: usize,
    },
}

impl LayerSpec {
    pub fn conv3(in_channels: usize, out_channels: usize, dilation: usize) -> Self {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel: 3,
            dilation,
        }
    }

    pub fn conv1(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel: 1,
            dilation: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    pub fn new(input_channels: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self {
            input_channels,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the channel chain and per-layer parameters; returns the
    /// number of output channels.
    pub fn validate(&self) -> Result<usize> {
        let bad = |i: usize, msg: String| Error::InvalidArgument(format!("layer {i}: {msg}"));
        if self.input_channels == 0 {
            return Err(Error::InvalidArgument(
                "network input needs channels".into(),
            ));
        }
        let mut ch = self.input_channels;
        let mut convs = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    dilation,
                } => {
                    if in_channels != ch {
                        return Err(bad(
                            i,
                            format!("expects {in_channels} channels, receives {ch}"),
                        ));
                    }
                    if out_channels == 0 {
                        return Err(bad(i, "conv needs output channels".into()));
                    }
                    if kernel != 1 && kernel != 3 {
                        return Err(bad(i, format!("kernel {kernel} is not 1 or 3")));
                    }
                    if dilation < 1 {
                        return Err(bad(i, "dilation must be at least 1".into()));
                    }
                    ch = out_channels;
                    convs += 1;
                }
                LayerSpec::Relu | LayerSpec::Downsample2 => {}
                LayerSpec::BilinearUp { factor } => {
                    if factor < 1 {
                        return Err(bad(i, "upsampling factor must be at least 1".into()));
                    }
                }
                LayerSpec::ConcatInput { channels } => {
                    if channels == 0 {
                        return Err(bad(i, "concatenated input needs channels".into()));
                    }
                    ch += channels;
                }
            }
        }
        if convs == 0 {
            return Err(Error::InvalidArgument("network has no conv layer".into()));
        }
        Ok(ch)
    }

    pub fn output_channels(&self) -> usize {
        self.validate().unwrap_or(0)
    }

    /// Channels of the auxiliary input, if the network concatenates one.
    pub fn aux_channels(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            LayerSpec::ConcatInput { channels } => Some(*channels),
            _ => None,
        })
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.layers.iter().filter_map(|l| match *l {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((in_channels, out_channels, kernel)),
            _ => None,
        })
    }

    /// Priming network: 8 convolutions, one stride-2 pooling after the second,
    /// two dilated layers, and a bilinear x2 head.
    pub fn default_priming(classes: usize) -> Self {
        use LayerSpec::*;
        let layers = vec![
            LayerSpec::conv3(3, 16, 1),
            Relu,
            LayerSpec::conv3(16, 16, 1),
            Relu,
            Downsample2,
            LayerSpec::conv3(16, 32, 1),
            Relu,
            LayerSpec::conv3(32, 32, 2),
            Relu,
            LayerSpec::conv3(32, 32, 2),
            Relu,
            LayerSpec::conv3(32, 32, 1),
            Relu,
            LayerSpec::conv3(32, 16, 1),
            Relu,
            LayerSpec::conv1(16, classes),
            BilinearUp { factor: 2 },
        ];
        Self::new(3, layers).expect("default priming spec is valid")
    }

    /// Approximating network: 4 convolutions at the (already reduced) input size.
    pub fn default_approximating(classes: usize) -> Self {
        use LayerSpec::*;
        let layers = vec![
            LayerSpec::conv3(3, 8, 1),
            Relu,
            LayerSpec::conv3(8, 16, 1),
            Relu,
            LayerSpec::conv3(16, 16, 1),
            Relu,
            LayerSpec::conv1(16, classes),
        ];
        Self::new(3, layers).expect("default approximating spec is valid")
    }

    /// Ensemble network: input is the previous frame's scores, the
    /// auxiliary input is the upsampled approximating scores.
    pub fn default_ensemble(classes: usize) -> Self {
        use LayerSpec::*;
        let layers = vec![
            ConcatInput { channels: classes },
            LayerSpec::conv3(2 * classes, 16, 1),
            Relu,
            LayerSpec::conv1(16, classes),
        ];
        Self::new(classes, layers).expect("default ensemble spec is valid")
    }

    /// Line-oriented text form; stable across releases and used for hashing.
    pub fn canonical(&self) -> String {
        let mut s = format!("vidseg-net 1\ninput {}\n", self.input_channels);
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    dilation,
                } => writeln!(s, "conv {in_channels} {out_channels} {kernel} {dilation}"),
                LayerSpec::Relu => writeln!(s, "relu"),
                LayerSpec::Downsample2 => writeln!(s, "downsample2"),
                LayerSpec::BilinearUp { factor } => writeln!(s, "bilinear_up {factor}"),
                LayerSpec::ConcatInput { channels } => writeln!(s, "concat_input {channels}"),
            }
            .expect("writing to a String");
        }
        s
    }

    pub fn parse_canonical(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::Checkpoint(format!("bad spec line {line:?}"));
        let mut lines = text.lines();
        if lines.next() != Some("vidseg-net 1") {
            return Err(Error::Checkpoint("unsupported spec header".into()));
        }
        let input = lines.next().ok_or_else(|| bad(""))?;
        let input_channels = input
            .strip_prefix("input ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(input))?;
        let mut layers = Vec::new();
        for line in lines {
            let mut parts = line.split_whitespace();
            let kind = parts.next().ok_or_else(|| bad(line))?;
            let nums: Vec<usize> = parts
                .map(|p| p.parse().map_err(|_| bad(line)))
                .collect::<Result<_>>()?;
            let layer = match (kind, nums.as_slice()) {
                ("conv", &[i, o, k, d]) => LayerSpec::Conv {
                    in_channels: i,
                    out_channels: o,
                    kernel: k,
                    dilation: d,
                },
                ("relu", &[]) => LayerSpec::Relu,
                ("downsample2", &[]) => LayerSpec::Downsample2,
                ("bilinear_up", &[f]) => LayerSpec::BilinearUp { factor: f },
                ("concat_input", &[c]) => LayerSpec::ConcatInput { channels: c },
                _ => return Err(bad(line)),
            };
            layers.push(layer);
        }
        Self::new(input_channels, layers)
    }

    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.canonical().as_bytes()).into()
    }
}

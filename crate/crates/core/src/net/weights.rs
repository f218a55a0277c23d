//! Plain-text weight files.
//!
//! ```text
//! PREYNET v1
//! layer conv1 conv 10 1 5 5
//! <weights, then biases, whitespace separated>
//! layer conv2 conv 20 10 5 5
//! ...
//! layer fc1 fc 100 1620
//! ...
//! layer fc2 fc 10 100
//! ...
//! ```
//!
//! Values use Rust's shortest round-trip formatting, so save/load is exact.

use std::fmt::Write;

use super::layers::{Conv2d, Dense, KERNEL};
use super::{Architecture, Layer, NetError, Network};

pub const WEIGHTS_HEADER: &str = "PREYNET v1";

const LAYER_NAMES: [&str; 4] = ["conv1", "conv2", "fc1", "fc2"];

struct RawLayer {
    name: String,
    kind: String,
    dims: Vec<usize>,
    values: Vec<f64>,
}

fn layer_err(layer: &str, msg: impl Into<String>) -> NetError {
    NetError::Layer {
        layer: layer.to_string(),
        msg: msg.into(),
    }
}

impl Network {
    pub fn save_weights(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{WEIGHTS_HEADER}").unwrap();
        let (mut n_conv, mut n_fc) = (0, 0);
        for layer in self.layers() {
            let (name, header, weights, bias, row) = match layer {
                Layer::Conv(c) => {
                    n_conv += 1;
                    (
                        format!("conv{n_conv}"),
                        format!("conv {} {} {KERNEL} {KERNEL}", c.out_channels, c.in_channels),
                        &c.weights,
                        &c.bias,
                        KERNEL * KERNEL,
                    )
                }
                Layer::Dense(d) => {
                    n_fc += 1;
                    (
                        format!("fc{n_fc}"),
                        format!("fc {} {}", d.outputs, d.inputs),
                        &d.weights,
                        &d.bias,
                        d.inputs,
                    )
                }
                _ => continue,
            };
            writeln!(out, "layer {name} {header}").unwrap();
            for chunk in weights.chunks(row) {
                write_values(&mut out, chunk);
            }
            write_values(&mut out, bias);
        }
        out
    }

    /// Parse a weight file for the standard topology. The input width is not
    /// stored in the file and must be given; fc1's input count is checked
    /// against it.
    pub fn load_weights(text: &str, input_width: usize) -> Result<Network, NetError> {
        let mut lines = text.lines();
        match lines.next().map(str::trim) {
            Some(WEIGHTS_HEADER) => {}
            Some(other) => {
                return Err(NetError::Header(format!(
                    "expected \"{WEIGHTS_HEADER}\", found \"{other}\""
                )))
            }
            None => return Err(NetError::Header("empty file".into())),
        }

        let mut raw: Vec<RawLayer> = Vec::new();
        for line in lines {
            let mut tokens = line.split_whitespace().peekable();
            if tokens.peek() == Some(&"layer") {
                tokens.next();
                let name = tokens.next().unwrap_or_default().to_string();
                let kind = tokens
                    .next()
                    .ok_or_else(|| layer_err(&name, "missing layer kind"))?
                    .to_string();
                let dims = tokens
                    .map(|t| t.parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| layer_err(&name, format!("bad dimension: {e}")))?;
                raw.push(RawLayer {
                    name,
                    kind,
                    dims,
                    values: Vec::new(),
                });
                continue;
            }
            let Some(current) = raw.last_mut() else {
                if tokens.peek().is_some() {
                    return Err(NetError::Header("values before the first layer".into()));
                }
                continue;
            };
            for t in tokens {
                let v: f64 = t
                    .parse()
                    .map_err(|_| layer_err(&current.name, format!("bad value \"{t}\"")))?;
                if !v.is_finite() {
                    return Err(layer_err(&current.name, format!("non-finite value {v}")));
                }
                current.values.push(v);
            }
        }

        for (i, expected) in LAYER_NAMES.iter().enumerate() {
            match raw.get(i) {
                None => return Err(layer_err(expected, "missing")),
                Some(r) if r.name != *expected => {
                    return Err(layer_err(&r.name, format!("expected layer {expected} here")))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = raw.get(LAYER_NAMES.len()) {
            return Err(layer_err(&extra.name, "unexpected extra layer"));
        }

        let conv1 = conv_from(&raw[0], 1)?;
        let conv2 = conv_from(&raw[1], conv1.out_channels)?;
        let arch = Architecture {
            input_width,
            conv1: conv1.out_channels,
            conv2: conv2.out_channels,
            hidden: 0,
            classes: 0,
        };
        let fc1 = dense_from(&raw[2], arch.flat_features())?;
        let fc2 = dense_from(&raw[3], fc1.outputs)?;
        Network::from_layers(
            input_width,
            vec![
                Layer::Conv(conv1),
                Layer::Relu,
                Layer::MaxPool,
                Layer::Conv(conv2),
                Layer::Relu,
                Layer::MaxPool,
                Layer::Dense(fc1),
                Layer::Relu,
                Layer::Dense(fc2),
                Layer::Softmax,
            ],
        )
    }
}

fn write_values(out: &mut String, values: &[f64]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        write!(out, "{v:?}").unwrap();
    }
    out.push('\n');
}

fn split_values(r: &RawLayer, n_weights: usize, n_bias: usize) -> Result<(Vec<f64>, Vec<f64>), NetError> {
    if r.values.len() != n_weights + n_bias {
        return Err(layer_err(
            &r.name,
            format!(
                "expected {} values, found {}",
                n_weights + n_bias,
                r.values.len()
            ),
        ));
    }
    let (w, b) = r.values.split_at(n_weights);
    Ok((w.to_vec(), b.to_vec()))
}

fn conv_from(r: &RawLayer, in_channels: usize) -> Result<Conv2d, NetError> {
    if r.kind != "conv" {
        return Err(layer_err(&r.name, format!("expected kind conv, found {}", r.kind)));
    }
    let &[out, inp, kh, kw] = &r.dims[..] else {
        return Err(layer_err(&r.name, "conv needs 4 dimensions"));
    };
    if (kh, kw) != (KERNEL, KERNEL) {
        return Err(layer_err(&r.name, format!("kernel must be {KERNEL}x{KERNEL}")));
    }
    if inp != in_channels {
        return Err(layer_err(
            &r.name,
            format!("takes {inp} input channels, previous layer gives {in_channels}"),
        ));
    }
    let (weights, bias) = split_values(r, out * inp * kh * kw, out)?;
    Ok(Conv2d {
        out_channels: out,
        in_channels: inp,
        weights,
        bias,
    })
}

fn dense_from(r: &RawLayer, inputs: usize) -> Result<Dense, NetError> {
    if r.kind != "fc" {
        return Err(layer_err(&r.name, format!("expected kind fc, found {}", r.kind)));
    }
    let &[out, inp] = &r.dims[..] else {
        return Err(layer_err(&r.name, "fc needs 2 dimensions"));
    };
    if inp != inputs {
        return Err(layer_err(
            &r.name,
            format!("takes {inp} inputs, previous layer gives {inputs}"),
        ));
    }
    let (weights, bias) = split_values(r, out * inp, out)?;
    Ok(Dense {
        outputs: out,
        inputs: inp,
        weights,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let net = Network::glorot(Architecture::standard(36), 11);
        let text = net.save_weights();
        assert!(text.starts_with("PREYNET v1\nlayer conv1 conv 10 1 5 5\n"));
        let back = Network::load_weights(&text, 36).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn empty_file_is_a_header_error() {
        assert!(matches!(Network::load_weights("", 36), Err(NetError::Header(_))));
        assert!(matches!(
            Network::load_weights("PREYNET v2\n", 36),
            Err(NetError::Header(_))
        ));
    }

    #[test]
    fn missing_layer_is_named() {
        let text = Network::zeros(Architecture::default()).save_weights();
        let cut = text.find("layer fc2").unwrap();
        match Network::load_weights(&text[..cut], 36) {
            Err(NetError::Layer { layer, .. }) => assert_eq!(layer, "fc2"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn extra_layer_is_named() {
        let mut text = Network::zeros(Architecture::default()).save_weights();
        text.push_str("layer fc3 fc 1 10\n0 0 0 0 0 0 0 0 0 0 0\n");
        match Network::load_weights(&text, 36) {
            Err(NetError::Layer { layer, .. }) => assert_eq!(layer, "fc3"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn width_mismatch_blames_fc1() {
        let text = Network::zeros(Architecture::default()).save_weights();
        match Network::load_weights(&text, 54) {
            Err(NetError::Layer { layer, .. }) => assert_eq!(layer, "fc1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn value_count_checked() {
        let text = Network::zeros(Architecture::default())
            .save_weights()
            .replacen("layer conv2", "0.5\nlayer conv2", 1);
        match Network::load_weights(&text, 36) {
            Err(NetError::Layer { layer, msg }) => {
                assert_eq!(layer, "conv1");
                assert!(msg.contains("expected 260"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }
}

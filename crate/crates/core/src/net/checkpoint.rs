//! Versioned plain-text checkpoints.
//!
//! Layout, one item per line:
//!
//! ```text
//! strokeid-checkpoint 1
//! attributes <name>,<name>,...
//! window <W>
//! stride <S>
//! users <id> <id> ...
//! norm_mean <v> ...            one value per attribute
//! norm_std <v> ...
//! dims <input> <h1> <h2> <h3> <classes>
//! dropout <r>
//! bn_momentum <m>
//! bn_epsilon <e>
//! tensor <name> <rows> <cols>  followed by <rows> lines of <cols> values
//! ...
//! end
//! ```
//!
//! Tensors appear in the order `layer1.weights`, `layer1.bias`, `bn.gamma`,
//! `bn.beta`, `bn.running_mean`, `bn.running_var`, then `layerN.weights`,
//! `layerN.bias` for N = 2..4. Weight tensors are `out x in`, row-major.
//! Reals are written in the shortest exponent form that parses back to the
//! identical bits.

use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};
use crate::framing::{Attribute, FramingConfig, NormalizationStats};
use crate::ingest::UserIndex;

use super::{BatchNorm, Dense, MlpModel};

pub const FORMAT_MAGIC: &str = "strokeid-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MlpModel,
    pub stats: NormalizationStats,
    pub framing: FramingConfig,
    pub users: UserIndex,
}

impl Checkpoint {
    /// Fails unless the checkpoint was trained with `framing`.
    pub fn ensure_framing(&self, framing: &FramingConfig) -> Result<()> {
        if self.framing.attributes() != framing.attributes() {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint attributes [{}] differ from configured [{}]",
                join(self.framing.attributes()),
                join(framing.attributes())
            )));
        }
        if self.framing.window() != framing.window() || self.framing.stride() != framing.stride() {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint window/stride {}/{} differ from configured {}/{}",
                self.framing.window(),
                self.framing.stride(),
                framing.window(),
                framing.stride()
            )));
        }
        Ok(())
    }

    pub fn ensure_users(&self, users: &UserIndex) -> Result<()> {
        if &self.users != users {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint was trained on {} users, data has {} (or different ids)",
                self.users.len(),
                users.len()
            )));
        }
        Ok(())
    }
}

fn join(attrs: &[Attribute]) -> String {
    attrs.iter().map(|a| a.name()).collect::<Vec<_>>().join(",")
}

fn write_values<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            w.write_all(b" ")?;
        }
        write!(w, "{v:e}")?;
        first = false;
    }
    w.write_all(b"\n")?;
    Ok(())
}

fn write_tensor<W: Write>(w: &mut W, name: &str, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    writeln!(w, "tensor {name} {rows} {cols}")?;
    for row in values.chunks(cols.max(1)) {
        write_values(w, row)?;
    }
    Ok(())
}

pub fn save_checkpoint<W: Write>(
    model: &MlpModel,
    stats: &NormalizationStats,
    framing: &FramingConfig,
    users: &UserIndex,
    mut w: W,
) -> Result<()> {
    if framing.input_dim() != model.input_dim() || users.len() != model.output_dim() {
        return Err(Error::Dimension(format!(
            "model is {}->{}, framing gives {} inputs and there are {} users",
            model.input_dim(),
            model.output_dim(),
            framing.input_dim(),
            users.len()
        )));
    }
    writeln!(w, "{FORMAT_MAGIC} {FORMAT_VERSION}")?;
    writeln!(w, "attributes {}", join(framing.attributes()))?;
    writeln!(w, "window {}", framing.window())?;
    writeln!(w, "stride {}", framing.stride())?;
    let ids: Vec<String> = users.ids().iter().map(i64::to_string).collect();
    writeln!(w, "users {}", ids.join(" "))?;
    w.write_all(b"norm_mean ")?;
    write_values(&mut w, &stats.mean)?;
    w.write_all(b"norm_std ")?;
    write_values(&mut w, &stats.std)?;
    let dims: Vec<String> = std::iter::once(model.input_dim())
        .chain(model.layers.iter().map(|l| l.out_dim))
        .map(|d| d.to_string())
        .collect();
    writeln!(w, "dims {}", dims.join(" "))?;
    writeln!(w, "dropout {:e}", model.dropout)?;
    writeln!(w, "bn_momentum {:e}", model.bn.momentum)?;
    writeln!(w, "bn_epsilon {:e}", model.bn.epsilon)?;
    for (l, layer) in model.layers.iter().enumerate() {
        let n = l + 1;
        write_tensor(&mut w, &format!("layer{n}.weights"), layer.out_dim, layer.in_dim, &layer.weights)?;
        write_tensor(&mut w, &format!("layer{n}.bias"), 1, layer.out_dim, &layer.bias)?;
        if l == 0 {
            let h = layer.out_dim;
            write_tensor(&mut w, "bn.gamma", 1, h, &model.bn.gamma)?;
            write_tensor(&mut w, "bn.beta", 1, h, &model.bn.beta)?;
            write_tensor(&mut w, "bn.running_mean", 1, h, &model.bn.running_mean)?;
            write_tensor(&mut w, "bn.running_var", 1, h, &model.bn.running_var)?;
        }
    }
    writeln!(w, "end")?;
    w.flush()?;
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<BufReader<R>>,
    line: usize,
}

impl<R: Read> Lines<R> {
    fn next_line(&mut self) -> Result<String> {
        self.line += 1;
        match self.inner.next() {
            Some(l) => Ok(l?),
            None => Err(Error::Checkpoint(format!(
                "unexpected end of file at line {}",
                self.line
            ))),
        }
    }

    fn fail<T>(&self, msg: impl std::fmt::Display) -> Result<T> {
        Err(Error::Checkpoint(format!("line {}: {msg}", self.line)))
    }

    /// Reads a `key rest...` line and returns `rest`.
    fn field(&mut self, key: &str) -> Result<String> {
        let line = self.next_line()?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest.to_string()),
            _ if line == key => Ok(String::new()),
            _ => self.fail(format!("expected {key:?}, found {line:?}")),
        }
    }

    fn parse<T: std::str::FromStr>(&self, s: &str, what: &str) -> Result<T> {
        match s.parse() {
            Ok(v) => Ok(v),
            Err(_) => self.fail(format!("invalid {what}: {s:?}")),
        }
    }

    fn reals(&self, s: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
        let vals = s
            .split_ascii_whitespace()
            .map(|t| self.parse::<f64>(t, what))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != expected {
            return self.fail(format!("{what}: expected {expected} values, found {}", vals.len()));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return self.fail(format!("{what}: non-finite value"));
        }
        Ok(vals)
    }

    fn tensor(&mut self, name: &str, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let header = self.field("tensor")?;
        let parts: Vec<&str> = header.split_ascii_whitespace().collect();
        let shape_ok = parts.len() == 3
            && parts[0] == name
            && parts[1].parse() == Ok(rows)
            && parts[2].parse() == Ok(cols);
        if !shape_ok {
            return self.fail(format!(
                "expected tensor {name} {rows} {cols}, found \"tensor {header}\""
            ));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self.next_line()?;
            values.extend(self.reals(&line, cols, name)?);
        }
        Ok(values)
    }
}

pub fn load_checkpoint<R: Read>(reader: R) -> Result<Checkpoint> {
    let mut lines = Lines {
        inner: BufReader::new(reader).lines(),
        line: 0,
    };
    let version = lines.field(FORMAT_MAGIC)?;
    if version.trim() != FORMAT_VERSION.to_string() {
        return lines.fail(format!(
            "unsupported format version {version:?}, expected {FORMAT_VERSION}"
        ));
    }
    let attributes = lines
        .field("attributes")?
        .split(',')
        .map(|s| s.parse::<Attribute>())
        .collect::<Result<Vec<_>>>()
        .or_else(|e| lines.fail(e))?;
    let window: usize = {
        let s = lines.field("window")?;
        lines.parse(&s, "window")?
    };
    let stride: usize = {
        let s = lines.field("stride")?;
        lines.parse(&s, "stride")?
    };
    let framing = FramingConfig::new(window, stride, attributes).or_else(|e| lines.fail(e))?;
    let user_ids = {
        let s = lines.field("users")?;
        s.split_ascii_whitespace()
            .map(|t| lines.parse::<i64>(t, "user id"))
            .collect::<Result<Vec<_>>>()?
    };
    let users = UserIndex::from_ids(user_ids.clone());
    if users.ids() != user_ids.as_slice() {
        return lines.fail("user ids must be strictly increasing");
    }
    let d = framing.attributes().len();
    let mean = {
        let s = lines.field("norm_mean")?;
        lines.reals(&s, d, "norm_mean")?
    };
    let std = {
        let s = lines.field("norm_std")?;
        lines.reals(&s, d, "norm_std")?
    };
    if std.iter().any(|&s| s < 0.0) {
        return lines.fail("negative standard deviation");
    }
    let dims = {
        let s = lines.field("dims")?;
        s.split_ascii_whitespace()
            .map(|t| lines.parse::<usize>(t, "dimension"))
            .collect::<Result<Vec<_>>>()?
    };
    if dims.len() != 5 || dims.contains(&0) {
        return lines.fail(format!("expected 5 positive dims, found {dims:?}"));
    }
    if dims[0] != framing.input_dim() {
        return lines.fail(format!(
            "input dim {} != {} attributes x window {}",
            dims[0],
            d,
            framing.window()
        ));
    }
    if dims[4] != users.len() {
        return lines.fail(format!("{} outputs for {} users", dims[4], users.len()));
    }
    let mut scalar = |key: &str| -> Result<f64> {
        let s = lines.field(key)?;
        lines.parse::<f64>(&s, key)
    };
    let dropout = scalar("dropout")?;
    let momentum = scalar("bn_momentum")?;
    let epsilon = scalar("bn_epsilon")?;
    if !(0.0..1.0).contains(&dropout) || !(momentum > 0.0 && momentum < 1.0) || !(epsilon > 0.0 && epsilon.is_finite()) {
        return lines.fail("dropout, bn_momentum or bn_epsilon out of range");
    }

    let mut layers = Vec::with_capacity(4);
    let mut bn = None;
    for l in 0..4 {
        let (in_dim, out_dim) = (dims[l], dims[l + 1]);
        let n = l + 1;
        let weights = lines.tensor(&format!("layer{n}.weights"), out_dim, in_dim)?;
        let bias = lines.tensor(&format!("layer{n}.bias"), 1, out_dim)?;
        layers.push(Dense {
            in_dim,
            out_dim,
            weights,
            bias,
        });
        if l == 0 {
            let gamma = lines.tensor("bn.gamma", 1, out_dim)?;
            let beta = lines.tensor("bn.beta", 1, out_dim)?;
            let running_mean = lines.tensor("bn.running_mean", 1, out_dim)?;
            let running_var = lines.tensor("bn.running_var", 1, out_dim)?;
            if running_var.iter().any(|&v| v < 0.0) {
                return lines.fail("negative running variance");
            }
            bn = Some(BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                momentum,
                epsilon,
            });
        }
    }
    lines.field("end")?;

    Ok(Checkpoint {
        model: MlpModel {
            layers,
            bn: bn.expect("first layer read"),
            dropout,
        },
        stats: NormalizationStats { mean, std },
        framing,
        users,
    })
}

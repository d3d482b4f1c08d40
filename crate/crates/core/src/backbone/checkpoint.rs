//! Text checkpoint of a backbone and readout.
//!
//! ```text
//! mtflab-checkpoint 1
//! backbone tanh 4,32,16
//! readout 16 1
//! tensor backbone.0.weight 32x4
//! <one line per row, values in shortest round-trip exponent form>
//! tensor backbone.0.bias 32
//! ...
//! end
//! ```
//! Every value is written with `{:e}`, which Rust guarantees to parse back to the
//! identical `f64`, so a load reproduces the parameters bit for bit.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::{Activation, Backbone, BackboneError, Readout};

const MAGIC: &str = "mtflab-checkpoint";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut out: W, bb: &Backbone, ro: &Readout) -> Result<(), BackboneError> {
    let mut s = String::new();
    let dims: Vec<String> = bb.dims().iter().map(|d| d.to_string()).collect();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "backbone {} {}", bb.activation().name(), dims.join(","));
    let _ = writeln!(s, "readout {} {}", ro.d_in(), ro.d_out());
    for l in 0..bb.n_layers() {
        let (n_in, n_out) = (bb.dims()[l], bb.dims()[l + 1]);
        let p = &bb.params()[bb.layer_range(l)];
        write_tensor(&mut s, &format!("backbone.{l}.weight"), n_out, n_in, &p[..n_in * n_out]);
        write_tensor(&mut s, &format!("backbone.{l}.bias"), 1, n_out, &p[n_in * n_out..]);
    }
    let (n_in, n_out) = (ro.d_in(), ro.d_out());
    write_tensor(&mut s, "readout.weight", n_out, n_in, &ro.params()[..n_in * n_out]);
    write_tensor(&mut s, "readout.bias", 1, n_out, &ro.params()[n_in * n_out..]);
    s.push_str("end\n");
    out.write_all(s.as_bytes()).map_err(|e| BackboneError::Checkpoint(e.to_string()))
}

fn write_tensor(s: &mut String, name: &str, rows: usize, cols: usize, values: &[f64]) {
    if rows == 1 {
        let _ = writeln!(s, "tensor {name} {cols}");
    } else {
        let _ = writeln!(s, "tensor {name} {rows}x{cols}");
    }
    for r in 0..rows {
        let line: Vec<String> = values[r * cols..(r + 1) * cols].iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<(Backbone, Readout), BackboneError> {
    let bad = |msg: &str| BackboneError::Checkpoint(msg.to_string());
    let mut lines = input.lines().map(|l| l.map_err(|e| BackboneError::Checkpoint(e.to_string())));
    let mut next = move || lines.next().unwrap_or_else(|| Err(bad("unexpected end of file")));

    let header = next()?;
    if header != format!("{MAGIC} {VERSION}") {
        return Err(BackboneError::Checkpoint(format!("unsupported header {header:?}")));
    }
    let bb_line = next()?;
    let parts: Vec<&str> = bb_line.split_whitespace().collect();
    let [ "backbone", act, dims ] = parts[..] else {
        return Err(BackboneError::Checkpoint("malformed backbone line".into()));
    };
    let activation = Activation::from_name(act).ok_or_else(|| BackboneError::Checkpoint(format!("unknown activation {act}")))?;
    let dims = dims
        .split(',')
        .map(|d| d.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| BackboneError::Checkpoint(e.to_string()))?;
    let ro_line = next()?;
    let parts: Vec<&str> = ro_line.split_whitespace().collect();
    let [ "readout", d_in, d_out ] = parts[..] else {
        return Err(BackboneError::Checkpoint("malformed readout line".into()));
    };
    let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| BackboneError::Checkpoint(e.to_string()));
    let mut ro = Readout::zeros(parse_usize(d_in)?, parse_usize(d_out)?);
    let mut bb = Backbone::zeros(&dims, activation)?;

    let mut bb_params = Vec::with_capacity(bb.n_params());
    let mut ro_params = Vec::with_capacity(ro.n_params());
    loop {
        let line = next()?;
        if line == "end" {
            break;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let ["tensor", name, shape] = parts[..] else {
            return Err(BackboneError::Checkpoint(format!("expected tensor header, got {line:?}")));
        };
        let (rows, cols) = match shape.split_once('x') {
            Some((r, c)) => (parse_usize(r)?, parse_usize(c)?),
            None => (1, parse_usize(shape)?),
        };
        let target = if name.starts_with("backbone.") { &mut bb_params } else { &mut ro_params };
        for _ in 0..rows {
            let row = next()?;
            let values = row
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| BackboneError::Checkpoint(format!("{name}: {e}")))?;
            if values.len() != cols {
                return Err(BackboneError::Checkpoint(format!("{name}: row has {} values, expected {cols}", values.len())));
            }
            target.extend(values);
        }
    }
    bb.set_params(&bb_params)?;
    ro.set_params(&ro_params)?;
    Ok((bb, ro))
}

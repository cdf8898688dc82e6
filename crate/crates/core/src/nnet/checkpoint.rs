//! Model checkpoints as CSV with a header row:
//!
//! ```text
//! kind,layer,rows,cols,data
//! sizes,encoder,1,3,2 32 8
//! p_min,classifier,1,1,0.000001
//! weight,0,2,32,<row-major values separated by spaces>
//! bias,0,1,32,...
//! ...
//! weight,classifier,8,3,...
//! bias,classifier,1,3,...
//! ```
//!
//! Encoder layers appear in order, weight before bias; floats use the
//! shortest representation that parses back to the same value.

use std::fs;
use std::path::Path;

use super::model::{Classifier, Dense, Mlp};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const HEADER: &str = "kind,layer,rows,cols,data";

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn tensor_line(kind: &str, layer: &str, m: &Matrix) -> String {
    format!("{kind},{layer},{},{},{}\n", m.rows(), m.cols(), join(m.data()))
}

pub fn checkpoint_to_string(encoder: &Mlp, classifier: &Classifier) -> String {
    let sizes: Vec<f64> = encoder.sizes().iter().map(|&s| s as f64).collect();
    let mut out = format!("{HEADER}\n");
    out.push_str(&format!("sizes,encoder,1,{},{}\n", sizes.len(), join(&sizes)));
    out.push_str(&format!("p_min,classifier,1,1,{}\n", classifier.p_min()));
    for (i, l) in encoder.layers().iter().enumerate() {
        out.push_str(&tensor_line("weight", &i.to_string(), &l.weight));
        out.push_str(&tensor_line("bias", &i.to_string(), &l.bias));
    }
    out.push_str(&tensor_line("weight", "classifier", &classifier.layer.weight));
    out.push_str(&tensor_line("bias", "classifier", &classifier.layer.bias));
    out
}

pub fn save_checkpoint(path: &Path, encoder: &Mlp, classifier: &Classifier) -> Result<()> {
    fs::write(path, checkpoint_to_string(encoder, classifier)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Mlp, Classifier)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text)
}

struct Record {
    line: usize,
    kind: String,
    layer: String,
    matrix: Matrix,
}

fn parse_record(line_no: usize, line: &str) -> Result<Record> {
    let fields: Vec<&str> = line.splitn(5, ',').collect();
    if fields.len() != 5 {
        return Err(Error::parse(line_no, format!("expected 5 fields, found {}", fields.len())));
    }
    let dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| Error::parse(line_no, format!("bad dimension `{s}`: {e}")))
    };
    let (rows, cols) = (dim(fields[2])?, dim(fields[3])?);
    let data = fields[4]
        .split_whitespace()
        .map(|v| {
            v.parse::<f64>()
                .map_err(|e| Error::parse(line_no, format!("bad value `{v}`: {e}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let matrix = Matrix::from_vec(rows, cols, data)
        .map_err(|e| Error::parse(line_no, e.to_string()))?;
    Ok(Record {
        line: line_no,
        kind: fields[0].to_string(),
        layer: fields[1].to_string(),
        matrix,
    })
}

pub fn parse_checkpoint(text: &str) -> Result<(Mlp, Classifier)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        Some((i, _)) => return Err(Error::parse(i + 1, format!("expected header `{HEADER}`"))),
        None => return Err(Error::parse(0, "empty checkpoint")),
    }
    let records = lines
        .map(|(i, l)| parse_record(i + 1, l.trim()))
        .collect::<Result<Vec<_>>>()?;
    let mut iter = records.into_iter();
    let mut expect = |kind: &str, layer: &str| -> Result<Record> {
        match iter.next() {
            Some(r) if r.kind == kind && r.layer == layer => Ok(r),
            Some(r) => Err(Error::parse(
                r.line,
                format!("expected `{kind},{layer}`, found `{},{}`", r.kind, r.layer),
            )),
            None => Err(Error::parse(0, format!("missing `{kind},{layer}` record"))),
        }
    };
    let sizes = expect("sizes", "encoder")?;
    let p_min = expect("p_min", "classifier")?.matrix.data()[0];
    let n_layers = sizes.matrix.data().len().saturating_sub(1);
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let weight = expect("weight", &i.to_string())?.matrix;
        let bias = expect("bias", &i.to_string())?.matrix;
        layers.push(Dense { weight, bias });
    }
    let encoder = Mlp::from_layers(layers)?;
    let declared: Vec<usize> = sizes.matrix.data().iter().map(|&s| s as usize).collect();
    if encoder.sizes() != declared {
        return Err(Error::parse(
            sizes.line,
            format!("declared sizes {declared:?} but layers give {:?}", encoder.sizes()),
        ));
    }
    let weight = expect("weight", "classifier")?.matrix;
    let bias = expect("bias", "classifier")?.matrix;
    let classifier = Classifier::from_layer(Dense { weight, bias }, p_min)?;
    if classifier.input_dim() != encoder.output_dim() {
        return Err(Error::ShapeMismatch("classifier input does not match encoder output".into()));
    }
    Ok((encoder, classifier))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn roundtrip_is_exact() {
        let mut r = rng::seeded(11);
        let enc = Mlp::new(&[2, 5, 3], &mut r).unwrap();
        let cls = Classifier::new(3, 4, 1e-6, &mut r).unwrap();
        let text = checkpoint_to_string(&enc, &cls);
        let (enc2, cls2) = parse_checkpoint(&text).unwrap();
        assert_eq!(enc, enc2);
        assert_eq!(cls, cls2);
        assert!(text.starts_with("kind,layer,rows,cols,data\nsizes,encoder,1,3,2 5 3\n"));
    }

    #[test]
    fn malformed_inputs() {
        assert!(parse_checkpoint("").is_err());
        assert!(parse_checkpoint("bogus\n").is_err());
        let mut r = rng::seeded(1);
        let enc = Mlp::new(&[2, 3], &mut r).unwrap();
        let cls = Classifier::new(3, 2, 1e-6, &mut r).unwrap();
        let text = checkpoint_to_string(&enc, &cls).replace("weight,0,2,3", "weight,0,3,2");
        assert!(matches!(parse_checkpoint(&text), Err(Error::ShapeMismatch(_))));
    }
}

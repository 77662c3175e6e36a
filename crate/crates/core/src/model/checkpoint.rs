//! Checkpoint files.
//!
//! Layout, little-endian: magic `OBCK`, `u32` layer count, `u32 rows, u32 cols`
//! per layer, then the student parameters followed by the teacher parameters
//! as `f32`. Within a parameter set each layer stores its `rows x cols`
//! weight matrix row-major followed by its `rows` biases.
//!
//! Parameters live in memory as `f64`; saving narrows them to `f32`, so a
//! round trip is exact for any state that was itself loaded from a file.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::mlp::{Architecture, ClassifierState, Dense, Params};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"OBCK";

pub fn checkpoint_to_bytes(state: &ClassifierState) -> Vec<u8> {
    let layers = &state.student.layers;
    let mut out = Vec::with_capacity(8 + layers.len() * 8 + 2 * state.student.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for layer in layers {
        out.extend_from_slice(&(layer.weight.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.weight.ncols() as u32).to_le_bytes());
    }
    for v in state.student.iter().chain(state.teacher.iter()) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ClassifierState> {
    let mut cursor = Cursor { bytes, at: 0 };
    if cursor.take(4)? != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"OBCK\""));
    }
    let n_layers = cursor.u32()? as usize;
    if n_layers == 0 {
        return Err(Error::format(4, "checkpoint has no layers"));
    }
    let mut shapes = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let at = cursor.at;
        let rows = cursor.u32()? as usize;
        let cols = cursor.u32()? as usize;
        if rows == 0 || cols == 0 {
            return Err(Error::format(at, format!("layer {l} has an empty dimension")));
        }
        if let Some(&(prev_rows, _)) = shapes.last() {
            if prev_rows != cols {
                return Err(Error::format(at, format!("layer {l} takes {cols} inputs but layer {} emits {prev_rows}", l - 1)));
            }
        }
        shapes.push((rows, cols));
    }
    let student = read_params(&mut cursor, &shapes)?;
    let teacher = read_params(&mut cursor, &shapes)?;
    if cursor.at != bytes.len() {
        return Err(Error::format(cursor.at, "trailing bytes after teacher parameters"));
    }
    ClassifierState::from_parts(student, teacher)
}

fn read_params(cursor: &mut Cursor<'_>, shapes: &[(usize, usize)]) -> Result<Params> {
    let mut layers = Vec::with_capacity(shapes.len());
    for &(rows, cols) in shapes {
        let weight = (0..rows * cols).map(|_| cursor.f32()).collect::<Result<Vec<_>>>()?;
        let bias = (0..rows).map(|_| cursor.f32()).collect::<Result<Vec<_>>>()?;
        layers.push(Dense {
            weight: Array2::from_shape_vec((rows, cols), weight).expect("length checked"),
            bias: Array1::from_vec(bias),
        });
    }
    Ok(Params { layers })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::format(self.at, "unexpected end of checkpoint"));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Result<f64> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
    }
}

pub fn save_checkpoint(state: &ClassifierState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_to_bytes(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ClassifierState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

/// Loads a checkpoint and checks it fits `input` features and `classes` outputs.
///
/// When `expected` hidden widths are given they must match too.
pub fn load_checkpoint_for(
    path: impl AsRef<Path>,
    input: usize,
    classes: usize,
    expected_hidden: Option<&[usize]>,
) -> Result<ClassifierState> {
    let state = load_checkpoint(path)?;
    let arch: Architecture = state.architecture();
    if arch.input != input || arch.classes != classes {
        return Err(Error::Checkpoint(format!(
            "checkpoint maps {} features to {} classes, the task has {input} features and {classes} classes",
            arch.input, arch.classes
        )));
    }
    if let Some(hidden) = expected_hidden {
        if arch.hidden != hidden {
            return Err(Error::Checkpoint(format!(
                "checkpoint hidden widths {:?} differ from configured {hidden:?}",
                arch.hidden
            )));
        }
    }
    Ok(state)
}

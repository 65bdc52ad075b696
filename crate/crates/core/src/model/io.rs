//! JSON weight files.
//!
//! ```text
//! { "arch":   { "sizes": [d, h1, ..., K], "activations": ["relu", ...] },
//!   "layers": [ { "rows": h1, "cols": d, "weights": [...row-major...], "bias": [...] }, ... ],
//!   "head":   "softmax" | "sigmoid" | "identity" }
//! ```
//!
//! Floats are written in shortest round-trip form and parsed exactly, so a
//! save/load cycle reproduces predictions bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Dense, Head, Mlp};
use crate::error::{FansError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchDescriptor {
    pub sizes: Vec<usize>,
    pub activations: Vec<Activation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub arch: ArchDescriptor,
    pub layers: Vec<Dense>,
    pub head: Head,
}

impl From<&Mlp> for ModelFile {
    fn from(m: &Mlp) -> Self {
        let mut sizes = vec![m.layers[0].cols];
        sizes.extend(m.layers.iter().map(|l| l.rows));
        ModelFile {
            arch: ArchDescriptor {
                sizes,
                activations: m.activations.clone(),
            },
            layers: m.layers.clone(),
            head: m.head,
        }
    }
}

impl TryFrom<ModelFile> for Mlp {
    type Error = FansError;

    fn try_from(file: ModelFile) -> Result<Self> {
        let sizes = &file.arch.sizes;
        if sizes.len() != file.layers.len() + 1 {
            return Err(FansError::Parse {
                field: "arch.sizes".into(),
                message: format!(
                    "{} sizes listed for {} layers (expected {})",
                    sizes.len(),
                    file.layers.len(),
                    file.layers.len() + 1
                ),
            });
        }
        for (i, layer) in file.layers.iter().enumerate() {
            if layer.cols != sizes[i] || layer.rows != sizes[i + 1] {
                return Err(FansError::Layer {
                    layer: i,
                    message: format!(
                        "shape {}x{} disagrees with arch.sizes ({} -> {})",
                        layer.rows,
                        layer.cols,
                        sizes[i],
                        sizes[i + 1]
                    ),
                });
            }
        }
        Mlp::new(file.layers, file.arch.activations, file.head)
    }
}

impl Mlp {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from(self)).expect("model serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ModelFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            FansError::Parse {
                field,
                message: e.into_inner().to_string(),
            }
        })?;
        Mlp::try_from(file)
    }
}

pub fn save_model(model: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_json()).map_err(|e| FansError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Mlp> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| FansError::io(path, e))?;
    Mlp::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{predict, Predictor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_model() -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = |rows: usize, cols: usize| {
            Dense::new(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
                (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
        };
        Mlp::new(vec![layer(7, 4), layer(3, 7)], vec![Activation::Tanh], Head::Softmax).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x: Vec<f64> = (0..m.input_dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
            assert_eq!(predict(&m, &x).unwrap(), predict(&back, &x).unwrap());
        }
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let text = sample_model().to_json();
        let cut = &text[..text.len() / 2];
        assert!(matches!(Mlp::from_json(cut), Err(FansError::Parse { .. })));
    }

    #[test]
    fn parse_error_names_the_field() {
        let text = sample_model().to_json().replacen("\"bias\"", "\"bais\"", 1);
        match Mlp::from_json(&text) {
            Err(FansError::Parse { field, .. }) => assert!(field.starts_with("layers[0]"), "{field}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mismatched_layer_shapes_name_the_layer() {
        let mut file = ModelFile::from(&sample_model());
        file.layers[1].cols = 6;
        file.layers[1].weights.truncate(18);
        file.arch.sizes = vec![4, 7, 3];
        let text = serde_json::to_string(&file).unwrap();
        match Mlp::from_json(&text) {
            Err(FansError::Layer { layer, .. }) => assert_eq!(layer, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}

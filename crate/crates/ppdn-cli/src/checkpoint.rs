//! Binary checkpoint format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic            8 bytes  "PPDNCKPT"
//! format version   u32      currently 1
//! config hash      32 bytes SHA-256 of the experiment config
//! seed             u64
//! input_dim        u32
//! hidden count     u32, then that many u32 widths
//! num_classes      u32
//! omega count      u32, then that many u32 indices
//! activation       u8       0 = relu
//! parameters       per layer in order: weight row-major f64s, then bias f64s
//! ```

use std::io::Read;
use std::path::Path;

use ppdn::network::{Activation, Layer, NetworkConfig, NetworkParams};
use ppdn::tensor::Tensor;

use crate::CliError;

const MAGIC: &[u8; 8] = b"PPDNCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub seed: u64,
    pub network: NetworkConfig,
    pub params: NetworkParams,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&self.config_hash);
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&(self.network.input_dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.network.hidden_dims.len() as u32).to_le_bytes());
        for &d in &self.network.hidden_dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.network.num_classes as u32).to_le_bytes());
        buf.extend_from_slice(&(self.network.omega_layers.len() as u32).to_le_bytes());
        for &l in &self.network.omega_layers {
            buf.extend_from_slice(&(l as u32).to_le_bytes());
        }
        buf.push(0u8); // relu
        for layer in &self.params.layers {
            for v in layer.weight.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in layer.bias.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, buf)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bad = |message: String| CliError::Config(format!("{}: {message}", path.display()));
        let mut file = std::fs::File::open(path)
            .map_err(|e| bad(format!("cannot open: {e}")))?;
        let mut data = Vec::new();
        file.read_to_end(&mut data)
            .map_err(|e| bad(format!("cannot read: {e}")))?;
        let mut cursor = data.as_slice();

        let mut take = |n: usize| -> Result<&[u8], CliError> {
            if cursor.len() < n {
                return Err(bad("truncated checkpoint".into()));
            }
            let (head, tail) = cursor.split_at(n);
            cursor = tail;
            Ok(head)
        };
        let magic = take(8)?;
        if magic != MAGIC {
            return Err(bad("bad magic; not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(take(32)?);
        let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());

        let input_dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let hidden_count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut hidden_dims = Vec::with_capacity(hidden_count);
        for _ in 0..hidden_count {
            hidden_dims.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
        }
        let num_classes = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let omega_count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut omega_layers = std::collections::BTreeSet::new();
        for _ in 0..omega_count {
            omega_layers.insert(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
        }
        let activation = take(1)?[0];
        if activation != 0 {
            return Err(bad(format!("unknown activation tag {activation}")));
        }

        let network = NetworkConfig {
            input_dim,
            hidden_dims,
            num_classes,
            activation: Activation::Relu,
            omega_layers,
        };
        network
            .validate()
            .map_err(|e| bad(format!("invalid embedded network config: {e}")))?;

        let mut layers = Vec::new();
        for w in network.dims().windows(2) {
            let (rows, cols) = (w[0], w[1]);
            let mut weight = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                weight.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
            }
            let mut bias = Vec::with_capacity(cols);
            for _ in 0..cols {
                bias.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
            }
            layers.push(Layer {
                weight: Tensor::matrix(rows, cols, weight)
                    .map_err(|e| bad(e.to_string()))?,
                bias: Tensor::vector(bias),
            });
        }
        if !cursor.is_empty() {
            return Err(bad(format!("{} trailing bytes", cursor.len())));
        }
        Ok(Checkpoint {
            config_hash,
            seed,
            network,
            params: NetworkParams { layers },
        })
    }
}

/// Writes `buf` then renames into place so readers never see a torn file.
pub fn save_atomic(checkpoint: &Checkpoint, path: &Path) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    checkpoint.save(&tmp)?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Config(format!("cannot move checkpoint into place: {e}")))
}

//! VGG-style volumetric encoder with a projection head.
//!
//! Layout: `blocks × [(conv3³ → relu) × convs_per_block → maxpool2]`, then
//! flatten, `dense → relu` giving the penultimate representation `h`, then
//! `dense → l2_normalize` giving the projection `z` the contrastive loss sees.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{
    conv3d_backward, conv3d_forward, dense_backward, dense_forward, l2_normalize_backward,
    l2_normalize_forward, maxpool3d_backward, maxpool3d_forward, relu_backward, relu_forward,
    Tensor,
};
use crate::volume_io::write_atomic;

pub const KERNEL_SIDE: usize = 3;
pub const CHECKPOINT_MAGIC: &[u8; 7] = b"DCKPT1\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub patch_side: usize,
    pub channels: Vec<usize>,
    pub convs_per_block: usize,
    pub h_dim: usize,
    pub z_dim: usize,
    pub init_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            patch_side: 16,
            channels: vec![8, 16, 32],
            convs_per_block: 2,
            h_dim: 64,
            z_dim: 32,
            init_seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let blocks = self.channels.len();
        if blocks == 0 || self.channels[0] == 0 {
            return Err(Error::invalid("encoder config", "channels must be non-empty and positive"));
        }
        if self.channels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "encoder config",
                format!("channels must be strictly increasing, got {:?}", self.channels),
            ));
        }
        if blocks >= usize::BITS as usize || self.patch_side == 0 || self.patch_side % (1 << blocks) != 0 {
            return Err(Error::invalid(
                "encoder config",
                format!(
                    "patch_side {} must be a positive multiple of 2^{blocks}",
                    self.patch_side
                ),
            ));
        }
        if self.convs_per_block == 0 {
            return Err(Error::invalid("encoder config", "convs_per_block must be >= 1"));
        }
        if self.h_dim < 2 || self.z_dim < 2 {
            return Err(Error::invalid("encoder config", "h_dim and z_dim must be >= 2"));
        }
        Ok(())
    }

    pub fn blocks(&self) -> usize {
        self.channels.len()
    }

    /// Side of the feature map after the last pooling stage.
    pub fn final_side(&self) -> usize {
        self.patch_side >> self.blocks()
    }

    pub fn flat_dim(&self) -> usize {
        self.channels[self.blocks() - 1] * self.final_side().pow(3)
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let k = KERNEL_SIDE;
        let mut shapes = Vec::new();
        let mut c_in = 1;
        for (b, &c_out) in self.channels.iter().enumerate() {
            for j in 0..self.convs_per_block {
                shapes.push((format!("block{b}.conv{j}.weight"), vec![c_out, c_in, k, k, k]));
                shapes.push((format!("block{b}.conv{j}.bias"), vec![c_out]));
                c_in = c_out;
            }
        }
        shapes.push(("h.weight".into(), vec![self.h_dim, self.flat_dim()]));
        shapes.push(("h.bias".into(), vec![self.h_dim]));
        shapes.push(("z.weight".into(), vec![self.z_dim, self.h_dim]));
        shapes.push(("z.bias".into(), vec![self.z_dim]));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Ordered, named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    tensors: Vec<(String, Tensor)>,
}

impl EncoderParams {
    /// He-uniform weights (bound `√(6/fan_in)`), zero biases.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = cfg
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let mut t = Tensor::zeros(&shape);
                if name.ends_with(".weight") {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    for v in t.data_mut() {
                        *v = rng.random_range(-bound..=bound);
                    }
                }
                (name, t)
            })
            .collect();
        Ok(EncoderParams { tensors })
    }

    /// Zero tensors with the shapes `cfg` prescribes.
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        EncoderParams {
            tensors: cfg
                .param_shapes()
                .into_iter()
                .map(|(name, shape)| (name, Tensor::zeros(&shape)))
                .collect(),
        }
    }

    pub fn from_named(cfg: &EncoderConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let expected = cfg.param_shapes();
        if expected.len() != tensors.len() {
            return Err(Error::shape(
                "encoder params",
                format!("config needs {} tensors, got {}", expected.len(), tensors.len()),
            ));
        }
        for ((en, es), (n, t)) in expected.iter().zip(&tensors) {
            if en != n || es.as_slice() != t.shape() {
                return Err(Error::shape(
                    "encoder params",
                    format!("config expects {en} {es:?}, got {n} {:?}", t.shape()),
                ));
            }
        }
        Ok(EncoderParams { tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.tensors.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    fn at(&self, i: usize) -> &Tensor {
        &self.tensors[i].1
    }
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    conv_inputs: Vec<Tensor>,
    conv_outputs: Vec<Tensor>,
    pool_inputs: Vec<Tensor>,
    flat: Tensor,
    h_pre: Tensor,
    h: Tensor,
    z_pre: Tensor,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub h: Tensor,
    pub z: Tensor,
    pub cache: ForwardCache,
}

#[derive(Clone, Debug)]
pub struct EncoderGrads {
    /// Aligned with [`EncoderParams`] storage order.
    pub params: Vec<Tensor>,
    pub d_input: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: EncoderParams,
}

impl Encoder {
    pub fn new(config: EncoderConfig, params: EncoderParams) -> Result<Self> {
        config.validate()?;
        let params = EncoderParams::from_named(&config, params.tensors)?;
        Ok(Encoder { config, params })
    }

    /// Fresh encoder initialized from `config.init_seed`.
    pub fn init(config: EncoderConfig) -> Result<Self> {
        let params = EncoderParams::init(&config, config.init_seed)?;
        Ok(Encoder { config, params })
    }

    fn conv_count(&self) -> usize {
        self.config.blocks() * self.config.convs_per_block
    }

    fn check_patch(&self, patch: &Tensor) -> Result<Tensor> {
        let s = self.config.patch_side;
        match patch.shape() {
            [a, b, c] if [*a, *b, *c] == [s, s, s] => patch.clone().reshape(&[1, s, s, s]),
            [1, a, b, c] if [*a, *b, *c] == [s, s, s] => Ok(patch.clone()),
            other => Err(Error::shape(
                "encoder forward",
                format!("patch shape {other:?}, expected [1, {s}, {s}, {s}]"),
            )),
        }
    }

    pub fn forward(&self, patch: &Tensor) -> Result<ForwardOutput> {
        let mut x = self.check_patch(patch)?;
        let convs = self.conv_count();
        let mut cache = ForwardCache {
            conv_inputs: Vec::with_capacity(convs),
            conv_outputs: Vec::with_capacity(convs),
            pool_inputs: Vec::with_capacity(self.config.blocks()),
            flat: Tensor::zeros(&[1]),
            h_pre: Tensor::zeros(&[1]),
            h: Tensor::zeros(&[1]),
            z_pre: Tensor::zeros(&[1]),
        };
        let mut p = 0;
        for _ in 0..self.config.blocks() {
            for _ in 0..self.config.convs_per_block {
                let y = conv3d_forward(&x, self.params.at(2 * p), self.params.at(2 * p + 1))?;
                let a = relu_forward(&y);
                cache.conv_inputs.push(x);
                cache.conv_outputs.push(y);
                x = a;
                p += 1;
            }
            let pooled = maxpool3d_forward(&x)?;
            cache.pool_inputs.push(x);
            x = pooled;
        }
        let flat = x.reshape(&[self.config.flat_dim()])?;
        let base = 2 * convs;
        let h_pre = dense_forward(&flat, self.params.at(base), self.params.at(base + 1))?;
        let h = relu_forward(&h_pre);
        let z_pre = dense_forward(&h, self.params.at(base + 2), self.params.at(base + 3))?;
        let z = l2_normalize_forward(&z_pre)?;
        cache.flat = flat;
        cache.h_pre = h_pre;
        cache.h = h.clone();
        cache.z_pre = z_pre;
        Ok(ForwardOutput { h, z, cache })
    }

    /// Penultimate representation only.
    pub fn embed(&self, patch: &Tensor) -> Result<Tensor> {
        Ok(self.forward(patch)?.h)
    }

    /// Exact gradients for upstream `d_z` (on the unit projection) and `d_h`
    /// (added at the penultimate junction).
    pub fn backward(&self, cache: &ForwardCache, d_z: &Tensor, d_h: &Tensor) -> Result<EncoderGrads> {
        let cfg = &self.config;
        if cache.conv_inputs.len() != self.conv_count()
            || cache.flat.len() != cfg.flat_dim()
            || cache.h.len() != cfg.h_dim
            || cache.z_pre.len() != cfg.z_dim
        {
            return Err(Error::shape("encoder backward", "cache does not match this encoder"));
        }
        if d_z.shape() != [cfg.z_dim] || d_h.shape() != [cfg.h_dim] {
            return Err(Error::shape(
                "encoder backward",
                format!(
                    "d_z {:?} / d_h {:?}, expected [{}] / [{}]",
                    d_z.shape(),
                    d_h.shape(),
                    cfg.z_dim,
                    cfg.h_dim
                ),
            ));
        }
        let convs = self.conv_count();
        let base = 2 * convs;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.params.len()];

        let dz_pre = l2_normalize_backward(&cache.z_pre, d_z)?.d_input;
        let gz = dense_backward(&cache.h, self.params.at(base + 2), &dz_pre)?;
        let [dwz, dbz]: [Tensor; 2] = gz.d_params.try_into().expect("dense has two params");
        grads[base + 2] = Some(dwz);
        grads[base + 3] = Some(dbz);

        let mut dh = gz.d_input;
        dh.add_assign(d_h)?;
        let dh_pre = relu_backward(&cache.h_pre, &dh)?.d_input;
        let gh = dense_backward(&cache.flat, self.params.at(base), &dh_pre)?;
        let [dwh, dbh]: [Tensor; 2] = gh.d_params.try_into().expect("dense has two params");
        grads[base] = Some(dwh);
        grads[base + 1] = Some(dbh);

        let last_c = cfg.channels[cfg.blocks() - 1];
        let f = cfg.final_side();
        let mut d = gh.d_input.reshape(&[last_c, f, f, f])?;
        let mut p = convs;
        for b in (0..cfg.blocks()).rev() {
            d = maxpool3d_backward(&cache.pool_inputs[b], &d)?.d_input;
            for _ in 0..cfg.convs_per_block {
                p -= 1;
                d = relu_backward(&cache.conv_outputs[p], &d)?.d_input;
                let g = conv3d_backward(&cache.conv_inputs[p], self.params.at(2 * p), &d)?;
                let [dw, db]: [Tensor; 2] = g.d_params.try_into().expect("conv has two params");
                grads[2 * p] = Some(dw);
                grads[2 * p + 1] = Some(db);
                d = g.d_input;
            }
        }
        Ok(EncoderGrads {
            params: grads.into_iter().map(|g| g.expect("every parameter visited")).collect(),
            d_input: d,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.config)?;
        write_tensor_file(path, &json, self.params.iter())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (json, tensors) = read_tensor_file(path)?;
        let config: EncoderConfig = serde_json::from_str(&json).map_err(|e| {
            Error::format(path.display().to_string(), CHECKPOINT_MAGIC.len() as u64, format!("config line: {e}"))
        })?;
        config.validate()?;
        let params = EncoderParams::from_named(&config, tensors).map_err(|e| match e {
            Error::Shape { detail, .. } => Error::shape(
                "checkpoint",
                format!("{}: config/shape disagreement: {detail}", path.display()),
            ),
            other => other,
        })?;
        Ok(Encoder { config, params })
    }
}

/// Serializes `magic, json line, [u32 name_len, name, u32 rank, u64 extents…, f64 data…]…`,
/// all little-endian.
pub fn encode_tensor_file<'a>(json: &str, tensors: impl Iterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(json.as_bytes());
    buf.push(b'\n');
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn write_tensor_file<'a>(
    path: &Path,
    json: &str,
    tensors: impl Iterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    write_atomic(path, &encode_tensor_file(json, tensors))
}

pub fn read_tensor_file(path: &Path) -> Result<(String, Vec<(String, Tensor)>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_tensor_file(&bytes, &path.display().to_string())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode_tensor_file(bytes: &[u8], context: &str) -> Result<(String, Vec<(String, Tensor)>)> {
    if !bytes.starts_with(CHECKPOINT_MAGIC) {
        return Err(Error::format(context, 0, "magic mismatch: not a DCKPT1 checkpoint"));
    }
    let start = CHECKPOINT_MAGIC.len();
    let nl = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(context, start as u64, "unterminated config line"))?;
    let json = std::str::from_utf8(&bytes[start..start + nl])
        .map_err(|_| Error::format(context, start as u64, "config line is not UTF-8"))?
        .to_string();
    let mut cur = Cursor {
        bytes,
        pos: start + nl + 1,
    };
    let mut tensors = Vec::new();
    while cur.pos < bytes.len() {
        let at = cur.pos as u64;
        let idx = tensors.len();
        let truncated = |name: &str| {
            Error::format(context, at, format!("truncated tensor `{name}`"))
        };
        let unnamed = format!("#{idx}");
        let name_len = cur.u32().ok_or_else(|| truncated(&unnamed))? as usize;
        let name = cur
            .take(name_len)
            .ok_or_else(|| truncated(&unnamed))
            .and_then(|b| {
                std::str::from_utf8(b)
                    .map(str::to_string)
                    .map_err(|_| Error::format(context, at, format!("tensor {unnamed} name is not UTF-8")))
            })?;
        let rank = cur.u32().ok_or_else(|| truncated(&name))? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::format(context, at, format!("tensor `{name}` has invalid rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let e = cur.u64().ok_or_else(|| truncated(&name))?;
            if e == 0 || e > (bytes.len() as u64) {
                return Err(Error::format(context, at, format!("tensor `{name}` has invalid extent {e}")));
            }
            shape.push(e as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::format(context, at, format!("tensor `{name}` is too large")))?;
        let raw = len
            .checked_mul(8)
            .and_then(|n| cur.take(n))
            .ok_or_else(|| truncated(&name))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok((json, tensors))
}

/// Prints the parameter layout, one tensor per line.
pub fn describe(encoder: &Encoder, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "encoder: {} parameters", encoder.config.param_count())?;
    for (name, t) in encoder.params.iter() {
        writeln!(out, "  {name:<20} {:?}", t.shape())?;
    }
    Ok(())
}

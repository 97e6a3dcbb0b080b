//! Voxel volumes, synapse tables and embedding matrices, plus their on-disk
//! formats.
//!
//! Volume file: one JSON header line
//! `{"dims":[nx,ny,nz],"dtype":"u8"|"u64","voxel_size_nm":[sx,sy,sz]}\n`
//! followed by the raw little-endian payload, x varying fastest.
//! Tables are UTF-8 CSV with `\n` line endings.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_VOXEL_SIZE_NM: [f64; 3] = [8.0, 8.0, 8.0];

/// Projected rows must have unit norm within this tolerance.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    U64,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U64 => 8,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "u8" => Some(Dtype::U8),
            "u64" => Some(Dtype::U64),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub dtype: Dtype,
    pub voxel_size_nm: [f64; 3],
}

impl VolumeHeader {
    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(format!("dims must be >= 1, got {:?}", self.dims));
        }
        if self
            .dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(self.dtype.width()))
            .is_none()
        {
            return Err(format!("dims {:?} overflow", self.dims));
        }
        if self.voxel_size_nm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(format!("voxel sizes must be > 0, got {:?}", self.voxel_size_nm));
        }
        Ok(())
    }

    fn same_geometry(&self, other: &VolumeHeader) -> bool {
        self.dims == other.dims && self.voxel_size_nm == other.voxel_size_nm
    }
}

/// Element type of a volume payload.
pub trait Voxel: Copy + Default + PartialEq + std::fmt::Debug + Send + Sync + 'static {
    const DTYPE: Dtype;
    fn put_le(self, buf: &mut Vec<u8>);
    fn from_le(bytes: &[u8]) -> Self;
}

impl Voxel for u8 {
    const DTYPE: Dtype = Dtype::U8;
    fn put_le(self, buf: &mut Vec<u8>) {
        buf.push(self);
    }
    fn from_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

impl Voxel for u64 {
    const DTYPE: Dtype = Dtype::U64;
    fn put_le(self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&self.to_le_bytes());
    }
    fn from_le(bytes: &[u8]) -> Self {
        u64::from_le_bytes(bytes.try_into().expect("8-byte voxel"))
    }
}

/// A 3D grid stored x-fastest: `index(x,y,z) = x + nx·(y + ny·z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    header: VolumeHeader,
    voxels: Vec<T>,
}

pub type IntensityVolume = Volume<u8>;
/// Label 0 means unsegmented.
pub type SegmentationVolume = Volume<u64>;

impl<T: Voxel> Volume<T> {
    pub fn new(dims: [usize; 3], voxel_size_nm: [f64; 3], voxels: Vec<T>) -> Result<Self> {
        let header = VolumeHeader {
            dims,
            dtype: T::DTYPE,
            voxel_size_nm,
        };
        header
            .validate()
            .map_err(|e| Error::invalid("volume", e))?;
        if voxels.len() != header.voxel_count() {
            return Err(Error::invalid(
                "volume",
                format!(
                    "payload length mismatch: dims {dims:?} need {} voxels, got {}",
                    header.voxel_count(),
                    voxels.len()
                ),
            ));
        }
        Ok(Volume { header, voxels })
    }

    pub fn filled(dims: [usize; 3], voxel_size_nm: [f64; 3], value: T) -> Result<Self> {
        let n = dims.iter().product();
        Volume::new(dims, voxel_size_nm, vec![value; n])
    }

    pub fn header(&self) -> &VolumeHeader {
        &self.header
    }

    pub fn dims(&self) -> [usize; 3] {
        self.header.dims
    }

    pub fn voxel_size_nm(&self) -> [f64; 3] {
        self.header.voxel_size_nm
    }

    pub fn voxels(&self) -> &[T] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [T] {
        &mut self.voxels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        let [nx, ny, _] = self.header.dims;
        x + nx * (y + ny * z)
    }

    pub fn contains(&self, pos: [i64; 3]) -> bool {
        pos.iter()
            .zip(self.header.dims)
            .all(|(&p, d)| p >= 0 && (p as u64) < d as u64)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.voxels[self.index(x, y, z)]
    }

    /// `None` outside the volume.
    pub fn get_signed(&self, pos: [i64; 3]) -> Option<T> {
        self.contains(pos)
            .then(|| self.get(pos[0] as usize, pos[1] as usize, pos[2] as usize))
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: T) {
        let i = self.index(x, y, z);
        self.voxels[i] = value;
    }

    pub fn same_geometry<U: Voxel>(&self, other: &Volume<U>) -> bool {
        self.header.same_geometry(&other.header)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = serde_json::to_vec(&self.header).expect("header serializes");
        buf.push(b'\n');
        buf.reserve(self.voxels.len() * T::DTYPE.width());
        for &v in &self.voxels {
            v.put_le(&mut buf);
        }
        buf
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnyVolume {
    Intensity(IntensityVolume),
    Segmentation(SegmentationVolume),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHeader {
    dims: [usize; 3],
    dtype: String,
    voxel_size_nm: [f64; 3],
}

/// Parses a complete volume file image.
pub fn decode_volume(bytes: &[u8], context: &str) -> Result<AnyVolume> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(context, 0, "malformed header: missing newline terminator"))?;
    let raw: RawHeader = serde_json::from_slice(&bytes[..nl]).map_err(|e| {
        Error::format(
            context,
            e.column().saturating_sub(1) as u64,
            format!("malformed header: {e}"),
        )
    })?;
    let dtype = Dtype::parse(&raw.dtype).ok_or_else(|| {
        let at = find(&bytes[..nl], b"\"dtype\"").unwrap_or(0);
        Error::format(context, at as u64, format!("unknown dtype {:?}", raw.dtype))
    })?;
    let header = VolumeHeader {
        dims: raw.dims,
        dtype,
        voxel_size_nm: raw.voxel_size_nm,
    };
    header
        .validate()
        .map_err(|e| Error::format(context, 0, format!("malformed header: {e}")))?;
    let payload = &bytes[nl + 1..];
    let expected = header.voxel_count() * dtype.width();
    if payload.len() != expected {
        return Err(Error::format(
            context,
            (nl + 1) as u64,
            format!(
                "payload length mismatch: header needs {expected} bytes, found {}",
                payload.len()
            ),
        ));
    }
    Ok(match dtype {
        Dtype::U8 => AnyVolume::Intensity(Volume {
            header,
            voxels: payload.to_vec(),
        }),
        Dtype::U64 => AnyVolume::Segmentation(Volume {
            header,
            voxels: payload.chunks_exact(8).map(<u64 as Voxel>::from_le).collect(),
        }),
    })
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

pub fn read_volume(path: &Path) -> Result<AnyVolume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes, &path.display().to_string())
}

pub fn read_intensity(path: &Path) -> Result<IntensityVolume> {
    match read_volume(path)? {
        AnyVolume::Intensity(v) => Ok(v),
        AnyVolume::Segmentation(_) => Err(Error::format(
            path.display().to_string(),
            0,
            "expected a u8 intensity volume, found u64",
        )),
    }
}

pub fn read_segmentation(path: &Path) -> Result<SegmentationVolume> {
    match read_volume(path)? {
        AnyVolume::Segmentation(v) => Ok(v),
        AnyVolume::Intensity(_) => Err(Error::format(
            path.display().to_string(),
            0,
            "expected a u64 segmentation volume, found u8",
        )),
    }
}

pub fn write_volume<T: Voxel>(vol: &Volume<T>, path: &Path) -> Result<()> {
    write_atomic(path, &vol.to_bytes())
}

/// Writes through a sibling temporary file and renames it into place, so a
/// failed write never leaves a partial file at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let tmp = path.with_file_name(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|()| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynapseRecord {
    pub id: u64,
    /// Voxel coordinates `(x, y, z)`.
    pub pos: [usize; 3],
    pub supervoxel_id: u64,
    pub class_label: Option<u32>,
}

pub const SYNAPSE_COLUMNS: [&str; 6] = ["id", "x", "y", "z", "supervoxel_id", "class_label"];

pub fn parse_synapse_table(text: &str, context: &str) -> Result<Vec<SynapseRecord>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::table(context, 1, "empty file, expected a header"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(SYNAPSE_COLUMNS) {
        *slot = cols
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::table(context, 1, format!("missing column `{name}`")))?;
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::table(
                context,
                lineno,
                format!("expected {} fields, found {}", cols.len(), fields.len()),
            ));
        }
        let int = |c: usize| -> Result<u64> {
            let s = fields[idx[c]].trim();
            s.parse::<u64>().map_err(|_| {
                Error::table(
                    context,
                    lineno,
                    format!("non-integer field `{}`: {s:?}", SYNAPSE_COLUMNS[c]),
                )
            })
        };
        let id = int(0)?;
        let pos = [int(1)? as usize, int(2)? as usize, int(3)? as usize];
        let supervoxel_id = int(4)?;
        if supervoxel_id == 0 {
            return Err(Error::table(
                context,
                lineno,
                format!("synapse {id} references supervoxel 0 (unsegmented)"),
            ));
        }
        let class_label = match fields[idx[5]].trim() {
            "" => None,
            s => Some(s.parse::<u32>().map_err(|_| {
                Error::table(context, lineno, format!("non-integer field `class_label`: {s:?}"))
            })?),
        };
        if !seen.insert(id) {
            return Err(Error::table(context, lineno, format!("duplicate id {id}")));
        }
        records.push(SynapseRecord {
            id,
            pos,
            supervoxel_id,
            class_label,
        });
    }
    Ok(records)
}

pub fn read_synapse_table(path: &Path) -> Result<Vec<SynapseRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_synapse_table(&text, &path.display().to_string())
}

pub fn format_synapse_table(records: &[SynapseRecord]) -> String {
    let mut out = SYNAPSE_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        let class = r.class_label.map(|c| c.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.id, r.pos[0], r.pos[1], r.pos[2], r.supervoxel_id, class
        );
    }
    out
}

pub fn write_synapse_table(records: &[SynapseRecord], path: &Path) -> Result<()> {
    write_atomic(path, format_synapse_table(records).as_bytes())
}

/// Checks every record lies inside `dims` and, when a segmentation is
/// given, sits on a voxel carrying its own supervoxel id.
pub fn validate_synapses(
    records: &[SynapseRecord],
    dims: [usize; 3],
    segmentation: Option<&SegmentationVolume>,
) -> Result<()> {
    for r in records {
        if r.pos.iter().zip(dims).any(|(&p, d)| p >= d) {
            return Err(Error::invalid(
                "synapse table",
                format!("synapse {} at {:?} lies outside volume {dims:?}", r.id, r.pos),
            ));
        }
        if let Some(seg) = segmentation {
            let label = seg.get(r.pos[0], r.pos[1], r.pos[2]);
            if label != r.supervoxel_id {
                return Err(Error::invalid(
                    "synapse table",
                    format!(
                        "synapse {} claims supervoxel {} but its voxel is labeled {label}",
                        r.id, r.supervoxel_id
                    ),
                ));
            }
        }
    }
    Ok(())
}

/// `supervoxel_id,class` rows.
pub fn format_class_table(classes: impl IntoIterator<Item = (u64, u32)>) -> String {
    let mut out = String::from("supervoxel_id,class\n");
    for (sv, c) in classes {
        let _ = writeln!(out, "{sv},{c}");
    }
    out
}

pub fn parse_class_table(text: &str, context: &str) -> Result<Vec<(u64, u32)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "supervoxel_id,class")) => {}
        _ => return Err(Error::table(context, 1, "expected header `supervoxel_id,class`")),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let bad = || Error::table(context, i + 1, format!("malformed row {l:?}"));
            let (a, b) = l.split_once(',').ok_or_else(bad)?;
            Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
        })
        .collect()
}

/// One-column `id` CSV used for labeled and selected id lists.
pub fn format_id_list(ids: &[u64]) -> String {
    let mut out = String::from("id\n");
    for id in ids {
        let _ = writeln!(out, "{id}");
    }
    out
}

pub fn parse_id_list(text: &str, context: &str) -> Result<Vec<u64>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "id" => {}
        _ => return Err(Error::table(context, 1, "expected header `id`")),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| Error::table(context, i + 1, format!("non-integer id {l:?}")))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Penultimate,
    Projected,
}

impl EmbeddingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingKind::Penultimate => "penultimate",
            EmbeddingKind::Projected => "projected",
        }
    }
}

/// M×D row-major matrix of per-synapse representations.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    synapse_ids: Vec<u64>,
    dim: usize,
    values: Vec<f64>,
    kind: EmbeddingKind,
}

impl EmbeddingMatrix {
    pub fn new(synapse_ids: Vec<u64>, dim: usize, values: Vec<f64>, kind: EmbeddingKind) -> Result<Self> {
        if synapse_ids.is_empty() || dim == 0 {
            return Err(Error::invalid("embedding matrix", "need at least one row and one column"));
        }
        if values.len() != synapse_ids.len() * dim {
            return Err(Error::invalid(
                "embedding matrix",
                format!(
                    "{} rows × {dim} columns need {} values, got {}",
                    synapse_ids.len(),
                    synapse_ids.len() * dim,
                    values.len()
                ),
            ));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = synapse_ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::invalid("embedding matrix", format!("duplicate synapse id {dup}")));
        }
        let m = EmbeddingMatrix {
            synapse_ids,
            dim,
            values,
            kind,
        };
        if kind == EmbeddingKind::Projected {
            for (i, row) in m.rows().enumerate() {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (n - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::invalid(
                        "embedding matrix",
                        format!("projected row {i} (id {}) has norm {n}, expected 1", m.synapse_ids[i]),
                    ));
                }
            }
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.synapse_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.synapse_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn synapse_ids(&self) -> &[u64] {
        &self.synapse_ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// Row index of every synapse id.
    pub fn position(&self, id: u64) -> Option<usize> {
        self.synapse_ids.iter().position(|&s| s == id)
    }
}

/// Shortest-round-trip-safe decimal form with 17 significant digits, laid
/// out like C's `%.17g`.
pub fn format_g17(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..17).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        strip_zeros(&format!("{v:.*}", (16 - exp) as usize)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn format_embeddings(emb: &EmbeddingMatrix) -> String {
    let mut out = format!("# kind={}\nid", emb.kind.as_str());
    for j in 0..emb.dim {
        let _ = write!(out, ",e{j}");
    }
    out.push('\n');
    for (id, row) in emb.synapse_ids.iter().zip(emb.rows()) {
        let _ = write!(out, "{id}");
        for v in row {
            out.push(',');
            out.push_str(&format_g17(*v));
        }
        out.push('\n');
    }
    out
}

pub fn parse_embeddings(text: &str, context: &str) -> Result<EmbeddingMatrix> {
    let mut lines = text.lines().enumerate();
    let kind = match lines.next() {
        Some((_, "# kind=penultimate")) => EmbeddingKind::Penultimate,
        Some((_, "# kind=projected")) => EmbeddingKind::Projected,
        Some((_, l)) => {
            return Err(Error::table(context, 1, format!("expected `# kind=penultimate|projected`, found {l:?}")))
        }
        None => return Err(Error::table(context, 1, "empty file")),
    };
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::table(context, 2, "missing header line"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"id") || cols.len() < 2 {
        return Err(Error::table(context, 2, "header must be `id,e0,...`"));
    }
    for (j, c) in cols[1..].iter().enumerate() {
        if *c != format!("e{j}") {
            return Err(Error::table(context, 2, format!("column {} should be `e{j}`, found {c:?}", j + 1)));
        }
    }
    let dim = cols.len() - 1;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::table(
                context,
                lineno,
                format!("ragged row: expected {} fields, found {}", dim + 1, fields.len()),
            ));
        }
        ids.push(
            fields[0]
                .parse::<u64>()
                .map_err(|_| Error::table(context, lineno, format!("non-integer id {:?}", fields[0])))?,
        );
        for f in &fields[1..] {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::table(context, lineno, format!("non-numeric entry {f:?}")))?;
            values.push(v);
        }
    }
    EmbeddingMatrix::new(ids, dim, values, kind).map_err(|e| match e {
        Error::Invalid { detail, .. } => Error::table(context, 0, detail),
        other => other,
    })
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, &path.display().to_string())
}

pub fn write_embeddings(emb: &EmbeddingMatrix, path: &Path) -> Result<()> {
    write_atomic(path, format_embeddings(emb).as_bytes())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn x_fastest_layout() {
        let file: Vec<u8> = br#"{"dims":[2,2,2],"dtype":"u8","voxel_size_nm":[8.0,8.0,8.0]}"#
            .iter()
            .copied()
            .chain([b'\n'])
            .chain(0..8)
            .collect();
        let AnyVolume::Intensity(v) = decode_volume(&file, "t").unwrap() else {
            panic!("expected intensity")
        };
        assert_eq!(v.get(1, 0, 0), 1);
        assert_eq!(v.get(0, 1, 0), 2);
        assert_eq!(v.get(0, 0, 1), 4);
        assert_eq!(v.to_bytes(), file);
    }

    #[test]
    fn payload_mismatch_reports_offset() {
        let header = br#"{"dims":[3,3,3],"dtype":"u8","voxel_size_nm":[8,8,8]}"#;
        let mut file = header.to_vec();
        file.push(b'\n');
        file.extend(std::iter::repeat(0u8).take(26));
        let err = decode_volume(&file, "t").unwrap_err().to_string();
        assert!(err.contains("payload length mismatch"), "{err}");
        assert!(err.contains(&format!("byte {}", header.len() + 1)), "{err}");
        // same input, same diagnostic
        assert_eq!(err, decode_volume(&file, "t").unwrap_err().to_string());
    }

    #[test]
    fn header_errors() {
        let bad_dtype = b"{\"dims\":[1,1,1],\"dtype\":\"f32\",\"voxel_size_nm\":[8,8,8]}\n\0\0\0\0";
        let err = decode_volume(bad_dtype, "t").unwrap_err().to_string();
        assert!(err.contains("unknown dtype"), "{err}");
        assert!(err.contains("at byte 16"), "{err}");
        let err = decode_volume(b"{\"dims\":[1,1,1],\n", "t").unwrap_err().to_string();
        assert!(err.contains("malformed header"), "{err}");
        let err = decode_volume(b"no newline", "t").unwrap_err().to_string();
        assert!(err.contains("malformed header"), "{err}");
        let zero = b"{\"dims\":[0,1,1],\"dtype\":\"u8\",\"voxel_size_nm\":[8,8,8]}\n";
        assert!(decode_volume(zero, "t").is_err());
    }

    #[test]
    fn write_read_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.vol");
        let v = IntensityVolume::filled([1, 1, 1], DEFAULT_VOXEL_SIZE_NM, 255).unwrap();
        write_volume(&v, &p).unwrap();
        assert_eq!(read_volume(&p).unwrap(), AnyVolume::Intensity(v));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels: Vec<u64> = (0..512).map(|_| rng.random()).collect();
        let s = SegmentationVolume::new([8, 8, 8], [4.0, 4.0, 40.0], labels).unwrap();
        let p = dir.path().join("seg.vol");
        write_volume(&s, &p).unwrap();
        assert_eq!(read_segmentation(&p).unwrap(), s);
        assert!(read_intensity(&p).is_err());
    }

    #[test]
    fn unwritable_path_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("no_such_dir").join("v.vol");
        let v = IntensityVolume::filled([2, 2, 2], DEFAULT_VOXEL_SIZE_NM, 1).unwrap();
        assert!(matches!(write_volume(&v, &missing), Err(Error::Io { .. })));
        assert!(!missing.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn synapse_row_parse() {
        let t = "id,x,y,z,supervoxel_id,class_label\n7,10,12,14,3,\n";
        let r = parse_synapse_table(t, "t").unwrap();
        assert_eq!(
            r,
            vec![SynapseRecord {
                id: 7,
                pos: [10, 12, 14],
                supervoxel_id: 3,
                class_label: None
            }]
        );
    }

    #[test]
    fn synapse_table_errors() {
        let dup = "id,x,y,z,supervoxel_id,class_label\n7,1,1,1,3,\n7,2,2,2,3,1\n";
        let err = parse_synapse_table(dup, "t").unwrap_err().to_string();
        assert!(err.contains("duplicate id 7"), "{err}");
        let missing = "id,x,y,z,class_label\n7,1,1,1,\n";
        let err = parse_synapse_table(missing, "t").unwrap_err().to_string();
        assert!(err.contains("missing column `supervoxel_id`"), "{err}");
        let nonint = "id,x,y,z,supervoxel_id,class_label\n7,1.5,1,1,3,\n";
        let err = parse_synapse_table(nonint, "t").unwrap_err().to_string();
        assert!(err.contains("non-integer field `x`"), "{err}");
        let zero = "id,x,y,z,supervoxel_id,class_label\n7,1,1,1,0,\n";
        assert!(parse_synapse_table(zero, "t").is_err());
    }

    #[test]
    fn validate_synapses_checks_bounds_and_labels() {
        let rec = |pos, sv| SynapseRecord {
            id: 0,
            pos,
            supervoxel_id: sv,
            class_label: None,
        };
        let seg = SegmentationVolume::filled([4, 4, 4], DEFAULT_VOXEL_SIZE_NM, 5).unwrap();
        assert!(validate_synapses(&[rec([3, 3, 3], 5)], [4, 4, 4], Some(&seg)).is_ok());
        assert!(validate_synapses(&[rec([4, 0, 0], 5)], [4, 4, 4], None).is_err());
        assert!(validate_synapses(&[rec([0, 0, 0], 6)], [4, 4, 4], Some(&seg)).is_err());
    }

    #[test]
    fn random_synapse_table_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let records: Vec<SynapseRecord> = (0..100u64)
            .map(|i| SynapseRecord {
                id: i * 3 + rng.random_range(0..3),
                pos: [rng.random_range(0..500), rng.random_range(0..500), rng.random_range(0..500)],
                supervoxel_id: rng.random_range(1..u64::MAX),
                class_label: rng.random_bool(0.7).then(|| rng.random_range(0..10)),
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_synapse_table(&records, &p).unwrap();
        assert_eq!(read_synapse_table(&p).unwrap(), records);
    }

    #[test]
    fn projected_three_four_five() {
        let emb = EmbeddingMatrix::new(vec![0], 2, vec![0.6, 0.8], EmbeddingKind::Projected).unwrap();
        let text = format_embeddings(&emb);
        assert_eq!(text, "# kind=projected\nid,e0,e1\n0,0.59999999999999998,0.80000000000000004\n");
        assert_eq!(parse_embeddings(&text, "t").unwrap(), emb);
    }

    #[test]
    fn projected_rows_must_be_unit() {
        let text = "# kind=projected\nid,e0,e1\n0,0.9,0\n";
        assert!(parse_embeddings(text, "t").is_err());
        let text = "# kind=penultimate\nid,e0,e1\n0,0.9,0\n";
        assert!(parse_embeddings(text, "t").is_ok());
    }

    #[test]
    fn embedding_parse_errors() {
        let ragged = "# kind=penultimate\nid,e0,e1\n0,1,2\n1,3\n";
        assert!(parse_embeddings(ragged, "t").unwrap_err().to_string().contains("ragged"));
        let nonnum = "# kind=penultimate\nid,e0\n0,abc\n";
        assert!(parse_embeddings(nonnum, "t").unwrap_err().to_string().contains("non-numeric"));
        let dup = "# kind=penultimate\nid,e0\n0,1\n0,2\n";
        assert!(parse_embeddings(dup, "t").is_err());
    }

    #[test]
    fn g17_matches_c_layout() {
        assert_eq!(format_g17(1.0), "1");
        assert_eq!(format_g17(0.5), "0.5");
        assert_eq!(format_g17(-2.25), "-2.25");
        assert_eq!(format_g17(0.1), "0.10000000000000001");
        assert_eq!(format_g17(1e-5), "1.0000000000000001e-05");
        assert_eq!(format_g17(1e20), "1e+20");
        assert_eq!(format_g17(123456.0), "123456");
        assert_eq!(format_g17(0.0001), "0.0001");
    }

    #[test]
    fn random_embedding_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..160).map(|_| rng.random_range(-1e3..1e3) * rng.random::<f64>().powi(8)).collect();
        let emb = EmbeddingMatrix::new((100..120).collect(), 8, values, EmbeddingKind::Penultimate).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        write_embeddings(&emb, &p).unwrap();
        let back = read_embeddings(&p).unwrap();
        assert!(back.values().iter().zip(emb.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back, emb);
    }

    proptest! {
        #[test]
        fn index_matches_nested_loops(nx in 1usize..6, ny in 1usize..6, nz in 1usize..6) {
            let vol = IntensityVolume::filled([nx, ny, nz], DEFAULT_VOXEL_SIZE_NM, 0).unwrap();
            let mut expected = 0;
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        prop_assert_eq!(vol.index(x, y, z), expected);
                        expected += 1;
                    }
                }
            }
        }

        #[test]
        fn u64_volume_round_trip(dims in prop::array::uniform3(1usize..6), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = dims.iter().product();
            let vol = SegmentationVolume::new(dims, DEFAULT_VOXEL_SIZE_NM, (0..n).map(|_| rng.random()).collect()).unwrap();
            let AnyVolume::Segmentation(back) = decode_volume(&vol.to_bytes(), "p").unwrap() else {
                panic!("dtype changed")
            };
            prop_assert_eq!(back, vol);
        }

        #[test]
        fn g17_round_trips(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let back: f64 = format_g17(v).parse().unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}

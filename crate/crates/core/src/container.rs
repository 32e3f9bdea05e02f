//! Self-describing dataset containers: a single-line JSON header naming each
//! payload, followed by the payloads as contiguous little-endian float32 in
//! header order. Every command round-trips through this format, so readers
//! validate the declared lengths against the file before touching data.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldGrid;
use crate::synthetic::AxisWarp;

pub const CONTAINER_VERSION: u32 = 1;
pub const DTYPE: &str = "float32-le";

/// Shape and name of one payload entry.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EntryMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

impl EntryMeta {
    pub fn elements(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_len(&self) -> u64 {
        self.elements() as u64 * 4
    }
}

/// The JSON header written as the first line of a container file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub version: u32,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Per-sample axis warps, when the payloads came from warped synthesis.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warps: Vec<[i8; 4]>,
    /// Free-form metadata: variable names, factors, standardizer snapshots.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, serde_json::Value>,
    pub entries: Vec<EntryMeta>,
}

impl ContainerHeader {
    pub fn new(entries: Vec<EntryMeta>) -> Self {
        Self {
            version: CONTAINER_VERSION,
            dtype: DTYPE.to_string(),
            kind: None,
            seed: None,
            warps: Vec::new(),
            attrs: BTreeMap::new(),
            entries,
        }
    }

    pub fn entry(&self, name: &str) -> Result<&EntryMeta> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::MissingData(format!("container has no entry '{name}'")))
    }

    pub fn axis_warps(&self) -> Result<Vec<AxisWarp>> {
        self.warps
            .iter()
            .map(|&[a1, a2, b1, b2]| AxisWarp::new(a1, a2, b1, b2))
            .collect()
    }

    pub fn attr_u64(&self, key: &str) -> Option<u64> {
        self.attrs.get(key).and_then(|v| v.as_u64())
    }

    pub fn attr_str(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).and_then(|v| v.as_str())
    }
}

/// In-memory container: named f32 arrays.
#[derive(Debug, Clone)]
pub struct DataContainer {
    pub header: ContainerHeader,
    pub arrays: BTreeMap<String, ArrayD<f32>>,
}

impl DataContainer {
    pub fn new(header: ContainerHeader) -> Self {
        Self { header, arrays: BTreeMap::new() }
    }

    pub fn array(&self, name: &str) -> Result<&ArrayD<f32>> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::MissingData(format!("container has no entry '{name}'")))
    }
}

fn validate_header(header: &ContainerHeader) -> Result<()> {
    if header.dtype != DTYPE {
        return Err(Error::Corrupt(format!(
            "unsupported dtype '{}' (expected '{DTYPE}')",
            header.dtype
        )));
    }
    if header.version != CONTAINER_VERSION {
        return Err(Error::Corrupt(format!("unsupported container version {}", header.version)));
    }
    let mut seen = std::collections::BTreeSet::new();
    for e in &header.entries {
        if !seen.insert(&e.name) {
            return Err(Error::Corrupt(format!("duplicate entry name '{}'", e.name)));
        }
    }
    Ok(())
}

/// Writes a container: header line, then each named array as float32-le.
pub fn write_container(path: impl AsRef<Path>, container: &DataContainer) -> Result<()> {
    let mut header = container.header.clone();
    header.entries = Vec::with_capacity(container.arrays.len());
    // keep declared order when the caller set it, then any remaining arrays
    for e in &container.header.entries {
        if container.arrays.contains_key(&e.name) {
            header.entries.push(EntryMeta {
                name: e.name.clone(),
                shape: container.arrays[&e.name].shape().to_vec(),
            });
        }
    }
    for (name, arr) in &container.arrays {
        if !header.entries.iter().any(|e| &e.name == name) {
            header.entries.push(EntryMeta { name: name.clone(), shape: arr.shape().to_vec() });
        }
    }
    validate_header(&header)?;

    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    let mut line = serde_json::to_string(&header)?;
    debug_assert!(!line.contains('\n'));
    line.push('\n');
    w.write_all(line.as_bytes())?;
    for e in &header.entries {
        let arr = &container.arrays[&e.name];
        let standard = arr.as_standard_layout();
        let slice = standard.as_slice().expect("standard layout is contiguous");
        for &v in slice {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_header_line(r: &mut impl Read) -> Result<(ContainerHeader, u64)> {
    let mut bytes = Vec::with_capacity(4096);
    let mut buf = [0u8; 1];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            return Err(Error::Corrupt("file ended before header line terminator".into()));
        }
        if buf[0] == b'\n' {
            break;
        }
        bytes.push(buf[0]);
        if bytes.len() > 64 * 1024 * 1024 {
            return Err(Error::Corrupt("header line exceeds 64 MiB".into()));
        }
    }
    let header: ContainerHeader = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Corrupt(format!("header does not parse: {e}")))?;
    validate_header(&header)?;
    Ok((header, bytes.len() as u64 + 1))
}

fn check_payload_length(header: &ContainerHeader, header_len: u64, file_len: u64) -> Result<()> {
    let mut offset = header_len;
    for e in &header.entries {
        let end = offset + e.byte_len();
        if end > file_len {
            return Err(Error::Corrupt(format!(
                "entry '{}' declares {} bytes but the file holds only {} past the header \
                 (file length {file_len})",
                e.name,
                e.byte_len(),
                file_len.saturating_sub(offset),
            )));
        }
        offset = end;
    }
    if offset != file_len {
        return Err(Error::Corrupt(format!(
            "file holds {} trailing bytes beyond the declared payloads",
            file_len - offset
        )));
    }
    Ok(())
}

/// Reads a whole container into memory.
pub fn read_container(path: impl AsRef<Path>) -> Result<DataContainer> {
    let file = File::open(path.as_ref())?;
    let file_len = file.metadata()?.len();
    let mut r = BufReader::new(file);
    let (header, header_len) = read_header_line(&mut r)?;
    check_payload_length(&header, header_len, file_len)?;

    let mut arrays = BTreeMap::new();
    for e in &header.entries {
        let mut data = vec![0f32; e.elements()];
        r.read_f32_into::<LittleEndian>(&mut data)?;
        let arr = ArrayD::from_shape_vec(e.shape.clone(), data)
            .map_err(|err| Error::Corrupt(format!("entry '{}': {err}", e.name)))?;
        arrays.insert(e.name.clone(), arr);
    }
    Ok(DataContainer { header, arrays })
}

/// Seek-based reader that loads one sample slice at a time, keeping memory
/// bounded during evaluation of large containers.
pub struct ContainerReader {
    file: File,
    header: ContainerHeader,
    offsets: BTreeMap<String, u64>,
}

impl ContainerReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        let file_len = file.metadata()?.len();
        let mut r = BufReader::new(file);
        let (header, header_len) = read_header_line(&mut r)?;
        check_payload_length(&header, header_len, file_len)?;
        let mut offsets = BTreeMap::new();
        let mut offset = header_len;
        for e in &header.entries {
            offsets.insert(e.name.clone(), offset);
            offset += e.byte_len();
        }
        Ok(Self { file: r.into_inner(), header, offsets })
    }

    pub fn header(&self) -> &ContainerHeader {
        &self.header
    }

    /// Number of samples along the leading axis of an entry.
    pub fn samples(&self, name: &str) -> Result<usize> {
        let e = self.header.entry(name)?;
        Ok(*e.shape.first().unwrap_or(&0))
    }

    /// Reads `entry[index]` (the slab across all trailing axes) as f32.
    pub fn read_sample(&mut self, name: &str, index: usize) -> Result<ArrayD<f32>> {
        let e = self.header.entry(name)?.clone();
        let n = *e
            .shape
            .first()
            .ok_or_else(|| Error::Corrupt(format!("entry '{name}' is zero-dimensional")))?;
        if index >= n {
            return Err(Error::invalid(format!(
                "sample {index} out of range for entry '{name}' with {n} samples"
            )));
        }
        let slab: usize = e.shape[1..].iter().product();
        let offset = self.offsets[name] + (index * slab) as u64 * 4;
        self.file.seek(SeekFrom::Start(offset))?;
        let mut data = vec![0f32; slab];
        self.file.read_f32_into::<LittleEndian>(&mut data)?;
        ArrayD::from_shape_vec(e.shape[1..].to_vec(), data)
            .map_err(|err| Error::Corrupt(format!("entry '{name}': {err}")))
    }

    /// Reads `entry[index]` as a stack of FieldGrids, one per channel.
    /// The trailing shape must be (channels, h, w).
    pub fn read_sample_fields(&mut self, name: &str, index: usize) -> Result<Vec<FieldGrid>> {
        let arr = self.read_sample(name, index)?;
        let shape = arr.shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::shape(format!(
                "entry '{name}' sample has shape {shape:?}, expected (channels, h, w)"
            )));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let flat: Vec<f32> = arr.iter().copied().collect();
        (0..c)
            .map(|ch| FieldGrid::from_f32_slice(h, w, &flat[ch * h * w..(ch + 1) * h * w]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;
    use std::io::Write as _;

    fn sample_container() -> DataContainer {
        let mut header = ContainerHeader::new(vec![]);
        header.kind = Some("unimodal".into());
        header.seed = Some(17);
        header.warps = vec![[-1, 1, 0, 1], [0, -1, 1, -1]];
        header.attrs.insert("factor".into(), serde_json::json!(8));
        let mut c = DataContainer::new(header);
        let a = ArrayD::from_shape_vec(IxDyn(&[2, 1, 4, 4]), (0..32).map(|v| v as f32 * 0.5).collect()).unwrap();
        let b = ArrayD::from_shape_vec(IxDyn(&[2]), vec![2003.0, 2008.0]).unwrap();
        c.arrays.insert("hr_target".into(), a);
        c.arrays.insert("year".into(), b);
        c
    }

    #[test]
    fn roundtrip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fields");
        let c = sample_container();
        write_container(&path, &c).unwrap();
        let back = read_container(&path).unwrap();
        assert_eq!(back.header.kind.as_deref(), Some("unimodal"));
        assert_eq!(back.header.seed, Some(17));
        assert_eq!(back.header.warps, c.header.warps);
        assert_eq!(back.array("hr_target").unwrap(), c.array("hr_target").unwrap());
        assert_eq!(back.array("year").unwrap(), c.array("year").unwrap());
    }

    #[test]
    fn truncated_payload_names_entry() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fields");
        write_container(&path, &sample_container()).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::File::create(&path).unwrap().write_all(&full[..full.len() - 8]).unwrap();
        let err = read_container(&path).unwrap_err();
        match err {
            Error::Corrupt(msg) => assert!(msg.contains("year"), "message: {msg}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn corrupt_header_is_structured() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fields");
        std::fs::write(&path, b"{not json}\n").unwrap();
        assert!(matches!(read_container(&path), Err(Error::Corrupt(_))));
    }

    #[test]
    fn streaming_reader_matches_bulk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fields");
        let c = sample_container();
        write_container(&path, &c).unwrap();
        let mut r = ContainerReader::open(&path).unwrap();
        assert_eq!(r.samples("hr_target").unwrap(), 2);
        let s1 = r.read_sample("hr_target", 1).unwrap();
        let bulk = c.array("hr_target").unwrap();
        for (i, v) in s1.iter().enumerate() {
            assert_eq!(*v, bulk.as_slice().unwrap()[16 + i]);
        }
        let fields = r.read_sample_fields("hr_target", 0).unwrap();
        assert_eq!(fields.len(), 1);
        assert_eq!(fields[0].shape(), (4, 4));
        assert!(r.read_sample("hr_target", 2).is_err());
    }

    #[test]
    fn many_sample_header_scales() {
        // the 3-year hourly scale: 26304 samples load as long as payloads fit
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.fields");
        let n = 26304usize;
        let mut c = DataContainer::new(ContainerHeader::new(vec![]));
        let arr = ArrayD::from_shape_vec(IxDyn(&[n, 1, 2, 2]), vec![1.0f32; n * 4]).unwrap();
        c.arrays.insert("lr".into(), arr);
        write_container(&path, &c).unwrap();
        let back = read_container(&path).unwrap();
        assert_eq!(back.array("lr").unwrap().shape(), &[n, 1, 2, 2]);
    }
}

/// Entry names shared by dataset-style containers.
pub const ENTRY_LR: &str = "lr";
pub const ENTRY_HR_COV: &str = "hr_covariates";
pub const ENTRY_HR_TARGET: &str = "hr_target";
pub const ENTRY_MEMBERS: &str = "members";

fn stack_entry(samples: &[Vec<FieldGrid>]) -> Result<Option<ArrayD<f32>>> {
    let channels = samples.first().map(|s| s.len()).unwrap_or(0);
    if channels == 0 {
        return Ok(None);
    }
    let (h, w) = samples[0][0].shape();
    let mut data = Vec::with_capacity(samples.len() * channels * h * w);
    for stack in samples {
        if stack.len() != channels {
            return Err(Error::shape("samples disagree on channel counts"));
        }
        for f in stack {
            if f.shape() != (h, w) {
                return Err(Error::shape("fields disagree on shape"));
            }
            data.extend(f.as_slice().iter().map(|&v| v as f32));
        }
    }
    Ok(Some(
        ArrayD::from_shape_vec(vec![samples.len(), channels, h, w], data)
            .expect("shape matches data length"),
    ))
}

/// Packs a synthetic dataset split into a container (lr / hr_covariates /
/// hr_target plus kind, seed, factor, and the warp table).
pub fn dataset_container(ds: &crate::synthetic::Dataset) -> Result<DataContainer> {
    let mut header = ContainerHeader::new(vec![]);
    header.kind = Some(ds.kind.as_str().to_string());
    header.seed = Some(ds.seed);
    header.warps = ds.warps.iter().map(|w| w.as_array()).collect();
    header.attrs.insert("factor".into(), serde_json::json!(ds.factor));
    let mut c = DataContainer::new(header);

    let lr: Vec<Vec<FieldGrid>> = ds.samples.iter().map(|s| s.lr.clone()).collect();
    let hrc: Vec<Vec<FieldGrid>> = ds.samples.iter().map(|s| s.hr_covariates.clone()).collect();
    let tgt: Vec<Vec<FieldGrid>> = ds.samples.iter().map(|s| s.hr_target.clone()).collect();
    c.arrays.insert(
        ENTRY_LR.into(),
        stack_entry(&lr)?.ok_or_else(|| Error::invalid("dataset has no LR covariates"))?,
    );
    if let Some(arr) = stack_entry(&hrc)? {
        c.arrays.insert(ENTRY_HR_COV.into(), arr);
    }
    c.arrays.insert(
        ENTRY_HR_TARGET.into(),
        stack_entry(&tgt)?.ok_or_else(|| Error::invalid("dataset has no HR targets"))?,
    );
    Ok(c)
}

/// Packs a fixed-warp truth ensemble: one shared LR conditioning stack and n
/// member fields.
pub fn ensemble_container(ens: &crate::synthetic::ConditionalEnsemble) -> Result<DataContainer> {
    let mut header = ContainerHeader::new(vec![]);
    header.kind = Some(ens.kind.as_str().to_string());
    header.seed = Some(ens.seed);
    header.warps = vec![ens.warp.as_array()];
    header.attrs.insert("ensemble".into(), serde_json::json!(true));
    let mut c = DataContainer::new(header);
    c.arrays.insert(
        ENTRY_LR.into(),
        stack_entry(std::slice::from_ref(&ens.lr))?
            .ok_or_else(|| Error::invalid("ensemble has no LR conditioning"))?,
    );
    if !ens.hr_covariates.is_empty() {
        let arr = stack_entry(std::slice::from_ref(&ens.hr_covariates))?.expect("nonempty");
        c.arrays.insert(ENTRY_HR_COV.into(), arr);
    }
    let members: Vec<Vec<FieldGrid>> = ens.members.iter().map(|m| vec![m.clone()]).collect();
    c.arrays.insert(
        ENTRY_MEMBERS.into(),
        stack_entry(&members)?.ok_or_else(|| Error::invalid("ensemble has no members"))?,
    );
    Ok(c)
}

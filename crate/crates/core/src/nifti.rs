//! Single-file NIfTI-1 reader/writer.
//!
//! Supports uint8, int16 and float32 payloads, little- and big-endian files
//! (autodetected from `dim[0]`), transparent gzip on read (content-sniffed) and
//! on write (".gz" extension). Writing goes through a temp file in the target
//! directory and an atomic rename, so a crash never leaves a half-written
//! volume. When both qform and sform are present, sform wins.

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::volume::{IntensitySpace, LabelVolume, Volume};
use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};
use nalgebra::{Matrix3, Matrix4};
use ndarray::Array3;
use std::io::{Read, Write};
use std::path::Path;

pub const HEADER_SIZE: usize = 348;
pub const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";

/// Supported on-disk voxel types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    Uint8,
    Int16,
    Float32,
}

impl DataType {
    pub fn code(self) -> i16 {
        match self {
            DataType::Uint8 => 2,
            DataType::Int16 => 4,
            DataType::Float32 => 16,
        }
    }

    pub fn bitpix(self) -> i16 {
        match self {
            DataType::Uint8 => 8,
            DataType::Int16 => 16,
            DataType::Float32 => 32,
        }
    }

    pub fn byte_size(self) -> usize {
        (self.bitpix() / 8) as usize
    }

    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(DataType::Uint8),
            4 => Ok(DataType::Int16),
            16 => Ok(DataType::Float32),
            _ => Err(Error::UnsupportedDatatype { code }),
        }
    }
}

/// Parsed NIfTI-1 header, reduced to the fields this pipeline uses.
#[derive(Debug, Clone)]
pub struct NiftiHeader {
    pub dims: [usize; 3],
    pub pixdim: [f32; 3],
    pub datatype: DataType,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub vox_offset: usize,
    /// Voxel-to-world affine, assembled with sform > qform > pixdim priority.
    pub affine: Matrix4<f64>,
    pub descrip: [u8; 80],
    pub big_endian: bool,
}

impl NiftiHeader {
    /// Build a header describing `geom` + `dims`, sform-coded, slope 1.
    pub fn from_geometry(dims: [usize; 3], geom: &Geometry, datatype: DataType) -> Self {
        NiftiHeader {
            dims,
            pixdim: [
                geom.spacing[0] as f32,
                geom.spacing[1] as f32,
                geom.spacing[2] as f32,
            ],
            datatype,
            scl_slope: 1.0,
            scl_inter: 0.0,
            vox_offset: HEADER_SIZE + 4,
            affine: geom.affine(),
            descrip: [0; 80],
            big_endian: false,
        }
    }

    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::from_affine(&self.affine)
    }

    pub fn set_descrip(&mut self, text: &str) {
        self.descrip = [0; 80];
        let bytes = text.as_bytes();
        let n = bytes.len().min(79);
        self.descrip[..n].copy_from_slice(&bytes[..n]);
    }

    pub fn descrip_str(&self) -> String {
        let end = self.descrip.iter().position(|&b| b == 0).unwrap_or(80);
        String::from_utf8_lossy(&self.descrip[..end]).into_owned()
    }

    fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }
}

/// Decoded voxel payload in file order (first axis fastest).
#[derive(Debug, Clone)]
pub enum NiftiPayload {
    U8(Vec<u8>),
    I16(Vec<i16>),
    F32(Vec<f32>),
}

impl NiftiPayload {
    pub fn len(&self) -> usize {
        match self {
            NiftiPayload::U8(v) => v.len(),
            NiftiPayload::I16(v) => v.len(),
            NiftiPayload::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn datatype(&self) -> DataType {
        match self {
            NiftiPayload::U8(_) => DataType::Uint8,
            NiftiPayload::I16(_) => DataType::Int16,
            NiftiPayload::F32(_) => DataType::Float32,
        }
    }
}

fn read_file_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    // Gzip is sniffed from content, not extension.
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        flate2::read::MultiGzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn parse_header(bytes: &[u8]) -> Result<NiftiHeader> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::TruncatedPayload {
            offset: 0,
            needed: HEADER_SIZE,
            available: bytes.len(),
        });
    }
    // dim[0] (offset 40) must land in [1,7]; that decides byte order.
    let dim0_le = LittleEndian::read_i16(&bytes[40..42]);
    let dim0_be = BigEndian::read_i16(&bytes[40..42]);
    let big_endian = if (1..=7).contains(&dim0_le) {
        false
    } else if (1..=7).contains(&dim0_be) {
        true
    } else {
        return Err(Error::BadDimCount { dim0: dim0_le });
    };
    if big_endian {
        parse_header_endian::<BigEndian>(bytes, true)
    } else {
        parse_header_endian::<LittleEndian>(bytes, false)
    }
}

fn parse_header_endian<E: ByteOrder>(bytes: &[u8], big_endian: bool) -> Result<NiftiHeader> {
    let sizeof_hdr = E::read_i32(&bytes[0..4]);
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(Error::BadHeaderSize { found: sizeof_hdr });
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[344..348]);
    if magic != MAGIC_SINGLE {
        return Err(Error::BadMagic { found: magic });
    }

    let ndim = E::read_i16(&bytes[40..42]) as usize;
    let mut dim = [1i16; 7];
    for (k, d) in dim.iter_mut().enumerate().take(7) {
        *d = E::read_i16(&bytes[42 + 2 * k..44 + 2 * k]);
    }
    for k in 0..ndim.min(7) {
        if dim[k] < 1 {
            return Err(Error::Unsupported {
                what: format!("dim[{}]={} at offset {} must be >= 1", k + 1, dim[k], 42 + 2 * k),
            });
        }
    }
    if ndim < 3 {
        return Err(Error::Unsupported {
            what: format!("dim[0]={ndim}; this reader needs at least 3 spatial axes"),
        });
    }
    // Trailing time/frame axes pass through only when degenerate.
    if (3..ndim.min(7)).any(|k| dim[k] > 1) {
        return Err(Error::Unsupported {
            what: format!("non-degenerate axis beyond the third (dim = {dim:?})"),
        });
    }
    let dims = [dim[0] as usize, dim[1] as usize, dim[2] as usize];

    let datatype = DataType::from_code(E::read_i16(&bytes[70..72]))?;

    let mut pixdim_all = [0f32; 8];
    for (k, p) in pixdim_all.iter_mut().enumerate() {
        *p = E::read_f32(&bytes[76 + 4 * k..80 + 4 * k]);
    }
    for k in 1..=3 {
        if !(pixdim_all[k] > 0.0) {
            return Err(Error::Unsupported {
                what: format!(
                    "pixdim[{k}]={} at offset {} must be > 0 for spatial axes",
                    pixdim_all[k],
                    76 + 4 * k
                ),
            });
        }
    }
    let pixdim = [pixdim_all[1], pixdim_all[2], pixdim_all[3]];

    let vox_offset_f = E::read_f32(&bytes[108..112]);
    let vox_offset = if vox_offset_f < HEADER_SIZE as f32 {
        HEADER_SIZE + 4
    } else {
        vox_offset_f as usize
    };
    let scl_slope = E::read_f32(&bytes[112..116]);
    let scl_inter = E::read_f32(&bytes[116..120]);

    let qform_code = E::read_i16(&bytes[252..254]);
    let sform_code = E::read_i16(&bytes[254..256]);

    let affine = if sform_code > 0 {
        let mut m = Matrix4::identity();
        for r in 0..3 {
            for c in 0..4 {
                m[(r, c)] = E::read_f32(&bytes[280 + 16 * r + 4 * c..284 + 16 * r + 4 * c]) as f64;
            }
        }
        m
    } else if qform_code > 0 {
        let b = E::read_f32(&bytes[256..260]) as f64;
        let c = E::read_f32(&bytes[260..264]) as f64;
        let d = E::read_f32(&bytes[264..268]) as f64;
        let qx = E::read_f32(&bytes[268..272]) as f64;
        let qy = E::read_f32(&bytes[272..276]) as f64;
        let qz = E::read_f32(&bytes[276..280]) as f64;
        let qfac = if pixdim_all[0] < 0.0 { -1.0 } else { 1.0 };
        let a = (1.0 - b * b - c * c - d * d).max(0.0).sqrt();
        let rot = Matrix3::new(
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - b * b - c * c,
        );
        let mut m = Matrix4::identity();
        for r in 0..3 {
            m[(r, 0)] = rot[(r, 0)] * pixdim[0] as f64;
            m[(r, 1)] = rot[(r, 1)] * pixdim[1] as f64;
            m[(r, 2)] = rot[(r, 2)] * pixdim[2] as f64 * qfac;
        }
        m[(0, 3)] = qx;
        m[(1, 3)] = qy;
        m[(2, 3)] = qz;
        m
    } else {
        let mut m = Matrix4::identity();
        for k in 0..3 {
            m[(k, k)] = pixdim[k] as f64;
        }
        m
    };

    let mut descrip = [0u8; 80];
    descrip.copy_from_slice(&bytes[148..228]);

    Ok(NiftiHeader {
        dims,
        pixdim,
        datatype,
        scl_slope,
        scl_inter,
        vox_offset,
        affine,
        descrip,
        big_endian,
    })
}

fn decode_payload(header: &NiftiHeader, bytes: &[u8]) -> Result<NiftiPayload> {
    let n = header.n_voxels();
    let need = n * header.datatype.byte_size();
    let start = header.vox_offset;
    if bytes.len() < start + need {
        return Err(Error::TruncatedPayload {
            offset: start,
            needed: need,
            available: bytes.len().saturating_sub(start),
        });
    }
    let raw = &bytes[start..start + need];
    Ok(match header.datatype {
        DataType::Uint8 => NiftiPayload::U8(raw.to_vec()),
        DataType::Int16 => {
            let mut out = vec![0i16; n];
            if header.big_endian {
                BigEndian::read_i16_into(raw, &mut out);
            } else {
                LittleEndian::read_i16_into(raw, &mut out);
            }
            NiftiPayload::I16(out)
        }
        DataType::Float32 => {
            let mut out = vec![0f32; n];
            if header.big_endian {
                BigEndian::read_f32_into(raw, &mut out);
            } else {
                LittleEndian::read_f32_into(raw, &mut out);
            }
            NiftiPayload::F32(out)
        }
    })
}

/// Read header and raw payload (file order, no intensity scaling).
pub fn read_nifti(path: impl AsRef<Path>) -> Result<(NiftiHeader, NiftiPayload)> {
    let path = path.as_ref();
    let bytes = read_file_bytes(path)?;
    let header = parse_header(&bytes)?;
    let payload = decode_payload(&header, &bytes)?;
    Ok((header, payload))
}

fn file_order_to_array3<T: Copy, U: Clone + Default, F: Fn(T) -> U>(
    dims: [usize; 3],
    flat: &[T],
    map: F,
) -> Array3<U> {
    let mut arr = Array3::from_elem((dims[0], dims[1], dims[2]), U::default());
    let mut idx = 0;
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                arr[[i, j, k]] = map(flat[idx]);
                idx += 1;
            }
        }
    }
    arr
}

fn intensity_space_from_header(header: &NiftiHeader) -> IntensitySpace {
    let d = header.descrip_str();
    for part in d.split(';') {
        match part.trim() {
            "ispace=hu" => return IntensitySpace::Hounsfield,
            "ispace=mr" => return IntensitySpace::MrRaw,
            "ispace=norm" => return IntensitySpace::Normalized,
            _ => {}
        }
    }
    match header.datatype {
        DataType::Float32 => IntensitySpace::Normalized,
        _ => IntensitySpace::Hounsfield,
    }
}

fn ispace_tag(space: IntensitySpace) -> &'static str {
    match space {
        IntensitySpace::Hounsfield => "ispace=hu",
        IntensitySpace::MrRaw => "ispace=mr",
        IntensitySpace::Normalized => "ispace=norm",
    }
}

/// Read a scalar volume, applying scl_slope/scl_inter (slope 0 treated as 1).
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let (header, payload) = read_nifti(&path)?;
    let slope = if header.scl_slope == 0.0 {
        1.0
    } else {
        header.scl_slope
    };
    let inter = header.scl_inter;
    let scale = |x: f32| x * slope + inter;
    let data = match &payload {
        NiftiPayload::U8(v) => file_order_to_array3(header.dims, v, |x| scale(x as f32)),
        NiftiPayload::I16(v) => file_order_to_array3(header.dims, v, |x| scale(x as f32)),
        NiftiPayload::F32(v) => file_order_to_array3(header.dims, v, |x| scale(x)),
    };
    let geom = header.geometry()?;
    let space = intensity_space_from_header(&header);
    Volume::new(data, geom, space)
}

/// Read a label volume. Labels are never intensity-scaled and must be
/// nonnegative integers stored as uint8 or int16.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let (header, payload) = read_nifti(path)?;
    let data = match &payload {
        NiftiPayload::U8(v) => file_order_to_array3(header.dims, v, |x| x as u16),
        NiftiPayload::I16(v) => {
            if let Some(&bad) = v.iter().find(|&&x| x < 0) {
                return Err(Error::NegativeLabel { value: bad as i64 });
            }
            file_order_to_array3(header.dims, v, |x| x as u16)
        }
        NiftiPayload::F32(_) => {
            return Err(Error::FloatLabels {
                path: path.to_path_buf(),
            })
        }
    };
    let geom = header.geometry()?;
    LabelVolume::new(data, geom)
}

fn encode_header(header: &NiftiHeader) -> Vec<u8> {
    let mut b = vec![0u8; HEADER_SIZE];
    LittleEndian::write_i32(&mut b[0..4], HEADER_SIZE as i32);
    b[38] = b'r'; // regular
    LittleEndian::write_i16(&mut b[40..42], 3);
    LittleEndian::write_i16(&mut b[42..44], header.dims[0] as i16);
    LittleEndian::write_i16(&mut b[44..46], header.dims[1] as i16);
    LittleEndian::write_i16(&mut b[46..48], header.dims[2] as i16);
    for k in 3..7 {
        LittleEndian::write_i16(&mut b[42 + 2 * k..44 + 2 * k], 1);
    }
    LittleEndian::write_i16(&mut b[70..72], header.datatype.code());
    LittleEndian::write_i16(&mut b[72..74], header.datatype.bitpix());
    LittleEndian::write_f32(&mut b[76..80], 1.0); // qfac placeholder
    for k in 0..3 {
        LittleEndian::write_f32(&mut b[80 + 4 * k..84 + 4 * k], header.pixdim[k]);
    }
    LittleEndian::write_f32(&mut b[108..112], header.vox_offset as f32);
    LittleEndian::write_f32(&mut b[112..116], header.scl_slope);
    LittleEndian::write_f32(&mut b[116..120], header.scl_inter);
    b[123] = 2; // xyzt_units: millimetres
    b[148..228].copy_from_slice(&header.descrip);
    LittleEndian::write_i16(&mut b[252..254], 0); // qform_code
    LittleEndian::write_i16(&mut b[254..256], 1); // sform_code: scanner
    for r in 0..3 {
        for c in 0..4 {
            LittleEndian::write_f32(
                &mut b[280 + 16 * r + 4 * c..284 + 16 * r + 4 * c],
                header.affine[(r, c)] as f32,
            );
        }
    }
    b[344..348].copy_from_slice(&MAGIC_SINGLE);
    b
}

fn array3_to_file_order<T: Copy>(data: &Array3<T>) -> Vec<T> {
    let (nx, ny, nz) = data.dim();
    let mut out = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                out.push(data[[i, j, k]]);
            }
        }
    }
    out
}

fn encode_payload(payload: &NiftiPayload) -> Vec<u8> {
    match payload {
        NiftiPayload::U8(v) => v.clone(),
        NiftiPayload::I16(v) => {
            let mut out = Vec::with_capacity(v.len() * 2);
            for &x in v {
                out.write_i16::<LittleEndian>(x).unwrap();
            }
            out
        }
        NiftiPayload::F32(v) => {
            let mut out = Vec::with_capacity(v.len() * 4);
            for &x in v {
                out.write_f32::<LittleEndian>(x).unwrap();
            }
            out
        }
    }
}

/// Write header + payload. Gzip when the filename ends in ".gz". Atomic:
/// the bytes land in a temp file first and are renamed into place.
pub fn write_nifti(header: &NiftiHeader, payload: &NiftiPayload, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if header.n_voxels() != payload.len() {
        return Err(Error::DimMismatch {
            header: header.dims,
            volume: [payload.len(), 1, 1],
        });
    }
    if header.datatype != payload.datatype() {
        return Err(Error::Unsupported {
            what: format!(
                "header datatype {:?} does not match payload {:?}",
                header.datatype,
                payload.datatype()
            ),
        });
    }
    let mut bytes = encode_header(header);
    bytes.resize(header.vox_offset.max(HEADER_SIZE + 4), 0);
    bytes.extend_from_slice(&encode_payload(payload));

    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| Error::io(path, e))?;
    let gz = path
        .file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".gz"));
    if gz {
        let mut enc = flate2::write::GzEncoder::new(tmp.as_file_mut(), flate2::Compression::default());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?;
    } else {
        tmp.as_file_mut()
            .write_all(&bytes)
            .map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path)
        .map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Write a scalar volume with an explicit on-disk datatype. Integer types
/// round to nearest and clamp to the type's range; float32 is lossless.
pub fn write_volume_as(v: &Volume, path: impl AsRef<Path>, datatype: DataType) -> Result<()> {
    let dims = v.dims();
    let mut header = NiftiHeader::from_geometry(dims, &v.geom, datatype);
    header.set_descrip(ispace_tag(v.intensity_space));
    let flat = array3_to_file_order(&v.data);
    let payload = match datatype {
        DataType::Float32 => NiftiPayload::F32(flat),
        DataType::Int16 => NiftiPayload::I16(
            flat.iter()
                .map(|&x| x.round().clamp(i16::MIN as f32, i16::MAX as f32) as i16)
                .collect(),
        ),
        DataType::Uint8 => NiftiPayload::U8(
            flat.iter()
                .map(|&x| x.round().clamp(0.0, 255.0) as u8)
                .collect(),
        ),
    };
    write_nifti(&header, &payload, path)
}

/// Write a scalar volume as float32 (lossless for our in-memory type).
pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_volume_as(v, path, DataType::Float32)
}

/// Write a label volume as int16 (exact for labels up to 32767).
pub fn write_labels(labels: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    let dims = labels.dims();
    if let Some(&bad) = labels.data.iter().find(|&&x| x > i16::MAX as u16) {
        return Err(Error::Unsupported {
            what: format!("label {bad} does not fit int16"),
        });
    }
    let mut header = NiftiHeader::from_geometry(dims, &labels.geom, DataType::Int16);
    header.set_descrip("labels");
    let flat = array3_to_file_order(&labels.data);
    let payload = NiftiPayload::I16(flat.iter().map(|&x| x as i16).collect());
    write_nifti(&header, &payload, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Geometry;
    use ndarray::Array3;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn smallest_legal_file_round_trips() {
        let dir = tmpdir();
        let path = dir.path().join("tiny.nii");
        let data = Array3::from_shape_fn((2, 2, 2), |(i, j, k)| (i * 4 + j * 2 + k) as f32);
        let v = Volume::new(data.clone(), Geometry::isotropic(1.0), IntensitySpace::MrRaw).unwrap();
        write_volume(&v, &path).unwrap();
        let back = read_volume(&path).unwrap();
        assert_eq!(back.data, data);
        assert_eq!(back.dims(), [2, 2, 2]);
    }

    #[test]
    fn scl_slope_inter_applied() {
        let dir = tmpdir();
        let path = dir.path().join("scaled.nii");
        let mut header =
            NiftiHeader::from_geometry([1, 1, 1], &Geometry::isotropic(1.0), DataType::Int16);
        header.scl_slope = 2.0;
        header.scl_inter = 10.0;
        write_nifti(&header, &NiftiPayload::I16(vec![3]), &path).unwrap();
        let v = read_volume(&path).unwrap();
        assert_eq!(v.data[[0, 0, 0]], 16.0);
    }

    #[test]
    fn slope_zero_treated_as_one() {
        let dir = tmpdir();
        let path = dir.path().join("slope0.nii");
        let mut header =
            NiftiHeader::from_geometry([1, 1, 1], &Geometry::isotropic(1.0), DataType::Int16);
        header.scl_slope = 0.0;
        header.scl_inter = 5.0;
        write_nifti(&header, &NiftiPayload::I16(vec![3]), &path).unwrap();
        let v = read_volume(&path).unwrap();
        assert_eq!(v.data[[0, 0, 0]], 8.0);
    }

    #[test]
    fn labels_never_scaled() {
        let dir = tmpdir();
        let path = dir.path().join("lab.nii");
        let mut header =
            NiftiHeader::from_geometry([1, 1, 1], &Geometry::isotropic(1.0), DataType::Int16);
        header.scl_slope = 2.0;
        header.scl_inter = 10.0;
        write_nifti(&header, &NiftiPayload::I16(vec![3]), &path).unwrap();
        let l = read_labels(&path).unwrap();
        assert_eq!(l.data[[0, 0, 0]], 3);
    }

    #[test]
    fn gzip_round_trip() {
        let dir = tmpdir();
        let path = dir.path().join("vol.nii.gz");
        let data = Array3::from_shape_fn((5, 4, 3), |(i, j, k)| (i as f32) - (j as f32) * (k as f32));
        let v = Volume::new(data.clone(), Geometry::isotropic(2.0), IntensitySpace::MrRaw).unwrap();
        write_volume(&v, &path).unwrap();
        // Really gzipped on disk?
        let raw = std::fs::read(&path).unwrap();
        assert_eq!(&raw[..2], &[0x1f, 0x8b]);
        let back = read_volume(&path).unwrap();
        assert_eq!(back.data, data);
    }

    #[test]
    fn rotated_affine_survives_round_trip() {
        let dir = tmpdir();
        let path = dir.path().join("rot.nii");
        let rot = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Vector3::z_axis(),
            10.0f64.to_radians(),
        )
        .into_inner();
        let geom = Geometry::new([1.0, 1.0, 1.0], nalgebra::Vector3::new(3.0, -2.0, 7.0), rot)
            .unwrap();
        let v = Volume::new(
            Array3::zeros((4, 4, 4)),
            geom.clone(),
            IntensitySpace::MrRaw,
        )
        .unwrap();
        write_volume(&v, &path).unwrap();
        let back = read_volume(&path).unwrap();
        assert!(geom.approx_eq(&back.geom, 1e-6), "geometry drifted");
    }

    #[test]
    fn bad_magic_reported() {
        let dir = tmpdir();
        let path = dir.path().join("bad.nii");
        let header =
            NiftiHeader::from_geometry([1, 1, 1], &Geometry::isotropic(1.0), DataType::Uint8);
        let mut bytes = encode_header(&header);
        bytes[344] = b'x';
        bytes.resize(352 + 1, 0);
        std::fs::write(&path, &bytes).unwrap();
        match read_nifti(&path) {
            Err(Error::BadMagic { .. }) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_datatype_reported() {
        let dir = tmpdir();
        let path = dir.path().join("f64.nii");
        let header =
            NiftiHeader::from_geometry([1, 1, 1], &Geometry::isotropic(1.0), DataType::Uint8);
        let mut bytes = encode_header(&header);
        LittleEndian::write_i16(&mut bytes[70..72], 64); // float64
        bytes.resize(352 + 8, 0);
        std::fs::write(&path, &bytes).unwrap();
        match read_nifti(&path) {
            Err(Error::UnsupportedDatatype { code: 64 }) => {}
            other => panic!("expected UnsupportedDatatype, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reported() {
        let dir = tmpdir();
        let path = dir.path().join("trunc.nii");
        let header =
            NiftiHeader::from_geometry([4, 4, 4], &Geometry::isotropic(1.0), DataType::Float32);
        let mut bytes = encode_header(&header);
        bytes.resize(352 + 10, 0); // needs 256 bytes of payload
        std::fs::write(&path, &bytes).unwrap();
        match read_nifti(&path) {
            Err(Error::TruncatedPayload { offset: 352, .. }) => {}
            other => panic!("expected TruncatedPayload, got {other:?}"),
        }
    }

    #[test]
    fn label_int16_exact() {
        let dir = tmpdir();
        let path = dir.path().join("labels.nii");
        let data = Array3::from_shape_fn((6, 5, 4), |(i, j, k)| ((i + 2 * j + 3 * k) % 7) as u16);
        let l = LabelVolume::new(data.clone(), Geometry::isotropic(1.0)).unwrap();
        write_labels(&l, &path).unwrap();
        let back = read_labels(&path).unwrap();
        assert_eq!(back.data, data);
    }

    #[test]
    fn write_read_random_f32_identical_bytes() {
        use rand::{Rng, SeedableRng};
        let dir = tmpdir();
        let path = dir.path().join("rand.nii");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let data = Array3::from_shape_fn((16, 16, 16), |_| rng.random::<f32>() * 2000.0 - 1000.0);
        let v = Volume::new(
            data.clone(),
            Geometry::isotropic(1.0),
            IntensitySpace::Hounsfield,
        )
        .unwrap();
        write_volume(&v, &path).unwrap();
        let (_, payload) = read_nifti(&path).unwrap();
        let expect = array3_to_file_order(&data);
        match payload {
            NiftiPayload::F32(got) => {
                assert_eq!(got.len(), expect.len());
                for (a, b) in got.iter().zip(expect.iter()) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            _ => panic!("wrong payload type"),
        }
    }

    #[test]
    fn dim_mismatch_on_write() {
        let header =
            NiftiHeader::from_geometry([2, 2, 2], &Geometry::isotropic(1.0), DataType::Float32);
        let err = write_nifti(&header, &NiftiPayload::F32(vec![0.0; 7]), "/tmp/never.nii");
        assert!(matches!(err, Err(Error::DimMismatch { .. })));
    }
}

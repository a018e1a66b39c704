//! Binary container for [`SegmentDatabase`].
//!
//! ```text
//! header (64 bytes)
//!   magic        8   b"GKSEGDB\0"
//!   major, minor 2+2 format version
//!   reserved     4
//!   payload_len  8
//!   sha256      32   digest of the payload
//!   reserved     8
//! payload
//!   meta_len 8, meta JSON
//!   record_count 8, record table (40 bytes per record)
//!   blob_len 8, blob
//! ```
//!
//! A table row is `id u64 | category u32 | bbox 4×u32 | area u64 | src_len u32`.
//! Each record's blob holds, in order: source image id (UTF-8), the mask packed
//! row-major LSB-first, the RGB bytes, and the 2 KiB signature. All integers are
//! little-endian. A JSON copy of the meta is written next to the container.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{DbMeta, SegmentDatabase, SegmentRecord};
use crate::error::{Error, Result};
use crate::raster::{Bbox, BinaryMask, RgbImage};
use crate::signature::{Signature, SIGNATURE_BYTES};

pub const FORMAT_MAJOR: u16 = 1;
pub const FORMAT_MINOR: u16 = 0;

const MAGIC: &[u8; 8] = b"GKSEGDB\0";
const HEADER_LEN: usize = 64;
const ROW_LEN: usize = 40;

pub fn meta_sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn pack_bits(mask: &BinaryMask) -> Vec<u8> {
    let mut out = vec![0u8; mask.bits().len().div_ceil(8)];
    for (i, &b) in mask.bits().iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], w: u32, h: u32) -> Result<BinaryMask> {
    let n = w as usize * h as usize;
    let bits = (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
    BinaryMask::new(w, h, bits)
}

fn encode(db: &SegmentDatabase) -> Vec<u8> {
    let meta = serde_json::to_vec(&db.meta).expect("meta serializes");
    let mut table = Vec::with_capacity(db.records.len() * ROW_LEN);
    let mut blob = Vec::new();
    for r in &db.records {
        let src = r.source_image_id.as_bytes();
        table.extend_from_slice(&r.segment_id.to_le_bytes());
        table.extend_from_slice(&r.category.to_le_bytes());
        for v in [r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h] {
            table.extend_from_slice(&v.to_le_bytes());
        }
        table.extend_from_slice(&r.area.to_le_bytes());
        table.extend_from_slice(&(src.len() as u32).to_le_bytes());
        blob.extend_from_slice(src);
        blob.extend_from_slice(&pack_bits(&r.mask));
        blob.extend_from_slice(r.pixels.as_raw());
        blob.extend_from_slice(&r.signature.to_bytes());
    }
    let mut payload = Vec::with_capacity(24 + meta.len() + table.len() + blob.len());
    payload.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    payload.extend_from_slice(&meta);
    payload.extend_from_slice(&(db.records.len() as u64).to_le_bytes());
    payload.extend_from_slice(&table);
    payload.extend_from_slice(&(blob.len() as u64).to_le_bytes());
    payload.extend_from_slice(&blob);

    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_MAJOR.to_le_bytes());
    out.extend_from_slice(&FORMAT_MINOR.to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&Sha256::digest(&payload));
    out.extend_from_slice(&[0u8; 8]);
    debug_assert_eq!(out.len(), HEADER_LEN);
    out.extend_from_slice(&payload);
    out
}

/// Serialize `db` to `path`, plus a `<path>.meta.json` sidecar.
pub fn save_database(db: &SegmentDatabase, path: &Path) -> Result<()> {
    fs::write(path, encode(db)).map_err(|e| Error::io(path, e))?;
    let side = meta_sidecar_path(path);
    let meta = serde_json::to_string_pretty(&db.meta).expect("meta serializes");
    fs::write(&side, meta).map_err(|e| Error::io(&side, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Corrupt(format!("unexpected end of payload at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Corrupt("length overflows usize".into()))
    }
}

fn decode(bytes: &[u8]) -> Result<SegmentDatabase> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Checksum(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Corrupt("bad magic, not a segment database".into()));
    }
    let major = u16::from_le_bytes([bytes[8], bytes[9]]);
    let minor = u16::from_le_bytes([bytes[10], bytes[11]]);
    if major != FORMAT_MAJOR {
        return Err(Error::Version {
            found: format!("{major}.{minor}"),
            supported: format!("{FORMAT_MAJOR}.{FORMAT_MINOR}"),
        });
    }
    let payload_len = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let digest = &bytes[24..56];
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != payload_len {
        return Err(Error::Checksum(format!(
            "payload is {} bytes, header records {payload_len}",
            payload.len()
        )));
    }
    if Sha256::digest(payload).as_slice() != digest {
        return Err(Error::Checksum("payload digest does not match header".into()));
    }

    let mut rd = Reader { buf: payload, pos: 0 };
    let meta_len = rd.len()?;
    let meta: DbMeta =
        serde_json::from_slice(rd.take(meta_len)?).map_err(|e| Error::Corrupt(format!("meta json: {e}")))?;
    let count = rd.len()?;
    let table = rd.take(
        count
            .checked_mul(ROW_LEN)
            .ok_or_else(|| Error::Corrupt("record count".into()))?,
    )?;
    let blob_len = rd.len()?;
    let blob = rd.take(blob_len)?;

    let mut trd = Reader { buf: table, pos: 0 };
    let mut brd = Reader { buf: blob, pos: 0 };
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let id = trd.u64()?;
        let category = trd.u32()?;
        let bbox = Bbox::new(trd.u32()?, trd.u32()?, trd.u32()?, trd.u32()?);
        let area = trd.u64()?;
        let src_len = trd.u32()? as usize;
        let src = std::str::from_utf8(brd.take(src_len)?)
            .map_err(|_| Error::Corrupt(format!("segment {id}: source id is not UTF-8")))?
            .to_string();
        let n = bbox.w as usize * bbox.h as usize;
        let mask = unpack_bits(brd.take(n.div_ceil(8))?, bbox.w, bbox.h)?;
        let pixels = RgbImage::new(bbox.w, bbox.h, brd.take(n * 3)?.to_vec())?;
        let signature = Signature::from_bytes(brd.take(SIGNATURE_BYTES)?)?;
        let rec = SegmentRecord::new(id, src, category, bbox, mask, pixels)?;
        if rec.area != area || rec.signature != signature {
            return Err(Error::Corrupt(format!(
                "segment {id}: stored area/signature inconsistent with mask"
            )));
        }
        records.push(rec);
    }
    if meta.record_count != records.len() as u64 {
        return Err(Error::Corrupt(format!(
            "meta lists {} records, table holds {}",
            meta.record_count,
            records.len()
        )));
    }
    let db = SegmentDatabase::from_records(records, meta.dataset.clone(), meta.min_area)?;
    if db.meta.config_hash != meta.config_hash {
        return Err(Error::Corrupt("dataset config hash mismatch".into()));
    }
    Ok(SegmentDatabase { meta, ..db })
}

pub fn load_database(path: &Path) -> Result<SegmentDatabase> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

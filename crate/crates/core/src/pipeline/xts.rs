//! The `.xts` container: a tensor or a factor triple as little-endian f64.
//!
//! ```text
//! "XTSR"  u16 version  u8 kind  u64 I  u64 J  u64 K  [u64 R]  u8 width
//! payload: column-major f64; factors as A, then B, then C
//! ```
//! `kind` is 0 for a dense tensor and 1 for factors; `R` is present only
//! for factors. `width` is always 8.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::Path;
use std::sync::Mutex;

use super::source::{check_indices, check_ranges, TensorSource};
use crate::error::{Error, Result};
use crate::tensor::{Dims, FactorTriple, Matrix, Tensor3};

pub const MAGIC: &[u8; 4] = b"XTSR";
pub const VERSION: u16 = 1;
const KIND_DENSE: u8 = 0;
const KIND_FACTORS: u8 = 1;
const WIDTH: u8 = 8;
const DENSE_HEADER: u64 = 4 + 2 + 1 + 24 + 1;

/// Contents of an `.xts` file.
#[derive(Clone, Debug, PartialEq)]
pub enum XtsData {
    Dense(Tensor3),
    Factors(FactorTriple),
}

fn put_u64(w: &mut impl Write, x: usize) -> Result<()> {
    Ok(w.write_all(&(x as u64).to_le_bytes())?)
}

fn put_values(w: &mut impl Write, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn put_header(w: &mut impl Write, kind: u8, dims: Dims, rank: Option<usize>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[kind])?;
    put_u64(w, dims.0)?;
    put_u64(w, dims.1)?;
    put_u64(w, dims.2)?;
    if let Some(r) = rank {
        put_u64(w, r)?;
    }
    w.write_all(&[WIDTH])?;
    Ok(())
}

pub fn write_tensor_to(w: &mut impl Write, t: &Tensor3) -> Result<()> {
    put_header(w, KIND_DENSE, t.dims(), None)?;
    put_values(w, t.as_slice())
}

pub fn write_factors_to(w: &mut impl Write, f: &FactorTriple) -> Result<()> {
    put_header(w, KIND_FACTORS, f.dims(), Some(f.rank()))?;
    for m in 0..3 {
        put_values(w, f.mode(m).as_slice())?;
    }
    Ok(())
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor3) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor_to(&mut w, t)?;
    Ok(w.flush()?)
}

pub fn write_factors(path: impl AsRef<Path>, f: &FactorTriple) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_factors_to(&mut w, f)?;
    Ok(w.flush()?)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::data("truncated .xts file"),
        _ => Error::Io(e),
    })
}

fn get_u64(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::data("dimension overflows usize"))
}

fn get_values(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let bytes = n
        .checked_mul(8)
        .ok_or_else(|| Error::data("payload size overflows"))?;
    let mut buf = vec![0u8; bytes];
    read_exact(r, &mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

struct Header {
    kind: u8,
    dims: Dims,
    rank: Option<usize>,
}

fn get_header(r: &mut impl Read) -> Result<Header> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::data("not an .xts file (bad magic)"));
    }
    let mut v = [0u8; 2];
    read_exact(r, &mut v)?;
    let version = u16::from_le_bytes(v);
    if version != VERSION {
        return Err(Error::data(format!("unsupported .xts version {version}")));
    }
    let mut k = [0u8; 1];
    read_exact(r, &mut k)?;
    let kind = k[0];
    if kind != KIND_DENSE && kind != KIND_FACTORS {
        return Err(Error::data(format!("unknown .xts kind {kind}")));
    }
    let dims = (get_u64(r)?, get_u64(r)?, get_u64(r)?);
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(Error::data(format!("zero dimension in {dims:?}")));
    }
    let rank = if kind == KIND_FACTORS {
        Some(get_u64(r)?)
    } else {
        None
    };
    read_exact(r, &mut k)?;
    if k[0] != WIDTH {
        return Err(Error::data(format!("unsupported scalar width {}", k[0])));
    }
    Ok(Header { kind, dims, rank })
}

fn element_count(dims: Dims) -> Result<usize> {
    dims.0
        .checked_mul(dims.1)
        .and_then(|x| x.checked_mul(dims.2))
        .ok_or_else(|| Error::data(format!("dims {dims:?} overflow")))
}

pub fn read_from(r: &mut impl Read) -> Result<XtsData> {
    let h = get_header(r)?;
    let data = match h.rank {
        None => XtsData::Dense(Tensor3::from_col_major(h.dims, get_values(r, element_count(h.dims)?)?)?),
        Some(rank) => {
            let d = [h.dims.0, h.dims.1, h.dims.2];
            let mats = d
                .iter()
                .map(|&n| {
                    let m = Matrix::from_col_major(n, rank, get_values(r, n * rank)?)?;
                    if !m.is_finite() {
                        return Err(Error::data("factor file contains non-finite values"));
                    }
                    Ok(m)
                })
                .collect::<Result<Vec<_>>>()?;
            let [a, b, c]: [Matrix; 3] = mats.try_into().expect("three modes");
            XtsData::Factors(FactorTriple::new(a, b, c).map_err(|e| Error::data(e.to_string()))?)
        }
    };
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::data("trailing bytes after .xts payload"));
    }
    Ok(data)
}

/// What an `.xts` file declares in its header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum XtsKind {
    Dense(Dims),
    Factors { dims: Dims, rank: usize },
}

/// Reads only the header of `path`.
pub fn peek(path: impl AsRef<Path>) -> Result<XtsKind> {
    let h = get_header(&mut BufReader::new(File::open(path)?))?;
    Ok(match h.rank {
        None => XtsKind::Dense(h.dims),
        Some(rank) => XtsKind::Factors { dims: h.dims, rank },
    })
}

pub fn read(path: impl AsRef<Path>) -> Result<XtsData> {
    read_from(&mut BufReader::new(File::open(path)?))
}

/// A dense `.xts` tensor left on disk and read one block at a time.
pub struct XtsTensorFile {
    file: Mutex<File>,
    dims: Dims,
}

impl XtsTensorFile {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let mut file = File::open(path)?;
        let h = get_header(&mut file)?;
        if h.kind != KIND_DENSE {
            return Err(Error::data("expected a dense tensor, found a factor file"));
        }
        let want = DENSE_HEADER + 8 * element_count(h.dims)? as u64;
        let len = file.metadata()?.len();
        if len != want {
            return Err(Error::data(format!(
                "file holds {len} bytes, header implies {want}"
            )));
        }
        Ok(XtsTensorFile {
            file: Mutex::new(file),
            dims: h.dims,
        })
    }

    /// Reads `count` values starting at element `offset`.
    fn read_run(&self, f: &mut File, offset: usize, count: usize) -> Result<Vec<f64>> {
        f.seek(SeekFrom::Start(DENSE_HEADER + 8 * offset as u64))?;
        let vals = get_values(f, count)?;
        if vals.iter().any(|x| !x.is_finite()) {
            return Err(Error::data("tensor file contains non-finite values"));
        }
        Ok(vals)
    }
}

impl TensorSource for XtsTensorFile {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn block(&self, ri: Range<usize>, rj: Range<usize>, rk: Range<usize>) -> Result<Tensor3> {
        check_ranges(self.dims, &ri, &rj, &rk)?;
        let (ni, nj, _) = self.dims;
        let mut f = self.file.lock().expect("file lock");
        let mut out = Vec::with_capacity(ri.len() * rj.len() * rk.len());
        for k in rk.clone() {
            for j in rj.clone() {
                out.extend(self.read_run(&mut f, ri.start + ni * (j + nj * k), ri.len())?);
            }
        }
        Tensor3::from_col_major((ri.len(), rj.len(), rk.len()), out)
    }

    fn gather(&self, ii: &[usize], jj: &[usize], kk: &[usize]) -> Result<Tensor3> {
        check_indices(self.dims, ii, jj, kk)?;
        let (ni, nj, _) = self.dims;
        let lo = *ii.iter().min().expect("nonempty");
        let hi = *ii.iter().max().expect("nonempty");
        let mut f = self.file.lock().expect("file lock");
        let mut out = Vec::with_capacity(ii.len() * jj.len() * kk.len());
        for &k in kk {
            for &j in jj {
                let run = self.read_run(&mut f, lo + ni * (j + nj * k), hi - lo + 1)?;
                out.extend(ii.iter().map(|&i| run[i - lo]));
            }
        }
        Tensor3::from_col_major((ii.len(), jj.len(), kk.len()), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::gen_gaussian;

    fn sample_tensor() -> Tensor3 {
        Tensor3::from_fn((4, 3, 5), |i, j, k| i as f64 - 2.5 * j as f64 + 0.125 * k as f64)
    }

    #[test]
    fn dense_round_trip() {
        let t = sample_tensor();
        let mut buf = Vec::new();
        write_tensor_to(&mut buf, &t).unwrap();
        assert_eq!(buf.len() as u64, DENSE_HEADER + 8 * 60);
        assert_eq!(&buf[..4], b"XTSR");
        assert_eq!(read_from(&mut buf.as_slice()).unwrap(), XtsData::Dense(t));
    }

    #[test]
    fn factor_round_trip() {
        let f = FactorTriple::new(gen_gaussian(3, 2, 1), gen_gaussian(4, 2, 2), gen_gaussian(5, 2, 3)).unwrap();
        let mut buf = Vec::new();
        write_factors_to(&mut buf, &f).unwrap();
        assert_eq!(buf[6], KIND_FACTORS);
        assert_eq!(read_from(&mut buf.as_slice()).unwrap(), XtsData::Factors(f));
    }

    #[test]
    fn corrupt_files_are_data_errors() {
        let mut buf = Vec::new();
        write_tensor_to(&mut buf, &sample_tensor()).unwrap();
        let is_data = |b: &[u8]| matches!(read_from(&mut &b[..]), Err(Error::Data(_)));
        assert!(is_data(&buf[..buf.len() - 3]));
        let mut bad = buf.clone();
        bad[0] = b'Y';
        assert!(is_data(&bad));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(is_data(&bad));
        let mut bad = buf.clone();
        bad[31] = 4;
        assert!(is_data(&bad));
        let mut bad = buf.clone();
        bad.push(0);
        assert!(is_data(&bad));
        let mut bad = buf.clone();
        let n = bad.len();
        bad[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(is_data(&bad));
    }

    #[test]
    fn out_of_core_reads_match_memory() {
        let t = sample_tensor();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.xts");
        write_tensor(&path, &t).unwrap();
        let f = XtsTensorFile::open(&path).unwrap();
        assert_eq!(TensorSource::dims(&f), (4, 3, 5));
        assert_eq!(f.block(1..3, 0..3, 2..5).unwrap(), t.block(1..3, 0..3, 2..5));
        let (ii, jj, kk) = ([3, 0], [1], [4, 0, 2]);
        assert_eq!(TensorSource::gather(&f, &ii, &jj, &kk).unwrap(), t.gather(&ii, &jj, &kk));
        assert!(f.block(0..5, 0..1, 0..1).unwrap_err().is_usage());
    }

    #[test]
    fn peek_reads_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let (dp, fp) = (dir.path().join("t.xts"), dir.path().join("f.xts"));
        write_tensor(&dp, &sample_tensor()).unwrap();
        let f = FactorTriple::new(gen_gaussian(3, 2, 1), gen_gaussian(4, 2, 2), gen_gaussian(5, 2, 3)).unwrap();
        write_factors(&fp, &f).unwrap();
        assert_eq!(peek(&dp).unwrap(), XtsKind::Dense((4, 3, 5)));
        assert_eq!(peek(&fp).unwrap(), XtsKind::Factors { dims: (3, 4, 5), rank: 2 });
    }
}

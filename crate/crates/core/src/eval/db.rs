//! Binary descriptor database.
//!
//! Layout (little-endian): magic `XVDB`, `u16` version, `u32` count, `u16` h,
//! `u16` w, `u16` total channels, then per entry `u64` id, `f64` x, `f64` y and
//! `h * w * c` `f32` descriptor values in row-major `(h, w, c)` order. Spectra are
//! rebuilt on load.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::dsm::{rank_references, FftCorrelator, MatchResult, Reference, TieBreak};
use crate::error::{Error, Result};
use crate::feat::{Descriptor, FeatureVolume};

pub const MAGIC: &[u8; 4] = b"XVDB";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 2 + 2 + 2;

/// Geotagged satellite descriptors with cached spectra.
pub struct DescriptorDb {
    h: usize,
    w: usize,
    c: usize,
    fft: FftCorrelator<f32>,
    refs: Vec<Reference<f32>>,
    geotags: Vec<(f64, f64)>,
    index: HashMap<u64, usize>,
}

impl std::fmt::Debug for DescriptorDb {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DescriptorDb")
            .field("shape", &(self.h, self.w, self.c))
            .field("len", &self.refs.len())
            .finish()
    }
}

impl DescriptorDb {
    /// Empty database for `h x w x c` descriptors, half of the channels projective.
    pub fn new(h: usize, w: usize, c: usize) -> Result<Self> {
        if h == 0 || w == 0 || c == 0 || c % 2 != 0 {
            return Err(Error::invalid(format!(
                "database shape {h}x{w}x{c} needs positive sizes and an even channel count"
            )));
        }
        if h > u16::MAX as usize || w > u16::MAX as usize || c > u16::MAX as usize {
            return Err(Error::invalid("database shape does not fit the file header"));
        }
        Ok(Self {
            h,
            w,
            c,
            fft: FftCorrelator::new(w)?,
            refs: Vec::new(),
            geotags: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn insert(&mut self, id: u64, x_m: f64, y_m: f64, desc: Descriptor<f32>) -> Result<()> {
        if (desc.h(), desc.w(), desc.c()) != (self.h, self.w, self.c) {
            return Err(Error::invalid(format!(
                "descriptor {}x{}x{} does not match database shape {}x{}x{}",
                desc.h(),
                desc.w(),
                desc.c(),
                self.h,
                self.w,
                self.c
            )));
        }
        if self.index.contains_key(&id) {
            return Err(Error::invalid(format!("duplicate reference id {id}")));
        }
        self.index.insert(id, self.refs.len());
        self.refs.push(Reference::new(id, desc, &self.fft)?);
        self.geotags.push((x_m, y_m));
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn references(&self) -> &[Reference<f32>] {
        &self.refs
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.refs.iter().map(|r| r.id)
    }

    pub fn geotag(&self, id: u64) -> Option<(f64, f64)> {
        self.index.get(&id).map(|&i| self.geotags[i])
    }

    pub fn geotags(&self) -> HashMap<u64, (f64, f64)> {
        self.refs.iter().zip(&self.geotags).map(|(r, &g)| (r.id, g)).collect()
    }

    pub fn correlator(&self) -> &FftCorrelator<f32> {
        &self.fft
    }

    /// Full ranking of the database against a ground descriptor.
    pub fn rank(&self, query: &Descriptor<f32>, fov_deg: f64, tie: TieBreak) -> Result<Vec<MatchResult>> {
        rank_references(query, &self.refs, &self.fft, fov_deg, tie)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let per = self.h * self.w * self.c;
        let mut out = Vec::with_capacity(HEADER_LEN + self.refs.len() * (24 + 4 * per));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.refs.len() as u32).to_le_bytes());
        for d in [self.h, self.w, self.c] {
            out.extend_from_slice(&(d as u16).to_le_bytes());
        }
        for (r, &(x, y)) in self.refs.iter().zip(&self.geotags) {
            out.extend_from_slice(&r.id.to_le_bytes());
            out.extend_from_slice(&x.to_le_bytes());
            out.extend_from_slice(&y.to_le_bytes());
            for v in r.descriptor.volume().data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { bytes, pos: 0 };
        if rd.take(4)? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad magic, expected XVDB".into(),
            });
        }
        let version = u16::from_le_bytes(rd.array()?);
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported version {version}"),
            });
        }
        let count = u32::from_le_bytes(rd.array()?) as usize;
        let dims_at = rd.pos as u64;
        let h = u16::from_le_bytes(rd.array()?) as usize;
        let w = u16::from_le_bytes(rd.array()?) as usize;
        let c = u16::from_le_bytes(rd.array()?) as usize;
        let mut db = Self::new(h, w, c).map_err(|e| Error::Format {
            offset: dims_at,
            message: e.to_string(),
        })?;
        let per = h * w * c;
        for _ in 0..count {
            let entry_at = rd.pos as u64;
            let id = u64::from_le_bytes(rd.array()?);
            let x = f64::from_le_bytes(rd.array()?);
            let y = f64::from_le_bytes(rd.array()?);
            let raw = rd.take(4 * per)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let vol = FeatureVolume::from_vec(h, w, c, data)?;
            let desc = Descriptor::from_volume(vol, c / 2)?;
            db.insert(id, x, y, desc).map_err(|e| Error::Format {
                offset: entry_at,
                message: e.to_string(),
            })?;
        }
        if rd.pos != bytes.len() {
            return Err(Error::Format {
                offset: rd.pos as u64,
                message: format!("{} trailing bytes", bytes.len() - rd.pos),
            });
        }
        Ok(db)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                offset: self.bytes.len() as u64,
                message: format!("truncated: needed {n} bytes at offset {}", self.pos),
            }),
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice has N bytes"))
    }
}

pub fn save_db(db: &DescriptorDb, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, db.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_db(path: impl AsRef<Path>) -> Result<DescriptorDb> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    DescriptorDb::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_db(n: usize, seed: u64) -> DescriptorDb {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut db = DescriptorDb::new(4, 16, 4).unwrap();
        for i in 0..n {
            let vol = FeatureVolume::from_fn(4, 16, 4, |_, _, _| rng.gen::<f32>());
            let d = Descriptor::from_volume(vol, 2).unwrap();
            db.insert(i as u64 * 7 + 3, rng.gen_range(-1e3..1e3), rng.gen(), d).unwrap();
        }
        db
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let db = random_db(5, 1);
        let back = DescriptorDb::from_bytes(&db.to_bytes()).unwrap();
        assert_eq!(back.len(), 5);
        for (a, b) in db.references().iter().zip(back.references()) {
            assert_eq!(a.id, b.id);
            let bits = |r: &Reference<f32>| r.descriptor.volume().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
            assert_eq!(a.spectrum(), b.spectrum());
            assert_eq!(db.geotag(a.id).unwrap().0.to_bits(), back.geotag(b.id).unwrap().0.to_bits());
        }
        assert_eq!(back.to_bytes(), db.to_bytes());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("refs.xvdb");
        let db = random_db(3, 2);
        save_db(&db, &path).unwrap();
        assert_eq!(load_db(&path).unwrap().to_bytes(), db.to_bytes());
        assert!(matches!(load_db(dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn corrupted_files_report_offsets() {
        let bytes = random_db(2, 3).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'Y';
        assert!(matches!(DescriptorDb::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(DescriptorDb::from_bytes(&bad), Err(Error::Format { offset: 4, .. })));
        let cut = &bytes[..bytes.len() - 3];
        match DescriptorDb::from_bytes(cut) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, cut.len() as u64),
            other => panic!("{other:?}"),
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            DescriptorDb::from_bytes(&long),
            Err(Error::Format { offset, .. }) if offset == bytes.len() as u64
        ));
        assert!(DescriptorDb::from_bytes(&bytes[..6]).is_err());
    }

    #[test]
    fn empty_database() {
        let db = DescriptorDb::new(4, 64, 16).unwrap();
        let back = DescriptorDb::from_bytes(&db.to_bytes()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.shape(), (4, 64, 16));
        let q = Descriptor::from_volume(FeatureVolume::zeros(4, 64, 16), 8).unwrap();
        assert!(back.rank(&q, 360.0, TieBreak::Lowest).is_err());
    }

    #[test]
    fn rejects_duplicates_and_shape_changes() {
        let mut db = random_db(2, 4);
        let d = Descriptor::from_volume(FeatureVolume::zeros(4, 16, 4), 2).unwrap();
        assert!(db.insert(3, 0.0, 0.0, d.clone()).is_err());
        let other = Descriptor::from_volume(FeatureVolume::zeros(4, 8, 4), 2).unwrap();
        assert!(db.insert(99, 0.0, 0.0, other).is_err());
        assert!(DescriptorDb::new(4, 0, 16).is_err());
        assert!(DescriptorDb::new(4, 64, 15).is_err());
    }
}

//! Bit-stable binary encoding of containers and pipeline checkpoints.
//!
//! Little-endian, every sequence length-prefixed with a u64, maps written in
//! key order, floats as raw IEEE-754 bits. Payloads start with a u16 format
//! version.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::model::{
    IntraBounds, Matrix, Series, SplitAssignment, SplitContainer, SplitTag, Support, SupportMap, UnitFrame,
};
use crate::transforms::{FitRecord, FittedTransformState, PipelineCheckpoint};

pub const FORMAT_VERSION: u16 = 1;

const CONTAINER_MARK: u8 = b'C';
const CHECKPOINT_MARK: u8 = b'P';

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn tag(&mut self, t: SplitTag) {
        self.u8(match t {
            SplitTag::Train => 0,
            SplitTag::Val => 1,
            SplitTag::Test => 2,
        });
    }
    fn f64s(&mut self, v: &[f64]) {
        self.len(v.len());
        for x in v {
            self.f64(*x);
        }
    }
    fn string_map(&mut self, m: &BTreeMap<String, String>) {
        self.len(m.len());
        for (k, v) in m {
            self.str(k);
            self.str(v);
        }
    }
    fn matrix(&mut self, m: &Matrix) {
        self.len(m.rows());
        self.len(m.cols());
        for x in m.data() {
            self.f64(*x);
        }
    }
    fn support(&mut self, s: &SupportMap) {
        self.len(s.len());
        for e in s.entries() {
            match *e {
                Support::Point(i) => {
                    self.u8(0);
                    self.len(i);
                }
                Support::Span { lo, hi } => {
                    self.u8(1);
                    self.len(lo);
                    self.len(hi);
                }
                Support::Artificial => self.u8(2),
            }
        }
    }
    fn frame(&mut self, f: &UnitFrame) {
        self.str(&f.unit_id);
        self.len(f.raw_len);
        self.len(f.arrays.len());
        for (k, s) in &f.arrays {
            self.str(k);
            self.matrix(&s.values);
            self.support(&s.support);
        }
        self.string_map(&f.metadata);
    }
    fn container(&mut self, c: &SplitContainer) {
        match &c.assignment {
            SplitAssignment::InterUnit(m) => {
                self.u8(0);
                self.len(m.len());
                for (u, t) in m {
                    self.str(u);
                    self.tag(*t);
                }
            }
            SplitAssignment::IntraUnit(m) => {
                self.u8(1);
                self.len(m.len());
                for (u, b) in m {
                    self.str(u);
                    self.len(b.tau_train);
                    self.len(b.tau_val);
                    self.len(b.t_prime);
                    self.len(b.raw_train_limit);
                }
            }
        }
        for tag in SplitTag::ALL {
            let frames = c.split(tag);
            self.len(frames.len());
            for f in frames {
                self.frame(f);
            }
        }
        for tag in SplitTag::ALL {
            let history = c.history.get(&tag).map_or(&[][..], Vec::as_slice);
            self.len(history.len());
            for h in history {
                self.str(h);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn truncated() -> Error {
    Error::Corrupt("payload truncated".into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(truncated)?;
        let out = self.buf.get(self.pos..end).ok_or_else(truncated)?;
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        // Every counted item takes at least one byte, so a count larger than
        // the remaining input can only come from corruption.
        if v > (self.buf.len() - self.pos) as u64 {
            return Err(Error::Corrupt(format!("implausible length {v}")));
        }
        Ok(v as usize)
    }
    fn index(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Corrupt("index overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Corrupt("invalid UTF-8".into()))
    }
    fn tag(&mut self) -> Result<SplitTag> {
        match self.u8()? {
            0 => Ok(SplitTag::Train),
            1 => Ok(SplitTag::Val),
            2 => Ok(SplitTag::Test),
            t => Err(Error::Corrupt(format!("unknown split tag {t}"))),
        }
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn string_map(&mut self) -> Result<BTreeMap<String, String>> {
        let n = self.len()?;
        (0..n).map(|_| Ok((self.str()?, self.str()?))).collect()
    }
    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let count = rows.checked_mul(cols).ok_or_else(truncated)?;
        if count > self.buf.len() {
            return Err(truncated());
        }
        let data = (0..count).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Matrix::new(rows, cols, data).map_err(|e| Error::Corrupt(e.to_string()))
    }
    fn support(&mut self) -> Result<SupportMap> {
        let n = self.len()?;
        let entries = (0..n)
            .map(|_| match self.u8()? {
                0 => Ok(Support::Point(self.index()?)),
                1 => Ok(Support::Span {
                    lo: self.index()?,
                    hi: self.index()?,
                }),
                2 => Ok(Support::Artificial),
                t => Err(Error::Corrupt(format!("unknown support tag {t}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SupportMap::new(entries))
    }
    fn frame(&mut self) -> Result<UnitFrame> {
        let unit_id = self.str()?;
        let raw_len = self.index()?;
        let n = self.len()?;
        let mut arrays = BTreeMap::new();
        for _ in 0..n {
            let key = self.str()?;
            let values = self.matrix()?;
            let support = self.support()?;
            arrays.insert(
                key,
                Series::new(values, support).map_err(|e| Error::Corrupt(e.to_string()))?,
            );
        }
        Ok(UnitFrame {
            unit_id,
            raw_len,
            arrays,
            metadata: self.string_map()?,
        })
    }
    fn container(&mut self) -> Result<SplitContainer> {
        let assignment = match self.u8()? {
            0 => {
                let n = self.len()?;
                let mut m = BTreeMap::new();
                for _ in 0..n {
                    m.insert(self.str()?, self.tag()?);
                }
                SplitAssignment::InterUnit(m)
            }
            1 => {
                let n = self.len()?;
                let mut m = BTreeMap::new();
                for _ in 0..n {
                    let unit = self.str()?;
                    m.insert(
                        unit,
                        IntraBounds {
                            tau_train: self.index()?,
                            tau_val: self.index()?,
                            t_prime: self.index()?,
                            raw_train_limit: self.index()?,
                        },
                    );
                }
                SplitAssignment::IntraUnit(m)
            }
            t => return Err(Error::Corrupt(format!("unknown assignment tag {t}"))),
        };
        let mut splits = BTreeMap::new();
        for tag in SplitTag::ALL {
            let n = self.len()?;
            splits.insert(tag, (0..n).map(|_| self.frame()).collect::<Result<Vec<_>>>()?);
        }
        let mut history = BTreeMap::new();
        for tag in SplitTag::ALL {
            let n = self.len()?;
            history.insert(tag, (0..n).map(|_| self.str()).collect::<Result<Vec<_>>>()?);
        }
        Ok(SplitContainer {
            assignment,
            splits,
            history,
        })
    }
    fn header(&mut self, mark: u8) -> Result<()> {
        let version = self.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if self.u8()? != mark {
            return Err(Error::Corrupt("payload holds a different record type".into()));
        }
        Ok(())
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn serialize_container(container: &SplitContainer) -> Vec<u8> {
    let mut w = Writer::default();
    w.u16(FORMAT_VERSION);
    w.u8(CONTAINER_MARK);
    w.container(container);
    w.buf
}

pub fn deserialize_container(bytes: &[u8]) -> Result<SplitContainer> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(CONTAINER_MARK)?;
    let c = r.container()?;
    r.finish()?;
    Ok(c)
}

pub fn serialize_checkpoint(cp: &PipelineCheckpoint) -> Vec<u8> {
    let mut w = Writer::default();
    w.u16(FORMAT_VERSION);
    w.u8(CHECKPOINT_MARK);
    w.container(&cp.container);
    w.len(cp.states.len());
    for s in &cp.states {
        w.str(&s.stage_name);
        w.len(s.params.len());
        for (k, v) in &s.params {
            w.str(k);
            w.f64s(v);
        }
        w.tag(s.fitted_on);
        w.buf.extend_from_slice(&s.fingerprint);
    }
    w.len(cp.fit_log.len());
    for f in &cp.fit_log {
        w.len(f.stage_index);
        w.str(&f.stage_name);
        w.tag(f.fitted_on);
        w.len(f.consumed_splits.len());
        for t in &f.consumed_splits {
            w.tag(*t);
        }
        w.len(f.consumed_raw_hi.len());
        for (u, hi) in &f.consumed_raw_hi {
            w.str(u);
            w.len(*hi);
        }
        w.str(&f.state_fingerprint);
    }
    w.len(cp.notes.len());
    for n in &cp.notes {
        w.str(n);
    }
    w.buf
}

pub fn deserialize_checkpoint(bytes: &[u8]) -> Result<PipelineCheckpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(CHECKPOINT_MARK)?;
    let container = r.container()?;
    let n = r.len()?;
    let mut states = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let stage_name = r.str()?;
        let m = r.len()?;
        let mut params = BTreeMap::new();
        for _ in 0..m {
            params.insert(r.str()?, r.f64s()?);
        }
        let fitted_on = r.tag()?;
        let fingerprint: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let state = FittedTransformState {
            stage_name,
            params,
            fitted_on,
            fingerprint,
        };
        if !state.verify() {
            return Err(Error::Corrupt(format!(
                "fingerprint of stage `{}` does not match its params",
                state.stage_name
            )));
        }
        states.push(state);
    }
    let n = r.len()?;
    let mut fit_log = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let stage_index = r.index()?;
        let stage_name = r.str()?;
        let fitted_on = r.tag()?;
        let k = r.len()?;
        let consumed_splits = (0..k).map(|_| r.tag()).collect::<Result<BTreeSet<_>>>()?;
        let k = r.len()?;
        let consumed_raw_hi = (0..k)
            .map(|_| Ok((r.str()?, r.index()?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        fit_log.push(FitRecord {
            stage_index,
            stage_name,
            fitted_on,
            consumed_splits,
            consumed_raw_hi,
            state_fingerprint: r.str()?,
        });
    }
    let n = r.len()?;
    let notes = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(PipelineCheckpoint {
        container,
        states,
        fit_log,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RawUnit;

    fn container() -> SplitContainer {
        let units: Vec<RawUnit> = ["a", "b", "c"]
            .iter()
            .map(|id| {
                let x = vec![1.0, f64::from_bits(0x7ff8_0000_0000_0042), 3.0];
                RawUnit::new(*id, Matrix::column_vector(x.clone()), x, vec!["x".into()])
                    .unwrap()
                    .with_metadata("k", "v")
            })
            .collect();
        let a = SplitAssignment::inter(&["a"], &["b"], &["c"]).unwrap();
        SplitContainer::from_raw(&units, a).unwrap()
    }

    #[test]
    fn container_round_trip_preserves_nan_payloads() {
        let c = container();
        let bytes = serialize_container(&c);
        let back = deserialize_container(&bytes).unwrap();
        assert_eq!(serialize_container(&back), bytes);
        let v = back.split(SplitTag::Train)[0].arrays["features"].values.get(1, 0);
        assert_eq!(v.to_bits(), 0x7ff8_0000_0000_0042);
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = serialize_container(&container());
        bytes[0] = 9;
        assert!(matches!(
            deserialize_container(&bytes),
            Err(Error::Version { found: 9, .. })
        ));
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = serialize_container(&container());
        for cut in [3, bytes.len() / 2, bytes.len() - 1] {
            assert!(deserialize_container(&bytes[..cut]).is_err());
        }
    }
}

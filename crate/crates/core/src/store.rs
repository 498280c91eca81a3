//! Feature store and its on-disk formats.
//!
//! Formats:
//! - CSV: `id,v1,...,vd` per line, no header.
//! - Binary: magic `CTXSIMF1`, `u32` LE dim, `u32` LE row count, then per row
//!   a `u32` LE byte length followed by the UTF-8 id, then all values as
//!   row-major little-endian `f64`.
//! - Labels TSV: `id<TAB>category_id<TAB>attribute_id`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 8] = b"CTXSIMF1";

/// Norms this close to one are treated as already normalized, which keeps
/// ingestion idempotent (load/save/load is bit-exact).
const UNIT_NORM_SLACK: f64 = 4.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label {
    pub category: u32,
    pub attribute: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Binary,
}

impl Format {
    /// `.csv` is CSV; anything else is the binary format.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

/// Immutable, row-indexed set of unit-norm feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    data: Vec<f64>,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    labels: Option<Vec<Label>>,
}

impl FeatureStore {
    /// Builds a store, L2-normalizing every row.
    pub fn from_rows(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(dim * rows.len());
        if ids.len() != rows.len() {
            return Err(Error::DimMismatch {
                expected: ids.len(),
                got: rows.len(),
            });
        }
        for row in &rows {
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(dim, ids, data)
    }

    fn from_flat(dim: usize, ids: Vec<String>, mut data: Vec<f64>) -> Result<Self> {
        if dim == 0 && !ids.is_empty() {
            return Err(Error::param("dim", "feature dimension must be positive"));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        for (i, row) in data.chunks_mut(dim.max(1)).enumerate() {
            normalize_row(&ids[i], row)?;
        }
        Ok(FeatureStore {
            dim,
            data,
            ids,
            index,
            labels: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim.max(1))
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Resolves every id, reporting all unknown ones at once.
    pub fn resolve<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<usize>> {
        let mut missing = Vec::new();
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            match self.index_of(id.as_ref()) {
                Some(i) => out.push(i),
                None => missing.push(id.as_ref().to_string()),
            }
        }
        if missing.is_empty() {
            Ok(out)
        } else {
            Err(Error::UnknownIds(missing))
        }
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<Label> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn require_labels(&self) -> Result<&[Label]> {
        self.labels().ok_or(Error::MissingLabels)
    }

    pub fn set_labels(&mut self, labels: Vec<Label>) -> Result<()> {
        if labels.len() != self.len() {
            return Err(Error::DimMismatch {
                expected: self.len(),
                got: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(())
    }

    pub fn with_labels(mut self, labels: Vec<Label>) -> Result<Self> {
        self.set_labels(labels)?;
        Ok(self)
    }

    /// Row indices grouped by category, categories in ascending order.
    pub fn by_category(&self) -> Result<BTreeMap<u32, Vec<usize>>> {
        let labels = self.require_labels()?;
        let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            out.entry(l.category).or_default().push(i);
        }
        Ok(out)
    }

    /// Row indices grouped by (category, attribute).
    pub fn by_combo(&self) -> Result<BTreeMap<Label, Vec<usize>>> {
        let labels = self.require_labels()?;
        let mut out: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            out.entry(*l).or_default().push(i);
        }
        Ok(out)
    }

    pub fn load(path: &Path, format: Format) -> Result<Self> {
        match format {
            Format::Csv => Self::load_csv(path),
            Format::Binary => Self::load_binary(path),
        }
    }

    pub fn save(&self, path: &Path, format: Format) -> Result<()> {
        match format {
            Format::Csv => self.save_csv(path),
            Format::Binary => self.save_binary(path),
        }
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ids = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg,
            };
            let mut fields = line.split(',');
            let id = fields.next().unwrap_or_default().trim().to_string();
            if id.is_empty() {
                return Err(parse_err("empty id".into()));
            }
            let mut count = 0;
            for f in fields {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(format!("bad number `{}`", f.trim())))?;
                if !v.is_finite() {
                    return Err(Error::NonFinite { id });
                }
                data.push(v);
                count += 1;
            }
            match dim {
                None if count == 0 => return Err(parse_err("row has no values".into())),
                None => dim = Some(count),
                Some(d) if d != count => {
                    return Err(parse_err(format!("expected {d} values, found {count}")))
                }
                Some(_) => {}
            }
            ids.push(id);
        }
        Self::from_flat(dim.unwrap_or(0), ids, data)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(id);
            for v in self.row(i) {
                // `{:?}` prints the shortest string that round-trips exactly.
                out.push_str(&format!(",{v:?}"));
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load_binary(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_binary(&bytes).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg,
        })?
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_binary();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn encode_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 8);
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Outer error is a framing problem; inner is a content problem.
    fn decode_binary(bytes: &[u8]) -> std::result::Result<Result<Self>, String> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != BINARY_MAGIC {
            return Err("bad magic".into());
        }
        let dim = cur.u32()? as usize;
        let n = cur.u32()? as usize;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let len = cur.u32()? as usize;
            let raw = cur.take(len)?;
            let id = std::str::from_utf8(raw).map_err(|_| "id is not valid UTF-8".to_string())?;
            ids.push(id.to_string());
        }
        let count = n
            .checked_mul(dim)
            .ok_or_else(|| "row count overflow".to_string())?;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let raw = cur.take(8)?;
            data.push(f64::from_le_bytes(raw.try_into().expect("8 bytes")));
        }
        if cur.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - cur.pos));
        }
        for (i, row) in data.chunks(dim.max(1)).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Ok(Err(Error::NonFinite { id: ids[i].clone() }));
            }
        }
        Ok(Self::from_flat(dim, ids, data))
    }

    pub fn load_labels(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut labels: Vec<Option<Label>> = vec![None; self.len()];
        let mut unknown = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg,
            };
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(parse_err(format!("expected 3 fields, found {}", fields.len())));
            }
            let num = |s: &str| {
                s.parse::<u32>()
                    .map_err(|_| parse_err(format!("bad label `{s}`")))
            };
            let label = Label {
                category: num(fields[1])?,
                attribute: num(fields[2])?,
            };
            match self.index_of(fields[0]) {
                Some(i) => {
                    if labels[i].replace(label).is_some() {
                        return Err(Error::DuplicateId(fields[0].to_string()));
                    }
                }
                None => unknown.push(fields[0].to_string()),
            }
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownIds(unknown));
        }
        let missing: Vec<String> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_none())
            .map(|(i, _)| self.ids[i].clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Insufficient(format!(
                "labels missing for {} row(s), first `{}`",
                missing.len(),
                missing[0]
            )));
        }
        self.labels = Some(labels.into_iter().map(Option::unwrap).collect());
        Ok(())
    }

    pub fn save_labels(&self, path: &Path) -> Result<()> {
        let labels = self.require_labels()?;
        let mut out = String::new();
        for (id, l) in self.ids.iter().zip(labels) {
            out.push_str(&format!("{id}\t{}\t{}\n", l.category, l.attribute));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn normalize_row(id: &str, row: &mut [f64]) -> Result<()> {
    if row.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { id: id.to_string() });
    }
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroNorm { id: id.to_string() });
    }
    if !norm.is_finite() {
        return Err(Error::NonFinite { id: id.to_string() });
    }
    if (norm - 1.0).abs() > UNIT_NORM_SLACK {
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated file at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn csv_row_is_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "f.csv", "img1,3,4\n");
        let s = FeatureStore::load_csv(&p).unwrap();
        assert_eq!(s.dim(), 2);
        assert!((s.row(0)[0] - 0.6).abs() < 1e-15);
        assert!((s.row(0)[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn csv_zero_row_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "f.csv", "img1,0,0\n");
        assert!(matches!(
            FeatureStore::load_csv(&p),
            Err(Error::ZeroNorm { id }) if id == "img1"
        ));
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "a,1,0\nb,1\n");
        assert!(matches!(FeatureStore::load_csv(&p), Err(Error::Parse { line: 2, .. })));
        let p = write(&dir, "b.csv", "a,1,0\na,0,1\n");
        assert!(matches!(FeatureStore::load_csv(&p), Err(Error::DuplicateId(_))));
        let p = write(&dir, "c.csv", "a,1,NaN\n");
        assert!(matches!(FeatureStore::load_csv(&p), Err(Error::NonFinite { .. })));
        let p = write(&dir, "d.csv", "a,1,x\n");
        assert!(matches!(FeatureStore::load_csv(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn binary_roundtrip_through_writer() {
        let dir = tempfile::tempdir().unwrap();
        let store = FeatureStore::from_rows(
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 2.0, 3.0, 4.0], vec![-1.0, 0.5, 0.25, 0.0]],
        )
        .unwrap();
        let p = dir.path().join("f.bin");
        store.save_binary(&p).unwrap();
        let back = FeatureStore::load_binary(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.dim(), 4);
        assert_eq!(back.encode_binary(), store.encode_binary());
    }

    #[test]
    fn binary_rejects_bad_framing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        fs::write(&p, b"NOTMAGIC\x01\0\0\0").unwrap();
        assert!(matches!(FeatureStore::load_binary(&p), Err(Error::Parse { .. })));
        let store = FeatureStore::from_rows(vec!["a".into()], vec![vec![1.0, 0.0]]).unwrap();
        let mut bytes = store.encode_binary();
        bytes.pop();
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(FeatureStore::load_binary(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn labels_tsv() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(&dir, "f.csv", "a,1,0\nb,0,1\n");
        let mut s = FeatureStore::load_csv(&f).unwrap();
        let l = write(&dir, "l.tsv", "b\t1\t2\na\t0\t3\n");
        s.load_labels(&l).unwrap();
        assert_eq!(s.label(0), Some(Label { category: 0, attribute: 3 }));
        assert_eq!(s.label(1), Some(Label { category: 1, attribute: 2 }));

        let l = write(&dir, "l2.tsv", "a\t0\t3\nzz\t1\t1\n");
        assert!(matches!(s.load_labels(&l), Err(Error::UnknownIds(ids)) if ids == ["zz"]));
        let l = write(&dir, "l3.tsv", "a\t0\t3\n");
        assert!(matches!(s.load_labels(&l), Err(Error::Insufficient(_))));
    }

    #[test]
    fn resolve_lists_every_missing_id() {
        let s = FeatureStore::from_rows(vec!["a".into()], vec![vec![1.0]]).unwrap();
        match s.resolve(&["x", "a", "y"]) {
            Err(Error::UnknownIds(ids)) => assert_eq!(ids, ["x", "y"]),
            other => panic!("{other:?}"),
        }
    }
}

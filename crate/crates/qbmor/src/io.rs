//! File formats: Matrix Market matrices, sparse order-3 tensor files, and
//! the JSON system manifest.
//!
//! A system on disk is a directory containing
//! - `system.json` with dimensions and relative paths,
//! - one Matrix Market coordinate file per sparse matrix (1-based indices),
//! - one tensor file for the quadratic term with header
//!   `%%qbtensor3 <n> <nnz>` followed by `i j k value` records (1-based).
//!
//! All writers are atomic: content goes to a temporary file in the target
//! directory which is renamed into place, so readers never observe a
//! half-written file.

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::system::QBSystem;
use crate::tensor::SparseTensor3;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// JSON manifest describing a system directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemManifest {
    pub n: usize,
    pub m_in: usize,
    pub p_out: usize,
    pub e: String,
    pub a: String,
    pub n_mats: Vec<String>,
    pub h: String,
    pub b: String,
    pub c: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub output_labels: Vec<String>,
}

/// Writes `content` to `path` atomically (temporary file plus rename).
pub fn atomic_write(path: &Path, content: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let stem = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "file".to_string());
    let tmp = dir.join(format!(".{stem}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(content).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads a real general Matrix Market coordinate file.
pub fn read_matrix_market(path: &Path) -> Result<SparseMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        msg,
    };

    let (first_no, first) = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty file".into()))?;
    let banner: Vec<String> = first.split_whitespace().map(str::to_lowercase).collect();
    if banner.len() < 5
        || banner[0] != "%%matrixmarket"
        || banner[1] != "matrix"
        || banner[2] != "coordinate"
        || banner[3] != "real"
        || banner[4] != "general"
    {
        return Err(parse_err(
            first_no,
            format!("expected '%%MatrixMarket matrix coordinate real general', found '{first}'"),
        ));
    }

    let mut dims: Option<(usize, usize, usize)> = None;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for (no, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match dims {
            None => {
                if fields.len() != 3 {
                    return Err(parse_err(no, "expected 'nrows ncols nnz'".into()));
                }
                let parse = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| parse_err(no, format!("bad integer '{s}'")))
                };
                dims = Some((parse(fields[0])?, parse(fields[1])?, parse(fields[2])?));
                triplets.reserve(dims.unwrap().2);
            }
            Some((nrows, ncols, _)) => {
                if fields.len() != 3 {
                    return Err(parse_err(no, "expected 'i j value'".into()));
                }
                let i: usize = fields[0]
                    .parse()
                    .map_err(|_| parse_err(no, format!("bad row index '{}'", fields[0])))?;
                let j: usize = fields[1]
                    .parse()
                    .map_err(|_| parse_err(no, format!("bad column index '{}'", fields[1])))?;
                let v: f64 = fields[2]
                    .parse()
                    .map_err(|_| parse_err(no, format!("bad value '{}'", fields[2])))?;
                if i == 0 || j == 0 || i > nrows || j > ncols {
                    return Err(parse_err(
                        no,
                        format!("index ({i}, {j}) outside 1..={nrows} x 1..={ncols}"),
                    ));
                }
                triplets.push((i - 1, j - 1, v));
            }
        }
    }
    let (nrows, ncols, nnz) = dims.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: "missing dimension line".into(),
    })?;
    if triplets.len() != nnz {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("header promises {nnz} entries, found {}", triplets.len()),
        });
    }
    SparseMatrix::from_triplets(nrows, ncols, &triplets)
}

/// Writes a matrix as a real general Matrix Market coordinate file with
/// full-precision values.
pub fn write_matrix_market(path: &Path, m: &SparseMatrix) -> Result<()> {
    let mut out = String::with_capacity(64 + 32 * m.nnz());
    out.push_str("%%MatrixMarket matrix coordinate real general\n");
    out.push_str(&format!("{} {} {}\n", m.nrows(), m.ncols(), m.nnz()));
    for (i, j, v) in m.iter() {
        out.push_str(&format!("{} {} {:.16e}\n", i + 1, j + 1, v));
    }
    atomic_write(path, out.as_bytes())
}

/// Reads a sparse order-3 tensor file (`%%qbtensor3 <n> <nnz>` header,
/// 1-based `i j k value` records).
pub fn read_tensor(path: &Path) -> Result<SparseTensor3> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (first_no, first) = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty file".into()))?;
    let fields: Vec<&str> = first.split_whitespace().collect();
    if fields.len() != 3 || fields[0] != "%%qbtensor3" {
        return Err(parse_err(
            first_no,
            format!("expected '%%qbtensor3 <n> <nnz>', found '{first}'"),
        ));
    }
    let dim: usize = fields[1]
        .parse()
        .map_err(|_| parse_err(first_no, format!("bad dimension '{}'", fields[1])))?;
    let nnz: usize = fields[2]
        .parse()
        .map_err(|_| parse_err(first_no, format!("bad entry count '{}'", fields[2])))?;

    let mut entries = Vec::with_capacity(nnz);
    for (no, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_err(no, "expected 'i j k value'".into()));
        }
        let idx = |s: &str| -> Result<usize> {
            let v: usize = s
                .parse()
                .map_err(|_| parse_err(no, format!("bad index '{s}'")))?;
            if v == 0 || v > dim {
                return Err(parse_err(no, format!("index {v} outside 1..={dim}")));
            }
            Ok(v - 1)
        };
        let value: f64 = fields[3]
            .parse()
            .map_err(|_| parse_err(no, format!("bad value '{}'", fields[3])))?;
        entries.push((idx(fields[0])?, idx(fields[1])?, idx(fields[2])?, value));
    }
    if entries.len() != nnz {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("header promises {nnz} entries, found {}", entries.len()),
        });
    }
    SparseTensor3::from_entries(dim, &entries)
}

/// Writes a sparse order-3 tensor file with full-precision values.
pub fn write_tensor(path: &Path, t: &SparseTensor3) -> Result<()> {
    let mut out = String::with_capacity(32 + 40 * t.nnz());
    out.push_str(&format!("%%qbtensor3 {} {}\n", t.dim(), t.nnz()));
    for (i, j, k, v) in t.iter() {
        out.push_str(&format!("{} {} {} {:.16e}\n", i + 1, j + 1, k + 1, v));
    }
    atomic_write(path, out.as_bytes())
}

/// Saves a system into `dir` (created if missing): the manifest plus one
/// file per operator.
pub fn save_system(sys: &QBSystem, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix_market(&dir.join("e.mtx"), &sys.e)?;
    write_matrix_market(&dir.join("a.mtx"), &sys.a)?;
    let mut n_names = Vec::new();
    for (k, nk) in sys.n_mats.iter().enumerate() {
        let name = format!("n_{}.mtx", k + 1);
        write_matrix_market(&dir.join(&name), nk)?;
        n_names.push(name);
    }
    write_tensor(&dir.join("h.qbt"), &sys.h)?;
    write_matrix_market(&dir.join("b.mtx"), &sys.b)?;
    write_matrix_market(&dir.join("c.mtx"), &sys.c)?;
    let manifest = SystemManifest {
        n: sys.n(),
        m_in: sys.m_in(),
        p_out: sys.p_out(),
        e: "e.mtx".into(),
        a: "a.mtx".into(),
        n_mats: n_names,
        h: "h.qbt".into(),
        b: "b.mtx".into(),
        c: "c.mtx".into(),
        input_labels: sys.input_labels.clone(),
        output_labels: sys.output_labels.clone(),
    };
    write_json(&dir.join("system.json"), &manifest)
}

/// Loads a system from a manifest path or a directory containing
/// `system.json`.
pub fn load_system(path: &Path) -> Result<QBSystem> {
    let manifest_path = if path.is_dir() {
        path.join("system.json")
    } else {
        path.to_path_buf()
    };
    let manifest: SystemManifest = read_json(&manifest_path)?;
    let dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let e = read_matrix_market(&dir.join(&manifest.e))?;
    let a = read_matrix_market(&dir.join(&manifest.a))?;
    let n_mats: Vec<SparseMatrix> = manifest
        .n_mats
        .iter()
        .map(|name| read_matrix_market(&dir.join(name)))
        .collect::<Result<_>>()?;
    let h = read_tensor(&dir.join(&manifest.h))?;
    let b = read_matrix_market(&dir.join(&manifest.b))?;
    let c = read_matrix_market(&dir.join(&manifest.c))?;

    let sys = QBSystem::new(
        e,
        a,
        n_mats,
        h,
        b,
        c,
        manifest.input_labels,
        manifest.output_labels,
    )?;
    if sys.n() != manifest.n || sys.m_in() != manifest.m_in || sys.p_out() != manifest.p_out {
        return Err(Error::Parse {
            path: manifest_path,
            line: 0,
            msg: format!(
                "manifest promises n={}, m_in={}, p_out={} but files give n={}, m_in={}, p_out={}",
                manifest.n,
                manifest.m_in,
                manifest.p_out,
                sys.n(),
                sys.m_in(),
                sys.p_out()
            ),
        });
    }
    Ok(sys)
}

/// Serializes a value as pretty JSON and writes it atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

/// Reads a JSON file into a deserializable value.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::SparseMatrix;

    fn sample_system() -> QBSystem {
        let e = SparseMatrix::identity(3);
        let a = SparseMatrix::from_triplets(
            3,
            3,
            &[(0, 0, -1.25), (1, 1, -2.0), (2, 2, -0.5), (0, 2, 1.0 / 3.0)],
        )
        .unwrap();
        let n1 = SparseMatrix::from_triplets(3, 3, &[(0, 1, 0.7)]).unwrap();
        let h = SparseTensor3::from_entries(3, &[(1, 0, 2, 0.125), (2, 2, 2, -3.5e-7)]).unwrap();
        let b = SparseMatrix::from_triplets(3, 1, &[(0, 0, 1.0), (2, 0, 0.25)]).unwrap();
        let c = SparseMatrix::from_triplets(1, 3, &[(0, 1, 1.0)]).unwrap();
        QBSystem::new(
            e,
            a,
            vec![n1],
            h,
            b,
            c,
            vec!["u".into()],
            vec!["y".into()],
        )
        .unwrap()
    }

    #[test]
    fn matrix_market_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let m = SparseMatrix::from_triplets(
            4,
            2,
            &[(0, 0, 1.0 / 3.0), (3, 1, -2.718281828459045), (1, 0, 1e-300)],
        )
        .unwrap();
        let path = dir.path().join("m.mtx");
        write_matrix_market(&path, &m).unwrap();
        let back = read_matrix_market(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn tensor_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let t = SparseTensor3::from_entries(
            5,
            &[(0, 1, 2, 0.1), (4, 4, 4, -1.0 / 7.0), (2, 0, 3, 1.0e-17)],
        )
        .unwrap();
        let path = dir.path().join("t.qbt");
        write_tensor(&path, &t).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), t);
    }

    #[test]
    fn system_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let sys = sample_system();
        save_system(&sys, dir.path()).unwrap();
        let back = load_system(dir.path()).unwrap();
        assert_eq!(sys, back);
        // Loading through the explicit manifest path works too.
        let back2 = load_system(&dir.path().join("system.json")).unwrap();
        assert_eq!(sys, back2);
    }

    #[test]
    fn malformed_banner_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mtx");
        std::fs::write(&path, "%%MatrixMarket matrix array real general\n1 1\n1.0\n").unwrap();
        assert!(matches!(
            read_matrix_market(&path),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn index_out_of_range_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mtx");
        std::fs::write(
            &path,
            "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n",
        )
        .unwrap();
        assert!(matches!(
            read_matrix_market(&path),
            Err(Error::Parse { .. })
        ));
    }
}

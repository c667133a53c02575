//! File formats.
//!
//! - CCGA: binary matrix container. Magic `CCGA`, u16 version (1), u32 rows,
//!   u32 cols, then little-endian f32 values row-major. Loaders auto-detect
//!   it by magic bytes and otherwise fall back to headerless numeric CSV.
//! - CCGM: model checkpoint. Magic `CCGM`, u16 version (1), u32 K, u32 d,
//!   u32 k, then `w_enc`, `w_dec`, `b_pre`, `b_enc` as little-endian f32
//!   row-major in that order.
//! - Graph checkpoints and reports are JSON.
//!
//! All writers go through a temp-file-and-rename so partially written
//! artifacts never appear under their final name.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{CcgError, Result};
use crate::graph::{ConceptGraph, GraphStats};
use crate::sae::SaeModel;

pub const CCGA_MAGIC: &[u8; 4] = b"CCGA";
pub const CCGM_MAGIC: &[u8; 4] = b"CCGM";
pub const FORMAT_VERSION: u16 = 1;

/// Write bytes to `path` atomically (temp file in the same directory, then
/// rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| CcgError::invalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

fn push_matrix_f32(buf: &mut Vec<u8>, m: &Array2<f64>) {
    for v in m.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

fn push_vector_f32(buf: &mut Vec<u8>, v: &Array1<f64>) {
    for x in v.iter() {
        buf.extend_from_slice(&(*x as f32).to_le_bytes());
    }
}

/// Cursor with offset-aware error reporting.
struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &Path) -> Self {
        Self {
            bytes,
            offset: 0,
            path: path.display().to_string(),
        }
    }

    fn fail(&self, detail: impl Into<String>) -> CcgError {
        CcgError::format(
            &self.path,
            format!("{} at offset {}", detail.into(), self.offset),
        )
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(self.fail(format!(
                "unexpected end of file (need {n} bytes, have {})",
                self.bytes.len() - self.offset
            )));
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u16_le(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32_le(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32_block(&mut self, count: usize) -> Result<Vec<f64>> {
        let b = self.take(count * 4)?;
        let mut out = Vec::with_capacity(count);
        for chunk in b.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            out.push(f64::from(v));
        }
        Ok(out)
    }
}

pub fn write_ccga(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(14 + m.len() * 4);
    buf.extend_from_slice(CCGA_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    push_matrix_f32(&mut buf, m);
    atomic_write(path, &buf)
}

pub fn read_ccga(path: &Path) -> Result<Array2<f64>> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes, path);
    let magic = r.take(4)?;
    if magic != CCGA_MAGIC {
        r.offset = 0;
        return Err(r.fail("bad magic (expected CCGA)"));
    }
    let version = r.u16_le()?;
    if version != FORMAT_VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let rows = r.u32_le()? as usize;
    let cols = r.u32_le()? as usize;
    if rows == 0 || cols == 0 {
        return Err(r.fail(format!("degenerate shape {rows}x{cols}")));
    }
    let data = r.f32_block(rows * cols)?;
    if r.offset != bytes.len() {
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.offset)));
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| CcgError::invalid(e.to_string()))
}

/// Load a matrix file, auto-detecting CCGA by its magic bytes and falling
/// back to headerless numeric CSV.
pub fn read_matrix_auto(path: &Path) -> Result<Array2<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() >= 4 && &bytes[..4] == CCGA_MAGIC {
        return read_ccga(path);
    }
    read_csv_matrix(path, &bytes).map_err(|e| match e {
        CcgError::Format { path, detail } => CcgError::Format {
            path,
            detail: format!("bad magic at offset 0 (expected CCGA) and CSV fallback failed: {detail}"),
        },
        other => other,
    })
}

fn read_csv_matrix(path: &Path, bytes: &[u8]) -> Result<Array2<f64>> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        CcgError::format(
            path.display().to_string(),
            format!("not valid UTF-8 ({e}); not a CCGA file either"),
        )
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| {
                    CcgError::format(
                        path.display().to_string(),
                        format!("non-numeric cell '{}' at line {}", cell.trim(), line_no + 1),
                    )
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(CcgError::format(
                    path.display().to_string(),
                    format!(
                        "line {} has {} cells, expected {}",
                        line_no + 1,
                        row.len(),
                        first.len()
                    ),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CcgError::format(
            path.display().to_string(),
            "no data rows".to_string(),
        ));
    }
    let (n, d) = (rows.len(), rows[0].len());
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, d), flat).map_err(|e| CcgError::invalid(e.to_string()))
}

pub fn write_ccgm(path: &Path, model: &SaeModel) -> Result<()> {
    model.validate()?;
    let (k_dict, d) = (model.dict_size(), model.input_dim());
    let mut buf = Vec::with_capacity(18 + (2 * k_dict * d + d + k_dict) * 4);
    buf.extend_from_slice(CCGM_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(k_dict as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&(model.k as u32).to_le_bytes());
    push_matrix_f32(&mut buf, &model.w_enc);
    push_matrix_f32(&mut buf, &model.w_dec);
    push_vector_f32(&mut buf, &model.b_pre);
    push_vector_f32(&mut buf, &model.b_enc);
    atomic_write(path, &buf)
}

pub fn read_ccgm(path: &Path) -> Result<SaeModel> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes, path);
    let magic = r.take(4)?;
    if magic != CCGM_MAGIC {
        r.offset = 0;
        return Err(r.fail("bad magic (expected CCGM)"));
    }
    let version = r.u16_le()?;
    if version != FORMAT_VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let k_dict = r.u32_le()? as usize;
    let d = r.u32_le()? as usize;
    let k = r.u32_le()? as usize;
    if k_dict == 0 || d == 0 || k == 0 || k > k_dict {
        return Err(r.fail(format!("inconsistent header (K={k_dict}, d={d}, k={k})")));
    }
    let w_enc = Array2::from_shape_vec((k_dict, d), r.f32_block(k_dict * d)?)
        .map_err(|e| CcgError::invalid(e.to_string()))?;
    let w_dec = Array2::from_shape_vec((d, k_dict), r.f32_block(d * k_dict)?)
        .map_err(|e| CcgError::invalid(e.to_string()))?;
    let b_pre = Array1::from_vec(r.f32_block(d)?);
    let b_enc = Array1::from_vec(r.f32_block(k_dict)?);
    if r.offset != bytes.len() {
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.offset)));
    }
    let model = SaeModel {
        w_enc,
        w_dec,
        b_pre,
        b_enc,
        k,
    };
    model.validate()?;
    Ok(model)
}

/// Serialized form of a trained graph.
#[derive(Debug, Serialize, Deserialize)]
pub struct GraphFile {
    pub m: usize,
    pub node_ids: Vec<usize>,
    pub edge_threshold: f64,
    /// Row-major adjacency, m * m entries.
    pub w: Vec<f64>,
    pub stats: GraphStats,
}

pub fn write_graph_json(path: &Path, graph: &ConceptGraph, stats: &GraphStats) -> Result<()> {
    let file = GraphFile {
        m: graph.m(),
        node_ids: graph.node_ids.clone(),
        edge_threshold: graph.edge_threshold,
        w: graph.w.iter().copied().collect(),
        stats: stats.clone(),
    };
    write_json_atomic(path, &file)
}

pub fn read_graph_json(path: &Path) -> Result<(ConceptGraph, GraphStats)> {
    let file: GraphFile = serde_json::from_reader(std::fs::File::open(path)?)?;
    if file.w.len() != file.m * file.m {
        return Err(CcgError::format(
            path.display().to_string(),
            format!("w has {} entries, expected {}", file.w.len(), file.m * file.m),
        ));
    }
    let w = Array2::from_shape_vec((file.m, file.m), file.w)
        .map_err(|e| CcgError::invalid(e.to_string()))?;
    let graph = ConceptGraph::new(w, file.node_ids, file.edge_threshold)?;
    Ok((graph, file.stats))
}

/// Edge list export: `source,target,weight` with a header row.
pub fn write_edges_csv(path: &Path, graph: &ConceptGraph) -> Result<()> {
    let mut out = String::from("source,target,weight\n");
    for (i, j, w) in graph.edges() {
        out.push_str(&format!("{i},{j},{}\n", format_float(w)));
    }
    atomic_write(path, out.as_bytes())
}

/// Round to 6 significant decimal digits, ties to even. Reports use this so
/// formatted output is stable across runs.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let exp = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(5 - exp);
    (x * scale).round_ties_even() / scale
}

/// Fixed float formatting for CSV cells.
pub fn format_float(x: f64) -> String {
    let r = round_sig6(x);
    if r == r.trunc() && r.abs() < 1e15 {
        format!("{r:.1}")
    } else {
        format!("{r}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use tempfile::tempdir;

    #[test]
    fn ccga_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ccga");
        let m = array![[1.5, -2.25], [0.0, 4.0], [0.0009765625, 7.5]];
        write_ccga(&path, &m).unwrap();
        let back = read_ccga(&path).unwrap();
        assert_eq!(back, m); // values chosen exactly representable in f32
    }

    #[test]
    fn ccga_rejects_bad_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.ccga");
        std::fs::write(&path, b"NOPE\x01\x00\x01\x00\x00\x00\x01\x00\x00\x00").unwrap();
        let err = read_ccga(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad magic"), "{msg}");
        assert!(msg.contains("offset 0"), "{msg}");
    }

    #[test]
    fn ccga_rejects_truncation() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trunc.ccga");
        let m = array![[1.0, 2.0], [3.0, 4.0]];
        write_ccga(&path, &m).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        let msg = read_ccga(&path).unwrap_err().to_string();
        assert!(msg.contains("end of file"), "{msg}");
    }

    #[test]
    fn auto_loader_reads_csv() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "1.0, 2.0\n3.5,4\n").unwrap();
        let m = read_matrix_auto(&path).unwrap();
        assert_eq!(m, array![[1.0, 2.0], [3.5, 4.0]]);
    }

    #[test]
    fn csv_reports_ragged_rows() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ragged.csv");
        std::fs::write(&path, "1,2\n3\n").unwrap();
        let msg = read_matrix_auto(&path).unwrap_err().to_string();
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn ccgm_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ccgm");
        let model = SaeModel {
            w_enc: array![[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]],
            w_dec: array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]],
            b_pre: array![0.125, -0.5, 3.0],
            b_enc: array![0.0, 1.0],
            k: 1,
        };
        write_ccgm(&path, &model).unwrap();
        let back = read_ccgm(&path).unwrap();
        assert_eq!(back.w_enc, model.w_enc);
        assert_eq!(back.w_dec, model.w_dec);
        assert_eq!(back.b_pre, model.b_pre);
        assert_eq!(back.b_enc, model.b_enc);
        assert_eq!(back.k, 1);
    }

    #[test]
    fn graph_json_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("graph.json");
        let mut w = Array2::zeros((3, 3));
        w[[0, 1]] = 0.5;
        let g = ConceptGraph::new(w, vec![7, 2, 5], 0.01).unwrap();
        let stats = GraphStats {
            sem_loss: 1.5,
            dag_violation: 1e-4,
            edge_count: 1,
            density: 1.0 / 6.0,
        };
        write_graph_json(&path, &g, &stats).unwrap();
        let (back, back_stats) = read_graph_json(&path).unwrap();
        assert_eq!(back, g);
        assert_eq!(back_stats, stats);
    }

    #[test]
    fn round_sig6_examples() {
        assert_eq!(round_sig6(1.2345678), 1.23457);
        assert_eq!(round_sig6(0.000123456789), 0.000123457);
        assert_eq!(round_sig6(-987654321.0), -987654000.0);
        assert_eq!(round_sig6(0.0), 0.0);
    }
}

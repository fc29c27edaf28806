//! Plain-text coordinate file formats and factor-directory output.
//!
//! Tensors: a header `tensor I J K nnz` followed by `i j k value` lines;
//! matrices: `matrix rows cols nnz` followed by `i j value` lines. Indices
//! are 1-based on disk and whitespace-separated; values print in Rust's
//! shortest round-trip form, so write/read cycles are exact. Files ending
//! in `.gz` are compressed/decompressed transparently.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;

use crate::als::FactorSet;
use crate::driver::RunReport;
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tensor3};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn open_reader(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(BufReader::new(GzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

fn open_writer(path: &Path) -> Result<Box<dyn Write>> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(BufWriter::new(GzEncoder::new(
            file,
            flate2::Compression::default(),
        ))))
    } else {
        Ok(Box::new(BufWriter::new(file)))
    }
}

/// Non-blank lines with their 1-based line numbers.
fn numbered_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let reader = open_reader(path)?;
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if !line.trim().is_empty() {
            out.push((idx + 1, line));
        }
    }
    Ok(out)
}

fn parse_usize(path: &Path, line: usize, tok: &str, what: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| parse_err(path, line, format!("invalid {}: {:?}", what, tok)))
}

fn parse_value(path: &Path, line: usize, tok: &str) -> Result<f64> {
    let v = tok
        .parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("invalid value: {:?}", tok)))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value {}", v)));
    }
    Ok(v)
}

/// 1-based index inside [1, dim].
fn parse_index(path: &Path, line: usize, tok: &str, dim: usize, what: &str) -> Result<usize> {
    let v = parse_usize(path, line, tok, what)?;
    if v == 0 || v > dim {
        return Err(parse_err(
            path,
            line,
            format!("{} {} outside 1..={}", what, v, dim),
        ));
    }
    Ok(v - 1)
}

/// Reads a coordinate tensor file. Storage is picked by the density rule:
/// below 25% dense the tensor is kept in coordinate form.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor3> {
    let path = path.as_ref();
    let lines = numbered_lines(path)?;
    let (header_line, header) = lines
        .first()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 5 || toks[0] != "tensor" {
        return Err(parse_err(
            path,
            *header_line,
            "expected header `tensor I J K nnz`",
        ));
    }
    let di = parse_usize(path, *header_line, toks[1], "dimension")?;
    let dj = parse_usize(path, *header_line, toks[2], "dimension")?;
    let dk = parse_usize(path, *header_line, toks[3], "dimension")?;
    let nnz = parse_usize(path, *header_line, toks[4], "entry count")?;

    let entry_lines = &lines[1..];
    if entry_lines.len() != nnz {
        return Err(parse_err(
            path,
            entry_lines.last().map_or(*header_line, |(n, _)| *n),
            format!("declared {} entries but found {}", nnz, entry_lines.len()),
        ));
    }
    let mut entries = Vec::with_capacity(nnz);
    let mut seen = HashSet::with_capacity(nnz);
    for (line, text) in entry_lines {
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(parse_err(path, *line, "expected `i j k value`"));
        }
        let i = parse_index(path, *line, toks[0], di, "index i")?;
        let j = parse_index(path, *line, toks[1], dj, "index j")?;
        let k = parse_index(path, *line, toks[2], dk, "index k")?;
        let v = parse_value(path, *line, toks[3])?;
        if !seen.insert((i, j, k)) {
            return Err(parse_err(
                path,
                *line,
                format!("duplicate coordinate ({} {} {})", i + 1, j + 1, k + 1),
            ));
        }
        entries.push((i, j, k, v));
    }
    Tensor3::from_entries_auto((di, dj, dk), entries)
}

/// Writes a tensor in coordinate form: sparse storage lists its stored
/// entries, dense storage lists every cell.
pub fn write_tensor(t: &Tensor3, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = open_writer(path)?;
    let (di, dj, dk) = t.dims();
    writeln!(w, "tensor {} {} {} {}", di, dj, dk, t.stored_len()).map_err(|e| io_err(path, e))?;
    for (i, j, k, v) in t.iter_stored() {
        writeln!(w, "{} {} {} {}", i + 1, j + 1, k + 1, v).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let lines = numbered_lines(path)?;
    let (header_line, header) = lines
        .first()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 4 || toks[0] != "matrix" {
        return Err(parse_err(
            path,
            *header_line,
            "expected header `matrix rows cols nnz`",
        ));
    }
    let rows = parse_usize(path, *header_line, toks[1], "row count")?;
    let cols = parse_usize(path, *header_line, toks[2], "column count")?;
    let nnz = parse_usize(path, *header_line, toks[3], "entry count")?;

    let entry_lines = &lines[1..];
    if entry_lines.len() != nnz {
        return Err(parse_err(
            path,
            entry_lines.last().map_or(*header_line, |(n, _)| *n),
            format!("declared {} entries but found {}", nnz, entry_lines.len()),
        ));
    }
    let mut arr = ndarray::Array2::zeros((rows, cols));
    let mut seen = HashSet::with_capacity(nnz);
    for (line, text) in entry_lines {
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(path, *line, "expected `i j value`"));
        }
        let i = parse_index(path, *line, toks[0], rows, "row index")?;
        let j = parse_index(path, *line, toks[1], cols, "column index")?;
        let v = parse_value(path, *line, toks[2])?;
        if !seen.insert((i, j)) {
            return Err(parse_err(
                path,
                *line,
                format!("duplicate coordinate ({} {})", i + 1, j + 1),
            ));
        }
        arr[(i, j)] = v;
    }
    Matrix::new(arr)
}

/// Writes a matrix in coordinate form, listing only nonzero entries.
pub fn write_matrix(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = open_writer(path)?;
    let entries: Vec<(usize, usize, f64)> = m
        .as_array()
        .indexed_iter()
        .filter(|(_, &v)| v != 0.0)
        .map(|((r, c), &v)| (r, c, v))
        .collect();
    writeln!(w, "matrix {} {} {}", m.rows(), m.cols(), entries.len())
        .map_err(|e| io_err(path, e))?;
    for (r, c, v) in entries {
        writeln!(w, "{} {} {}", r + 1, c + 1, v).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Reads a vector stored as an n-by-1 or 1-by-n matrix file.
pub fn read_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let m = read_matrix(path)?;
    if m.cols() == 1 {
        Ok((0..m.rows()).map(|r| m[(r, 0)]).collect())
    } else if m.rows() == 1 {
        Ok((0..m.cols()).map(|c| m[(0, c)]).collect())
    } else {
        Err(Error::DimMismatch(format!(
            "{} is {}x{}, expected a vector",
            path.display(),
            m.rows(),
            m.cols()
        )))
    }
}

const FACTOR_FILES: [(&str, &str); 6] = [
    ("A", "A.mtx"),
    ("B", "B.mtx"),
    ("C", "C.mtx"),
    ("D", "D.mtx"),
    ("E", "E.mtx"),
    ("G", "G.mtx"),
];

fn lambda_entries(f: &FactorSet) -> Vec<(&'static str, &[f64], bool)> {
    vec![
        ("lambda_a", f.lambda_a.as_slice(), true),
        ("lambda_b", f.lambda_b.as_slice(), true),
        ("lambda_c", f.lambda_c.as_slice(), true),
        ("lambda_d", f.lambda_d.as_slice(), f.d.is_some()),
        ("lambda_e", f.lambda_e.as_slice(), f.e.is_some()),
        ("lambda_g", f.lambda_g.as_slice(), f.g.is_some()),
    ]
}

/// Writes one matrix file per present factor, the labeled scale vectors,
/// and a run report into `dir` (created if missing).
pub fn write_factors(f: &FactorSet, report: &RunReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let matrices: [Option<&Matrix>; 6] = [
        Some(&f.a),
        Some(&f.b),
        Some(&f.c),
        f.d.as_ref(),
        f.e.as_ref(),
        f.g.as_ref(),
    ];
    for ((_, file), m) in FACTOR_FILES.iter().zip(matrices) {
        if let Some(m) = m {
            write_matrix(m, dir.join(file))?;
        }
    }

    let lambda_path = dir.join("lambdas.txt");
    let mut w = open_writer(&lambda_path)?;
    for (name, values, present) in lambda_entries(f) {
        if present {
            let tail: Vec<String> = values.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{} {}", name, tail.join(" ")).map_err(|e| io_err(&lambda_path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(&lambda_path, e))?;

    write_report(report, &dir.join("report.txt"))
}

fn write_report(report: &RunReport, path: &Path) -> Result<()> {
    let mut w = open_writer(path)?;
    let r = |e: std::io::Error| io_err(path, e);
    writeln!(w, "final_objective {}", report.final_objective).map_err(r)?;
    writeln!(
        w,
        "phase_seconds {} {} {}",
        report.phase_seconds[0], report.phase_seconds[1], report.phase_seconds[2]
    )
    .map_err(r)?;
    writeln!(w, "total_seconds {}", report.total_seconds()).map_err(r)?;
    writeln!(w, "repetitions {}", report.rep_traces.len()).map_err(r)?;
    for (rep, dims) in report.rep_dims.iter().enumerate() {
        writeln!(w, "sample_dims {} {} {} {}", rep, dims.0, dims.1, dims.2).map_err(r)?;
    }
    for (rep, trace) in report.rep_traces.iter().enumerate() {
        let tail: Vec<String> = trace.iter().map(|v| v.to_string()).collect();
        writeln!(w, "trace {} {}", rep, tail.join(" ")).map_err(r)?;
    }
    for d in &report.degenerate_columns {
        writeln!(
            w,
            "degenerate_column factor={} repetition={} column={}",
            d.factor, d.repetition, d.column
        )
        .map_err(r)?;
    }
    for a in &report.ambiguities {
        writeln!(
            w,
            "ambiguity factor={} partial={} column={} assigned={} similarity={} runner_up={} kind={:?}",
            a.factor,
            a.ambiguity.partial,
            a.ambiguity.column,
            a.ambiguity.assigned_to,
            a.ambiguity.similarity,
            a.ambiguity
                .runner_up
                .map_or("none".to_string(), |v| v.to_string()),
            a.ambiguity.kind
        )
        .map_err(r)?;
    }
    w.flush().map_err(r)?;
    Ok(())
}

/// Total wall-clock seconds recorded in a report file, if present.
pub fn read_report_total_seconds(path: impl AsRef<Path>) -> Option<f64> {
    let lines = numbered_lines(path.as_ref()).ok()?;
    for (_, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() == 2 && toks[0] == "total_seconds" {
            return toks[1].parse().ok();
        }
    }
    None
}

/// Loads a factor directory written by [`write_factors`].
pub fn read_factors(dir: impl AsRef<Path>) -> Result<FactorSet> {
    let dir = dir.as_ref();
    let load = |file: &str| -> Result<Option<Matrix>> {
        let path = dir.join(file);
        if path.exists() {
            read_matrix(&path).map(Some)
        } else {
            Ok(None)
        }
    };
    let a = load("A.mtx")?.ok_or_else(|| Error::InvalidArgument(format!(
        "{} has no A.mtx",
        dir.display()
    )))?;
    let b = load("B.mtx")?.ok_or_else(|| Error::InvalidArgument(format!(
        "{} has no B.mtx",
        dir.display()
    )))?;
    let c = load("C.mtx")?.ok_or_else(|| Error::InvalidArgument(format!(
        "{} has no C.mtx",
        dir.display()
    )))?;
    let mut f = FactorSet::new(a, b, c, load("D.mtx")?, load("E.mtx")?, load("G.mtx")?)?;

    let lambda_path = dir.join("lambdas.txt");
    if lambda_path.exists() {
        for (line, text) in numbered_lines(&lambda_path)? {
            let mut toks = text.split_whitespace();
            let name = toks
                .next()
                .ok_or_else(|| parse_err(&lambda_path, line, "empty lambda line"))?;
            let values: Vec<f64> = toks
                .map(|t| parse_value(&lambda_path, line, t))
                .collect::<Result<_>>()?;
            if values.len() != f.rank() {
                return Err(parse_err(
                    &lambda_path,
                    line,
                    format!("{} has {} values, expected {}", name, values.len(), f.rank()),
                ));
            }
            match name {
                "lambda_a" => f.lambda_a = values,
                "lambda_b" => f.lambda_b = values,
                "lambda_c" => f.lambda_c = values,
                "lambda_d" => f.lambda_d = values,
                "lambda_e" => f.lambda_e = values,
                "lambda_g" => f.lambda_g = values,
                other => {
                    return Err(parse_err(
                        &lambda_path,
                        line,
                        format!("unknown label {:?}", other),
                    ))
                }
            }
        }
    }
    Ok(f)
}

/// Path of a factor file inside a directory, by factor name (A..G).
pub fn factor_path(dir: impl AsRef<Path>, name: &str) -> Option<PathBuf> {
    FACTOR_FILES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, file)| dir.as_ref().join(file))
}

//! Plain-text dataset files: header `block_id,x1,…,xd,y`, one row per point.
//! Values are written in shortest round-trip decimal form, so reading back
//! reproduces every bit.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use fusegp_core::data::Block;
use fusegp_core::linalg::Matrix;

use crate::error::{io_err, CliError, Result};

/// A block together with the id written in its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBlock {
    pub id: u64,
    pub block: Block,
}

fn header(input_dim: usize) -> Vec<String> {
    let mut h = vec!["block_id".to_string()];
    h.extend((1..=input_dim).map(|j| format!("x{j}")));
    h.push("y".into());
    h
}

fn csv_err(name: &str) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Parse {
        source_name: name.to_string(),
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

/// Writes rows `(id, x, y)`. An empty iterator leaves a header-only file.
pub fn write_rows<'a, W: Write>(
    out: W,
    input_dim: usize,
    rows: impl IntoIterator<Item = (u64, &'a [f64], f64)>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = csv_err("dataset output");
    w.write_record(header(input_dim)).map_err(&err)?;
    let mut record = Vec::with_capacity(input_dim + 2);
    for (id, x, y) in rows {
        if x.len() != input_dim {
            return Err(CliError::Config(format!(
                "row with {} inputs in a dataset of dimension {input_dim}",
                x.len()
            )));
        }
        record.clear();
        record.push(id.to_string());
        record.extend(x.iter().map(f64::to_string));
        record.push(y.to_string());
        w.write_record(&record).map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::Config(format!("dataset output: {e}")))?;
    Ok(())
}

fn rows_of(blocks: &[LabeledBlock]) -> impl Iterator<Item = (u64, &[f64], f64)> {
    blocks
        .iter()
        .flat_map(|lb| (0..lb.block.len()).map(move |i| (lb.id, lb.block.inputs.row(i), lb.block.targets[i])))
}

pub fn write_dataset<W: Write>(out: W, input_dim: usize, blocks: &[LabeledBlock]) -> Result<()> {
    write_rows(out, input_dim, rows_of(blocks))
}

/// Test set rows labeled with the source domain of each point.
pub fn write_test_set<W: Write>(out: W, test: &Block, domains: &[u8]) -> Result<()> {
    let rows = (0..test.len()).map(|i| (u64::from(domains[i]), test.inputs.row(i), test.targets[i]));
    write_rows(out, test.input_dim(), rows)
}

/// Parsed file contents; consecutive rows sharing an id form one block.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_dim: usize,
    pub blocks: Vec<LabeledBlock>,
}

impl Dataset {
    pub fn into_blocks(self) -> Vec<Block> {
        self.blocks.into_iter().map(|lb| lb.block).collect()
    }

    /// All rows as one block (used for test files).
    pub fn pooled(&self) -> Result<Block> {
        let blocks: Vec<Block> = self.blocks.iter().map(|lb| lb.block.clone()).collect();
        if blocks.is_empty() {
            return Err(CliError::Config("dataset has no rows".into()));
        }
        Ok(Block::concat(&blocks)?)
    }
}

/// Reads a dataset; `name` labels error messages.
pub fn read_dataset<R: Read>(input: R, name: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let err = csv_err(name);
    let head = reader.headers().map_err(&err)?.clone();
    let parse_fail = |line: u64, message: String| CliError::Parse {
        source_name: name.to_string(),
        line,
        message,
    };
    let n = head.len();
    let well_formed = n >= 2
        && &head[0] == "block_id"
        && &head[n - 1] == "y"
        && (1..n - 1).all(|j| head[j] == format!("x{j}"));
    if !well_formed {
        return Err(parse_fail(1, format!("expected header block_id,x1,…,xd,y but found `{}`", head.iter().collect::<Vec<_>>().join(","))));
    }
    let d = n - 2;

    let mut blocks = Vec::new();
    let mut current: Option<(u64, Vec<f64>, Vec<f64>)> = None;
    let flush = |cur: Option<(u64, Vec<f64>, Vec<f64>)>, blocks: &mut Vec<LabeledBlock>| -> Result<()> {
        if let Some((id, xs, ys)) = cur {
            let rows = ys.len();
            blocks.push(LabeledBlock {
                id,
                block: Block::new(Matrix::from_vec(rows, d, xs)?, ys)?,
            });
        }
        Ok(())
    };
    for record in reader.records() {
        let record = record.map_err(&err)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != n {
            return Err(parse_fail(line, format!("expected {n} fields (d = {d}) but found {}", record.len())));
        }
        let id: u64 = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_fail(line, format!("invalid block_id `{}`", &record[0])))?;
        let mut values = Vec::with_capacity(d + 1);
        for (j, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_fail(line, format!("invalid number `{field}` in column {}", &head[j])))?;
            if !v.is_finite() {
                return Err(parse_fail(line, format!("non-finite value in column {}", &head[j])));
            }
            values.push(v);
        }
        let y = values.pop().unwrap_or_default();
        match &mut current {
            Some((cid, xs, ys)) if *cid == id => {
                xs.extend(values);
                ys.push(y);
            }
            _ => {
                flush(current.take(), &mut blocks)?;
                current = Some((id, values, vec![y]));
            }
        }
    }
    flush(current, &mut blocks)?;
    Ok(Dataset { input_dim: d, blocks })
}

pub fn write_dataset_file(path: &Path, input_dim: usize, blocks: &[LabeledBlock]) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    write_dataset(BufWriter::new(f), input_dim, blocks)
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset> {
    let f = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingDataset(path.to_path_buf()),
        _ => io_err(path)(e),
    })?;
    read_dataset(std::io::BufReader::new(f), &path.display().to_string())
}

/// Stream blocks labeled with their position.
pub fn label_in_order(blocks: &[Block]) -> Vec<LabeledBlock> {
    blocks
        .iter()
        .enumerate()
        .map(|(i, b)| LabeledBlock {
            id: i as u64,
            block: b.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use fusegp_core::rng;

    fn random_blocks(seed: u64, count: usize, d: usize) -> Vec<LabeledBlock> {
        let mut r = rng::rng_from_seed(seed);
        let blocks: Vec<Block> = (0..count)
            .map(|_| {
                let x = Matrix::from_fn(4, d, |_, _| 1e3 * rng::standard_normal(&mut r));
                let y = (0..4).map(|_| rng::standard_normal(&mut r) / 7.0).collect();
                Block::new(x, y).unwrap()
            })
            .collect();
        label_in_order(&blocks)
    }

    #[test]
    fn empty_list_is_header_only() {
        let mut buf = Vec::new();
        write_dataset(&mut buf, 3, &[]).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "block_id,x1,x2,x3,y\n");
        let back = read_dataset(buf.as_slice(), "mem").unwrap();
        assert_eq!(back.input_dim, 3);
        assert!(back.blocks.is_empty());
    }

    #[test]
    fn round_trip_is_exact() {
        let blocks = random_blocks(3, 6, 2);
        let mut buf = Vec::new();
        write_dataset(&mut buf, 2, &blocks).unwrap();
        let back = read_dataset(buf.as_slice(), "mem").unwrap();
        assert_eq!(back.blocks, blocks);
    }

    #[test]
    fn dimension_mismatch_reports_line() {
        let text = "block_id,x1,x2,y\n0,0.1,0.2,1\n0,0.3,0.4,1\n1,0.5,2\n";
        let e = read_dataset(text.as_bytes(), "bad.csv").unwrap_err();
        match e {
            CliError::Parse { line, ref message, .. } => {
                assert_eq!(line, 4);
                assert!(message.contains("d = 2"), "{message}");
            }
            other => panic!("{other}"),
        }
        assert!(e.to_string().starts_with("bad.csv, line 4"));
    }

    #[test]
    fn bad_number_and_header_rejected() {
        let e = read_dataset("block_id,x1,y\n0,abc,1\n".as_bytes(), "f").unwrap_err();
        assert!(matches!(e, CliError::Parse { line: 2, .. }), "{e}");
        let e = read_dataset("id,x1,y\n".as_bytes(), "f").unwrap_err();
        assert!(matches!(e, CliError::Parse { line: 1, .. }), "{e}");
    }

    #[test]
    fn consecutive_ids_group_into_blocks() {
        let text = "block_id,x1,y\n0,1,1\n0,2,2\n1,3,3\n0,4,4\n";
        let ds = read_dataset(text.as_bytes(), "f").unwrap();
        let sizes: Vec<_> = ds.blocks.iter().map(|b| (b.id, b.block.len())).collect();
        assert_eq!(sizes, vec![(0, 2), (1, 1), (0, 1)]);
        assert_eq!(ds.pooled().unwrap().targets, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn missing_file_names_path() {
        let e = read_dataset_file(Path::new("/nonexistent/dir/stream1.csv")).unwrap_err();
        assert!(e.to_string().contains("/nonexistent/dir/stream1.csv"));
    }
}

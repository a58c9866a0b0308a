//! The exemplar dataset, its frozen embedding matrix, exact maximum inner
//! product search, and a lexical BM25 ranker used as a baseline.

pub mod bm25;

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::encoder::Embedder;
use crate::error::{check_dim, Error, Result};

pub use bm25::Bm25Index;

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub input: String,
    pub output: String,
}

impl Record {
    pub fn new(input: impl Into<String>, output: impl Into<String>) -> Self {
        Self {
            input: input.into(),
            output: output.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub id: usize,
    pub input_text: String,
    pub output_text: String,
}

/// Reads a JSONL dataset. Each non-blank line must be an object with string
/// fields `input` and `output`; errors name the 1-based line number.
pub fn read_jsonl(path: &Path) -> Result<Vec<Record>> {
    let file = fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    parse_jsonl(BufReader::new(file))
}

pub fn parse_jsonl(reader: impl BufRead) -> Result<Vec<Record>> {
    #[derive(Deserialize)]
    struct Line {
        input: Option<serde_json::Value>,
        output: Option<serde_json::Value>,
    }
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(format!("reading line {lineno}"), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line)
            .map_err(|e| Error::Ingestion(format!("line {lineno}: malformed JSON: {e}")))?;
        let field = |v: Option<serde_json::Value>, name: &str| -> Result<String> {
            match v {
                Some(serde_json::Value::String(s)) => Ok(s),
                Some(_) => Err(Error::Ingestion(format!(
                    "line {lineno}: field \"{name}\" must be a string"
                ))),
                None => Err(Error::Ingestion(format!(
                    "line {lineno}: missing field \"{name}\""
                ))),
            }
        };
        let input = field(parsed.input, "input")?;
        let output = field(parsed.output, "output")?;
        out.push(Record { input, output });
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[Record]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Embed `input + " " + output` instead of the input alone.
    pub embed_pair: bool,
}

/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct ExemplarStore {
    exemplars: Vec<Exemplar>,
    embeddings: Array2<f64>,
    bm25: Bm25Index,
}

impl ExemplarStore {
    /// Embeds every record in stream order. Ids are stream positions.
    pub fn ingest(
        records: impl IntoIterator<Item = Record>,
        encoder: &dyn Embedder,
        options: IngestOptions,
    ) -> Result<Self> {
        let records: Vec<Record> = records.into_iter().collect();
        if records.is_empty() {
            return Err(Error::Ingestion("record stream is empty".into()));
        }
        let keys: Vec<String> = records
            .iter()
            .map(|r| {
                if options.embed_pair {
                    format!("{} {}", r.input, r.output)
                } else {
                    r.input.clone()
                }
            })
            .collect();
        let dim = encoder.dim();
        let mut embeddings = Array2::zeros((records.len(), dim));
        const CHUNK: usize = 256;
        for (chunk_idx, chunk) in keys.chunks(CHUNK).enumerate() {
            let texts: Vec<&str> = chunk.iter().map(String::as_str).collect();
            let vectors = encoder.embed_batch(&texts)?;
            for (j, v) in vectors.into_iter().enumerate() {
                if v.len() != dim {
                    return Err(Error::Config(format!(
                        "encoder declared dimension {dim} but produced {}",
                        v.len()
                    )));
                }
                let row = chunk_idx * CHUNK + j;
                embeddings.row_mut(row).assign(&ArrayView1::from(&v[..]));
            }
        }
        let exemplars = records
            .into_iter()
            .enumerate()
            .map(|(id, r)| Exemplar {
                id,
                input_text: r.input,
                output_text: r.output,
            })
            .collect();
        Self::from_parts(exemplars, embeddings)
    }

    /// Validates and assembles a store from already-computed parts.
    pub fn from_parts(exemplars: Vec<Exemplar>, embeddings: Array2<f64>) -> Result<Self> {
        if exemplars.is_empty() {
            return Err(Error::Ingestion("store must hold at least one exemplar".into()));
        }
        if embeddings.nrows() != exemplars.len() {
            return Err(Error::Ingestion(format!(
                "{} exemplars but {} embedding rows",
                exemplars.len(),
                embeddings.nrows()
            )));
        }
        for (pos, ex) in exemplars.iter().enumerate() {
            if ex.id != pos {
                return Err(Error::Ingestion(format!(
                    "exemplar ids must be contiguous from 0; found {} at position {pos}",
                    ex.id
                )));
            }
            if ex.input_text.is_empty() {
                return Err(Error::Ingestion(format!("exemplar {pos} has empty input text")));
            }
        }
        if embeddings.iter().any(|x| !x.is_finite()) {
            return Err(Error::Ingestion("embedding matrix has non-finite entries".into()));
        }
        let bm25 = Bm25Index::build(exemplars.iter().map(|e| e.input_text.as_str()));
        Ok(Self {
            exemplars,
            embeddings,
            bm25,
        })
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.exemplars
    }

    pub fn get(&self, id: usize) -> Option<&Exemplar> {
        self.exemplars.get(id)
    }

    pub fn embeddings(&self) -> &Array2<f64> {
        &self.embeddings
    }

    pub fn embedding(&self, id: usize) -> ArrayView1<'_, f64> {
        self.embeddings.row(id)
    }

    /// Exact maximum inner product search: the `n` highest-scoring ids not in
    /// `exclude`, by descending `query · embedding`, ties to the smaller id.
    pub fn mips_top(
        &self,
        query: ArrayView1<'_, f64>,
        n: usize,
        exclude: &HashSet<usize>,
    ) -> Result<Vec<(usize, f64)>> {
        check_dim(self.dim(), query.len())?;
        if n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        let scores = self.embeddings.dot(&query);
        let mut scored: Vec<(usize, f64)> = scores
            .iter()
            .enumerate()
            .filter(|(id, _)| !exclude.contains(id))
            .map(|(id, &s)| (id, s))
            .collect();
        Ok(top_n(&mut scored, n))
    }

    /// Okapi BM25 (k1 = 1.2, b = 0.75) over input texts, top `n`, ties to the smaller id.
    pub fn bm25_top(&self, query_text: &str, n: usize) -> Vec<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> = self.bm25.scores(query_text).into_iter().enumerate().collect();
        top_n(&mut scored, n)
    }

    /// Writes `exemplars.jsonl`, `embeddings.bin` (row-major little-endian f64)
    /// and `meta.json` into `dir`. Output is byte-identical for identical stores.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let records: Vec<Record> = self
            .exemplars
            .iter()
            .map(|e| Record::new(e.input_text.clone(), e.output_text.clone()))
            .collect();
        write_jsonl(&dir.join("exemplars.jsonl"), &records)?;
        let mut bytes = Vec::with_capacity(self.embeddings.len() * 8);
        for x in self.embeddings.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        let path = dir.join("embeddings.bin");
        fs::write(&path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        let meta = StoreMeta {
            count: self.len(),
            dim: self.dim(),
        };
        let path = dir.join("meta.json");
        let mut f = fs::File::create(&path).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        serde_json::to_writer_pretty(&mut f, &meta)?;
        f.write_all(b"\n").map_err(|e| Error::io("writing meta.json", e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let meta_text = fs::read_to_string(&meta_path)
            .map_err(|e| Error::io(format!("reading {}", meta_path.display()), e))?;
        let meta: StoreMeta = serde_json::from_str(&meta_text)?;
        let records = read_jsonl(&dir.join("exemplars.jsonl"))?;
        let path = dir.join("embeddings.bin");
        let bytes = fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if records.len() != meta.count || bytes.len() != meta.count * meta.dim * 8 {
            return Err(Error::Ingestion(format!(
                "store at {} is inconsistent with its meta.json",
                dir.display()
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let embeddings = Array2::from_shape_vec((meta.count, meta.dim), values)
            .map_err(|e| Error::Ingestion(e.to_string()))?;
        let exemplars = records
            .into_iter()
            .enumerate()
            .map(|(id, r)| Exemplar {
                id,
                input_text: r.input,
                output_text: r.output,
            })
            .collect();
        Self::from_parts(exemplars, embeddings)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreMeta {
    count: usize,
    dim: usize,
}

/// Descending by score, ascending by id on ties.
pub(crate) fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

fn top_n(scored: &mut Vec<(usize, f64)>, n: usize) -> Vec<(usize, f64)> {
    if scored.len() > n {
        scored.select_nth_unstable_by(n - 1, rank_order);
        scored.truncate(n);
    }
    scored.sort_by(rank_order);
    std::mem::take(scored)
}

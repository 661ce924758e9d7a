//! CSV files with a `#` metadata line, datasets and oracle files.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::hexfloat;
use crate::batch::SampleBatch;
use crate::error::{Error, Result};
use crate::gaussian::LinearGaussianOracle;
use crate::tensor::Tensor;

pub const TOOL_NAME: &str = "gan-likelihood";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// `# gan-likelihood <version> <command> <config as JSON>`
pub fn metadata_line(command: &str, config: &impl Serialize) -> Result<String> {
    let json = serde_json::to_string(config).map_err(|e| Error::Format(e.to_string()))?;
    Ok(format!("# {TOOL_NAME} {TOOL_VERSION} {command} {json}"))
}

/// Writes `bytes` next to `path` and renames into place, so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Shortest representation that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

pub fn write_csv<I>(path: &Path, metadata: &str, columns: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut out = Vec::new();
    writeln!(out, "{metadata}")?;
    let mut w = csv::Writer::from_writer(&mut out);
    w.write_record(columns)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    drop(w);
    write_atomic(path, &out)
}

/// Header and rows of a CSV file, skipping `#` lines.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(str::to_owned).collect());
    }
    Ok((header, rows))
}

pub fn write_dataset(path: &Path, metadata: &str, data: &SampleBatch) -> Result<()> {
    let columns: Vec<String> = (0..data.dim()).map(|k| format!("y{k}")).collect();
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let rows = (0..data.len()).map(|i| data.point(i).iter().map(|&v| fmt_f64(v)).collect());
    write_csv(path, metadata, &cols, rows)
}

pub fn read_dataset(path: &Path) -> Result<SampleBatch> {
    let (header, rows) = read_csv(path)?;
    let d = header.len();
    let mut values = Vec::with_capacity(rows.len() * d);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(Error::Format(format!("row {i} has {} fields, expected {d}", row.len())));
        }
        for field in row {
            values.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("row {i}: `{field}` is not a number")))?,
            );
        }
    }
    SampleBatch::new(Tensor::matrix(rows.len(), d, values)?)
}

#[derive(Serialize, Deserialize)]
struct OracleRecord {
    lambda: String,
    data_dim: usize,
    latent_dim: usize,
    /// `G` row-major
    g: Vec<String>,
    offset: Vec<String>,
}

pub fn save_oracle(oracle: &LinearGaussianOracle, path: &Path) -> Result<()> {
    let rec = OracleRecord {
        lambda: hexfloat::format(oracle.lambda()),
        data_dim: oracle.data_dim(),
        latent_dim: oracle.latent_dim(),
        g: oracle.g().data().iter().map(|&v| hexfloat::format(v)).collect(),
        offset: oracle.offset().iter().map(|&v| hexfloat::format(v)).collect(),
    };
    let text = toml::to_string(&rec).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub fn load_oracle(path: &Path) -> Result<LinearGaussianOracle> {
    let rec: OracleRecord =
        toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Format(e.to_string()))?;
    let parse_all = |v: &[String]| v.iter().map(|s| hexfloat::parse(s)).collect::<Result<Vec<f64>>>();
    let g = Tensor::matrix(rec.data_dim, rec.latent_dim, parse_all(&rec.g)?)
        .map_err(|_| Error::Format("G does not match its declared shape".into()))?;
    LinearGaussianOracle::with_offset(&g, &parse_all(&rec.offset)?, hexfloat::parse(&rec.lambda)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut rng = SeededRng::new(1);
        let mut vals = rng.normals(30);
        vals[0] = 1e-300;
        vals[1] = -123456.789e200;
        let b = SampleBatch::new(Tensor::matrix(10, 3, vals).unwrap()).unwrap();
        write_dataset(&path, "# test", &b).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, b);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 12);
    }

    #[test]
    fn empty_dataset_keeps_dimension() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let b = SampleBatch::new(Tensor::zeros(&[0, 4])).unwrap();
        write_dataset(&path, "# empty", &b).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!((back.len(), back.dim()), (0, 4));
    }

    #[test]
    fn oracle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.toml");
        let o = LinearGaussianOracle::random(3, 2, 0.1, 5).unwrap();
        save_oracle(&o, &path).unwrap();
        let back = load_oracle(&path).unwrap();
        assert_eq!(back.g(), o.g());
        assert_eq!(back.lambda(), o.lambda());
    }

    #[test]
    fn metadata_line_shape() {
        let line = metadata_line("gen-data", &serde_json::json!({"d": 2})).unwrap();
        assert_eq!(line, format!("# gan-likelihood {TOOL_VERSION} gen-data {{\"d\":2}}"));
    }
}

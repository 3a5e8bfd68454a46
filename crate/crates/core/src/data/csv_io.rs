use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::{Dataset, FeatureSchema, Sample, Split, Vocabulary};
use crate::error::{Error, Result};

pub const LABEL_COLUMN: &str = "label";

enum Encoding<'a> {
    /// Cells hold dense indices directly.
    Index,
    /// Cells hold raw values mapped through a vocabulary.
    Vocab(&'a Vocabulary),
}

/// Reads a CSV whose feature cells are already dense indices.
pub fn parse_csv(path: &Path, schema: &FeatureSchema, split: Split) -> Result<Dataset> {
    parse(path, schema, split, Encoding::Index)
}

/// Reads a CSV whose feature cells are raw values; unseen values map to index 0.
pub fn parse_csv_with_vocab(
    path: &Path,
    schema: &FeatureSchema,
    vocab: &Vocabulary,
    split: Split,
) -> Result<Dataset> {
    parse(path, schema, split, Encoding::Vocab(vocab))
}

fn parse(path: &Path, schema: &FeatureSchema, split: Split, enc: Encoding<'_>) -> Result<Dataset> {
    schema.validate()?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let scenario_col = column(&schema.scenario_field)?;
    let common_cols = schema
        .common_fields
        .iter()
        .map(|f| column(f))
        .collect::<Result<Vec<_>>>()?;
    let label_col = column(LABEL_COLUMN)?;

    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let cell = |idx: usize| record.get(idx).unwrap_or_default().trim();
        let feature = |field: &str, idx: usize, card: usize| -> Result<usize> {
            let raw = cell(idx);
            let id = match enc {
                Encoding::Index => raw.parse::<usize>().map_err(|_| Error::Parse {
                    row,
                    message: format!("field `{field}`: `{raw}` is not a non-negative integer index"),
                })?,
                Encoding::Vocab(v) => v.encode(field, raw),
            };
            if id >= card {
                return Err(Error::Parse {
                    row,
                    message: format!("field `{field}`: index {id} exceeds cardinality {card}"),
                });
            }
            Ok(id)
        };
        let scenario_id = feature(&schema.scenario_field, scenario_col, schema.scenario_cardinality)?;
        let common_ids = schema
            .common_fields
            .iter()
            .zip(&common_cols)
            .zip(&schema.common_cardinalities)
            .map(|((f, &c), &card)| feature(f, c, card))
            .collect::<Result<Vec<_>>>()?;
        let label = match cell(label_col) {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    row,
                    message: format!("label `{other}` is not 0 or 1"),
                })
            }
        };
        samples.push(Sample {
            scenario_id,
            common_ids,
            label,
        });
    }
    Dataset::new(schema.clone(), samples, split)
}

/// Writes a dataset with dense indices, or raw values when `vocab` is given.
pub fn write_csv(ds: &Dataset, path: &Path, vocab: Option<&Vocabulary>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let schema = ds.schema();
    let io_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut header: Vec<&str> = vec![&schema.scenario_field];
    header.extend(schema.common_fields.iter().map(String::as_str));
    header.push(LABEL_COLUMN);
    w.write_record(&header).map_err(io_err)?;
    let render = |field: &str, id: usize| -> String {
        vocab
            .and_then(|v| v.decode(field, id))
            .map_or_else(|| id.to_string(), str::to_owned)
    };
    for s in ds.samples() {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(render(&schema.scenario_field, s.scenario_id));
        for (f, &id) in schema.common_fields.iter().zip(&s.common_ids) {
            rec.push(render(f, id));
        }
        rec.push(s.label.to_string());
        w.write_record(&rec).map_err(io_err)?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> FeatureSchema {
        FeatureSchema {
            scenario_field: "tab".into(),
            common_fields: vec!["f1".into(), "f2".into()],
            scenario_cardinality: 3,
            common_cardinalities: vec![10, 10],
        }
    }

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn direct_field_mapping() {
        let f = write("tab,f1,f2,label\n2,5,9,1\n");
        let ds = parse_csv(f.path(), &schema(), Split::Train).unwrap();
        assert_eq!(
            ds.samples(),
            &[Sample {
                scenario_id: 2,
                common_ids: vec![5, 9],
                label: 1
            }]
        );
    }

    #[test]
    fn column_order_does_not_matter() {
        let f = write("label,f2,extra,tab,f1\n0,9,x,2,5\n");
        let ds = parse_csv(f.path(), &schema(), Split::Val).unwrap();
        assert_eq!(ds.samples()[0].common_ids, vec![5, 9]);
        assert_eq!(ds.samples()[0].label, 0);
    }

    #[test]
    fn header_only_file_is_empty_dataset() {
        let f = write("tab,f1,f2,label\n");
        assert!(parse_csv(f.path(), &schema(), Split::Test).unwrap().is_empty());
    }

    #[test]
    fn non_binary_label_reports_row() {
        let f = write("tab,f1,f2,label\n0,1,1,1\n1,2,3,2\n");
        match parse_csv(f.path(), &schema(), Split::Train) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let f = write("tab,f1,label\n0,1,1\n");
        let err = parse_csv(f.path(), &schema(), Split::Train).unwrap_err();
        assert!(matches!(err, Error::Schema(ref m) if m.contains("f2")), "{err}");
    }

    #[test]
    fn index_overflow_is_parse_error() {
        let f = write("tab,f1,f2,label\n0,10,1,1\n");
        assert!(matches!(
            parse_csv(f.path(), &schema(), Split::Train),
            Err(Error::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn vocab_encoding_maps_unknowns_to_zero() {
        let train = write("tab,f1,f2,label\nhome,a,x,1\nfeed,b,x,0\n");
        let vocab = Vocabulary::from_csv(train.path(), &["tab", "f1", "f2"]).unwrap();
        let schema = vocab.schema("tab", &["f1".into(), "f2".into()]).unwrap();
        assert_eq!(schema.common_cardinalities, vec![3, 2]);
        let test = write("tab,f1,f2,label\nfeed,zzz,x,1\n");
        let ds = parse_csv_with_vocab(test.path(), &schema, &vocab, Split::Test).unwrap();
        assert_eq!(ds.samples()[0].scenario_id, 2);
        assert_eq!(ds.samples()[0].common_ids, vec![0, 1]);
    }

    #[test]
    fn write_then_parse_round_trips() {
        let f = write("tab,f1,f2,label\n2,5,9,1\n0,0,3,0\n");
        let ds = parse_csv(f.path(), &schema(), Split::Train).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ds, out.path(), None).unwrap();
        assert_eq!(parse_csv(out.path(), &schema(), Split::Train).unwrap(), ds);
    }
}

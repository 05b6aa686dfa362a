//! Line-delimited manifest files.
//!
//! The first line is a header `{"version":1,"labels":[...]}`; every following
//! line is one sample `{"path","label","video","frame","split"}`, where
//! `split` is `"train"`, `"val"` or `null` for an unsplit manifest.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetManifest, FrameSample, Split};
use crate::error::{Error, Result};
use crate::labels::LabelRegistry;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    path: PathBuf,
    label: String,
    video: String,
    frame: usize,
    split: Option<Split>,
}

pub fn write_manifest<W: Write>(manifest: &DatasetManifest, mut out: W) -> Result<()> {
    let header = Header {
        version: MANIFEST_VERSION,
        labels: manifest.registry().names(),
    };
    let io_err = |e| Error::io("<manifest>", e);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n").map_err(io_err)?;
    for (i, s) in manifest.samples().iter().enumerate() {
        let record = Record {
            path: s.image_path.clone(),
            label: s.label.name().to_owned(),
            video: s.source_video.clone(),
            frame: s.frame_index,
            split: manifest.split_of(i),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn read_manifest<R: Read>(input: R) -> Result<DatasetManifest> {
    let mut lines = BufReader::new(input).lines();
    let header_line = match lines.next() {
        Some(line) => line.map_err(|e| parse_err(1, e))?,
        None => return Err(parse_err(1, "missing header line")),
    };
    let header: Header = serde_json::from_str(&header_line).map_err(|e| parse_err(1, e))?;
    if header.version != MANIFEST_VERSION {
        return Err(parse_err(
            1,
            format!("unsupported manifest version {}", header.version),
        ));
    }
    let registry = LabelRegistry::new(header.labels).map_err(|e| parse_err(1, e))?;

    let mut samples = Vec::new();
    let mut splits = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| parse_err(line_no, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| parse_err(line_no, e))?;
        let label = registry.by_name(&record.label).ok_or_else(|| {
            parse_err(
                line_no,
                format!("unknown label {:?} (registry: {:?})", record.label, registry.names()),
            )
        })?;
        samples.push(FrameSample {
            image_path: record.path,
            label: label.clone(),
            source_video: record.video,
            frame_index: record.frame,
        });
        splits.push(record.split);
    }
    DatasetManifest::with_splits(registry, samples, splits).map_err(|e| parse_err(0, e))
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_manifest(manifest, BufWriter::new(file))
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_manifest(file)
}

fn parse_err(line: usize, message: impl ToString) -> Error {
    Error::Parse {
        line,
        message: message.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::dataset::make_split;
    use crate::dataset::test_support::manifest_with_counts;

    fn roundtrip(m: &DatasetManifest) -> (Vec<u8>, DatasetManifest) {
        let mut buf = Vec::new();
        write_manifest(m, &mut buf).unwrap();
        let back = read_manifest(buf.as_slice()).unwrap();
        (buf, back)
    }

    #[test]
    fn empty_manifest_is_header_only() {
        let m = DatasetManifest::new(LabelRegistry::hand_hygiene(), vec![]).unwrap();
        let (bytes, back) = roundtrip(&m);
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "{\"version\":1,\"labels\":[\"FingersInterlaced\",\"Linear\",\"Palm2Palm\"]}\n"
        );
        assert_eq!(back, m);
    }

    #[test]
    fn one_data_line_per_sample() {
        let m = manifest_with_counts(&[55, 55, 52]);
        let (bytes, back) = roundtrip(&m);
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text.lines().count(), 1 + 162);
        assert_eq!(back.len(), 162);
    }

    #[test]
    fn unknown_label_names_the_label() {
        let text = "{\"version\":1,\"labels\":[\"FingersInterlaced\",\"Linear\",\"Palm2Palm\"]}\n\
                    {\"path\":\"a.jpg\",\"label\":\"Circular\",\"video\":\"v\",\"frame\":0,\"split\":null}\n";
        let err = read_manifest(text.as_bytes()).unwrap_err();
        match &err {
            Error::Parse { line, message } => {
                assert_eq!(*line, 2);
                assert!(message.contains("Circular"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"version\":1,\"labels\":[\"A\",\"B\"]}\n\
                    {\"path\":\"a.jpg\",\"label\":\"A\",\"video\":\"v\",\"frame\":0,\"split\":null}\n\
                    {\"path\":\"b.jpg\",\"label\":\n";
        match read_manifest(text.as_bytes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match read_manifest("not json\n".as_bytes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_manifest("".as_bytes()).is_err());
    }

    #[test]
    fn rejects_future_versions() {
        let text = "{\"version\":2,\"labels\":[\"A\"]}\n";
        assert!(matches!(read_manifest(text.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn save_and_load_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/manifest.jsonl");
        let m = make_split(&manifest_with_counts(&[6, 5]), 0.25, 3).unwrap();
        save_manifest(&m, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), m);
    }

    proptest! {
        #[test]
        fn roundtrip_preserves_split_and_bytes(
            counts in prop::collection::vec(2usize..12, 1..5),
            fraction in 0.05f64..0.95,
            seed in any::<u64>(),
        ) {
            let m = make_split(&manifest_with_counts(&counts), fraction, seed).unwrap();
            let (bytes, back) = roundtrip(&m);
            prop_assert_eq!(&back, &m);
            let (bytes2, _) = roundtrip(&back);
            prop_assert_eq!(bytes, bytes2);
        }
    }
}

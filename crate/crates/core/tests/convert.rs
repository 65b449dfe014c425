use std::fs;
use std::io::Write;
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;
use scalegnn::data::{load_canonical, ogb, planetoid, save_canonical};
use scalegnn::Error;
use serde_json::Value;

fn fixture_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/planetoid"))
}

fn as_usizes(v: &Value) -> Vec<usize> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap() as usize)
        .collect()
}

#[test]
fn planetoid_matches_reference_preprocessing() {
    let expected: Value =
        serde_json::from_str(&fs::read_to_string(fixture_dir().join("expected.json")).unwrap()).unwrap();
    let ds = planetoid::convert_planetoid(fixture_dir(), None).unwrap();
    assert_eq!(ds.name, "toy");
    assert_eq!(ds.n(), expected["n"].as_u64().unwrap() as usize);
    assert_eq!(ds.num_features(), expected["f"].as_u64().unwrap() as usize);
    assert_eq!(ds.num_classes, expected["C"].as_u64().unwrap() as usize);

    let feats = expected["features"].as_array().unwrap();
    for (r, row) in feats.iter().enumerate() {
        for (c, v) in row.as_array().unwrap().iter().enumerate() {
            assert_eq!(ds.features.get(r, c), v.as_f64().unwrap(), "feature ({r}, {c})");
        }
    }
    let labels: Vec<i64> = expected["labels"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_i64().unwrap())
        .collect();
    assert_eq!(ds.labels, labels);

    let edges: Vec<(usize, usize)> = expected["edges"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| (e[0].as_u64().unwrap() as usize, e[1].as_u64().unwrap() as usize))
        .collect();
    let ours: Vec<(usize, usize)> = ds.adjacency.iter().map(|(r, c, _)| (r, c)).collect();
    assert_eq!(ours, edges);

    assert_eq!(ds.splits.train, as_usizes(&expected["train"]));
    assert_eq!(ds.splits.val, as_usizes(&expected["val"]));
    assert_eq!(ds.splits.test, as_usizes(&expected["test"]));
}

#[test]
fn planetoid_round_trip_is_idempotent() {
    let ds = planetoid::convert_planetoid(fixture_dir(), Some("toy")).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    save_canonical(&ds, a.path()).unwrap();
    let first = load_canonical(a.path()).unwrap();
    save_canonical(&first, b.path()).unwrap();
    let second = load_canonical(b.path()).unwrap();
    assert_eq!(first, ds);
    assert_eq!(second, first);
    for f in ["edges.tsv", "features.tsv", "labels.tsv", "splits.json", "meta.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn planetoid_missing_and_malformed() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        planetoid::convert_planetoid(dir.path(), Some("toy")),
        Err(Error::MissingFile(_))
    ));
    for entry in fs::read_dir(fixture_dir()).unwrap() {
        let p = entry.unwrap().path();
        fs::copy(&p, dir.path().join(p.file_name().unwrap())).unwrap();
    }
    let y = dir.path().join("ind.toy.y");
    let bytes = fs::read(&y).unwrap();
    fs::write(&y, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(
        planetoid::convert_planetoid(dir.path(), None),
        Err(Error::Format { kind: "planetoid", .. })
    ));
}

fn gz(path: &Path, text: &str) {
    let mut e = GzEncoder::new(fs::File::create(path).unwrap(), Compression::default());
    e.write_all(text.as_bytes()).unwrap();
    e.finish().unwrap();
}

#[test]
fn ogb_layout_converts() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("ogbn_toy");
    fs::create_dir_all(dir.join("raw")).unwrap();
    fs::create_dir_all(dir.join("split/time")).unwrap();
    gz(&dir.join("raw/edge.csv.gz"), "0,1\n1,2\n3,2\n2,2\n");
    gz(
        &dir.join("raw/node-feat.csv.gz"),
        "0.5,1.0\n-1.0,2.0\n3.0,0.0\n0.25,0.75\n",
    );
    fs::write(dir.join("raw/node-label.csv"), "0\n2\n1\n2\n").unwrap();
    gz(&dir.join("split/time/train.csv.gz"), "0\n1\n");
    gz(&dir.join("split/time/valid.csv.gz"), "2\n");
    gz(&dir.join("split/time/test.csv.gz"), "3\n");

    let ds = ogb::convert_ogb(&dir, None, None).unwrap();
    assert_eq!(ds.name, "ogbn-toy");
    assert_eq!((ds.n(), ds.num_features(), ds.num_classes), (4, 2, 3));
    assert_eq!(ds.num_edges(), 3);
    assert!(ds.adjacency.contains(2, 3) && ds.adjacency.contains(3, 2));
    assert_eq!(ds.features.get(1, 0), -1.0);
    assert_eq!(ds.splits.val, vec![2]);

    gz(&dir.join("raw/node-feat.csv.gz"), "0.5,1.0\n-1.0\n3.0,0.0\n0.25,0.75\n");
    assert!(matches!(ogb::convert_ogb(&dir, None, None), Err(Error::Shape { .. })));
}

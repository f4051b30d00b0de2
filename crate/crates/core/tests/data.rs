use std::fs;

use roadformer::data::{
    load_dataset, load_dataset_with, remap_to_simple, synth_generate, write_dataset, ClassMap, DataError,
};

fn ppm(v: u8, w: usize, h: usize) -> Vec<u8> {
    let mut b = format!("P6\n{w} {h}\n255\n").into_bytes();
    b.extend(std::iter::repeat(v).take(3 * w * h));
    b
}

#[test]
fn directory_walk_labels_follow_path_order() {
    let root = tempfile::tempdir().unwrap();
    for (class, files) in [("b", ["2.ppm", "0.ppm", "1.ppm"]), ("a", ["z.ppm", "y.ppm", "x.ppm"])] {
        fs::create_dir(root.path().join(class)).unwrap();
        for (i, f) in files.iter().enumerate() {
            fs::write(root.path().join(class).join(f), ppm(10 * i as u8, 3, 2)).unwrap();
        }
    }
    let cm = ClassMap::new(vec!["a".into(), "b".into()]).unwrap();
    let ds = load_dataset(root.path(), &cm, 4).unwrap();
    assert_eq!(ds.images.len(), 6);
    assert_eq!(ds.images.iter().map(|i| i.label).collect::<Vec<_>>(), vec![0, 0, 0, 1, 1, 1]);
    let ids: Vec<&str> = ds.images.iter().map(|i| i.source_id.as_str()).collect();
    assert_eq!(ids, ["a/x.ppm", "a/y.ppm", "a/z.ppm", "b/0.ppm", "b/1.ppm", "b/2.ppm"]);
    assert!(ds.images.iter().all(|i| i.pixels.shape() == [3, 4, 4]));
    assert_eq!(ds.skipped, 0);
}

#[test]
fn empty_class_and_bad_files() {
    let root = tempfile::tempdir().unwrap();
    fs::create_dir(root.path().join("a")).unwrap();
    fs::create_dir(root.path().join("b")).unwrap();
    fs::write(root.path().join("a/ok.ppm"), ppm(255, 2, 2)).unwrap();
    fs::write(root.path().join("a/bad.ppm"), b"GIF89a").unwrap();
    let cm = ClassMap::new(vec!["a".into(), "b".into()]).unwrap();
    let ds = load_dataset(root.path(), &cm, 2).unwrap();
    assert_eq!(ds.images.len(), 1);
    assert_eq!(ds.skipped, 1);
    assert!(ds.images[0].pixels.to_vec().iter().all(|&v| v == 1.0));
}

#[test]
fn unknown_directories_listed() {
    let root = tempfile::tempdir().unwrap();
    for d in ["a", "q", "r"] {
        fs::create_dir(root.path().join(d)).unwrap();
    }
    let cm = ClassMap::new(vec!["a".into(), "b".into()]).unwrap();
    match load_dataset(root.path(), &cm, 2) {
        Err(DataError::UnknownClasses(v)) => assert_eq!(v, vec!["q", "r"]),
        other => panic!("unexpected {:?}", other.map(|d| d.images.len())),
    }
}

#[test]
fn fine_directories_remap_to_coarse_labels() {
    let root = tempfile::tempdir().unwrap();
    for d in ["dry-mud", "fresh-snow", "melted_snow"] {
        fs::create_dir(root.path().join(d)).unwrap();
        fs::write(root.path().join(d).join("0.ppm"), ppm(1, 1, 1)).unwrap();
    }
    let simple = ClassMap::simple();
    let ds = load_dataset_with(root.path(), 2, |d| remap_to_simple(d).ok().and_then(|c| simple.index(&c))).unwrap();
    assert_eq!(ds.images.iter().map(|i| i.label).collect::<Vec<_>>(), vec![0, 3, 3]);
}

#[test]
fn synth_round_trips_through_disk() {
    let root = tempfile::tempdir().unwrap();
    let images = synth_generate(3, 2, 8, 11).unwrap();
    let cm = ClassMap::new((0..3).map(roadformer::data::synth_class_name).collect()).unwrap();
    write_dataset(root.path(), &images, &cm).unwrap();
    let back = ClassMap::from_json(&fs::read_to_string(root.path().join("classes.json")).unwrap()).unwrap();
    assert_eq!(back, cm);
    let ds = load_dataset(root.path(), &cm, 8).unwrap();
    assert_eq!(ds.images.len(), 6);
    for (a, b) in images.iter().zip(&ds.images) {
        assert_eq!(a.label, b.label);
        let diff = a.pixels.to_vec().iter().zip(b.pixels.to_vec()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff <= 0.5 / 255.0 + 1e-12);
    }
}

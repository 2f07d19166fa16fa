use std::fs;

use etp_core::export::{decode_pgm, export_maps, ExportSidecar, SIDECAR};
use etp_core::ravens::{Scene, Task};
use etp_core::transporter::{ModelConfig, Transporter};

fn export(dir: &std::path::Path) {
    let model = Transporter::<f32>::new(ModelConfig::default(), 3).unwrap();
    let scene = Scene::generate(5, Task::InsertL);
    let (pick, place) = model.maps(&scene.image).unwrap();
    export_maps(dir, "insert-L", 5, &pick, &place).unwrap();
}

#[test]
fn export_writes_parseable_files_deterministically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    export(a.path());
    export(b.path());
    let sidecar: ExportSidecar = serde_json::from_slice(&fs::read(a.path().join(SIDECAR)).unwrap()).unwrap();
    assert_eq!(sidecar.n, 8);
    assert_eq!(sidecar.images.iter().filter(|i| i.map == "place").count(), 8);
    for img in &sidecar.images {
        let bytes = fs::read(a.path().join(&img.pgm)).unwrap();
        let (w, h, levels) = decode_pgm(&bytes).unwrap();
        assert_eq!((w, h), (img.width, img.height));
        if img.max > img.min {
            assert_eq!(levels.iter().max(), Some(&65535));
            assert_eq!(levels.iter().min(), Some(&0));
        }
        let csv = fs::read_to_string(a.path().join(&img.csv)).unwrap();
        assert_eq!(csv.lines().count(), img.height);
        assert_eq!(bytes, fs::read(b.path().join(&img.pgm)).unwrap());
        assert_eq!(csv, fs::read_to_string(b.path().join(&img.csv)).unwrap());
    }
    assert_eq!(fs::read(a.path().join(SIDECAR)).unwrap(), fs::read(b.path().join(SIDECAR)).unwrap());
}

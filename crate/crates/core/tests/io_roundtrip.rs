use ihc_core::nuclei::{import_instances, Frame};
use ihc_core::roi::{import_roi, RoiProvenance};
use ihc_core::slideio::open_slide;
use ihc_core::synth::{generate_slide, verify_manifest, ClassCounts, GroundTruthManifest, SlideSpec};

fn spec() -> SlideSpec {
    SlideSpec {
        width: 600,
        height: 520,
        roi_polygon: vec![(70.0, 70.0), (530.0, 90.0), (500.0, 450.0), (90.0, 430.0)],
        in_roi: ClassCounts {
            unstained: 25,
            light: 6,
            moderate: 6,
            dark: 6,
        },
        outside_roi: ClassCounts {
            unstained: 4,
            ..ClassCounts::default()
        },
        ..SlideSpec::er_preset(13)
    }
}

#[test]
fn written_synthetic_slide_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let synth = generate_slide(&spec()).unwrap();
    let written = synth.write(dir.path()).unwrap();

    let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    let manifest = GroundTruthManifest::from_json(&text).unwrap();
    assert_eq!(manifest, written);
    assert!(verify_manifest(&manifest).is_empty());

    let slide = open_slide(dir.path().join("slide.tiff")).unwrap();
    assert_eq!(slide.dimensions(), (600, 520));
    assert_eq!(slide.level_count(), 2);
    assert_eq!(slide.levels()[1].downsample, 4.0);
    assert_eq!(*slide.level_image(0).unwrap(), synth.image);

    let roi = import_roi(dir.path().join("roi.png")).unwrap();
    assert_eq!(roi.mask, synth.roi.mask);
    assert_eq!(roi.downsample, 4.0);
    assert_eq!(roi.provenance, RoiProvenance::External);

    let labels = import_instances(dir.path().join("labels.png"), Frame::Global).unwrap();
    assert_eq!(labels.len(), synth.truth.len());
    for (a, b) in labels.iter().zip(&synth.truth) {
        assert_eq!(a.mask, b.mask);
    }
}

#[test]
fn manifest_rejects_other_schema() {
    let synth = generate_slide(&spec()).unwrap();
    let text = synth.manifest.to_json().replace("ihc-synth-manifest", "something-else");
    assert!(GroundTruthManifest::from_json(&text).is_err());
}

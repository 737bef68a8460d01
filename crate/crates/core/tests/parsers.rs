use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specfm::msio::{
    parse_mgf, parse_mzml, read_embeddings, read_labels, read_row_index, write_embeddings, write_labels, write_mgf, write_row_index,
    EmbeddingMatrix, LabelRecord, Peak, Spectrum, Task,
};
use specfm::Error;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mzml").join(name)
}

fn bits(field: &str) -> Vec<u64> {
    if field.is_empty() {
        return Vec::new();
    }
    field.split(',').map(|h| u64::from_str_radix(h, 16).unwrap()).collect()
}

#[test]
fn mzml_fixtures_decode_bit_exactly() {
    let expected = std::fs::read_to_string(fixture("expected.tsv")).unwrap();
    let mut checked = 0;
    for line in expected.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let spectra = parse_mzml(BufReader::new(File::open(fixture(f[0])).unwrap())).unwrap();
        let s = spectra.iter().find(|s| s.scan_id == f[2]).unwrap_or_else(|| panic!("{} missing {}", f[0], f[2]));
        assert_eq!(s.run_id, f[1]);
        assert_eq!(s.precursor_mz.to_bits(), bits(f[3])[0]);
        assert_eq!(s.precursor_charge, f[4].parse::<u32>().unwrap());
        let mz: Vec<u64> = s.peaks.iter().map(|p| p.mz.to_bits()).collect();
        let it: Vec<u64> = s.peaks.iter().map(|p| p.intensity.to_bits()).collect();
        assert_eq!(mz, bits(f[5]), "{} {}", f[0], f[2]);
        assert_eq!(it, bits(f[6]), "{} {}", f[0], f[2]);
        checked += 1;
    }
    assert_eq!(checked, 7);
}

#[test]
fn mzml_skips_ms1_and_keeps_order() {
    for name in ["f64_plain.mzML", "f32_zlib.mzML", "mixed_zlib.mzML"] {
        let spectra = parse_mzml(BufReader::new(File::open(fixture(name)).unwrap())).unwrap();
        let ids: Vec<&str> = spectra.iter().map(|s| s.scan_id.as_str()).collect();
        assert_eq!(ids, ["scan=2", "scan=3"], "{name}");
    }
}

#[test]
fn truncated_mzml_is_a_parse_error() {
    let err = parse_mzml(BufReader::new(File::open(fixture("truncated.mzML")).unwrap())).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }), "{err}");
}

fn random_spectrum(rng: &mut ChaCha8Rng, i: usize) -> Spectrum {
    let n = rng.gen_range(0..60);
    let peaks = (0..n)
        .map(|_| Peak::new(rng.gen_range(50.0..2500.0), rng.gen_range(0.0..1e7)))
        .collect();
    let charge = rng.gen_range(0..5);
    Spectrum::new("roundtrip", format!("index={i}"), rng.gen_range(300.0..1800.0), charge, peaks)
}

#[test]
fn mgf_round_trip_is_field_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let spectra: Vec<Spectrum> = (0..1000).map(|i| random_spectrum(&mut rng, i)).collect();
    let mut text = Vec::new();
    write_mgf(&mut text, &spectra).unwrap();
    let back = parse_mgf(&text[..], "roundtrip").unwrap();
    assert_eq!(back, spectra);
    let mut again = Vec::new();
    write_mgf(&mut again, &back).unwrap();
    assert_eq!(again, text);
}

#[test]
fn labels_and_embeddings_round_trip() {
    let labels: Vec<LabelRecord> = (0..50)
        .map(|i| LabelRecord {
            run_id: "r".into(),
            scan_id: format!("s{i}"),
            task: Task::ALL[i % 4],
            label: (i % 3 == 0) as u8,
        })
        .collect();
    let mut out = Vec::new();
    write_labels(&mut out, &labels).unwrap();
    assert_eq!(read_labels(&out[..]).unwrap(), labels);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut m = EmbeddingMatrix::new(7);
    for i in 0..20 {
        let v: Vec<f32> = (0..7).map(|_| rng.gen_range(-3.0..3.0)).collect();
        m.push("run", &format!("scan={i}"), &v).unwrap();
    }
    let (mut bin, mut idx) = (Vec::new(), Vec::new());
    write_embeddings(&mut bin, &m).unwrap();
    write_row_index(&mut idx, &m).unwrap();
    let mut back = read_embeddings(&bin[..]).unwrap();
    read_row_index(&idx[..], &mut back).unwrap();
    assert_eq!(back, m);
    assert_eq!(&bin[..4], b"SEMB");
    assert_eq!(bin.len(), 16 + 20 * 7 * 4);
}

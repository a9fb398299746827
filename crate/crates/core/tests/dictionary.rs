mod common;

use std::collections::HashSet;

use common::{random_labels, rng};
use hashlearn::image::{scalable_margin, ImageNetConfig, ImageObjective};
use hashlearn::semantic::{build_dictionaries, train_semantic, SemanticNetConfig};

fn trained(seed: u64) -> (Vec<hashlearn::data::LabelVector>, hashlearn::nn::MlpNetwork) {
    let mut r = rng(seed);
    let labels = random_labels(&mut r, 120, 5, 0.3);
    let cfg = SemanticNetConfig { epochs: 10, trunk: vec![32, 16], batch_size: 32, seed, ..SemanticNetConfig::default() };
    let t = train_semantic(&labels, 12, &cfg).unwrap();
    (labels, t.net)
}

#[test]
fn one_entry_per_distinct_label() {
    let (labels, net) = trained(1);
    let dict = build_dictionaries(&net, &labels).unwrap();
    let distinct: HashSet<_> = labels.iter().collect();
    assert_eq!(dict.len(), distinct.len());
    for l in &labels {
        assert_eq!(dict.keys()[dict.lookup(l).unwrap()], *l);
    }
}

#[test]
fn dictionaries_are_deterministic() {
    let (labels, net) = trained(2);
    let a = build_dictionaries(&net, &labels).unwrap();
    let b = build_dictionaries(&net, &labels).unwrap();
    assert_eq!(a, b);
    let (labels2, net2) = trained(2);
    assert_eq!(a, build_dictionaries(&net2, &labels2).unwrap());
}

#[test]
fn codes_are_binary_and_margins_bounded() {
    let (labels, net) = trained(3);
    let dict = build_dictionaries(&net, &labels).unwrap();
    for c in dict.codes() {
        assert_eq!(c.len(), 12);
        assert!(c.bits().iter().all(|&b| b == 1 || b == -1));
    }
    for a in dict.codes() {
        assert_eq!(scalable_margin(a, a).unwrap(), 1.0);
        for b in dict.codes() {
            let m = scalable_margin(a, b).unwrap();
            assert!((0.0..=1.0).contains(&m));
        }
    }
    let cfg = ImageNetConfig::default();
    let obj = ImageObjective::new(&dict, &cfg).unwrap();
    let entries: Vec<usize> = (0..dict.len()).collect();
    let (within, _) = obj.margins(&entries).unwrap();
    for i in 0..dict.len() {
        assert_eq!(within.get(i, i), 1.0);
    }
}

#[test]
fn dictionary_file_round_trip() {
    let (labels, net) = trained(4);
    let dict = build_dictionaries(&net, &labels).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dictionary.csv");
    dict.save(&path).unwrap();
    assert_eq!(hashlearn::semantic::SemanticDictionary::load(&path).unwrap(), dict);
}

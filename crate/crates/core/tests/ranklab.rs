use molevers::chemio::{parse_smiles, LabeledSet, Molecule, PairRankRecord};
use molevers::corruption::stream;
use molevers::ranklab::*;
use molevers::synth::{random_molecules, LinearProperty};

fn set_of(smiles: &[&str], values: &[f64]) -> LabeledSet {
    let mols = smiles.iter().map(|s| parse_smiles(s).unwrap()).collect();
    LabeledSet::new("t", mols, values.to_vec())
}

fn truth_of(set: &LabeledSet) -> impl Fn(&Molecule) -> f64 + '_ {
    let map = truth_map(set);
    move |m: &Molecule| map[m.smiles().unwrap()]
}

#[test]
fn coin_flip_labels_carry_no_signal() {
    let set = LinearProperty::reference().label("t", random_molecules(150, 4, 12, 21));
    let mut rng = stream(21, 0, 0);
    let pairs = generate_all_pairs(&set, 10_000, &mut rng).unwrap();
    assert_eq!(pairs.len(), 10_000);
    let recs = mock_rank_labels(&pairs, &truth_of(&set), 0.5, &mut rng).unwrap();
    let q = pairwise_tau(&recs, &truth_map(&set)).unwrap();
    // Binomial sd is 0.005; allow four of them.
    assert!((q.accuracy - 0.5).abs() < 0.02, "{}", q.accuracy);
    assert!(q.abs_tau < 0.04, "{}", q.abs_tau);
    assert!(!gate(&q, GATE_THRESHOLD));
}

#[test]
fn swapping_every_record_keeps_quality() {
    let set = LinearProperty::reference().label("t", random_molecules(30, 4, 12, 22));
    let mut rng = stream(22, 0, 0);
    let pairs = generate_all_pairs(&set, 10_000, &mut rng).unwrap();
    let recs = mock_rank_labels(&pairs, &truth_of(&set), 0.3, &mut rng).unwrap();
    let swapped: Vec<PairRankRecord> = recs.iter().map(PairRankRecord::swapped).collect();
    let truth = truth_map(&set);
    let a = pairwise_tau(&recs, &truth).unwrap();
    let b = pairwise_tau(&swapped, &truth).unwrap();
    assert_eq!(a.accuracy, b.accuracy);
    assert_eq!(a.tau, b.tau);
}

#[test]
fn three_pairs_two_right() {
    let set = set_of(&["C", "CC", "CCC"], &[1.0, 2.0, 3.0]);
    let recs = vec![
        PairRankRecord::new("C", "CC", 1),
        PairRankRecord::new("CC", "CCC", 1),
        PairRankRecord::new("C", "CCC", 0),
    ];
    let q = pairwise_tau(&recs, &truth_map(&set)).unwrap();
    assert!((q.tau - 1.0 / 3.0).abs() < 1e-15);
    assert!((q.accuracy - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(q.n_decided, 3);
}

#[test]
fn truth_ties_are_not_decided() {
    let set = set_of(&["C", "CC", "CCC"], &[1.0, 1.0, 3.0]);
    let recs = vec![
        PairRankRecord::new("C", "CC", 1),
        PairRankRecord::new("CC", "CCC", 1),
    ];
    let q = pairwise_tau(&recs, &truth_map(&set)).unwrap();
    assert_eq!((q.n_pairs, q.n_decided), (2, 1));
    assert_eq!((q.accuracy, q.tau), (1.0, 1.0));
}

#[test]
fn cap_limits_the_sample() {
    let set = set_of(&["C", "CC", "CCC", "CCCC"], &[1.0, 2.0, 3.0, 4.0]);
    let all = generate_all_pairs(&set, 100, &mut stream(0, 0, 0)).unwrap();
    assert_eq!(all.len(), 6);
    let some = generate_all_pairs(&set, 3, &mut stream(1, 0, 0)).unwrap();
    assert_eq!(some.len(), 3);
    assert!(some.windows(2).all(|w| w[0] < w[1]));
    assert!(some.iter().all(|p| all.contains(p) && p.0 < p.1));
}

#[test]
fn gate_is_strict() {
    let q = RankQuality {
        n_pairs: 10,
        n_decided: 10,
        accuracy: 0.7,
        tau: -0.4,
        abs_tau: 0.4,
    };
    assert!(!gate(&q, 0.4));
    assert!(gate(&q, 0.39));
}

#[test]
fn error_cases() {
    let set = set_of(&["C", "CC"], &[1.0, 2.0]);
    let recs = vec![PairRankRecord::new("C", "CCO", 1)];
    assert_eq!(
        pairwise_tau(&recs, &truth_map(&set)).unwrap_err(),
        RankError::MissingTruth("CCO".into())
    );
    let dup = set_of(&["C", "C"], &[1.0, 2.0]);
    assert_eq!(
        generate_all_pairs(&dup, 10, &mut stream(0, 0, 0)).unwrap_err(),
        RankError::TooFewMolecules(1)
    );
    let pairs = vec![("C".to_string(), "CC".to_string())];
    assert_eq!(
        mock_rank_labels(&pairs, &|_: &Molecule| 0.0, 1.5, &mut stream(0, 0, 0)).unwrap_err(),
        RankError::BadFlipProb(1.5)
    );
    assert!(MockRankProvider::new(Descriptor::HeavyAtomCount, -0.1, stream(0, 0, 0)).is_err());
}

#[test]
fn provider_labels_by_descriptor() {
    let mut p = MockRankProvider::new(Descriptor::HeavyAtomCount, 0.0, stream(0, 0, 0)).unwrap();
    let pairs = vec![
        ("CCC".to_string(), "C".to_string()),
        ("C".to_string(), "CC".to_string()),
        ("CC".to_string(), "CC".to_string()),
    ];
    let labels: Vec<u8> = p.rank_pairs(&pairs).unwrap().iter().map(|r| r.label).collect();
    assert_eq!(labels, vec![0, 1, 1]);
}

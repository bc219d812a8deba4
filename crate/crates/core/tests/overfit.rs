mod common;

#[test]
fn qboost_memorizes_one_pair() {
    let r = common::qboost_overfit();
    assert_eq!(r.decoded, r.target);
    assert!(r.epochs <= 50);
}

#[test]
fn ranker_separates_vocabulary_classes() {
    let r = common::ranker_overfit();
    assert!(r.accuracy >= 0.95, "accuracy {}", r.accuracy);
}

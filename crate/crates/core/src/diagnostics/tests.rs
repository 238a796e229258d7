use std::sync::Arc;

use ndarray::{array, Array2};

use super::*;
use crate::feature_store::{Dataset, FeatureMatrix, ShotSet};

fn fm(rows: Array2<f64>) -> FeatureMatrix {
    FeatureMatrix::from_rows(rows).unwrap()
}

/// Two classes along the axes; learner `c` is a near copy of `a`, `b` disagrees on samples 1 and 3.
fn session() -> Session {
    let a = fm(array![[1.0, 0.0], [0.9, 0.2], [0.0, 1.0], [0.2, 0.9], [0.7, 0.7]]);
    let b = fm(array![[1.0, 0.0], [0.1, 1.0], [0.0, 1.0], [1.0, 0.1], [0.6, 0.8]]);
    let c = fm(array![[1.0, 0.0], [0.9, 0.2], [0.0, 1.0], [0.2, 0.9], [0.7, 0.7]]);
    let shots = ShotSet::from_entries([(0, 0), (2, 1)]).unwrap();
    let data = Dataset::from_parts(
        vec!["c0".into(), "c1".into()],
        vec!["a".into(), "b".into(), "c".into()],
        vec![a, b, c],
        shots,
        None,
    )
    .unwrap();
    let mut s = Session::new(Arc::new(data), 1).unwrap();
    s.select_only(&[0, 1, 2]).unwrap();
    s
}

#[test]
fn agreement_identical_and_opposite() {
    let p = array![[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]];
    let same = agreement(&p, &p).unwrap();
    assert_eq!(same.overall_diff, 0);
    assert_eq!(same.per_class[0], ClassAgreement { learner_only: 0, both: 2, ensemble_only: 0 });
    assert_eq!(same.per_class[1], ClassAgreement { learner_only: 0, both: 1, ensemble_only: 0 });

    let zero = Array2::from_shape_fn((4, 2), |(_, c)| if c == 0 { 1.0 } else { 0.0 });
    let one = Array2::from_shape_fn((4, 2), |(_, c)| if c == 1 { 1.0 } else { 0.0 });
    let opp = agreement(&zero, &one).unwrap();
    assert_eq!(opp.overall_diff, 4);
    assert_eq!(opp.per_class[0], ClassAgreement { learner_only: 4, both: 0, ensemble_only: 0 });
    assert_eq!(opp.per_class[1], ClassAgreement { learner_only: 0, both: 0, ensemble_only: 4 });
    assert!(agreement(&zero, &array![[1.0, 0.0]]).is_err());
}

#[test]
fn agreement_breakdown_covers_selected() {
    let s = session();
    let rows = agreement_breakdown(&s).unwrap();
    assert_eq!(rows.len(), 3);
    let table = s.predictions().unwrap();
    for (row, k) in rows.iter().zip(0..) {
        for (c, t) in row.agreement.per_class.iter().enumerate() {
            let own = argmaxes(&table.per_learner[k]).iter().filter(|&&a| a == c).count();
            let ens = argmaxes(&table.ensemble).iter().filter(|&&a| a == c).count();
            assert_eq!(t.learner_only + t.both, own);
            assert_eq!(t.ensemble_only + t.both, ens);
        }
    }
    assert!(rows[1].agreement.overall_diff > 0);
}

#[test]
fn histogram_edges() {
    let one_hot = array![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
    assert_eq!(confidence_histogram(&one_hot, 0).counts, [0, 0, 0, 2]);
    assert_eq!(confidence_histogram(&one_hot, 2).counts, [0, 0, 0, 0]);
    // margin exactly 0.25 lands in the second bin
    let edge = array![[0.625, 0.375]];
    assert_eq!(confidence_histogram(&edge, 0).counts, [0, 1, 0, 0]);
    let tied = array![[0.5, 0.5]];
    assert_eq!(confidence_histogram(&tied, 0).counts, [1, 0, 0, 0]);
}

#[test]
fn histogram_pair_validates() {
    let s = session();
    let pair = histogram_pair(&s, "a", 0).unwrap();
    let table = s.predictions().unwrap();
    let n0 = argmaxes(&table.ensemble).iter().filter(|&&c| c == 0).count();
    assert_eq!(pair.ensemble.counts.iter().sum::<usize>(), n0);
    assert!(histogram_pair(&s, "a", 2).is_err());
    assert!(histogram_pair(&s, "zz", 0).is_err());
}

#[test]
fn influence_flags_at_threshold() {
    let r = InfluenceReport::from_margins(
        "x".into(),
        InfluenceMode::LeaveOneOut,
        array![0.75, 0.0, 0.5, 0.0],
        array![0.5, 0.25, 0.5, 0.125],
    );
    assert_eq!((r.up, r.down), (vec![0], vec![1]));
    let exact = InfluenceReport::from_margins("x".into(), InfluenceMode::AddOneIn, array![0.2], array![0.0]);
    assert_eq!(exact.up, vec![0]);
}

#[test]
fn influence_matches_scalar_recompute() {
    let s = session();
    let table = s.predictions().unwrap();
    let report = learner_influence(&s, "b").unwrap();
    assert_eq!(report.mode, InfluenceMode::LeaveOneOut);
    for i in 0..s.num_samples() {
        let without: Vec<f64> = (0..2)
            .map(|c| (table.per_learner[0][[i, c]] + table.per_learner[2][[i, c]]) / 2.0)
            .collect();
        let m_without = (without[0] - without[1]).abs();
        let with: Vec<f64> = (0..2)
            .map(|c| (0..3).map(|k| table.per_learner[k][[i, c]]).sum::<f64>() / 3.0)
            .collect();
        let m_with = (with[0] - with[1]).abs();
        assert!((report.deltas[i] - (m_with - m_without)).abs() < 1e-12);
    }
}

#[test]
fn influence_of_identical_learner_is_zero() {
    let mut s = session();
    s.select_only(&[0, 2]).unwrap();
    let r = learner_influence(&s, "c").unwrap();
    assert!(r.deltas.iter().all(|d| d.abs() < 1e-12));
    assert!(r.up.is_empty() && r.down.is_empty());
}

#[test]
fn influence_add_one_in_and_sole() {
    let mut s = session();
    s.select_only(&[0]).unwrap();
    assert!(matches!(learner_influence(&s, "a"), Err(Error::SoleLearner(_))));
    let before = s.predictions().unwrap().ensemble.clone();
    let r = learner_influence(&s, "b").unwrap();
    assert_eq!(r.mode, InfluenceMode::AddOneIn);
    assert!(r.deltas.iter().any(|d| d.abs() > 0.0));
    // Hypothetical addition leaves the session's ensemble untouched.
    assert_eq!(s.predictions().unwrap().ensemble, before);
}

#[test]
fn coverage_ranks_twins_first() {
    let s = session();
    // sample 4 sits between the classes; sample 1 is close to shot 0 in two of three learners
    let r = shot_coverage(&s, 0, 20).unwrap();
    assert_eq!(r.neighbors.len(), 3);
    assert!(r.neighbors.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    assert!(r.neighbors.iter().all(|n| !s.shots().contains(n.sample)));
    assert_eq!(shot_coverage(&s, 0, 1).unwrap().neighbors.len(), 1);
    assert!(shot_coverage(&s, 1, 5).is_err());
}

#[test]
fn coverage_duplicate_has_similarity_one() {
    let f = fm(array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.6, 0.8]]);
    let shots = ShotSet::from_entries([(0, 0), (1, 1)]).unwrap();
    let data = Dataset::from_parts(vec!["a".into(), "b".into()], vec!["l".into()], vec![f], shots, None).unwrap();
    let mut s = Session::new(Arc::new(data), 0).unwrap();
    s.select_only(&[0]).unwrap();
    let r = shot_coverage(&s, 0, 20).unwrap();
    assert_eq!(r.neighbors[0], Neighbor { sample: 2, similarity: 1.0 });
    assert!((r.neighbors[1].similarity - 0.6).abs() < 1e-12);
}

fn members<'a>(preds: &'a [Array2<f64>], weights: &[f64]) -> Vec<(ArrayView2<'a, f64>, f64)> {
    preds.iter().zip(weights).map(|(p, &w)| (p.view(), w)).collect()
}

#[test]
fn grid_values_are_clean() {
    let g = WeightGrid::default().values().unwrap();
    assert_eq!(g.len(), 51);
    assert_eq!(g[3], 0.3);
    assert_eq!(g[50], 5.0);
}

#[test]
fn increase_picks_smallest_winning_weight() {
    // A says class 1 on S1 = {0, 1}; B says class 0 with full confidence.
    let a = array![[0.25, 0.75], [0.25, 0.75], [0.5, 0.5]];
    let b = array![[1.0, 0.0], [1.0, 0.0], [0.5, 0.5]];
    let preds = [a, b];
    let r = weight_search(&members(&preds, &[1.0, 1.0]), 0, Direction::Increase, &[0, 1], &WeightGrid::default()).unwrap();
    // 0.75w > 0.25w + 1  <=>  w > 2; the tie at 2 goes to class 0
    assert_eq!(r.new_weight, 2.1);
    assert_eq!(r.objective_before, 1.0);
    assert_eq!(r.objective_after, 2.0);
    assert!(r.improved);
}

#[test]
fn tie_moves_one_step() {
    let a = array![[0.9, 0.1], [0.2, 0.8]];
    let preds = [a.clone(), a];
    let r = weight_search(&members(&preds, &[1.0, 1.0]), 0, Direction::Increase, &[0], &WeightGrid::default()).unwrap();
    assert_eq!(r.new_weight, 1.1);
    assert!(!r.improved);
    let d = weight_search(&members(&preds, &[1.0, 1.0]), 0, Direction::Decrease, &[0], &WeightGrid::default()).unwrap();
    assert_eq!(d.new_weight, 0.9);
}

#[test]
fn no_improvement_keeps_weight() {
    // S1 = {0} agrees at every weight; every candidate >= 2.0 flips S2 sample 1 to class 0.
    let a = array![[0.75, 0.25], [0.75, 0.25]];
    let b = array![[1.0, 0.0], [0.0, 1.0]];
    let preds = [a, b];
    let r = weight_search(&members(&preds, &[1.9, 1.0]), 0, Direction::Increase, &[0], &WeightGrid::default()).unwrap();
    assert_eq!(r.new_weight, 1.9);
    assert_eq!((r.objective_before, r.objective_after), (2.0, 2.0));
    assert!(!r.improved);
}

#[test]
fn infeasible_directions() {
    let a = array![[0.9, 0.1]];
    let preds = [a.clone(), a];
    let g = WeightGrid::default();
    assert!(matches!(
        weight_search(&members(&preds, &[5.0, 1.0]), 0, Direction::Increase, &[0], &g),
        Err(Error::InfeasibleDirection { .. })
    ));
    assert!(matches!(
        weight_search(&members(&preds, &[0.0, 1.0]), 0, Direction::Decrease, &[0], &g),
        Err(Error::InfeasibleDirection { .. })
    ));
    assert!(weight_search(&members(&preds, &[1.0, 1.0]), 0, Direction::Decrease, &[], &g).is_err());
    assert!(weight_search(&members(&preds, &[1.0, 1.0]), 0, Direction::Decrease, &[3], &g).is_err());
    assert!(matches!(
        weight_search(&members(&preds[..1], &[1.0]), 0, Direction::Decrease, &[0], &g),
        Err(Error::SoleLearner(_))
    ));
}

#[test]
fn adjust_weight_applies_edit_and_undoes() {
    let mut s = session();
    let before = s.state_hash();
    let adj = adjust_weight(&mut s, "b", Direction::Increase, &[1, 3], &WeightGrid::default()).unwrap();
    assert!(adj.search.objective_after >= adj.search.objective_before);
    assert_ne!(adj.search.new_weight, 1.0);
    assert_eq!(s.learners()[1].weight, adj.search.new_weight);
    s.apply_edit(EditCommand::Undo).unwrap();
    assert_eq!(s.state_hash(), before);

    let mut t = session();
    t.select_only(&[0, 2]).unwrap();
    assert!(adjust_weight(&mut t, "b", Direction::Increase, &[1], &WeightGrid::default()).is_err());
}

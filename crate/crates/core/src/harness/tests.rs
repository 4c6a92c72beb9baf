use proptest::prelude::*;

use super::plot::{centroids, parse_projection_csv, project, projection_csv, DistanceHistogram, DistanceSample, Projection};
use super::*;
use crate::nn::Mat;

#[test]
fn accuracy_examples() {
    assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
    assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
    assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 1, 1]).unwrap(), 0.75);
    assert!(matches!(accuracy(&[], &[]), Err(Error::Empty(_))));
    assert!(accuracy(&[0], &[0, 1]).is_err());
}

#[test]
fn fidelity_examples() {
    let a = [0, 1, 1, 0, 1];
    assert_eq!(fidelity(&a, &a).unwrap(), 1.0);
    let flipped: Vec<usize> = a.iter().map(|v| 1 - v).collect();
    assert_eq!(fidelity(&a, &flipped).unwrap(), 0.0);
    assert!(fidelity(&[], &[]).is_err());
}

proptest! {
    #[test]
    fn fidelity_is_symmetric(pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..50)) {
        let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        prop_assert_eq!(fidelity(&a, &b).unwrap(), fidelity(&b, &a).unwrap());
        let f = fidelity(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn summary_half_width_is_nonnegative(values in proptest::collection::vec(0.0f64..1.0, 2..10)) {
        let s = Summary::of(&values);
        prop_assert!(s.half_width.unwrap() >= 0.0);
        prop_assert!((0.0..=1.0).contains(&s.mean.unwrap()));
    }
}

#[test]
fn fpr_fnr_examples() {
    use Verdict::*;
    let mut v = vec![(Independent, Surrogate)];
    v.extend(std::iter::repeat_n((Independent, Independent), 9));
    v.extend(std::iter::repeat_n((Surrogate, Surrogate), 10));
    assert_eq!(
        fpr_fnr(&v),
        Rates {
            fpr: Some(0.1),
            fnr: Some(0.0)
        }
    );
    let all_right = [(Surrogate, Surrogate), (Independent, Independent)];
    assert_eq!(fpr_fnr(&all_right), Rates { fpr: Some(0.0), fnr: Some(0.0) });
    // No independents: the false-positive rate is undefined, not zero.
    assert_eq!(fpr_fnr(&[(Surrogate, Independent)]), Rates { fpr: None, fnr: Some(1.0) });
    assert_eq!(fpr_fnr(&[]), Rates { fpr: None, fnr: None });
}

#[test]
fn summary_examples() {
    let one = Summary::of(&[0.25]);
    assert_eq!((one.mean, one.half_width), (Some(0.25), None));
    assert_eq!(one.display(), "0.250 ± n/a");
    let s = Summary::of(&[0.0, 1.0]);
    // sd = sqrt(0.5), stderr = 0.5
    assert!((s.half_width.unwrap() - 0.98).abs() < 1e-12);
    assert_eq!(Summary::of(&[]).display(), "n/a");
}

fn blob(n: usize, dim: usize, offset: f64, seed: u64) -> Mat {
    use rand::Rng;
    let mut rng = crate::seed::rng(seed);
    Mat::from_shape_fn((n, dim), |_| offset + rng.random_range(-0.5..0.5))
}

#[test]
fn pca_projection_examples() {
    let a = blob(20, 6, 0.0, 1);
    let same = project(&[("a".into(), a.clone()), ("b".into(), a.clone())], Projection::Pca).unwrap();
    for (p, q) in same[..20].iter().zip(&same[20..]) {
        assert!((p.x - q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9);
    }

    let pts = project(
        &[("t".into(), a.clone()), ("s".into(), blob(20, 6, 0.3, 2)), ("i".into(), blob(20, 6, 3.0, 3))],
        Projection::Pca,
    )
    .unwrap();
    let c = centroids(&parse_projection_csv(&projection_csv(&pts)).unwrap());
    let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    assert!(dist(c["t"], c["s"]) < dist(c["t"], c["i"]));

    let single = project(&[("only".into(), a)], Projection::Pca).unwrap();
    assert_eq!(single.len(), 20);
    assert!(project(&[("one".into(), blob(1, 3, 0.0, 0))], Projection::Pca).is_err());
}

#[test]
fn tsne_keeps_clusters_apart() {
    let pts = project(&[("a".into(), blob(15, 4, 0.0, 1)), ("b".into(), blob(15, 4, 5.0, 2))], Projection::Tsne).unwrap();
    let c = centroids(&pts);
    let spread = pts
        .iter()
        .filter(|p| p.set == "a")
        .map(|p| ((p.x - c["a"].0).powi(2) + (p.y - c["a"].1).powi(2)).sqrt())
        .fold(0.0, f64::max);
    let gap = ((c["a"].0 - c["b"].0).powi(2) + (c["a"].1 - c["b"].1).powi(2)).sqrt();
    assert!(gap > spread, "gap {gap} spread {spread}");
}

#[test]
fn histogram_overlap_and_means() {
    let sample = |kind, distance| DistanceSample {
        model: "m".into(),
        kind,
        node: 0,
        distance,
    };
    let h = DistanceHistogram::from_samples(vec![
        sample(Verdict::Surrogate, 0.1),
        sample(Verdict::Surrogate, 0.5),
        sample(Verdict::Independent, 0.5),
        sample(Verdict::Independent, 0.9),
    ]);
    assert!(h.mean(Verdict::Surrogate).unwrap() < h.mean(Verdict::Independent).unwrap());
    assert!((h.overlap().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(h.to_csv().lines().count(), 5);
    assert!(h.to_svg().starts_with("<svg"));
}

use proptest::prelude::*;

use tvc_core::compress;
use tvc_core::merge::{self, MergeMethod, MergeSpec};
use tvc_core::tensor_store::{Group, TaskVector};
use tvc_core::Error;

fn layout(a: Vec<f32>, b: Vec<f32>) -> TaskVector {
    TaskVector::new(vec![Group::flat("a", a), Group::flat("b", b)]).unwrap()
}

/// `n` task vectors sharing a two-group layout.
fn family(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<TaskVector>> {
    (1usize..40, 1usize..20, n).prop_flat_map(|(la, lb, n)| {
        let v = |len| prop::collection::vec(-4.0f32..4.0, len);
        prop::collection::vec((v(la), v(lb)), n)
            .prop_map(|vs| vs.into_iter().map(|(a, b)| layout(a, b)).collect())
    })
}

fn close(a: &TaskVector, b: &TaskVector, tol: f32) -> bool {
    a.values().zip(b.values()).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #[test]
    fn average_of_copies_is_identity(v in family(1..2), n in 1usize..6) {
        let copies = vec![v[0].clone(); n];
        let avg = merge::merge_average(&copies).unwrap();
        prop_assert_eq!(avg, v[0].clone());
    }

    #[test]
    fn task_arithmetic_linear_and_symmetric(vs in family(1..5), l1 in -2.0f64..2.0, l2 in -2.0f64..2.0) {
        let sum = merge::merge_task_arithmetic(&vs, l1 + l2).unwrap();
        let a = merge::merge_task_arithmetic(&vs, l1).unwrap();
        let b = merge::merge_task_arithmetic(&vs, l2).unwrap();
        let added = TaskVector::new(
            a.groups().iter().zip(b.groups())
                .map(|(x, y)| Group::flat(x.name.clone(), x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect()))
                .collect(),
        ).unwrap();
        prop_assert!(close(&sum, &added, 1e-5));
        let mut rev = vs.clone();
        rev.reverse();
        prop_assert!(close(&merge::merge_task_arithmetic(&rev, l1).unwrap(), &a, 1e-6));
    }

    #[test]
    fn ties_single_full_density_is_identity(v in family(1..2)) {
        prop_assert_eq!(merge::merge_ties(&v, 1.0, 100.0).unwrap(), v[0].clone());
    }

    #[test]
    fn compressed_equals_dense(vs in family(1..5), k in 5.0f64..100.0, lambda in 0.1f64..2.0) {
        let arts: Vec<_> = vs.iter().map(|t| compress::compress(t, k, 1.5).unwrap()).collect();
        let dense: Vec<_> = arts.iter().map(|a| compress::reconstruct(a).unwrap()).collect();
        for method in [MergeMethod::Average, MergeMethod::TaskArithmetic, MergeMethod::Ties] {
            let spec = MergeSpec { method, lambda, trim_density: 30.0 };
            prop_assert_eq!(merge::merge_compressed(&arts, &spec).unwrap(), merge::merge(&dense, &spec).unwrap());
        }
    }
}

#[test]
fn shape_and_list_errors() {
    let a = layout(vec![1.0, 2.0], vec![3.0]);
    let b = layout(vec![1.0], vec![3.0]);
    assert!(matches!(merge::merge_average(&[a.clone(), b]), Err(Error::ShapeMismatch { .. })));
    let renamed = TaskVector::new(vec![Group::flat("x", vec![1.0, 2.0]), Group::flat("b", vec![3.0])]).unwrap();
    assert!(matches!(merge::merge_task_arithmetic(&[a, renamed], 1.0), Err(Error::NameMismatch { .. })));
    assert!(matches!(merge::merge_average(&[]), Err(Error::EmptyList)));
    assert!(merge::merge_ties(&[layout(vec![1.0], vec![1.0])], 1.0, 0.0).is_err());
}

#[test]
fn spec_parsing() {
    for (s, m) in [("average", MergeMethod::Average), ("ta", MergeMethod::TaskArithmetic), ("ties", MergeMethod::Ties)] {
        assert_eq!(s.parse::<MergeMethod>().unwrap(), m);
    }
    assert!("fisher".parse::<MergeMethod>().is_err());
    assert!(MergeSpec { method: MergeMethod::Ties, lambda: f64::NAN, trim_density: 20.0 }.validate().is_err());
}

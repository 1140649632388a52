use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shapelinker::aligner::synthetic::random_rotation;
use shapelinker::chem::{canonical_smiles, parse_smiles};
use shapelinker::data::linker_corpus;
use shapelinker::geom::{chamfer_distance_with, kabsch, NnSearch};
use shapelinker::{PointCloud, RigidTransform, Vec3};

fn cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(prop::array::uniform3(-6.0f64..6.0), 3..max).prop_map(|pts| PointCloud {
        points: pts.into_iter().map(Vec3).collect(),
        label: None,
    })
}

fn motion(seed: u64, shift: [f64; 3]) -> RigidTransform {
    RigidTransform::new(random_rotation(&mut ChaCha8Rng::seed_from_u64(seed)), Vec3(shift))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_is_symmetric_and_rigid_invariant(
        a in cloud(40),
        b in cloud(40),
        seed in any::<u64>(),
        shift in prop::array::uniform3(-5.0f64..5.0),
    ) {
        let ab = chamfer_distance_with(&a, &b, NnSearch::Grid).unwrap();
        let ba = chamfer_distance_with(&b, &a, NnSearch::BruteForce).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
        let t = motion(seed, shift);
        let move_all = |c: &PointCloud| PointCloud { points: t.apply_all(&c.points), label: None };
        let moved = chamfer_distance_with(&move_all(&a), &move_all(&b), NnSearch::Auto).unwrap();
        prop_assert!((moved - ab).abs() < 1e-9 * (1.0 + ab));
    }

    #[test]
    fn kabsch_undoes_a_rigid_motion(
        a in cloud(30),
        seed in any::<u64>(),
        shift in prop::array::uniform3(-20.0f64..20.0),
    ) {
        let t = motion(seed, shift);
        let b = PointCloud { points: t.apply_all(&a.points), label: None };
        let fit = kabsch(&a, &b).unwrap();
        for (p, q) in fit.apply_all(&a.points).iter().zip(&b.points) {
            prop_assert!(p.dist_sq(q).sqrt() < 1e-8);
        }
    }

    #[test]
    fn canonical_smiles_is_a_fixed_point(index in 0usize..500, seed in any::<u64>()) {
        let corpus = linker_corpus();
        let mol = parse_smiles(&corpus[index]).unwrap();
        let canon = canonical_smiles(&mol);
        let mut perm: Vec<usize> = (0..mol.atom_count()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(canonical_smiles(&mol.permuted(&perm).unwrap()), canon.clone());
        prop_assert_eq!(canonical_smiles(&parse_smiles(&canon).unwrap()), canon);
    }
}

//! Central finite-difference checks for every primitive on the tape.

use ptrparse_tensor::gradcheck::{max_rel_error, primitive_errors, project, random, H};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn softmax_weighted_sum_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[8]);
    let w = random(&mut rng, &[8]);
    let err = max_rel_error(&[x], H, |_, v| project(v[0].softmax_last(), &w));
    assert!(err <= 1e-2, "rel error {err}");
}

#[test]
fn every_primitive_matches_finite_differences() {
    for (name, err) in primitive_errors(2) {
        println!("{name:>14}: rel error {err:.2e}");
        assert!(err <= 3e-2, "{name}: rel error {err}");
    }
}

#[test]
fn attention_block_matches_finite_differences() {
    // A composite: softmax(q kᵀ / √d) v with a padding mask.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = random(&mut rng, &[2, 3, 4]);
    let k = random(&mut rng, &[2, 5, 4]);
    let v = random(&mut rng, &[2, 5, 4]);
    let w = random(&mut rng, &[2, 3, 4]);
    let mut mask = vec![false; 2 * 3 * 5];
    for row in 0..3 {
        mask[15 + row * 5 + 4] = true;
    }
    let err = max_rel_error(&[q, k, v], H, |_, x| {
        let s = x[0]
            .matmul(x[1].transpose(1, 2).unwrap())
            .unwrap()
            .scale(0.5)
            .masked_fill(&mask)
            .unwrap()
            .softmax_last();
        project(s.matmul(x[2]).unwrap(), &w)
    });
    assert!(err <= 3e-2, "rel error {err}");
}

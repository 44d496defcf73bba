mod common;

#[test]
fn thousand_random_models_keep_the_contract() {
    for seed in 0..1000 {
        common::distribution_contract(seed).unwrap();
    }
}

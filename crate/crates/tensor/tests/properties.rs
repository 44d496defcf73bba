use proptest::prelude::*;
use ptrparse_tensor::{Tape, Tensor, MASK_VALUE};

fn rows_strategy() -> impl Strategy<Value = (usize, usize, Vec<f32>, Vec<bool>)> {
    (1usize..5, 1usize..9).prop_flat_map(|(r, d)| {
        (
            Just(r),
            Just(d),
            prop::collection::vec(-10.0f32..10.0, r * d),
            prop::collection::vec(any::<bool>(), r * d),
        )
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions((r, d, data, mut mask) in rows_strategy()) {
        // keep at least one unmasked entry per row
        for row in 0..r {
            mask[row * d] = false;
        }
        let x = Tensor::new([r, d], data).unwrap().masked_fill(&mask, MASK_VALUE).unwrap();
        let s = x.softmax_last();
        for row in 0..r {
            let p = s.row(row);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            let total: f64 = p.iter().map(|&v| v as f64).sum();
            prop_assert!((total - 1.0).abs() <= 1e-6, "row sum {}", total);
            for j in 0..d {
                if mask[row * d + j] {
                    prop_assert_eq!(p[j], 0.0);
                }
            }
        }
    }

    #[test]
    fn log_softmax_is_log_of_softmax((r, d, data, _m) in rows_strategy()) {
        let x = Tensor::new([r, d], data).unwrap();
        let ls = x.log_softmax_last();
        let s = x.softmax_last();
        for (a, b) in ls.data().iter().zip(s.data()) {
            prop_assert!((a - b.ln()).abs() <= 1e-5, "{} vs {}", a, b.ln());
        }
    }

    #[test]
    fn identical_inputs_give_bit_identical_results((r, d, data, _m) in rows_strategy(), seed in any::<u64>()) {
        let run = || {
            let tape = Tape::with_seed(seed);
            let x = tape.param(&Tensor::new([r, d], data.clone()).unwrap());
            let y = x.dropout(0.3, true).unwrap().softmax_last().mul(x).unwrap().sum();
            let g = tape.backward(y).unwrap();
            (y.value().item().unwrap().to_bits(),
             g.get(x).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        prop_assert_eq!(run(), run());
    }
}

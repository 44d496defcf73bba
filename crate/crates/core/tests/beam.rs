mod common;

use common::{random_case, PrefixTable};
use ptrparse::decode::{beam_search, default_max_len, greedy, sequence_score, BeamConfig, Hypothesis, SearchModel};

fn search(m: &impl SearchModel, beam: usize, max_len: usize) -> Vec<Hypothesis> {
    beam_search(m, &BeamConfig::with_beam(beam), max_len).unwrap()
}

#[test]
fn beam_one_is_greedy() {
    for seed in 0..200 {
        let (m, src) = random_case(seed);
        let enc = m.encode(&src).unwrap();
        let dec = m.decoder(&enc).unwrap();
        let max_len = default_max_len(src.len());
        let g = greedy(&dec, max_len).unwrap();
        let b = search(&dec, 1, max_len);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0], g, "seed {seed}");
    }
}

#[test]
fn top_beam_is_at_least_greedy() {
    let mut checked = 0;
    for seed in 0..1000 {
        let (m, src) = random_case(seed);
        let enc = m.encode(&src).unwrap();
        let dec = m.decoder(&enc).unwrap();
        let max_len = default_max_len(src.len());
        let g = greedy(&dec, max_len).unwrap();
        let b = search(&dec, 4, max_len);
        assert!(b[0].score >= g.score - 1e-9, "seed {seed}: beam {} < greedy {}", b[0].score, g.score);
        checked += 1;
    }
    assert_eq!(checked, 1000);
}

#[test]
fn wider_beams_never_score_lower() {
    for seed in 0..300 {
        let (m, src) = random_case(10_000 + seed);
        let enc = m.encode(&src).unwrap();
        let dec = m.decoder(&enc).unwrap();
        let max_len = default_max_len(src.len());
        let mut last = f64::NEG_INFINITY;
        for k in 1..=6 {
            let top = search(&dec, k, max_len)[0].score;
            assert!(top >= last - 1e-9, "seed {seed}: beam {k} top {top} < {last}");
            last = top;
        }
    }
}

#[test]
fn scores_match_teacher_forcing() {
    for seed in 0..200 {
        let (m, src) = random_case(20_000 + seed);
        let enc = m.encode(&src).unwrap();
        let dec = m.decoder(&enc).unwrap();
        for h in search(&dec, 4, default_max_len(src.len())) {
            let tf = sequence_score(&dec, h.content(), !h.truncated).unwrap();
            assert!((tf - h.score).abs() <= 1e-4, "seed {seed}: {tf} vs {}", h.score);
        }
    }
}

#[test]
fn exhaustive_beam_matches_enumeration() {
    for seed in 0..50 {
        let m = PrefixTable { width: 5, seed };
        let all = common::enumerate(&m, 2);
        // 1 + 2 EOS-terminated and 4 truncated sequences
        assert_eq!(all.len(), 7);
        let plain = BeamConfig {
            nested: false,
            ..BeamConfig::with_beam(all.len())
        };
        for beam in [search(&m, all.len(), 2), beam_search(&m, &plain, 2).unwrap()] {
            assert_eq!(beam.len(), all.len());
            for (b, e) in beam.iter().zip(&all) {
                assert_eq!(b.ids, e.ids, "seed {seed}");
                assert!((b.score - e.score).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn plain_beam_alone_can_fall_below_greedy() {
    let plain = BeamConfig {
        nested: false,
        ..BeamConfig::with_beam(4)
    };
    let found = (0..1000).any(|seed| {
        let (m, src) = random_case(seed);
        let enc = m.encode(&src).unwrap();
        let dec = m.decoder(&enc).unwrap();
        let max_len = default_max_len(src.len());
        let g = greedy(&dec, max_len).unwrap();
        beam_search(&dec, &plain, max_len).unwrap()[0].score < g.score
    });
    assert!(found, "expected a search error from plain beam search");
}

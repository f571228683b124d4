use esg_forge::arithmetic::{merge_lora, LoraAdapter, LoraTarget};
use esg_forge::checkpoint::NamedTensorMap;
use esg_forge::harness::aggregate_rank;
use esg_forge::metrics::{bleu, meteor, rouge_l, rouge_n, token_f1};
use proptest::prelude::*;

fn table() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..8, 1usize..6).prop_flat_map(|(rows, cols)| {
        prop::collection::vec(prop::collection::vec(0u8..6, cols), rows).prop_map(|t| {
            t.into_iter()
                .map(|r| r.into_iter().map(|v| v as f64 / 5.0).collect())
                .collect()
        })
    })
}

fn wrap(t: &[Vec<f64>]) -> Vec<Vec<Option<f64>>> {
    t.iter()
        .map(|r| r.iter().map(|v| Some(*v)).collect())
        .collect()
}

fn tokens() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 0..10)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

proptest! {
    #[test]
    fn ranks_ignore_monotone_rescaling(t in table(), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let base = aggregate_rank(&wrap(&t));
        let moved: Vec<Vec<f64>> = t.iter().map(|r| r.iter().map(|v| (v * scale + shift).exp()).collect()).collect();
        prop_assert_eq!(aggregate_rank(&wrap(&moved)).ranks, base.ranks);
    }

    #[test]
    fn ranks_follow_row_order(t in table(), seed in any::<u64>()) {
        let n = t.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed | 1;
        for i in (1..n).rev() {
            s ^= s << 13; s ^= s >> 7; s ^= s << 17;
            perm.swap(i, (s % (i as u64 + 1)) as usize);
        }
        let base = aggregate_rank(&wrap(&t)).ranks;
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| t[i].clone()).collect();
        let got = aggregate_rank(&wrap(&shuffled)).ranks;
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(got[k], base[i]);
        }
    }

    #[test]
    fn overlap_metrics_are_bounded(p in tokens(), r in tokens()) {
        for v in [token_f1(&p, &r), rouge_n(&p, &r, 1), rouge_n(&p, &r, 2), rouge_l(&p, &r), bleu(&p, &r, 4, true), meteor(&p, &r)] {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
        prop_assert_eq!(token_f1(&p, &r), token_f1(&r, &p));
        prop_assert_eq!(rouge_l(&p, &r), rouge_l(&r, &p));
    }

    #[test]
    fn zero_adapter_leaves_base_unchanged(d in 1usize..6, k in 1usize..6, w in prop::collection::vec(-4.0f32..4.0, 36)) {
        let base = NamedTensorMap::builder().with_f32("w", &[d, k], &w[..d * k]).build();
        let mut adapter = LoraAdapter::default();
        adapter.insert("w", LoraTarget::new(d, k, 1, vec![0.0; d], vec![1.0; k], Some(2.0)).unwrap());
        let merged = merge_lora(&base, &adapter).unwrap();
        prop_assert_eq!(merged.bytes("w"), base.bytes("w"));
    }
}

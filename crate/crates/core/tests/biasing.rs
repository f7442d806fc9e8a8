use dolphin_core::biasing::{
    attention_weights, context_fuse, phrase_score_confidence, sequence_order_confidence, two_stage_filter,
    ContextFusionParams, FilterConfig, Hotword, HotwordList, Matrix, Posteriorgram,
};
use dolphin_core::rng::SeededRng;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn random_pg(seed: u64, frames: usize, vocab: usize) -> Posteriorgram<f64> {
    let mut rng = SeededRng::new(seed);
    let rows: Vec<Vec<f64>> = (0..frames)
        .map(|_| (0..vocab).map(|_| 6.0 * rng.unit() - 3.0).collect())
        .collect();
    Posteriorgram::from_logits(&rows, 0).unwrap()
}

fn phrases(seqs: &[Vec<u32>]) -> HotwordList {
    HotwordList::new(
        seqs.iter()
            .enumerate()
            .map(|(i, t)| Hotword { text: format!("p{i}"), tokens: t.clone() })
            .collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn soc_never_exceeds_psc(seed: u64, frames in 1usize..8, phrase in prop::collection::vec(1u32..6, 1..5)) {
        let pg = random_pg(seed, frames, 6);
        let psc = phrase_score_confidence(&pg, &phrase).unwrap();
        let soc = sequence_order_confidence(&pg, &phrase).unwrap();
        prop_assert!(soc <= psc + 1e-12, "soc {} > psc {}", soc, psc);
    }

    #[test]
    fn raising_threshold_only_removes(
        seed: u64,
        seqs in prop::collection::vec(prop::collection::vec(1u32..6, 1..4), 1..6),
        lo in -8.0f64..0.0,
        step in 0.0f64..4.0,
    ) {
        let pg = random_pg(seed, 5, 6);
        let list = phrases(&seqs);
        let loose = two_stage_filter(&pg, &list, &FilterConfig::uniform(lo)).unwrap();
        let strict = two_stage_filter(&pg, &list, &FilterConfig::uniform(lo + step)).unwrap();
        for t in strict.texts() {
            prop_assert!(loose.texts().contains(&t));
        }
    }
}

fn to_na(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn oracle_fuse(hidden: &Matrix<f64>, list: &HotwordList, p: &ContextFusionParams<f64>) -> DMatrix<f64> {
    let dc = p.context_dim();
    let mut ctx = DMatrix::<f64>::zeros(list.len() + 1, dc);
    for c in 0..dc {
        ctx[(0, c)] = p.no_bias[c];
    }
    for (r, ph) in list.phrases().iter().enumerate() {
        for &tok in &ph.tokens {
            for c in 0..dc {
                ctx[(r + 1, c)] += p.embed.get(tok as usize, c) / ph.tokens.len() as f64;
            }
        }
    }
    let h = to_na(hidden);
    let q = &h * to_na(&p.w_query);
    let k = &ctx * to_na(&p.w_key);
    let v = &ctx * to_na(&p.w_value);
    let d = p.model_dim();
    let dh = d / p.n_heads;
    let mut heads = DMatrix::<f64>::zeros(h.nrows(), d);
    for head in 0..p.n_heads {
        let qh = q.columns(head * dh, dh);
        let kh = k.columns(head * dh, dh);
        let vh = v.columns(head * dh, dh);
        let mut s = qh * kh.transpose() / (dh as f64).sqrt();
        for mut row in s.row_iter_mut() {
            let m = row.max();
            row.apply(|x| *x = (*x - m).exp());
            let z = row.sum();
            row /= z;
        }
        heads.columns_mut(head * dh, dh).copy_from(&(s * vh));
    }
    h + heads * to_na(&p.w_out)
}

#[test]
fn fusion_matches_dense_oracle() {
    let list = phrases(&[vec![1, 2, 3], vec![4], vec![5, 5]]);
    for (seed, heads) in [(1u64, 1usize), (2, 2), (3, 4)] {
        let p = ContextFusionParams::<f64>::random(8, 6, 8, heads, seed).unwrap();
        let mut rng = SeededRng::new(seed + 100);
        let hidden = Matrix::glorot(5, 8, &mut rng);
        let got = to_na(&context_fuse(&hidden, &list, &p).unwrap());
        let want = oracle_fuse(&hidden, &list, &p);
        assert!((got - want).amax() < 1e-12);
    }
}

#[test]
fn phrase_order_does_not_matter() {
    let seqs = vec![vec![1, 2], vec![3], vec![4, 5, 6], vec![7]];
    let p = ContextFusionParams::<f64>::random(8, 4, 6, 3, 11).unwrap();
    let mut rng = SeededRng::new(5);
    let hidden = Matrix::glorot(4, 6, &mut rng);
    let base = to_na(&context_fuse(&hidden, &phrases(&seqs), &p).unwrap());
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    for k in 0..10 {
        SeededRng::new(k).shuffle(&mut order);
        let perm: Vec<Vec<u32>> = order.iter().map(|&i| seqs[i].clone()).collect();
        let out = to_na(&context_fuse(&hidden, &phrases(&perm), &p).unwrap());
        assert!((out - &base).amax() < 1e-12);
    }
}

#[test]
fn attention_rows_are_distributions() {
    let p = ContextFusionParams::<f64>::random(8, 4, 6, 2, 3).unwrap();
    let mut rng = SeededRng::new(8);
    let hidden = Matrix::glorot(3, 6, &mut rng);
    for w in attention_weights(&hidden, &phrases(&[vec![1], vec![2, 3]]), &p).unwrap() {
        assert_eq!((w.rows(), w.cols()), (3, 3));
        for t in 0..3 {
            assert!((w.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn f32_fusion_close_to_f64() {
    let p64 = ContextFusionParams::<f64>::random(8, 4, 6, 2, 3).unwrap();
    let cast = |m: &Matrix<f64>| Matrix::from_vec(m.rows(), m.cols(), m.as_slice().iter().map(|&x| x as f32).collect()).unwrap();
    let p32 = ContextFusionParams::<f32> {
        embed: cast(&p64.embed),
        w_query: cast(&p64.w_query),
        w_key: cast(&p64.w_key),
        w_value: cast(&p64.w_value),
        w_out: cast(&p64.w_out),
        no_bias: p64.no_bias.iter().map(|&x| x as f32).collect(),
        n_heads: 2,
    };
    let mut rng = SeededRng::new(8);
    let h64 = Matrix::glorot(3, 6, &mut rng);
    let list = phrases(&[vec![1], vec![2, 3]]);
    let a = context_fuse(&h64, &list, &p64).unwrap();
    let b = context_fuse(&cast(&h64), &list, &p32).unwrap();
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        assert!((x - *y as f64).abs() < 1e-5);
    }
}

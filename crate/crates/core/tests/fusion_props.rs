use msfk_core::fusion::{
    affinity_all, class_logits_query, conv_head, decode_queries, encode_modality, forward_msgdino,
    forward_msyolow, fuse_text, fuse_visual, select_queries, FeatureLevel, HeadShape, HeadWeights,
    ImageInfo, Modality, ModalityFeatures, Norm, TextEmbeddings,
};
use msfk_core::tensor::{matmul_t, Tensor};
use msfk_oracle::{fixtures, topk};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn grid_shapes(rng: &mut ChaCha8Rng, max_rows: usize) -> Vec<(usize, usize)> {
    loop {
        let levels = rng.gen_range(1..4);
        let shapes: Vec<(usize, usize)> =
            (0..levels).map(|_| (rng.gen_range(1..5), rng.gen_range(1..5))).collect();
        if shapes.iter().map(|(h, w)| h * w).sum::<usize>() <= max_rows {
            return shapes;
        }
    }
}

fn features(rng: &mut ChaCha8Rng, m: Modality, shapes: &[(usize, usize)], d: usize) -> ModalityFeatures {
    let levels = shapes
        .iter()
        .map(|&(h, w)| FeatureLevel::new(h, w, Tensor::random(&[h * w, d], 1.0, rng)).unwrap())
        .collect();
    ModalityFeatures::new(m, levels).unwrap()
}

fn tensor(rows: &[Vec<f32>], cols: usize) -> Tensor {
    Tensor::new(vec![rows.len(), cols], rows.concat()).unwrap()
}

#[test]
fn select_queries_matches_full_sort() {
    let mut rng = fixtures::rng(300);
    for trial in 0..200 {
        let shapes = grid_shapes(&mut rng, 32);
        let rows: usize = shapes.iter().map(|(h, w)| h * w).sum();
        let n_t = rng.gen_range(1..5);
        let ties = trial % 2 == 0;
        let s_rgb = fixtures::affinity_rows(&mut rng, rows, n_t, ties);
        let s_ir = fixtures::affinity_rows(&mut rng, rows, n_t, ties);
        let f_rgb = features(&mut rng, Modality::Rgb, &shapes, 3);
        let f_ir = features(&mut rng, Modality::Ir, &shapes, 3);
        let n_q = rng.gen_range(1..=16.min(2 * rows));

        let q = select_queries(&tensor(&s_rgb, n_t), &tensor(&s_ir, n_t), &f_rgb, &f_ir, n_q).unwrap();
        let all: Vec<Vec<f32>> = s_rgb.iter().chain(&s_ir).cloned().collect();
        let expected = topk::select(&all, n_q);
        let stacked = Tensor::concat_rows(&[&f_rgb.stacked().unwrap(), &f_ir.stacked().unwrap()]).unwrap();

        assert_eq!(q.provenance.len(), n_q);
        for (k, (origin, &row)) in q.provenance.iter().zip(&expected).enumerate() {
            let (m, offset) = if row < rows { (Modality::Rgb, row) } else { (Modality::Ir, row - rows) };
            let sizes: Vec<usize> = shapes.iter().map(|(h, w)| h * w).collect();
            let level = (0..sizes.len()).find(|&l| offset < sizes[..=l].iter().sum()).unwrap();
            let index = offset - sizes[..level].iter().sum::<usize>();
            assert_eq!((origin.modality, origin.level, origin.index), (m, level, index), "trial {trial}");
            assert_eq!(q.queries.row(k), stacked.row(row));
            if k > 0 {
                assert!(q.provenance[k - 1].score >= origin.score);
            }
        }
        let worst = q.provenance.last().unwrap().score;
        for (i, r) in all.iter().enumerate() {
            if !expected.contains(&i) {
                assert!(r.iter().cloned().fold(f32::NEG_INFINITY, f32::max) <= worst);
            }
        }
    }
}

#[test]
fn select_queries_rejects_oversized_request() {
    let mut rng = fixtures::rng(301);
    let f = features(&mut rng, Modality::Rgb, &[(1, 2)], 3);
    let g = features(&mut rng, Modality::Ir, &[(1, 2)], 3);
    let s = Tensor::zeros(&[2, 2]);
    assert!(select_queries(&s, &s, &f, &g, 5).is_err());
    assert!(select_queries(&s, &s, &f, &g, 4).is_ok());
}

#[test]
fn max_fusion_dominates_each_modality() {
    let mut rng = fixtures::rng(400);
    for _ in 0..100 {
        let n = rng.gen_range(1..8);
        let n_t = rng.gen_range(1..6);
        let q = Tensor::random(&[n, 8], 1.0, &mut rng);
        let classes: Vec<u64> = (1..=n_t as u64).collect();
        let tr = TextEmbeddings::new(Tensor::random(&[n_t, 8], 1.0, &mut rng), &classes).unwrap();
        let ti = TextEmbeddings::new(Tensor::random(&[n_t, 8], 1.0, &mut rng), &classes).unwrap();
        let fused = class_logits_query(&q, &tr, &ti).unwrap();
        let a = matmul_t(&q, &tr.tokens).unwrap();
        let b = matmul_t(&q, &ti.tokens).unwrap();
        for ((&f, &x), &y) in fused.data().iter().zip(a.data()).zip(b.data()) {
            assert!(f >= x && f >= y);
            assert!(f == x || f == y);
        }
        assert_eq!(class_logits_query(&q, &tr, &tr.clone()).unwrap(), a);
    }
}

#[test]
fn conv_head_dominates_each_modality() {
    let mut rng = fixtures::rng(401);
    let w = HeadWeights::random(HeadShape::default(), 0.5, &mut rng);
    for _ in 0..30 {
        let shapes = grid_shapes(&mut rng, 20);
        let f = features(&mut rng, Modality::Rgb, &shapes, 8);
        let tr = TextEmbeddings::new(Tensor::random(&[3, 8], 1.0, &mut rng), &[1, 2, 3]).unwrap();
        let ti = TextEmbeddings::new(Tensor::random(&[3, 8], 1.0, &mut rng), &[1, 2, 3]).unwrap();
        for (p, l) in conv_head(&f, &tr, &ti, &w).unwrap().iter().zip(&f.levels) {
            let a = matmul_t(&l.tokens, &tr.tokens).unwrap();
            let b = matmul_t(&l.tokens, &ti.tokens).unwrap();
            for ((&v, &x), &y) in p.logits.data().iter().zip(a.data()).zip(b.data()) {
                assert!(v >= x && v >= y);
            }
            assert!(p.boxes.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn zero_decoder_is_identity() {
    let mut rng = fixtures::rng(500);
    for layers in [1, 2, 4] {
        let shape = HeadShape { layers, ..Default::default() };
        let w = HeadWeights::zeros(shape);
        let f = features(&mut rng, Modality::Rgb, &[(3, 3), (2, 2)], 8);
        let t = TextEmbeddings::new(Tensor::random(&[8, 8], 1.0, &mut rng), &[1, 1, 2, 3, 1, 1, 2, 3]).unwrap();
        let q = Tensor::random(&[6, 8], 3.0, &mut rng);
        let out = decode_queries(&q, &f, &t, &w.decoder, Norm::Disabled).unwrap();
        assert!(out.max_abs_diff(&q).unwrap() <= 1e-6);
    }
}

#[test]
fn sum_fusion_is_modality_symmetric() {
    let mut rng = fixtures::rng(600);
    let w = HeadWeights::random(HeadShape::default(), 0.5, &mut rng);
    let shapes = [(3, 2), (1, 2)];
    let rgb = features(&mut rng, Modality::Rgb, &shapes, 8);
    let ir = features(&mut rng, Modality::Ir, &shapes, 8);
    let text = TextEmbeddings::new(Tensor::random(&[4, 8], 1.0, &mut rng), &[1, 2, 3, 3]).unwrap();

    let (fr, tr) = encode_modality(&rgb, &text, &w.encoder_rgb, w.norm).unwrap();
    let (fi, ti) = encode_modality(&ir, &text, &w.encoder_ir, w.norm).unwrap();
    let ab = fuse_visual(&fr, &fi).unwrap();
    let ba = fuse_visual(&fi, &fr).unwrap();
    for (x, y) in ab.levels.iter().zip(&ba.levels) {
        assert_eq!(x.tokens, y.tokens);
    }
    let t_ab = fuse_text(&tr, &ti).unwrap();
    let t_ba = fuse_text(&ti, &tr).unwrap();
    let halves = |t: &TextEmbeddings| t.tokens.split_rows(&[4, 4]).unwrap();
    assert_eq!(halves(&t_ab)[0], halves(&t_ba)[1]);
    assert_eq!(halves(&t_ab)[1], halves(&t_ba)[0]);

    let q = Tensor::random(&[5, 8], 1.0, &mut rng);
    assert_eq!(class_logits_query(&q, &tr, &ti).unwrap(), class_logits_query(&q, &ti, &tr).unwrap());
}

#[test]
fn heads_conserve_shapes_and_counts() {
    let mut rng = fixtures::rng(700);
    for _ in 0..10 {
        let shapes = grid_shapes(&mut rng, 30);
        let shape = HeadShape {
            n_queries: rng.gen_range(1..8),
            num_levels: shapes.len(),
            ..Default::default()
        };
        let w = HeadWeights::random(shape, 0.5, &mut rng);
        let rgb = features(&mut rng, Modality::Rgb, &shapes, 8);
        let ir = features(&mut rng, Modality::Ir, &shapes, 8);
        let text = TextEmbeddings::new(Tensor::random(&[4, 8], 1.0, &mut rng), &[1, 2, 3, 4]).unwrap();
        let image = ImageInfo { id: 3, width: 64.0, height: 48.0 };
        let positions: usize = shapes.iter().map(|(h, w)| h * w).sum();

        let s = affinity_all(&rgb, &text).unwrap();
        assert_eq!(s.shape(), &[positions, 4]);
        let g = forward_msgdino(&rgb, &ir, &text, &w, image);
        if 2 * positions >= shape.n_queries {
            assert_eq!(g.unwrap().len(), shape.n_queries);
        } else {
            assert!(g.is_err());
        }
        let y = forward_msyolow(&rgb, &ir, &text, &w, image).unwrap();
        assert_eq!(y.len(), positions);
        let fewer = HeadWeights { num_levels: shapes.len() + 1, ..w.clone() };
        assert!(forward_msyolow(&rgb, &ir, &text, &fewer, image).is_err());
        for d in &y {
            let [x1, y1, x2, y2] = d.bbox.to_corners();
            assert!(0.0 <= x1 && x2 <= 64.0 && 0.0 <= y1 && y2 <= 48.0);
        }
    }
}
